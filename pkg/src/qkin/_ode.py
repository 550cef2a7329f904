"""Adaptive RK4 with step-doubling error control and admissibility rejection.

Steps that fail the error test or the admissibility predicate are rejected and
retried with a smaller dt, never clipped; below dt_min the run fails hard with
the offending state attached.
"""

from dataclasses import dataclass, field

import numpy as np


class IntegrationError(RuntimeError):
    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


@dataclass
class StepRecord:
    accepted: int = 0
    rejected_error: int = 0
    rejected_admissibility: int = 0
    min_dt: float = np.inf
    max_dt: float = 0.0

    def note(self, dt):
        self.accepted += 1
        self.min_dt = min(self.min_dt, dt)
        self.max_dt = max(self.max_dt, dt)


def rk4_step(f, t, y, dt):
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    f,
    y0,
    t0,
    t_end,
    dt,
    dt_min=1e-10,
    tol=1e-8,
    adaptive=True,
    check=None,
    on_accept=None,
    max_retries=60,
):
    """Advance y' = f(t, y) from t0 to t_end.

    check(y_new, y_old, dt) returns None if the candidate state is acceptable,
    else a reason string; the step is then retried with dt/2. on_accept(t, y)
    is called after every accepted step. Returns (y, record).
    """
    y = np.array(y0, dtype=float)
    t = float(t0)
    rec = StepRecord()
    if t_end <= t0:
        return y, rec
    dt = min(dt, t_end - t0)
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        step = min(dt, t_end - t)
        retries = 0
        while True:
            if adaptive:
                y_big = rk4_step(f, t, y, step)
                y_half = rk4_step(f, t, y, 0.5 * step)
                y_new = rk4_step(f, t + 0.5 * step, y_half, 0.5 * step)
                scale = max(1.0, float(np.max(np.abs(y))))
                err = float(np.max(np.abs(y_new - y_big))) / (15.0 * scale)
            else:
                y_new = rk4_step(f, t, y, step)
                err = 0.0
            reason = None
            if adaptive and err > tol:
                reason = "error"
                rec.rejected_error += 1
            elif check is not None:
                reason = check(y_new, y, step)
                if reason is not None:
                    rec.rejected_admissibility += 1
            if reason is None:
                break
            retries += 1
            step *= 0.5 if reason != "error" else max(
                0.2, min(0.9, 0.9 * (tol / max(err, 1e-300)) ** 0.2)
            )
            if step < dt_min or retries > max_retries:
                raise IntegrationError(
                    f"step size underflow at t={t:.6g} ({reason})", t=t, state=y
                )
        t += step
        y = y_new
        rec.note(step)
        if on_accept is not None:
            on_accept(t, y)
        if adaptive:
            grow = 0.9 * (tol / max(err, 1e-300)) ** 0.2
            dt = step * min(5.0, max(0.2, grow))
        else:
            dt = step if step < dt else dt
    return y, rec
