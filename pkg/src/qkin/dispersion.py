"""Single-particle dispersion relations and the free-propagator decay diagnostic.

All energies are dimensionless (hbar = 1, lattice constant 1). Lattice momenta
live on the torus [-pi, pi)^d with normalized measure dk/(2pi)^d; continuum
momenta on R^d, optionally truncated to a box [-K, K]^d.
"""

from dataclasses import dataclass
import numpy as np

LATTICE_NN = "lattice_nn"
CONTINUUM_QUADRATIC = "continuum_quadratic"
PHONON_ACOUSTIC = "phonon_acoustic"
PHONON_OPTICAL = "phonon_optical"

_KINDS = (LATTICE_NN, CONTINUUM_QUADRATIC, PHONON_ACOUSTIC, PHONON_OPTICAL)


@dataclass(frozen=True)
class DispersionModel:
    """Dispersion relation omega(k).

    kind:
        "lattice_nn"          omega = sum_j (1 - cos k_j), band [0, 2d]
        "continuum_quadratic" omega = |k|^2 / 2
        "phonon_acoustic"     omega = sqrt(2 sum_j (1 - cos k_j)), ~ |k| near 0
        "phonon_optical"      omega = sqrt(gap^2 + 2 sum_j (1 - cos k_j)) >= gap
    gap: band gap omega_0 > 0, optical bands only.
    box: declared half-width of the continuum truncation box (None = all of R^d).
    """

    kind: str
    dim: int = 3
    gap: float = 0.0
    box: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown dispersion kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dimension must be a positive integer")
        if self.kind == PHONON_OPTICAL and not self.gap > 0:
            raise ValueError("optical band requires gap > 0")
        if self.kind != PHONON_OPTICAL and self.gap != 0.0:
            raise ValueError("gap is meaningful for optical bands only")

    @property
    def is_lattice(self) -> bool:
        return self.kind != CONTINUUM_QUADRATIC

    def band_range(self):
        """(min, max) of omega; max is None for the unbounded continuum."""
        d = self.dim
        if self.kind == LATTICE_NN:
            return 0.0, 2.0 * d
        if self.kind == CONTINUUM_QUADRATIC:
            if self.box is not None:
                return 0.0, 0.5 * d * self.box ** 2
            return 0.0, None
        if self.kind == PHONON_ACOUSTIC:
            return 0.0, np.sqrt(4.0 * d)
        return self.gap, np.sqrt(self.gap ** 2 + 4.0 * d)


def _check_domain(model: DispersionModel, k: np.ndarray):
    if model.kind == CONTINUUM_QUADRATIC and model.box is not None:
        if np.any(np.abs(k) > model.box):
            raise ValueError(
                f"wavevector outside the declared truncation box [-{model.box}, {model.box}]^d"
            )


def reduce_to_torus(k: np.ndarray) -> np.ndarray:
    """Reduce torus coordinates to [-pi, pi) componentwise."""
    return np.mod(np.asarray(k, dtype=float) + np.pi, 2.0 * np.pi) - np.pi


def omega(model: DispersionModel, k) -> np.ndarray:
    """Dispersion omega(k); k has shape (..., d). Even in k."""
    k = np.asarray(k, dtype=float)
    if k.shape[-1] != model.dim:
        raise ValueError(f"wavevector has {k.shape[-1]} components, model has dim {model.dim}")
    _check_domain(model, k)
    if model.kind == CONTINUUM_QUADRATIC:
        return 0.5 * np.sum(k * k, axis=-1)
    kr = reduce_to_torus(k)
    band = np.sum(1.0 - np.cos(kr), axis=-1)
    if model.kind == LATTICE_NN:
        return band
    if model.kind == PHONON_ACOUSTIC:
        return np.sqrt(2.0 * band)
    return np.sqrt(model.gap ** 2 + 2.0 * band)


def group_velocity(model: DispersionModel, k) -> np.ndarray:
    """Group velocity grad_k omega(k); shape (..., d). Odd in k."""
    k = np.asarray(k, dtype=float)
    if k.shape[-1] != model.dim:
        raise ValueError(f"wavevector has {k.shape[-1]} components, model has dim {model.dim}")
    _check_domain(model, k)
    if model.kind == CONTINUUM_QUADRATIC:
        return k.copy()
    kr = reduce_to_torus(k)
    sin = np.sin(kr)
    if model.kind == LATTICE_NN:
        return sin
    w = omega(model, k)
    if model.kind == PHONON_ACOUSTIC and np.any(w == 0.0):
        raise ValueError("acoustic band has a singular gradient at k = 0")
    return sin / w[..., None]


@dataclass(frozen=True)
class PropagatorDecay:
    """Samples of a(t) = |int dk e^{-i omega(k) t}| and the fitted tail law."""

    t: np.ndarray
    amplitude: np.ndarray
    running_integral: np.ndarray
    exponent: float
    exponent_stderr: float
    fit_window: tuple
    fit_unreliable: bool


def _axis_quadrature(model: DispersionModel, n_nodes: int):
    """Per-axis nodes and weights of the normalized measure."""
    if model.kind == CONTINUUM_QUADRATIC:
        K = model.box if model.box is not None else 6.0
        x = (2.0 * K / n_nodes) * (np.arange(n_nodes) - (n_nodes - 1) / 2)
        w = np.full(n_nodes, 1.0 / n_nodes)  # normalized box measure
        return x, w
    x = (2.0 * np.pi / n_nodes) * (np.arange(n_nodes) - (n_nodes - 1) / 2)
    w = np.full(n_nodes, 1.0 / n_nodes)
    return x, w


def _amplitude_curve(model: DispersionModel, t: np.ndarray, n_nodes: int) -> np.ndarray:
    """a(t) = |int dk e^{-i omega t}| with the normalized measure."""
    d = model.dim
    x, w = _axis_quadrature(model, n_nodes)
    if model.kind in (LATTICE_NN, CONTINUUM_QUADRATIC):
        # omega is a sum over axes, so the integral factorizes exactly.
        if model.kind == LATTICE_NN:
            om1 = 1.0 - np.cos(x)
        else:
            om1 = 0.5 * x * x
        z = np.exp(-1j * np.outer(t, om1)) @ w
        return np.abs(z) ** d
    # non-separable bands: full tensor grid, collapsed onto energy values
    axes = [x] * d
    om = np.zeros((n_nodes,) * d)
    for a, ax in enumerate(axes):
        shape = [1] * d
        shape[a] = n_nodes
        om = om + (1.0 - np.cos(ax)).reshape(shape)
    om = 2.0 * om
    if model.kind == PHONON_OPTICAL:
        om += model.gap ** 2
    om = np.sqrt(om).ravel()
    weight = np.prod(w) * np.ones(1)  # uniform
    z = np.exp(-1j * np.outer(t, om)).sum(axis=1) * (1.0 / om.size)
    del weight
    return np.abs(z)


def propagator_decay(
    model: DispersionModel,
    t_max: float,
    n_t: int = 4000,
    nodes_per_axis: int | None = None,
) -> PropagatorDecay:
    """Oscillatory-integral decay diagnostic.

    Returns the amplitude curve a(t) on a uniform grid over [0, t_max], the
    power-law exponent fitted by least squares on log a vs log t over the last
    decade of [1, t_max], and the running integral of a(t) (trapezoid rule).
    The k-quadrature node count scales linearly with t_max so oscillations
    stay resolved.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if n_t < 8:
        raise ValueError("need at least 8 time samples")
    if nodes_per_axis is None:
        nodes_per_axis = int(max(64, np.ceil(1.5 * t_max)))
    t = np.linspace(0.0, t_max, n_t)
    amp = _amplitude_curve(model, t, nodes_per_axis)
    running = np.concatenate([[0.0], np.cumsum(0.5 * (amp[1:] + amp[:-1]) * np.diff(t))])

    lo = max(1.0, t_max / 10.0)
    unreliable = t_max / lo < 10.0 - 1e-12
    mask = (t >= lo) & (amp > 0)
    if mask.sum() < 8:
        return PropagatorDecay(t, amp, running, np.nan, np.nan, (lo, t_max), True)
    x = np.log(t[mask])
    y = np.log(amp[mask])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(y) - 2, 1)
    s2 = float(resid @ resid) / dof
    stderr = float(np.sqrt(s2 / np.sum((x - x.mean()) ** 2)))
    return PropagatorDecay(
        t, amp, running, float(-coef[0]), stderr, (lo, t_max), bool(unreliable)
    )
