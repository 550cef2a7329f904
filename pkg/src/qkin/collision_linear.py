"""Linear collision operator for a particle in a weak random potential.

The discretized operator on a momentum grid is

    M_ij = 2 pi w_j vartheta(k_i - k_j) delta_eta(omega_i - omega_j),  i != j,
    M_ii = -sum_{j != i} M_ij,

so every row sums to zero by construction: constants are exactly stationary
and mass is conserved at any resolution. Off-diagonal entries are nonnegative,
making M the generator of a Markov jump process on the nodes; energy is
conserved only up to the smearing width eta (reported, not projected away).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _ode
from .dispersion import DispersionModel, omega
from .grids import Distribution, MomentumGrid, gaussian_delta

DENSE_NODE_LIMIT = 8000  # dense storage up to 20^3 nodes


class PotentialSpectrum:
    """Even, nonnegative disorder spectrum vartheta(q) (Fourier-space correlator).

    vartheta == 1 models on-site i.i.d. unit-variance disorder.
    """

    def __init__(self, func, name="custom", constant=None):
        self._func = func
        self.name = name
        self.constant = constant

    @classmethod
    def flat(cls, amplitude=1.0):
        if amplitude < 0:
            raise ValueError("spectrum amplitude must be nonnegative")
        a = float(amplitude)
        return cls(lambda q: np.full(np.asarray(q).shape[:-1], a), f"flat:{a}", constant=a)

    @classmethod
    def gaussian(cls, amplitude=1.0, width=1.0):
        a, w = float(amplitude), float(width)
        return cls(
            lambda q: a * np.exp(-0.5 * w * w * np.sum(np.asarray(q) ** 2, axis=-1)),
            f"gaussian:a={a},w={w}",
        )

    def __call__(self, q):
        vals = np.asarray(self._func(np.asarray(q, dtype=float)), dtype=float)
        if np.any(vals < 0):
            raise ValueError("potential spectrum is negative at a required difference vector")
        return vals


class CollisionMatrix:
    """Discretized linear collision operator with exact row-sum-zero structure.

    Three storage layouts:
      dense   : full gain matrix, grids up to DENSE_NODE_LIMIT nodes;
      sparse  : shell-banded CSR, entries with |omega_i - omega_j| > 6 eta dropped;
      grouped : constant spectra only; nodes grouped by (degenerate) energy and
                coupled through a banded kernel on the distinct energy values.
                Same banded truncation as the sparse layout, exact otherwise.
    """

    def __init__(self, grid, model, spectrum, eta, layout, data):
        self.grid = grid
        self.model = model
        self.spectrum = spectrum
        self.eta = float(eta)
        self.layout = layout
        self._data = data
        self.omega = data["omega"]

    @property
    def size(self):
        return self.grid.size

    def loss_rates(self) -> np.ndarray:
        """Per-node total scattering-out rate ell_i = sum_{j != i} M_ij."""
        return self._data["loss"]

    def apply(self, values) -> np.ndarray:
        """M @ W as gain minus loss; exact zero on constant input.

        The grouped layout sums gain over nodes including j = i; the matching
        self-term in the loss cancels it, so all layouts agree.
        """
        W = np.asarray(values, dtype=float)
        if self.layout in ("dense", "sparse"):
            gain = self._data["gain"] @ W
            return gain - self._data["loss"] * W
        gidx = self._data["gidx"]
        S = np.bincount(
            gidx, weights=W * self.grid.node_weight, minlength=self._data["u"].size
        )
        gain = (self._data["kernel"] @ S)[gidx]
        loss_with_self = self._data["loss"] + self._data["self_rate"]
        return gain - loss_with_self * W

    def materialize(self) -> np.ndarray:
        """Dense matrix M (small grids only; for spectra and oracles)."""
        if self.layout == "dense":
            M = self._data["gain"].copy()
        elif self.layout == "sparse":
            M = self._data["gain"].toarray()
        else:
            if self.size > DENSE_NODE_LIMIT:
                raise ValueError("grid too large to materialize densely")
            gidx = self._data["gidx"]
            M = self._data["kernel"].toarray()[np.ix_(gidx, gidx)] * self.grid.node_weight
        np.fill_diagonal(M, -self._data["loss"])
        return M


def _banded_energy_kernel(u, eta, band):
    """Sparse U x U kernel 2 pi delta_eta(u_a - u_b), |u_a-u_b| <= band."""
    U = u.size
    rows, cols, vals = [], [], []
    hi = 0
    for a in range(U):
        lo = np.searchsorted(u, u[a] - band, side="left")
        hi = np.searchsorted(u, u[a] + band, side="right")
        cols.append(np.arange(lo, hi))
        rows.append(np.full(hi - lo, a))
        vals.append(2.0 * np.pi * gaussian_delta(u[a] - u[lo:hi], eta))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(U, U)
    )


def build_collision_matrix(
    grid: MomentumGrid,
    model: DispersionModel,
    spectrum: PotentialSpectrum,
    eta: float,
    layout=None,
    band_sigmas=6.0,
) -> CollisionMatrix:
    """Assemble the collision operator; layout in {None, 'dense', 'sparse', 'grouped'}.

    Banded layouts (grouped/sparse) drop couplings with
    |omega_i - omega_j| > band_sigmas * eta; the dense layout keeps everything.
    """
    if eta <= 0:
        raise ValueError("smearing width must be positive")
    if grid.dim != model.dim:
        raise ValueError("grid and dispersion dimensions disagree")
    om = omega(model, grid.nodes)
    N = grid.size
    if layout is None:
        if spectrum.constant is not None:
            layout = "grouped" if N > DENSE_NODE_LIMIT else "dense"
        else:
            layout = "dense" if N <= DENSE_NODE_LIMIT else "sparse"
    data = {"omega": om}

    if layout == "grouped":
        if spectrum.constant is None:
            raise ValueError("grouped layout requires a constant spectrum")
        order_u, gidx = np.unique(np.round(om, 12), return_inverse=True)
        kernel = _banded_energy_kernel(order_u, eta, band_sigmas * eta) * spectrum.constant
        counts = np.bincount(gidx, minlength=order_u.size).astype(float)
        self_rate = kernel.diagonal()[gidx] * grid.node_weight
        loss = (kernel @ (counts * grid.node_weight))[gidx] - self_rate
        data.update(
            {"u": order_u, "gidx": gidx, "kernel": kernel, "loss": loss,
             "self_rate": self_rate}
        )
        return CollisionMatrix(grid, model, spectrum, eta, layout, data)

    if layout == "dense":
        gain = np.empty((N, N))
        chunk = max(1, int(2e6 // max(N, 1)))
        for i0 in range(0, N, chunk):
            i1 = min(N, i0 + chunk)
            dk = grid.wrap_difference(grid.nodes[i0:i1, None, :] - grid.nodes[None, :, :])
            gain[i0:i1] = (
                2.0 * np.pi
                * grid.node_weight
                * spectrum(dk)
                * gaussian_delta(om[i0:i1, None] - om[None, :], eta)
            )
        idx = np.arange(N)
        gain[idx, idx] = 0.0
        loss = gain @ np.ones(N)
        data.update({"gain": gain, "loss": loss})
        return CollisionMatrix(grid, model, spectrum, eta, layout, data)

    if layout == "sparse":
        band = band_sigmas * eta
        order = np.argsort(om)
        om_sorted = om[order]
        rows, cols, vals = [], [], []
        for i in range(N):
            lo = np.searchsorted(om_sorted, om[i] - band, side="left")
            hi = np.searchsorted(om_sorted, om[i] + band, side="right")
            js = order[lo:hi]
            js = js[js != i]
            dk = grid.wrap_difference(grid.nodes[i] - grid.nodes[js])
            v = (
                2.0 * np.pi
                * grid.node_weight
                * spectrum(dk)
                * gaussian_delta(om[i] - om[js], eta)
            )
            rows.append(np.full(js.size, i))
            cols.append(js)
            vals.append(v)
        gain = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(N, N),
        )
        loss = np.asarray(gain @ np.ones(N))
        data.update({"gain": gain, "loss": loss})
        return CollisionMatrix(grid, model, spectrum, eta, layout, data)

    raise ValueError(f"unknown layout {layout!r}")


def apply(M: CollisionMatrix, W: Distribution) -> np.ndarray:
    """Collision term C(W) = M W; mass integral vanishes by row structure."""
    if not M.grid.matches(W.grid):
        raise ValueError("distribution lives on a different grid than the operator")
    return M.apply(W.values)


def stationarity_residual(M: CollisionMatrix, f) -> float:
    """sup-norm residual ||M f(omega)||_inf / ||f||_inf for a function of energy."""
    vals = f(M.omega) if callable(f) else np.asarray(f, dtype=float)
    norm = float(np.max(np.abs(vals)))
    if norm == 0.0:
        return 0.0
    return float(np.max(np.abs(M.apply(vals)))) / norm


def shell_partition(M: CollisionMatrix) -> np.ndarray:
    """Bin index per node; bins of width eta cover the band."""
    lo = float(np.min(M.omega))
    return np.floor((M.omega - lo) / M.eta).astype(int)


def shell_variance(M: CollisionMatrix, values) -> float:
    """Quadrature-weighted variance of values within each eta-shell, summed."""
    bins = shell_partition(M)
    vals = np.asarray(values, dtype=float)
    nb = bins.max() + 1
    w = M.grid.node_weight
    tot = np.bincount(bins, minlength=nb).astype(float) * w
    mean = np.bincount(bins, weights=vals, minlength=nb) * w / np.where(tot > 0, tot, 1.0)
    dev = vals - mean[bins]
    return float(w * np.sum(dev * dev))


@dataclass
class RelaxationResult:
    times: np.ndarray
    states: np.ndarray  # (n_snapshots, N)
    shell_variance: np.ndarray
    mass: np.ndarray
    energy: np.ndarray
    steps: "_ode.StepRecord"


def relax_to_shell(
    M: CollisionMatrix,
    W0: Distribution,
    t_max: float,
    n_snapshots=33,
    dt=None,
    dt_min=1e-12,
    tol=1e-9,
) -> RelaxationResult:
    """Integrate dW/dt = M W; the distribution relaxes to shell-constants.

    Snapshots at uniform times; mass conserved to roundoff, within-shell
    variance decays at the spectral gap of -M on each shell.
    """
    if not M.grid.matches(W0.grid):
        raise ValueError("initial distribution on a different grid")
    if np.any(W0.values < 0):
        raise ValueError("initial distribution must be nonnegative")
    rate = float(np.max(M.loss_rates()))
    if dt is None:
        dt = 0.5 / max(rate, 1e-30)
    times = np.linspace(0.0, float(t_max), int(n_snapshots))
    states = np.empty((len(times), M.size))
    states[0] = W0.values
    y = W0.values.copy()
    rec = _ode.StepRecord()

    def rhs(t, v):
        return M.apply(v)

    def check(y_new, y_old, step):
        return "negative occupation" if np.any(y_new < -1e-13) else None

    for i in range(1, len(times)):
        y, r = _ode.integrate(
            rhs, y, times[i - 1], times[i], dt, dt_min=dt_min, tol=tol, check=check
        )
        rec.accepted += r.accepted
        rec.rejected_error += r.rejected_error
        rec.rejected_admissibility += r.rejected_admissibility
        states[i] = y
    om = M.omega
    w = M.grid.node_weight
    return RelaxationResult(
        times=times,
        states=states,
        shell_variance=np.array([shell_variance(M, s) for s in states]),
        mass=w * states.sum(axis=1),
        energy=w * (states @ om),
        steps=rec,
    )
