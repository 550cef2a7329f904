"""Uehling-Uhlenbeck (Boltzmann-Nordheim) pair-collision operator.

    C(W)(k1) = int dk2 dk3 dk4 Phi(k1,k2|k3,k4)
               [W3 W4 (1+th W1)(1+th W2) - W1 W2 (1+th W3)(1+th W4)]

with theta = +1 bosons, -1 fermions, 0 classical, and
Phi = |Vhat(k1-k3) + theta Vhat(k2-k3)|^2 times momentum/energy deltas.

Two quadratures:

* sphere reduction (quadratic continuum dispersion): the deltas are resolved
  exactly by the elastic parametrization k3,4 = (k1+k2)/2 +- |k1-k2|/2 n,
  n on the unit sphere, leaving a 5D integral over (k2, n). Outgoing momenta
  fall between nodes; W is evaluated there by B-spline interpolation (order 5
  by default) and the residual conservation defect is removed by least-squares
  projection onto span{1, k, omega}: interpolation error must not masquerade
  as heating.

* smeared delta (lattice bands): momentum conservation is exact on the torus
  (k4 = k1+k2-k3 mod 2pi, all four momenta on grid), the energy delta is a
  width-eta Gaussian. Crystal momentum is conserved only mod 2pi (umklapp),
  so the projection basis is {1, omega}.

Interpolated occupations are clamped into the admissible range before entering
rates: this preserves the gain/loss sign structure that propagates fermion
bounds, and keeps entropy logarithms finite.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import roots_legendre, xlogy

from . import _uu_kernels
from .dispersion import CONTINUUM_QUADRATIC, DispersionModel, omega
from .grids import BOX_UNIFORM, Distribution, MomentumGrid, TORUS_UNIFORM, gaussian_delta

_CLAMP_FLOOR = 1e-12


class PairPotentialSpectrum:
    """Even real pair-interaction spectrum Vhat(q) with gas statistics theta.

    Radial closed forms ('constant', 'gaussian', 'lorentzian') run through the
    compiled kernels; arbitrary callables use the slower array path.
    """

    def __init__(self, theta, kind="gaussian", amplitude=1.0, width=1.0, func=None):
        if theta not in (-1, 0, 1):
            raise ValueError("theta must be -1, 0 or +1")
        self.theta = int(theta)
        self.kind = kind
        self.amplitude = float(amplitude)
        self.width = float(width)
        self._func = func
        if kind == "constant":
            self.kernel_code = _uu_kernels.V_CONSTANT
        elif kind == "gaussian":
            self.kernel_code = _uu_kernels.V_GAUSSIAN
        elif kind == "lorentzian":
            self.kernel_code = _uu_kernels.V_LORENTZIAN
        elif kind == "callable":
            if func is None:
                raise ValueError("kind 'callable' requires func")
            self.kernel_code = None
        else:
            raise ValueError(f"unknown potential kind {kind!r}")

    @classmethod
    def constant(cls, theta, amplitude=1.0):
        return cls(theta, "constant", amplitude)

    @classmethod
    def gaussian(cls, theta, amplitude=1.0, width=1.0):
        return cls(theta, "gaussian", amplitude, width)

    def radial(self, q2):
        """Vhat as a function of |q|^2."""
        q2 = np.asarray(q2, dtype=float)
        if self.kind == "constant":
            return np.full(q2.shape, self.amplitude)
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-0.5 * self.width ** 2 * q2)
        if self.kind == "lorentzian":
            return self.amplitude / (1.0 + self.width ** 2 * q2)
        raise ValueError("callable spectra have no radial form")

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "callable":
            return np.asarray(self._func(q), dtype=float)
        return self.radial(np.sum(q * q, axis=-1))

    def describe(self):
        return f"{self.kind}:a={self.amplitude},w={self.width}"


def collision_rate(V: PairPotentialSpectrum, theta, k1, k2, k3, k4):
    """Born rate density Phi = |Vhat(k1-k3) + theta Vhat(k2-k3)|^2.

    The momentum/energy delta factors live in the quadrature, not here.
    """
    k1, k2, k3 = np.asarray(k1, float), np.asarray(k2, float), np.asarray(k3, float)
    return (V(k1 - k3) + theta * V(k2 - k3)) ** 2


def sphere_rule(n_requested):
    """Product quadrature on S^2: Gauss-Legendre polar x uniform azimuth.

    Sizes snap to 2 m^2 (m polar nodes, 2m azimuths); exact for spherical
    harmonics up to degree 2m-1. Returns (nodes, weights) with sum w = 4 pi.
    """
    m = max(1, int(np.ceil(np.sqrt(n_requested / 2.0))))
    nphi = 2 * m
    x, wx = roots_legendre(m)
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st = np.sqrt(1.0 - ct ** 2)
    nodes = np.stack([st * np.cos(ph), st * np.sin(ph), ct + 0.0 * ph], axis=-1)
    nodes = nodes.reshape(-1, 3)
    weights = np.repeat(wx, nphi) * (2.0 * np.pi / nphi)
    return np.ascontiguousarray(nodes), np.ascontiguousarray(weights)


SPHERE_REDUCTION = "sphere_reduction"
SMEARED_DELTA = "smeared_delta"


@dataclass
class UUQuadrature:
    """Discretization of the collision-manifold integral for one grid/model."""

    kind: str
    grid: MomentumGrid
    model: DispersionModel
    sphere_nodes: np.ndarray | None = None
    sphere_weights: np.ndarray | None = None
    eta: float | None = None
    interp_order: int = 5
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_sphere(self):
        return 0 if self.sphere_nodes is None else len(self.sphere_nodes)

    def hemisphere(self):
        """Upper-hemisphere nodes with doubled weights (antipodal symmetry)."""
        keep = self.sphere_nodes[:, 2] > 0
        return (
            np.ascontiguousarray(self.sphere_nodes[keep]),
            np.ascontiguousarray(2.0 * self.sphere_weights[keep]),
        )

    def conservation_basis(self):
        """Weighted-orthonormal basis of the conserved-moment span."""
        if "qbasis" not in self._cache:
            om = omega(self.model, self.grid.nodes)
            if self.kind == SPHERE_REDUCTION:
                cols = [np.ones(self.grid.size)] + [
                    self.grid.nodes[:, a] for a in range(self.grid.dim)
                ] + [om]
            else:
                cols = [np.ones(self.grid.size), om]
            F = np.stack(cols, axis=1)
            sqw = np.sqrt(self.grid.node_weight)
            Q, _ = np.linalg.qr(sqw * F)
            self._cache["qbasis"] = (Q, sqw)
            self._cache["omega"] = om
        return self._cache["qbasis"]

    def node_energies(self):
        self.conservation_basis()
        return self._cache["omega"]


def build_sphere_reduction(
    grid: MomentumGrid, model: DispersionModel, n_sphere=128, interp_order=5
) -> UUQuadrature:
    if model.kind != CONTINUUM_QUADRATIC:
        raise ValueError("sphere reduction requires the quadratic continuum dispersion")
    if grid.kind != BOX_UNIFORM or grid.dim != 3:
        raise ValueError("sphere reduction runs on 3D box grids")
    if interp_order not in (1, 3, 5):
        raise ValueError("interpolation order must be 1, 3 or 5")
    nodes, weights = sphere_rule(n_sphere)
    return UUQuadrature(
        SPHERE_REDUCTION, grid, model, sphere_nodes=nodes, sphere_weights=weights,
        interp_order=interp_order,
    )


def build_smeared_delta(grid: MomentumGrid, model: DispersionModel, eta) -> UUQuadrature:
    if grid.kind != TORUS_UNIFORM:
        raise ValueError("the smeared-delta quadrature runs on torus grids")
    if eta is None or eta <= 0:
        raise ValueError("smearing width must be positive")
    return UUQuadrature(SMEARED_DELTA, grid, model, eta=float(eta))


_BSPLINE_BANDS = {3: (1.0 / 6.0, 4.0 / 6.0), 5: (1.0 / 120.0, 26.0 / 120.0, 66.0 / 120.0)}


def _spline_coefficients(values, grid, order):
    """B-spline interpolation coefficients with zero padding beyond the box.

    Solves, axis by axis, the banded system sum_j B(i-j) c_j = v_i with
    coefficients outside the grid pinned to zero, so the interpolant
    reproduces node values exactly and decays to zero at the box boundary.
    """
    cube = np.asarray(values, dtype=float).reshape(grid.shape)
    if order == 1:
        return np.ascontiguousarray(cube)
    from scipy.linalg import solve_banded

    bands = _BSPLINE_BANDS[order]
    half = len(bands) - 1
    n = grid.n
    ab = np.zeros((2 * half + 1, n))
    for off in range(-half, half + 1):
        ab[half - off, max(0, off): n + min(0, off)] = bands[len(bands) - 1 - abs(off)]
    out = cube
    for axis in range(grid.dim):
        moved = np.moveaxis(out, axis, 0).reshape(n, -1)
        solved = solve_banded((half, half), ab, moved)
        out = np.moveaxis(solved.reshape(np.moveaxis(out, axis, 0).shape), 0, axis)
    return np.ascontiguousarray(out)


def _evaluate_spline(coefficients, grid, points, order):
    """B-spline sum at arbitrary points; hard zero outside the node hull."""
    pts = np.asarray(points, dtype=float)
    idx = (pts - grid.axis[0]) / grid.spacing
    flat = idx.reshape(-1, grid.dim)
    out = ndimage.map_coordinates(
        coefficients, flat.T, order=order, mode="grid-constant", cval=0.0,
        prefilter=False,
    )
    inside = np.all((flat >= 0.0) & (flat <= grid.n - 1), axis=1)
    out = np.where(inside, out, 0.0)
    return out.reshape(pts.shape[:-1])


def interpolate_distribution(W: Distribution, points, order=5, coefficients=None):
    """Evaluate W between nodes: B-spline interpolant, clamped admissible, 0 outside."""
    grid = W.grid
    if coefficients is None:
        coefficients = _spline_coefficients(W.values, grid, order)
    out = _evaluate_spline(coefficients, grid, points, order)
    hi = 1.0 if W.theta == -1 else np.inf
    return np.clip(out, 0.0, hi)


def _check_pair(W: Distribution, V: PairPotentialSpectrum, quad: UUQuadrature):
    if not quad.grid.matches(W.grid):
        raise ValueError("distribution grid does not match the quadrature grid")
    if V.theta != W.theta:
        raise ValueError(
            f"potential statistics theta={V.theta} but distribution has theta={W.theta}"
        )


def project_conserved(quad: UUQuadrature, C: np.ndarray) -> np.ndarray:
    """Remove the least-squares component of C in the conserved-moment span."""
    Q, sqw = quad.conservation_basis()
    y = sqw * C
    return C - (Q @ (Q.T @ y)) / sqw


def apply_uu(
    W: Distribution,
    V: PairPotentialSpectrum,
    quad: UUQuadrature,
    project=True,
    return_gain=False,
):
    """Discretized collision term C(W); conservatively projected by default.

    With return_gain=True also returns the gain term alone (reference scale
    for equilibrium residuals).
    """
    _check_pair(W, V, quad)
    theta = float(W.theta)
    if quad.kind == SPHERE_REDUCTION:
        grid = quad.grid
        hemi_nodes, hemi_weights = quad.hemisphere()
        wmax = 1.0 if W.theta == -1 else np.inf
        if V.kernel_code is not None:
            co = _spline_coefficients(W.values, grid, quad.interp_order)
            C, G = _uu_kernels.apply_kernel(
                co, grid.n, grid.axis[0], 1.0 / grid.spacing, grid.nodes, W.values,
                grid.node_weight, hemi_nodes, hemi_weights, theta,
                V.kernel_code, V.amplitude, V.width, wmax, quad.interp_order,
            )
        else:
            C, G = _apply_sphere_numpy(W, V, quad, hemi_nodes, hemi_weights)
    else:
        C, G = _apply_lattice(W, V, quad)
    if project:
        C = project_conserved(quad, C)
    if return_gain:
        return C, G
    return C


def _apply_sphere_numpy(W, V, quad, hemi_nodes, hemi_weights, chunk=256):
    """Array-path evaluation of the sphere-reduced operator (arbitrary Vhat)."""
    grid = quad.grid
    theta = float(W.theta)
    X = grid.nodes
    N = grid.size
    co = _spline_coefficients(W.values, grid, quad.interp_order)
    wmax = 1.0 if W.theta == -1 else np.inf

    def interp(pts):
        return np.clip(_evaluate_spline(co, grid, pts, quad.interp_order), 0.0, wmax)

    C = np.zeros(N)
    G = np.zeros(N)
    for i0 in range(0, N, chunk):
        i1 = min(N, i0 + chunk)
        k1 = X[i0:i1]
        W1 = W.values[i0:i1, None]
        mid = 0.5 * (k1[:, None, :] + X[None, :, :])
        p = 0.5 * (k1[:, None, :] - X[None, :, :])
        q0 = np.sqrt(np.sum(p * p, axis=-1))
        W2 = W.values[None, :]
        acc = np.zeros((i1 - i0, N))
        accg = np.zeros((i1 - i0, N))
        for s, nvec in enumerate(hemi_nodes):
            k3 = mid + q0[..., None] * nvec
            k4 = mid - q0[..., None] * nvec
            W3 = interp(k3)
            W4 = interp(k4)
            v13 = V(p - q0[..., None] * nvec)
            v23 = V(-p - q0[..., None] * nvec)
            v14 = V(p + q0[..., None] * nvec)
            v24 = V(-p + q0[..., None] * nvec)
            phi = 0.5 * ((v13 + theta * v23) ** 2 + (v14 + theta * v24) ** 2)
            gain = W3 * W4 * (1.0 + theta * W1) * (1.0 + theta * W2)
            loss = W1 * W2 * (1.0 + theta * W3) * (1.0 + theta * W4)
            acc += hemi_weights[s] * phi * (gain - loss)
            accg += hemi_weights[s] * phi * gain
        C[i0:i1] = grid.node_weight * np.sum(acc * 0.5 * q0, axis=1)
        G[i0:i1] = grid.node_weight * np.sum(accg * 0.5 * q0, axis=1)
    return C, G


def _lattice_index_mesh(grid):
    idx = np.arange(grid.n)
    return np.stack(
        np.meshgrid(*([idx] * grid.dim), indexing="ij"), axis=-1
    ).reshape(-1, grid.dim)


def _apply_lattice(W, V, quad):
    """Smeared-delta torus operator; all four momenta on grid (no interpolation)."""
    grid = quad.grid
    theta = float(W.theta)
    om = quad.node_energies()
    N = grid.size
    midx = _lattice_index_mesh(grid)
    vals = W.values
    X = grid.nodes
    w = grid.node_weight
    C = np.zeros(N)
    G = np.zeros(N)
    strides = np.array([grid.n ** (grid.dim - 1 - a) for a in range(grid.dim)])
    for i in range(N):
        # k4 = k1 + k2 - k3 on the torus via index arithmetic (axes close mod n)
        idx4 = np.mod(midx[i][None, None, :] + midx[:, None, :] - midx[None, :, :], grid.n)
        flat4 = idx4 @ strides
        W2 = vals[:, None]
        W3 = vals[None, :]
        W4 = vals[flat4]
        om_def = om[i] + om[:, None] - om[None, :] - om[flat4]
        delta = gaussian_delta(om_def, quad.eta)
        d13 = grid.wrap_difference(X[i][None, :] - X)
        d23 = grid.wrap_difference(X[:, None, :] - X[None, :, :])
        v13 = V(d13)[None, :]
        v23 = V(d23.reshape(-1, grid.dim)).reshape(N, N)
        phi = (v13 + theta * v23) ** 2
        gain = W3 * W4 * (1.0 + theta * vals[i]) * (1.0 + theta * W2)
        loss = vals[i] * W2 * (1.0 + theta * W3) * (1.0 + theta * W4)
        C[i] = w * w * np.sum(phi * delta * (gain - loss))
        G[i] = w * w * np.sum(phi * delta * gain)
    return C, G


class UUOperator:
    """Bundles potential and quadrature into a collision-operator handle."""

    def __init__(self, V: PairPotentialSpectrum, quad: UUQuadrature, project=True):
        self.V = V
        self.quad = quad
        self.project = project
        self.theta = V.theta
        self.is_linear = False

    def apply(self, values) -> np.ndarray:
        W = Distribution(self.quad.grid, np.clip(values, 0.0, None), self.V.theta)
        return apply_uu(W, self.V, self.quad, project=self.project)

    def apply_raw(self, values) -> np.ndarray:
        """No admissibility snapping; used inside RK stages."""
        wmax = 1.0 if self.theta == -1 else np.inf
        W = Distribution(self.quad.grid, np.clip(values, 0.0, wmax), self.V.theta)
        return apply_uu(W, self.V, self.quad, project=self.project)


def mc_oracle(
    W: Distribution,
    V: PairPotentialSpectrum,
    quad: UUQuadrature,
    k1_index: int,
    n_samples: int,
    seed: int,
    n_chunks: int = 64,
):
    """Unbiased Monte Carlo estimate of the unprojected C(W)(k1) at one node.

    Samples k2 uniformly in the box and the scattering direction uniformly on
    the sphere; evaluates the same clamped interpolant as apply_uu, so the two
    routes integrate the identical function. Deterministic given the seed: a
    fixed number of chunks with independent spawned streams, combined in chunk
    order. Returns (estimate, standard_error).
    """
    if quad.kind != SPHERE_REDUCTION:
        raise ValueError("the Monte Carlo oracle runs on the continuum reduction")
    _check_pair(W, V, quad)
    grid = quad.grid
    theta = float(W.theta)
    K = grid.half_width
    wmax = 1.0 if W.theta == -1 else np.inf
    co = _spline_coefficients(W.values, grid, quad.interp_order)

    def interp(pts):
        return np.clip(_evaluate_spline(co, grid, pts, quad.interp_order), 0.0, wmax)

    k1 = grid.nodes[k1_index]
    W1 = W.values[k1_index]
    volume = (2.0 * K) ** 3 * 4.0 * np.pi
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    base = n_samples // n_chunks
    sizes = [base + (1 if c < n_samples % n_chunks else 0) for c in range(n_chunks)]
    total = 0.0
    total_sq = 0.0
    count = 0
    for ss, m in zip(streams, sizes):
        if m == 0:
            continue
        rng = np.random.default_rng(ss)
        k2 = rng.uniform(-K, K, size=(m, 3))
        z = rng.uniform(-1.0, 1.0, size=m)
        phi_ang = rng.uniform(0.0, 2.0 * np.pi, size=m)
        st = np.sqrt(1.0 - z * z)
        nvec = np.stack([st * np.cos(phi_ang), st * np.sin(phi_ang), z], axis=-1)
        p = 0.5 * (k1[None, :] - k2)
        mid = 0.5 * (k1[None, :] + k2)
        q0 = np.linalg.norm(p, axis=-1)
        qn = q0[:, None] * nvec
        W2 = interp(k2)
        W3 = interp(mid + qn)
        W4 = interp(mid - qn)
        v13 = V(p - qn)
        v23 = V(-p - qn)
        v14 = V(p + qn)
        v24 = V(-p + qn)
        phi = 0.5 * ((v13 + theta * v23) ** 2 + (v14 + theta * v24) ** 2)
        bracket = (
            W3 * W4 * (1.0 + theta * W1) * (1.0 + theta * W2)
            - W1 * W2 * (1.0 + theta * W3) * (1.0 + theta * W4)
        )
        f = volume * 0.5 * q0 * phi * bracket
        total += float(np.sum(f))
        total_sq += float(np.sum(f * f))
        count += m
    if count == 0:
        return 0.0, 0.0
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    return mean, float(np.sqrt(var / count))


def entropy(W: Distribution) -> float:
    """Kinetic entropy sigma(W); continuous extension x ln x -> 0 at the boundary.

    theta = +-1: int [theta^{-1}(1+theta W) ln(1+theta W) - W ln W] dk
    theta =   0: -int W ln W dk
    """
    vals = W.values
    if W.theta == -1 and np.any(vals > 1.0 + _CLAMP_FLOOR):
        raise ValueError("fermion distribution exceeds 1")
    s = -xlogy(vals, vals)
    if W.theta != 0:
        th = float(W.theta)
        arg = 1.0 + th * vals
        arg = np.clip(arg, 0.0, None)
        s = s + xlogy(arg, arg) / th
    return float(W.grid.node_weight * np.sum(s))


def entropy_gradient(W: Distribution) -> np.ndarray:
    """sigma'(W): ln((1+theta W)/W) for theta = +-1, -ln W - 1 for theta = 0."""
    vals = np.clip(W.values, _CLAMP_FLOOR, None)
    if W.theta == 0:
        return -np.log(vals) - 1.0
    th = float(W.theta)
    if W.theta == -1:
        vals = np.clip(vals, _CLAMP_FLOOR, 1.0 - _CLAMP_FLOOR)
    return np.log((1.0 + th * vals) / vals)


def entropy_production(W: Distribution, V: PairPotentialSpectrum, quad: UUQuadrature) -> float:
    """dsigma/dt along the collision flow, int sigma'(W) C(W) dk, evaluated in
    the symmetrized form (1/4) <(G - L)(ln G - ln L)> whose quadrature terms
    are individually nonnegative: the discrete value is >= 0 up to roundoff.
    """
    _check_pair(W, V, quad)
    theta = float(W.theta)
    wmax = 1.0 if W.theta == -1 else np.inf
    if quad.kind == SPHERE_REDUCTION and V.kernel_code is not None:
        grid = quad.grid
        hemi_nodes, hemi_weights = quad.hemisphere()
        co = _spline_coefficients(W.values, grid, quad.interp_order)
        return float(
            _uu_kernels.entropy_production_kernel(
                co, grid.n, grid.axis[0], 1.0 / grid.spacing, grid.nodes, W.values,
                grid.node_weight, hemi_nodes, hemi_weights, theta,
                V.kernel_code, V.amplitude, V.width, wmax, quad.interp_order,
                _CLAMP_FLOOR,
            )
        )
    if quad.kind == SMEARED_DELTA:
        return _entropy_production_lattice(W, V, quad)
    raise ValueError("entropy production needs a compiled potential form or a lattice quadrature")


def _entropy_production_lattice(W, V, quad):
    grid = quad.grid
    theta = float(W.theta)
    om = quad.node_energies()
    N = grid.size
    midx = _lattice_index_mesh(grid)
    strides = np.array([grid.n ** (grid.dim - 1 - a) for a in range(grid.dim)])
    cap = (1.0 if W.theta == -1 else np.inf) - _CLAMP_FLOOR
    vals = np.clip(W.values, _CLAMP_FLOOR, cap)
    X = grid.nodes
    w = grid.node_weight
    total = 0.0
    for i in range(N):
        idx4 = np.mod(midx[i][None, None, :] + midx[:, None, :] - midx[None, :, :], grid.n)
        flat4 = idx4 @ strides
        W1 = vals[i]
        W2 = vals[:, None]
        W3 = vals[None, :]
        W4 = vals[flat4]
        om_def = om[i] + om[:, None] - om[None, :] - om[flat4]
        delta = gaussian_delta(om_def, quad.eta)
        d13 = grid.wrap_difference(X[i][None, :] - X)
        d23 = grid.wrap_difference(X[:, None, :] - X[None, :, :])
        v13 = V(d13)[None, :]
        v23 = V(d23.reshape(-1, grid.dim)).reshape(N, N)
        phi = (v13 + theta * v23) ** 2
        gain = W3 * W4 * (1.0 + theta * W1) * (1.0 + theta * W2)
        loss = W1 * W2 * (1.0 + theta * W3) * (1.0 + theta * W4)
        total += 0.25 * w * w * w * float(
            np.sum(phi * delta * (gain - loss) * (np.log(gain) - np.log(loss)))
        )
    return total


def classical_bracket(W1, W2, W3, W4):
    """theta = 0 limit of the collision bracket: W3 W4 - W1 W2."""
    return W3 * W4 - W1 * W2
