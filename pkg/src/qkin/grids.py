"""Momentum and phase-space discretizations, quadrature, and moment functionals.

Torus grids carry the normalized measure dk/(2pi)^d (total measure 1); box
grids carry the plain Lebesgue measure (total measure (2K)^d). Both are
uniform product grids, so the quadrature is the periodic trapezoid rule on
the torus and the midpoint rule on the box.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .dispersion import DispersionModel, omega

TORUS_UNIFORM = "torus_uniform"
BOX_UNIFORM = "box_uniform"

_FERMION_TOL = 1e-12


class MomentumGrid:
    """Uniform product grid in momentum space with positive quadrature weights.

    Torus node placement:
      offset="centered" : k_i = (2pi/n)(i - (n-1)/2), symmetric under k -> -k
                          for every n (midpoint nodes for even n).
      offset="fft"      : k_i = (2pi/n)(i - n//2), the fftshift-ordered FFT
                          frequencies; for even n this includes the -pi column.
    The centered set makes odd moments of symmetrized data vanish exactly;
    the fft set matches lattice wavefunction Fourier grids.
    """

    def __init__(self, kind, dim, n, half_width=None, offset="centered"):
        if kind not in (TORUS_UNIFORM, BOX_UNIFORM):
            raise ValueError(f"unknown grid kind {kind!r}")
        if n < 2:
            raise ValueError("need at least 2 points per axis")
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.kind = kind
        self.dim = int(dim)
        self.n = int(n)
        self.offset = offset
        if kind == TORUS_UNIFORM:
            h = 2.0 * np.pi / n
            if offset == "centered":
                axis = h * (np.arange(n) - (n - 1) / 2.0)
            elif offset == "fft":
                axis = h * (np.arange(n) - n // 2)
            else:
                raise ValueError(f"unknown torus offset {offset!r}")
            self.half_width = np.pi
            self.node_weight = 1.0 / n ** dim
        else:
            if half_width is None or half_width <= 0:
                raise ValueError("box grid requires a positive half-width")
            if offset != "centered":
                raise ValueError("box grids are centered")
            h = 2.0 * half_width / n
            axis = h * (np.arange(n) - (n - 1) / 2.0)
            self.half_width = float(half_width)
            self.node_weight = h ** dim
        self.spacing = h
        self.axis = axis
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        self.nodes = np.stack(mesh, axis=-1).reshape(-1, dim)
        self.size = self.nodes.shape[0]
        self.shape = (n,) * dim

    @classmethod
    def torus(cls, n, dim=3, offset="centered"):
        return cls(TORUS_UNIFORM, dim, n, offset=offset)

    @classmethod
    def box(cls, n, dim=3, half_width=6.0):
        return cls(BOX_UNIFORM, dim, n, half_width=half_width)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, self.node_weight)

    @property
    def total_measure(self) -> float:
        if self.kind == TORUS_UNIFORM:
            return 1.0
        return (2.0 * self.half_width) ** self.dim

    def reflection_index(self) -> np.ndarray:
        """Node permutation realizing k -> -k (mod 2pi on the torus)."""
        n = self.n
        if self.kind == TORUS_UNIFORM and self.offset == "fft":
            ax = (-np.arange(n)) % n if n % 2 == 0 else None
            if ax is None:
                ax = n - 1 - np.arange(n)
            else:
                ax = (n - np.arange(n)) % n
        else:
            ax = n - 1 - np.arange(n)
        idx = np.arange(self.size).reshape(self.shape)
        for a in range(self.dim):
            idx = np.take(idx, ax, axis=a)
        return idx.reshape(-1)

    def wrap_difference(self, dk: np.ndarray) -> np.ndarray:
        """Minimal-image difference vectors (torus reduces mod 2pi)."""
        if self.kind == TORUS_UNIFORM:
            return np.mod(dk + np.pi, 2.0 * np.pi) - np.pi
        return dk

    def matches(self, other) -> bool:
        return (
            self.kind == other.kind
            and self.dim == other.dim
            and self.n == other.n
            and self.offset == other.offset
            and np.isclose(self.half_width, other.half_width)
        )

    def describe(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim, "n": self.n, "offset": self.offset}
        if self.kind == BOX_UNIFORM:
            out["half_width"] = self.half_width
        return out

    @classmethod
    def from_description(cls, desc: dict):
        return cls(
            desc["kind"],
            desc["dim"],
            desc["n"],
            half_width=desc.get("half_width"),
            offset=desc.get("offset", "centered"),
        )


def integrate(grid: MomentumGrid, f) -> float:
    """Quadrature sum_i w_i f_i; linear in f, exact for constants."""
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.size,):
        raise ValueError(f"values have shape {f.shape}, grid has {grid.size} nodes")
    return float(grid.node_weight * np.sum(f))


@dataclass
class Distribution:
    """Nonnegative momentum distribution W(k) on a grid.

    theta: +1 bosons, -1 fermions (then W <= 1), 0 Boltzmann/linear.
    """

    grid: MomentumGrid
    values: np.ndarray
    theta: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise ValueError("values do not match the grid")
        if self.theta not in (-1, 0, 1):
            raise ValueError("theta must be -1, 0 or +1")
        if np.any(self.values < 0):
            raise ValueError("distribution values must be nonnegative")
        if self.theta == -1 and np.any(self.values > 1.0 + _FERMION_TOL):
            raise ValueError("fermion distribution exceeds 1")

    def mass(self) -> float:
        return integrate(self.grid, self.values)

    def copy_with(self, values) -> "Distribution":
        return Distribution(self.grid, np.asarray(values, dtype=float), self.theta)


def symmetrize(dist: Distribution) -> Distribution:
    """Average values over k -> -k."""
    idx = dist.grid.reflection_index()
    return dist.copy_with(0.5 * (dist.values + dist.values[idx]))


def moments(dist: Distribution, model: DispersionModel):
    """(mass, momentum vector, energy) = (int W, int k W, int omega W).

    On reflection-symmetric node sets the momentum sum is paired over k, -k,
    so symmetrized data has momentum exactly zero.
    """
    grid = dist.grid
    w = grid.node_weight
    vals = dist.values
    mass = w * np.sum(vals)
    if grid.kind == BOX_UNIFORM or grid.offset == "centered":
        rev = grid.reflection_index()
        momentum = 0.5 * w * ((vals - vals[rev]) @ grid.nodes)
    else:
        momentum = w * (vals @ grid.nodes)
    energy = w * np.sum(omega(model, grid.nodes) * vals)
    return float(mass), momentum, float(energy)


@dataclass
class ShellWeights:
    """Quadrature weights s_i = w_i * delta_eta(omega(k_i) - E) on an energy shell."""

    energy: float
    eta: float
    weights: np.ndarray
    grid: MomentumGrid

    def total(self) -> float:
        return float(np.sum(self.weights))

    def average(self, f) -> float:
        s = self.total()
        return float(np.dot(self.weights, f) / s)


def gaussian_delta(x, eta):
    """Unit-mass Gaussian of standard deviation eta."""
    return np.exp(-0.5 * (x / eta) ** 2) / (eta * np.sqrt(2.0 * np.pi))


def energy_shell(grid: MomentumGrid, model: DispersionModel, E, eta) -> ShellWeights:
    """Smeared energy-shell weights; their sum approximates the density of states."""
    if eta <= 0:
        raise ValueError("smearing width must be positive")
    om = omega(model, grid.nodes)
    s = grid.node_weight * gaussian_delta(om - E, eta)
    if np.all(s < 1e-30):
        raise ValueError(f"empty energy shell at E={E} (band range {model.band_range()})")
    return ShellWeights(float(E), float(eta), s, grid)


def auto_smearing_width(grid: MomentumGrid, model: DispersionModel, E) -> float:
    """Default eta = 2 * median nearest-level spacing of omega near the shell."""
    om = np.sort(omega(model, grid.nodes))
    lo, hi = om[0], om[-1]
    width = max((hi - lo) / 20.0, 1e-12)
    window = np.empty(0)
    while window.size < 32 and width <= (hi - lo):
        window = om[(om >= E - width) & (om <= E + width)]
        width *= 2.0
    if window.size < 2:
        raise ValueError(f"no energy levels near E={E}")
    levels = np.unique(np.round(window, 12))
    if levels.size < 2:
        return 2.0 * max(width, 1e-12)
    return 2.0 * float(np.median(np.diff(levels)))


class WignerField:
    """Phase-space distribution W(r, k) on a periodic spatial box times a momentum grid.

    values has shape (*cells, grid.size) with the momentum index fastest.
    """

    def __init__(self, box_size, cells, grid: MomentumGrid, values, theta=0):
        self.box_size = float(box_size)
        self.cells = tuple(int(c) for c in cells)
        if len(self.cells) != grid.dim:
            raise ValueError("spatial cell shape must match the momentum dimension")
        self.grid = grid
        self.theta = int(theta)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != self.cells + (grid.size,):
            raise ValueError("values do not match cells x momentum-grid shape")
        if np.any(self.values < 0):
            raise ValueError("Wigner field values must be nonnegative")
        if self.theta == -1 and np.any(self.values > 1.0 + _FERMION_TOL):
            raise ValueError("fermion Wigner field exceeds 1")

    @property
    def cell_lengths(self):
        return tuple(self.box_size / c for c in self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_lengths))

    def cell_centers(self, axis) -> np.ndarray:
        m = self.cells[axis]
        h = self.box_size / m
        return h * (np.arange(m) - (m - 1) / 2.0)

    def mass(self) -> float:
        return float(self.cell_volume * self.grid.node_weight * np.sum(self.values))

    def copy_with(self, values) -> "WignerField":
        return WignerField(self.box_size, self.cells, self.grid, values, self.theta)

    def cell_distribution(self, index) -> Distribution:
        return Distribution(self.grid, self.values[index], self.theta)


# ---------------------------------------------------------------------------
# serialization: CSV (k1..kd,[r1..rd],W) and JSON-header + flat binary payload
# ---------------------------------------------------------------------------

_MAGIC = b"QKNB1\n"


def _fmt(x) -> str:
    return f"{x:.17g}"


def save_distribution_csv(dist: Distribution, path):
    d = dist.grid.dim
    header = ",".join([f"k{a + 1}" for a in range(d)] + ["W"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for node, val in zip(dist.grid.nodes, dist.values):
            fh.write(",".join(_fmt(x) for x in node) + "," + _fmt(val) + "\n")


def load_distribution_csv(path, theta=0, grid: MomentumGrid | None = None) -> Distribution:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    coords, vals = data[:, :-1], data[:, -1]
    if grid is None:
        grid = _infer_grid(coords)
    if coords.shape[0] != grid.size:
        raise ValueError("CSV row count does not match the grid")
    return Distribution(grid, vals, theta)


def _infer_grid(coords: np.ndarray) -> MomentumGrid:
    """Reconstruct a uniform product grid from node coordinates."""
    dim = coords.shape[1]
    axis = np.unique(np.round(coords[:, -1], 12))
    n = axis.size
    if coords.shape[0] != n ** dim:
        raise ValueError("nodes do not form a product grid")
    h = axis[1] - axis[0]
    if np.isclose(n * h, 2.0 * np.pi):
        offset = "fft" if np.any(np.isclose(axis, -np.pi)) and n % 2 == 0 else "centered"
        if np.any(np.isclose(axis, 0.0)) and n % 2 == 0:
            offset = "fft"
        return MomentumGrid.torus(n, dim, offset=offset)
    return MomentumGrid.box(n, dim, half_width=0.5 * n * h)


def save_wigner_csv(field: WignerField, path):
    d = field.grid.dim
    header = ",".join(
        [f"k{a + 1}" for a in range(d)] + [f"r{a + 1}" for a in range(d)] + ["W"]
    )
    centers = [field.cell_centers(a) for a in range(d)]
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for cell in np.ndindex(*field.cells):
            r = [centers[a][cell[a]] for a in range(d)]
            rtxt = ",".join(_fmt(x) for x in r)
            for node, val in zip(field.grid.nodes, field.values[cell]):
                fh.write(",".join(_fmt(x) for x in node) + "," + rtxt + "," + _fmt(val) + "\n")


def save_binary(obj, path):
    """Self-describing binary: magic, header length, JSON header, float64 LE payload."""
    if isinstance(obj, Distribution):
        header = {
            "type": "distribution",
            "grid": obj.grid.describe(),
            "theta": obj.theta,
            "shape": [obj.grid.size],
        }
        payload = obj.values
    elif isinstance(obj, WignerField):
        header = {
            "type": "wigner_field",
            "grid": obj.grid.describe(),
            "theta": obj.theta,
            "box_size": obj.box_size,
            "cells": list(obj.cells),
            "shape": list(obj.values.shape),
        }
        payload = obj.values
    else:
        raise TypeError("can only serialize Distribution or WignerField")
    header.update({"dtype": "<f8", "order": "row-major, momentum index fastest"})
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint64(len(blob)).tobytes())
        fh.write(blob)
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def load_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a qkin binary file")
        (hlen,) = np.frombuffer(fh.read(8), dtype=np.uint64)
        header = json.loads(fh.read(int(hlen)).decode())
        payload = np.frombuffer(fh.read(), dtype="<f8")
    grid = MomentumGrid.from_description(header["grid"])
    values = payload.reshape(header["shape"])
    if header["type"] == "distribution":
        return Distribution(grid, values, header["theta"])
    return WignerField(header["box_size"], header["cells"], grid, values, header["theta"])
