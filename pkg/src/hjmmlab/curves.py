"""Finite representation of the forward-curve space H_beta.

Curves are stored as point values on a maturity grid ``0 = z_0 < ... < z_M``.
Between grid points they are linear, beyond ``z_M`` they are flat. The
derivative is therefore piecewise constant and vanishes on the tail, so the
weighted norm

    ||h||_beta^2 = |h(0)|^2 + int_0^inf |h'(z)|^2 exp(beta z) dz

is evaluated exactly cell by cell.

All functions here also have array-level counterparts (``*_values``) working
on the last axis of an ``(..., M+1)`` array; the simulator uses those on whole
batches of paths.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DomainError, StructuralError

# relative tolerance for deciding that a shift is an exact multiple of the step
_SHIFT_RTOL = 1e-9


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CurveGrid:
    """Strictly increasing maturities starting at 0 (years)."""

    points: np.ndarray
    uniform_step: Optional[float] = None

    def __post_init__(self):
        pts = _frozen(self.points)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 2:
            raise StructuralError("grid needs at least two points")
        if pts[0] != 0.0:
            raise StructuralError("grid must start at maturity 0")
        if np.any(np.diff(pts) <= 0):
            raise StructuralError("grid points must be strictly increasing")
        if self.uniform_step is not None:
            step = float(self.uniform_step)
            if not np.array_equal(pts, np.arange(pts.size) * step):
                raise StructuralError("uniform grid must satisfy z_k = k * step exactly")
            object.__setattr__(self, "uniform_step", step)

    @classmethod
    def uniform(cls, z_max: float, step: float) -> "CurveGrid":
        n = round(z_max / step)
        if n < 1 or abs(n * step - z_max) > 1e-9 * max(1.0, z_max):
            raise DomainError(f"z_max={z_max} is not a multiple of step={step}")
        return cls(np.arange(n + 1) * step, uniform_step=step)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def z_max(self) -> float:
        return float(self.points[-1])

    def index_of(self, z: float) -> int:
        """Index of grid point ``z``; raises if ``z`` is not on the grid."""
        if self.uniform_step is not None:
            k = round(z / self.uniform_step)
            if 0 <= k < self.size and abs(self.points[k] - z) <= 1e-9 * max(1.0, abs(z)):
                return int(k)
        else:
            k = int(np.searchsorted(self.points, z))
            for cand in (k - 1, k):
                if 0 <= cand < self.size and abs(self.points[cand] - z) <= 1e-12 * max(1.0, abs(z)):
                    return cand
        raise DomainError(f"maturity {z} is not a grid point")

    def same_as(self, other: "CurveGrid") -> bool:
        return self is other or (
            self.size == other.size and np.array_equal(self.points, other.points)
        )

    def __eq__(self, other):
        return isinstance(other, CurveGrid) and self.same_as(other)

    def __hash__(self):
        return hash((self.size, self.points.tobytes()))


@dataclass(frozen=True)
class CovarianceSpec:
    """Truncated trace-class covariance: eigenvalues of the driving noise."""

    eigenvalues: tuple

    def __post_init__(self):
        lam = tuple(float(x) for x in self.eigenvalues)
        if not lam:
            raise StructuralError("covariance needs at least one eigenvalue")
        if any(not (x > 0.0) or not math.isfinite(x) for x in lam):
            raise DomainError("eigenvalues must be finite and positive")
        if any(lam[i] < lam[i + 1] for i in range(len(lam) - 1)):
            raise DomainError("eigenvalues must be non-increasing")
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)


@dataclass(frozen=True, eq=False)
class ForwardCurve:
    """A forward curve sampled on ``grid``; linear in between, flat beyond."""

    grid: CurveGrid
    values: np.ndarray
    beta: float
    tail_zero: bool = False

    def __post_init__(self):
        vals = _frozen(self.values)
        object.__setattr__(self, "values", vals)
        if vals.shape != self.grid.points.shape:
            raise StructuralError(
                f"values shape {vals.shape} does not match grid size {self.grid.size}"
            )
        if not np.all(np.isfinite(vals)):
            raise DomainError("curve values must be finite")
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if self.tail_zero and vals[-1] != 0.0:
            raise DomainError("tail_zero curve must vanish at the last grid point")

    @classmethod
    def from_function(cls, grid: CurveGrid, fn, beta: float, tail_zero: bool = False):
        vals = np.asarray(fn(grid.points), dtype=float) * np.ones(grid.size)
        if tail_zero:
            vals = vals.copy()
            vals[-1] = 0.0
        return cls(grid, vals, beta, tail_zero)

    @classmethod
    def flat(cls, grid: CurveGrid, level: float, beta: float) -> "ForwardCurve":
        return cls(grid, np.full(grid.size, float(level)), beta)

    def __call__(self, z):
        return np.interp(z, self.grid.points, self.values)

    def with_values(self, values, tail_zero: Optional[bool] = None) -> "ForwardCurve":
        tz = self.tail_zero if tail_zero is None else tail_zero
        return ForwardCurve(self.grid, values, self.beta, tz)

    def _check(self, other: "ForwardCurve"):
        _check_compatible(self, other)

    def __add__(self, other):
        if isinstance(other, ForwardCurve):
            self._check(other)
            return self.with_values(self.values + other.values, self.tail_zero and other.tail_zero)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, ForwardCurve):
            self._check(other)
            return self.with_values(self.values - other.values, self.tail_zero and other.tail_zero)
        return NotImplemented

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return self.with_values(float(scalar) * self.values)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _check_compatible(h: ForwardCurve, k: ForwardCurve):
    if not h.grid.same_as(k.grid):
        raise StructuralError("curves live on different grids")
    if h.beta != k.beta:
        raise StructuralError(f"beta mismatch: {h.beta} vs {k.beta}")


# ---------------------------------------------------------------- array level


def cell_weights(points: np.ndarray, beta: float) -> np.ndarray:
    """Per-cell factor ``int_cell exp(beta z) dz / dz_cell^2``.

    Multiplying by the squared value difference across the cell gives the
    exact contribution of that cell to the squared norm.
    """
    z = np.asarray(points, dtype=float)
    dz = np.diff(z)
    return np.exp(beta * z[:-1]) * np.expm1(beta * dz) / beta / dz**2


def inner_beta_values(h: np.ndarray, k: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted inner product over the last axis, broadcasting leading axes."""
    h = np.asarray(h)
    k = np.asarray(k)
    dh = np.diff(h, axis=-1)
    dk = np.diff(k, axis=-1)
    return h[..., 0] * k[..., 0] + np.sum(dh * dk * weights, axis=-1)


def norm_beta_values(h: np.ndarray, weights: np.ndarray) -> np.ndarray:
    h = np.asarray(h)
    d = np.diff(h, axis=-1)
    sq = h[..., 0] ** 2 + np.sum(d * d * weights, axis=-1)
    return np.sqrt(sq)


def antiderivative_values(h: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid along the last axis, starting at 0."""
    return cumulative_trapezoid(h, points, axis=-1, initial=0.0)


# ---------------------------------------------------------------- curve level


def norm_beta(h: ForwardCurve) -> float:
    """H_beta norm of ``h``; the flat tail contributes nothing."""
    w = cell_weights(h.grid.points, h.beta)
    return float(norm_beta_values(h.values, w))


def inner_beta(h: ForwardCurve, k: ForwardCurve) -> float:
    _check_compatible(h, k)
    w = cell_weights(h.grid.points, h.beta)
    return float(inner_beta_values(h.values, k.values, w))


def shift(h: ForwardCurve, t: float) -> ForwardCurve:
    """Musiela shift ``z -> h(z + t)``.

    On a uniform grid with ``t`` a multiple of the step the result is an
    exact index shift with the tail filled by the last value; otherwise the
    curve is interpolated.
    """
    if t < 0:
        raise DomainError(f"shift time must be non-negative, got {t}")
    if t == 0:
        return h
    step = h.grid.uniform_step
    if step is not None:
        m = round(t / step)
        if abs(m * step - t) <= _SHIFT_RTOL * max(step, t):
            return h.with_values(shift_index_values(h.values, m))
    return h.with_values(np.interp(h.grid.points + t, h.grid.points, h.values))


def shift_index_values(values: np.ndarray, m: int) -> np.ndarray:
    """Shift by ``m`` grid cells along the last axis with a flat tail."""
    out = np.empty_like(values)
    n = values.shape[-1]
    if m >= n:
        out[...] = values[..., -1:]
        return out
    out[..., : n - m] = values[..., m:]
    out[..., n - m :] = values[..., -1:]
    return out


def apply_generator(h: ForwardCurve) -> ForwardCurve:
    """Derivative ``d/dz`` by finite differences.

    Second-order central differences inside, second-order one-sided at both
    ends (``numpy.gradient`` with ``edge_order=2``).
    """
    if h.grid.size < 3:
        raise StructuralError("generator needs at least 3 grid points")
    spacing = h.grid.uniform_step if h.grid.uniform_step is not None else h.grid.points
    d = np.gradient(h.values, spacing, edge_order=2)
    return ForwardCurve(h.grid, d, h.beta)


def antiderivative(h: ForwardCurve) -> ForwardCurve:
    """``z -> int_0^z h(u) du``, exact for the piecewise-linear interpolant."""
    return ForwardCurve(h.grid, antiderivative_values(h.values, h.grid.points), h.beta)


# ---------------------------------------------------------------- CSV


def write_curve_csv(path, h: ForwardCurve) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# beta={h.beta!r},tail_zero={str(h.tail_zero).lower()}\n")
        w = csv.writer(fh)
        w.writerow(["maturity", "value"])
        for z, v in zip(h.grid.points, h.values):
            w.writerow([repr(float(z)), repr(float(v))])


def read_curve_csv(path, uniform_step: Optional[float] = None) -> ForwardCurve:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise StructuralError(f"{path}: missing '# beta=...' header line")
        meta = dict(part.split("=", 1) for part in header[1:].strip().split(","))
        rows = list(csv.reader(fh))
    if rows and rows[0] == ["maturity", "value"]:
        rows = rows[1:]
    data = np.array([[float(a), float(b)] for a, b in rows])
    grid = CurveGrid(data[:, 0], uniform_step=uniform_step)
    return ForwardCurve(
        grid,
        data[:, 1],
        float(meta["beta"]),
        tail_zero=meta.get("tail_zero", "false").strip() == "true",
    )


def curves_equal(h: ForwardCurve, k: ForwardCurve) -> bool:
    return h.grid.same_as(k.grid) and h.beta == k.beta and np.array_equal(h.values, k.values)


__all__: Sequence[str] = [
    "CurveGrid",
    "CovarianceSpec",
    "ForwardCurve",
    "norm_beta",
    "inner_beta",
    "shift",
    "apply_generator",
    "antiderivative",
    "cell_weights",
    "norm_beta_values",
    "inner_beta_values",
    "antiderivative_values",
    "shift_index_values",
    "write_curve_csv",
    "read_curve_csv",
]
