"""Noise sources: truncated Hilbert-space Brownian motion and marked Poisson jumps.

Every random draw is taken from a counter-based Philox stream keyed by
``(seed, path_index, purpose)``, so a path's noise does not depend on which
worker simulates it or in which order paths are generated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .curves import CovarianceSpec
from .errors import AccuracyError, DomainError

_PURPOSES = {"brownian": 0, "jumps": 1, "marks": 2, "checks": 3}

Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class RngStream:
    """Identifies the independent random stream of one simulated path."""

    seed: int
    path_index: int

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise DomainError("seed must be an unsigned 64-bit integer")
        if int(self.path_index) < 0:
            raise DomainError("path_index must be non-negative")

    def generator(self, purpose: str = "brownian") -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.path_index), _PURPOSES[purpose])
        )
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class MarkMeasure:
    """Finite intensity measure ``F`` on d-dimensional marks.

    ``sampler(gen, n)`` draws ``n`` marks from ``F / total_mass`` as an
    ``(n, d)`` array. Point-mass mixtures additionally expose ``atoms`` so
    mark integrals can be summed exactly.
    """

    total_mass: float
    sampler: Sampler
    support_dim: int = 1
    description: str = ""
    atoms: Optional[tuple] = None

    def __post_init__(self):
        if not (self.total_mass >= 0 and np.isfinite(self.total_mass)):
            raise DomainError("total_mass must be finite and non-negative")

    def scaled(self, factor: float) -> "MarkMeasure":
        """The measure ``factor * F`` (same mark law, scaled intensity)."""
        if factor < 0:
            raise DomainError("scale factor must be non-negative")
        atoms = None
        if self.atoms is not None:
            pts, wts = self.atoms
            atoms = (pts, wts * factor)
        return MarkMeasure(
            self.total_mass * factor,
            self.sampler,
            self.support_dim,
            f"{factor:g} * ({self.description})",
            atoms,
        )


def zero_measure(dim: int = 1) -> MarkMeasure:
    def sampler(gen, n):
        return np.zeros((n, dim))

    return MarkMeasure(0.0, sampler, dim, "zero", (np.zeros((0, dim)), np.zeros(0)))


def point_masses(points, weights) -> MarkMeasure:
    """``sum_k weights[k] * delta_{points[k]}``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 1 and np.ndim(points) == 1 and len(np.atleast_1d(weights)) > 1:
        pts = pts.T
    wts = np.atleast_1d(np.asarray(weights, dtype=float))
    if pts.shape[0] != wts.size:
        raise DomainError("one weight per atom required")
    if np.any(wts < 0):
        raise DomainError("atom weights must be non-negative")
    mass = float(wts.sum())
    probs = wts / mass if mass > 0 else None

    def sampler(gen, n):
        if n == 0:
            return np.zeros((0, pts.shape[1]))
        idx = gen.choice(pts.shape[0], size=n, p=probs)
        return pts[idx]

    desc = " + ".join(f"{w:g}*delta{tuple(p)}" for p, w in zip(pts, wts))
    return MarkMeasure(mass, sampler, pts.shape[1], desc, (pts, wts))


def truncated_exponential(intensity: float, rate: float, upper: float) -> MarkMeasure:
    """``intensity`` times the Exp(``rate``) law conditioned on ``[0, upper]``."""
    if rate <= 0 or upper <= 0:
        raise DomainError("rate and upper must be positive")
    cdf_upper = -np.expm1(-rate * upper)

    def sampler(gen, n):
        u = gen.random(n) * cdf_upper
        return (-np.log1p(-u) / rate)[:, None]

    return MarkMeasure(
        float(intensity), sampler, 1, f"{intensity:g}*Exp({rate:g}) on [0,{upper:g}]"
    )


@dataclass(frozen=True)
class JumpLog:
    """Realised atoms of the Poisson random measure on ``(0, horizon]``."""

    times: np.ndarray
    marks: np.ndarray

    def __len__(self):
        return int(self.times.size)


def brownian_increments(
    cov: CovarianceSpec, n_steps: int, dt: float, rng: RngStream
) -> np.ndarray:
    """``(n_steps, J)`` increments; column ``j`` has variance ``lambda_j * dt``."""
    if n_steps < 1 or not dt > 0:
        raise DomainError("need n_steps >= 1 and dt > 0")
    gen = rng.generator("brownian")
    z = gen.standard_normal((n_steps, cov.dim))
    return z * np.sqrt(np.asarray(cov.eigenvalues) * dt)


def sample_jumps(measure: MarkMeasure, horizon: float, rng: RngStream) -> JumpLog:
    """Poisson count, i.i.d. uniform times on ``(0, horizon]``, i.i.d. marks."""
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    gen = rng.generator("jumps")
    count = int(gen.poisson(measure.total_mass * horizon)) if measure.total_mass > 0 else 0
    times = np.sort(horizon * (1.0 - gen.random(count)))
    marks = np.asarray(measure.sampler(gen, count), dtype=float).reshape(count, measure.support_dim)
    return JumpLog(times, marks)


@dataclass(frozen=True)
class MarkIntegral:
    value: np.ndarray
    stderr: np.ndarray
    exact: bool
    n_marks: int

    def relative_error(self) -> float:
        scale = float(np.max(np.abs(self.value), initial=0.0))
        err = float(np.max(self.stderr, initial=0.0))
        if err == 0.0:
            return 0.0
        return err / scale if scale > 0 else np.inf


def mark_integral(
    measure: MarkMeasure,
    fn: Callable[[np.ndarray], np.ndarray],
    n_mc: int = 100_000,
    seed: int = 0,
    chunk: int = 2048,
    rel_tol: Optional[float] = None,
) -> MarkIntegral:
    """Integrate ``fn`` against ``measure``.

    ``fn`` maps an ``(K, d)`` array of marks to an array whose first axis is
    the mark axis. Point-mass mixtures are summed exactly; otherwise a
    fixed-seed Monte Carlo sample of ``n_mc`` marks is used and the standard
    error is reported. With ``rel_tol`` set, a Monte Carlo estimate whose
    relative standard error exceeds it raises :class:`AccuracyError`.
    """
    if measure.total_mass == 0.0:
        probe = np.asarray(fn(np.zeros((1, measure.support_dim))))
        zero = np.zeros(probe.shape[1:])
        return MarkIntegral(zero, zero.copy(), True, 0)
    if measure.atoms is not None:
        pts, wts = measure.atoms
        vals = np.asarray(fn(pts))
        w = wts.reshape((-1,) + (1,) * (vals.ndim - 1))
        value = np.sum(w * vals, axis=0)
        return MarkIntegral(value, np.zeros_like(value), True, int(wts.size))

    gen = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=int(seed), spawn_key=(2**31, 2)))
    )
    total = None
    total_sq = None
    done = 0
    while done < n_mc:
        k = min(chunk, n_mc - done)
        x = np.asarray(measure.sampler(gen, k), dtype=float).reshape(k, measure.support_dim)
        vals = np.asarray(fn(x), dtype=float)
        s = vals.sum(axis=0)
        s2 = (vals * vals).sum(axis=0)
        total = s if total is None else total + s
        total_sq = s2 if total_sq is None else total_sq + s2
        done += k
    mean = total / n_mc
    var = np.maximum(total_sq / n_mc - mean * mean, 0.0) * n_mc / max(n_mc - 1, 1)
    lam = measure.total_mass
    res = MarkIntegral(lam * mean, lam * np.sqrt(var / n_mc), False, n_mc)
    if rel_tol is not None and res.relative_error() > rel_tol:
        raise AccuracyError(
            f"mark integral relative standard error {res.relative_error():.3g} exceeds {rel_tol:g}"
        )
    return res


def write_jumplog_csv(path, log: JumpLog) -> None:
    path = Path(path)
    d = log.marks.shape[1] if log.marks.ndim == 2 else 1
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"mark_{i}" for i in range(d)])
        for t, m in zip(log.times, log.marks.reshape(len(log), d)):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in m])
