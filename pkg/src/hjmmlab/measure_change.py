"""Girsanov density along real-world paths and reweighted estimators.

Per step, with ``theta_j = <zeta(X), a_j(X)>_beta`` evaluated on the pre-step
curve and ``dB_j`` the standard increments that also drive the path,

    d log Z = sum_j theta_j dB_j - 1/2 |theta|^2 dt
              + sum_jumps log Y(X, gamma(X, x)) - dt int (Y(X, gamma(X, y)) - 1) F(dy).

The first approach time ``tau_n`` is the first grid time with
``||X||_beta >= n``, capped at ``n`` and the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .curves import norm_beta_values
from .drivers import RngStream, brownian_increments
from .errors import ContractViolation, DomainError, StructuralError
from .model import ModelSpec, _integrate_over_marks, theta_values
from .reports import INCONCLUSIVE, PASS
from .simulator import PathEnsemble, SimConfig, simulate_path

DEFAULT_LEVELS = (2, 5, 10)


@dataclass(frozen=True)
class StopLevels:
    levels: tuple = DEFAULT_LEVELS

    def __post_init__(self):
        lv = tuple(int(v) for v in self.levels)
        if not lv or any(v <= 0 for v in lv) or any(b <= a for a, b in zip(lv, lv[1:])):
            raise DomainError("stop levels must be increasing positive integers")
        object.__setattr__(self, "levels", lv)


@dataclass(frozen=True)
class DensityPath:
    times: np.ndarray
    log_density: np.ndarray
    stopped_values: dict
    tau: dict
    status: str

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_density)


def _jump_compensator(spec: ModelSpec, H) -> np.ndarray:
    """``int (Y(h, gamma(h, y)) - 1) F(dy)`` for a batch of curves."""
    jf = spec.real_jumps
    if jf.measure.total_mass == 0:
        return np.zeros(np.shape(H)[:-1])
    if spec.mpr.y_constant is not None:
        return np.full(np.shape(H)[:-1], (spec.mpr.y_constant - 1.0) * jf.measure.total_mass)
    H = np.asarray(H, dtype=float)

    def integrand(G, x):
        return spec.mpr.y(H[None, ...], G) - 1.0

    return _integrate_over_marks(spec, jf, H, integrand).value


def _log_y(spec: ModelSpec, H, G) -> np.ndarray:
    y = spec.mpr.y(H, G)
    if np.any(~(y > 0)):
        raise ContractViolation("jump density Y must be positive")
    return np.log(y)


class DensityTracker:
    """Accumulates ``log Z`` and the stopped values for one batch of P-paths."""

    def __init__(self, spec: ModelSpec, cfg: SimConfig, batch: int, levels=DEFAULT_LEVELS):
        if cfg.measure != "P":
            raise StructuralError("the density is accumulated along real-world (P) paths")
        self.spec = spec
        self.cfg = cfg
        self.levels = StopLevels(tuple(levels)).levels
        self.log_z = np.zeros(batch)
        n_rec = cfg.record_steps().size
        self.log_z_rec = np.zeros((batch, n_rec))
        L = len(self.levels)
        self.tau_step = np.full((batch, L), -1, dtype=np.int64)
        self.hit_by_norm = np.zeros((batch, L), dtype=bool)
        self.stopped = np.full((batch, L), np.nan)
        self.cap = np.array(
            [min(int(math.floor(min(n, cfg.horizon) / cfg.dt + 1e-9)), cfg.n_steps) for n in self.levels]
        )
        self.const_theta = None
        if spec.vol.state_independent and spec.mpr.zeta.state_independent:
            self.const_theta = np.asarray(theta_values(spec, spec.h0.values), dtype=float)
        self.const_comp = None
        jf = spec.real_jumps
        if jf.measure.total_mass == 0 or spec.mpr.y_constant is not None:
            self.const_comp = float(np.asarray(_jump_compensator(spec, spec.h0.values)))

    def _stop(self, k, norms):
        for l, level in enumerate(self.levels):
            open_ = self.tau_step[:, l] < 0
            hit = open_ & (norms >= level) & (k <= self.cap[l])
            at_cap = open_ & ~hit & (k == self.cap[l])
            take = hit | at_cap
            self.tau_step[take, l] = k
            self.hit_by_norm[hit, l] = True
            self.stopped[take, l] = self.log_z[take]

    def begin(self, X0, norms0):
        self._stop(0, norms0)

    def pre_step(self, k, X, dB, ev_rows, ev_G, ev_marks):
        dt = self.cfg.dt
        theta = self.const_theta if self.const_theta is not None else theta_values(self.spec, X)
        self.log_z += dB @ theta if theta.ndim == 1 else np.sum(theta * dB, axis=-1)
        self.log_z -= 0.5 * dt * np.sum(theta * theta, axis=-1)
        comp = self.const_comp if self.const_comp is not None else _jump_compensator(self.spec, X)
        self.log_z -= dt * comp
        if ev_rows is not None:
            np.add.at(self.log_z, ev_rows, _log_y(self.spec, X[ev_rows], ev_G))

    def post_step(self, k, norms):
        self._stop(k + 1, norms)

    def record(self, i, n_rec):
        self.log_z_rec[:, i] = self.log_z

    def result(self) -> dict:
        dt = self.cfg.dt
        return {
            "log_z": self.log_z_rec,
            "log_z_T": self.log_z.copy(),
            "stopped_log_z": self.stopped,
            "tau": self.tau_step * dt,
            "stopped_by_norm": self.hit_by_norm,
            "levels": self.levels,
        }


def density_tracker(levels: Sequence[int] = DEFAULT_LEVELS):
    """Factory for :func:`hjmmlab.simulator.simulate`'s ``density`` argument."""
    lv = StopLevels(tuple(levels)).levels

    def make(spec, cfg, batch):
        return DensityTracker(spec, cfg, batch, lv)

    return make


def density_along_path(
    spec: ModelSpec, cfg: SimConfig, path_index: int = 0, levels: Sequence[int] = DEFAULT_LEVELS
) -> DensityPath:
    """Density of one P-path recomputed step by step from the full path.

    The path and its noise are regenerated from ``(cfg.seed, path_index)``;
    this is the unbatched counterpart of :class:`DensityTracker`.
    """
    if cfg.measure != "P":
        raise StructuralError("the density is accumulated along real-world (P) paths")
    lv = StopLevels(tuple(levels)).levels
    times, curves, log = simulate_path(spec, cfg, path_index)
    n_steps = cfg.n_steps
    s = cfg.substeps
    rng = RngStream(cfg.seed, path_index)
    dB = brownian_increments(spec.cov, n_steps * s, cfg.dt / s, rng) / np.sqrt(
        np.asarray(spec.cov.eigenvalues)
    )
    if s > 1:
        dB = dB.reshape(n_steps, s, -1).sum(axis=1)
    ks = np.clip(np.ceil(log.times / cfg.dt - 1e-12).astype(np.int64) - 1, 0, n_steps - 1)
    jf = spec.real_jumps
    logz = np.zeros(n_steps + 1)
    for k in range(n_steps):
        h = curves[k]
        theta = np.asarray(theta_values(spec, h), dtype=float).reshape(-1)
        inc = float(theta @ dB[k]) - 0.5 * cfg.dt * float(theta @ theta)
        inc -= cfg.dt * float(np.asarray(_jump_compensator(spec, h)).reshape(()))
        for x in log.marks[ks == k]:
            g = np.asarray(jf.evaluate(h, x), dtype=float)
            inc += float(np.asarray(_log_y(spec, h, g)).reshape(()))
        logz[k + 1] = logz[k] + inc
    norms = norm_beta_values(curves, spec.weights)
    stopped, tau = {}, {}
    for level in lv:
        cap = min(int(math.floor(min(level, cfg.horizon) / cfg.dt + 1e-9)), n_steps)
        hits = np.flatnonzero(norms[: cap + 1] >= level)
        k = int(hits[0]) if hits.size else cap
        stopped[level] = float(np.exp(logz[k]))
        tau[level] = k * cfg.dt
    status = "positive" if np.all(np.isfinite(logz)) else "degenerate"
    return DensityPath(times, logz, stopped, tau, status)


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int
    ess: float = float("nan")
    status: str = PASS


def _terminal_values(ens: PathEnsemble, g) -> np.ndarray:
    if isinstance(g, str):
        return ens.functionals[g][:, -1]
    if callable(g):
        if ens.terminal is None:
            raise StructuralError("callable functionals need terminal curves (keep_terminal=True)")
        return np.asarray(g(ens.terminal), dtype=float)
    return np.asarray(g, dtype=float)


def _require_density(ens: PathEnsemble):
    if ens.density is None:
        raise StructuralError("ensemble was simulated without a density tracker")
    return ens.density


def reweighted_expectation(ens: PathEnsemble, g=None, ess_floor: float = 100.0) -> Estimate:
    """``(1/N) sum Z_T g(X)`` over a P-ensemble with its standard error.

    ``g`` is the name of a recorded functional (terminal value used), a
    callable on the terminal curves, an array of per-path values, or
    ``None`` for ``g = 1``.
    """
    dens = _require_density(ens)
    ok = ens.ok
    z = np.exp(dens["log_z_T"][ok])
    vals = np.ones(z.size) if g is None else _terminal_values(ens, g)[ok]
    prod = z * vals
    n = prod.size
    ess = float(z.sum() ** 2 / np.sum(z * z))
    status = PASS if ess >= ess_floor else INCONCLUSIVE
    se = float(prod.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return Estimate(float(prod.mean()), se, n, ess, status)


def direct_expectation(ens: PathEnsemble, g) -> Estimate:
    """Plain Monte Carlo mean of ``g`` over an ensemble (Q-side companion)."""
    ok = ens.ok
    vals = _terminal_values(ens, g)[ok]
    n = vals.size
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return Estimate(float(vals.mean()), se, n, float(n))


@dataclass(frozen=True)
class StoppedEstimate:
    level: int
    value: float
    stderr: float
    fraction_stopped: float


def stopped_martingale_check(ens: PathEnsemble, levels: Optional[Sequence[int]] = None) -> list:
    """``E[Z_{tau_n ^ T}]`` per level and the fraction of paths with ``tau_n < T``."""
    dens = _require_density(ens)
    all_levels = tuple(dens["levels"])
    levels = all_levels if levels is None else tuple(levels)
    ok = ens.ok
    horizon = ens.config.horizon
    out = []
    for level in levels:
        if level not in all_levels:
            raise DomainError(f"level {level} was not tracked (tracked: {all_levels})")
        l = all_levels.index(level)
        z = np.exp(dens["stopped_log_z"][ok, l])
        tau = dens["tau"][ok, l]
        se = float(z.std(ddof=1) / math.sqrt(z.size)) if z.size > 1 else 0.0
        frac = float(np.mean(tau < horizon - 1e-12))
        out.append(StoppedEstimate(int(level), float(z.mean()), se, frac))
    return out


def density_summary(ens: PathEnsemble) -> dict:
    dens = _require_density(ens)
    z = np.exp(dens["log_z_T"][ens.ok])
    out = {
        "Z_T_mean": float(z.mean()),
        "Z_T_sd": float(z.std(ddof=1)) if z.size > 1 else 0.0,
        "Z_T_min": float(z.min()),
    }
    for st in stopped_martingale_check(ens):
        out[f"stopped_fraction_n{st.level}"] = st.fraction_stopped
        out[f"Z_stopped_mean_n{st.level}"] = st.value
    return out


__all__ = [
    "StopLevels",
    "DensityPath",
    "DensityTracker",
    "density_tracker",
    "density_along_path",
    "reweighted_expectation",
    "direct_expectation",
    "stopped_martingale_check",
    "density_summary",
    "Estimate",
    "StoppedEstimate",
]
