"""Statistical tests of discounted-bond martingality, Girsanov consistency and positivity.

The discounted bond with maturity ``T*`` observed at ``t <= T*`` is

    D_t = exp(-int_0^t X_s(0) ds - int_0^{T* - t} X_t(z) dz),

with the time integral by the left-point rule on the simulation grid and
the maturity integral by the trapezoid rule (exact for the interpolant).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .curves import CurveGrid, antiderivative_values
from .errors import DomainError, StructuralError
from .measure_change import (
    DEFAULT_LEVELS,
    density_tracker,
    direct_expectation,
    reweighted_expectation,
    stopped_martingale_check,
)
from .model import ModelSpec, theta_values
from .simulator import MAX_BLOWUP_FRACTION, SimConfig, simulate

N_MONITOR = 8


# ---------------------------------------------------------------- bonds


def discounted_bond(times, curves, T_star: float, points, dt: float) -> np.ndarray:
    """``D_t`` along one path recorded at every simulation step.

    ``curves[k]`` is the curve at time ``times[k] = k * dt``. Returns the
    values for the steps with ``t <= T*``.
    """
    points = np.asarray(points, dtype=float)
    curves = np.asarray(curves, dtype=float)
    grid_step = points[1] - points[0]
    m = int(round(T_star / grid_step))
    if m < 0 or abs(m * grid_step - T_star) > 1e-9 * max(1.0, T_star) or m >= points.size:
        raise DomainError(f"T*={T_star} is not a grid maturity")
    n_t = min(curves.shape[0] - 1, int(round(T_star / dt)))
    short = np.concatenate([[0.0], np.cumsum(curves[:n_t, 0]) * dt])
    out = np.empty(n_t + 1)
    for k in range(n_t + 1):
        j = m - k
        out[k] = math.exp(-short[k] - trapezoid(curves[k, : j + 1], points[: j + 1]))
    return out


def initial_bond(spec: ModelSpec, T_star: float) -> float:
    j = spec.grid.index_of(T_star)
    return float(np.exp(-trapezoid(spec.h0.values[: j + 1], spec.points[: j + 1])))


def bond_observer(spec: ModelSpec, T_star: float, steps: Optional[set] = None):
    """Observer returning ``D_t`` (``nan`` outside ``steps`` or after ``T*``)."""
    m = spec.grid.index_of(T_star)
    pts = spec.points

    def obs(t, X, ctx):
        k = ctx.step
        if (steps is not None and k not in steps) or k > m:
            return np.full(X.shape[0], np.nan)
        j = m - k
        return np.exp(-ctx.int_short - trapezoid(X[:, : j + 1], pts[: j + 1], axis=-1))

    return obs


def monitor_steps(cfg: SimConfig, T_star: float, n_monitor: int = N_MONITOR) -> np.ndarray:
    """``n_monitor`` equally spaced times in ``(0, min(T, T*)]`` rounded to the step grid."""
    end = min(cfg.horizon, T_star)
    k_end = int(round(end / cfg.dt))
    ks = np.unique(np.round(np.arange(1, n_monitor + 1) * k_end / n_monitor).astype(int))
    return ks[ks > 0]


@dataclass
class BondTestResult:
    maturity: float
    measure: str
    times: np.ndarray
    estimates: np.ndarray
    stderr: np.ndarray
    d0: float
    max_dev_se: float
    bias_constant: float = 0.0
    allowance: float = 0.0
    passed: bool = False
    slope: float = float("nan")
    slope_se: float = float("nan")
    t_stat: float = float("nan")
    expected_sign: int = 0
    n_paths: int = 0
    n_excluded: int = 0
    valid: bool = True
    fine_estimates: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d


def _bond_run(spec: ModelSpec, cfg: SimConfig, mon: dict):
    observers = {}
    for T, ks in mon.items():
        observers[f"D_{T:g}"] = bond_observer(spec, T, set(int(k) for k in ks))
    run_cfg = replace(cfg, record_stride=1, record_curves=False, keep_terminal=False)
    ens = simulate(spec, run_cfg, observers=observers, raise_on_blowup=False)
    return ens


def expected_drift_sign(spec: ModelSpec, T_star: float, t: float) -> int:
    """Sign of ``E_P[D_t] - D_0`` for deterministic ``a`` and ``zeta``.

    With ``theta_j = <zeta, a_j>`` and ``A_j(u) = int_0^u a_j``, the bond
    drift under P is ``D * sum_j theta_j A_j(T* - t)``, so
    ``E_P[D_t] = D_0 exp(sum_j theta_j int_0^t A_j(T* - s) ds)``.
    """
    if not (spec.vol.state_independent and spec.mpr.zeta.state_independent):
        raise StructuralError("scalar drift oracle needs state-independent a and zeta")
    theta = np.asarray(theta_values(spec, spec.h0.values), dtype=float)
    A = antiderivative_values(spec.vol(spec.h0.values), spec.points)
    m = spec.grid.index_of(T_star)
    k = int(round(t / (spec.points[1] - spec.points[0])))
    seg = A[:, m - k : m + 1]
    integral = trapezoid(seg, dx=spec.points[1] - spec.points[0], axis=-1)
    return int(np.sign(float(theta @ integral)))


def martingale_test(
    spec: ModelSpec,
    cfg: SimConfig,
    maturities: Sequence[float] = (1.0, 2.0, 5.0),
    n_monitor: int = N_MONITOR,
    calibrate: bool = True,
    n_se: float = 3.0,
) -> list:
    """Discounted-bond martingale test (Q) or drift detection (P).

    Under Q each maturity passes iff ``|E[D_t] - D_0| <= 3 SE + C dt`` at
    every monitor time, with the bias allowance ``C dt = 2 max_t |E_dt -
    E_{dt/2}|`` estimated from a coupled run at half the step. Under P the
    mean per-path least-squares slope of ``D_t`` on ``t`` is reported with
    its standard error; the item passes iff ``|t| > 3`` with the sign of the
    scalar oracle.
    """
    for T in maturities:
        spec.grid.index_of(T)
        if T > spec.grid.z_max:
            raise DomainError(f"maturity {T} beyond the grid")
    main_cfg = replace(cfg, substeps=2 * cfg.substeps) if (calibrate and cfg.measure == "Q") else cfg
    mon = {T: monitor_steps(cfg, T, n_monitor) for T in maturities}
    ens = _bond_run(spec, main_cfg, mon)
    fine = None
    if calibrate and cfg.measure == "Q":
        grid2 = CurveGrid.uniform(spec.grid.z_max, cfg.dt / 2)
        spec2 = spec.refined(grid2)
        cfg2 = replace(cfg, dt=cfg.dt / 2, substeps=cfg.substeps)
        fine = _bond_run(spec2, cfg2, {T: 2 * ks for T, ks in mon.items()})
    ok = ens.ok
    n_excl = ens.n_blowups
    valid = n_excl <= MAX_BLOWUP_FRACTION * ens.n_paths
    results = []
    for T in maturities:
        name = f"D_{T:g}"
        ks = mon[T]
        vals = ens.functionals[name][ok][:, ks]
        est = vals.mean(axis=0)
        se = vals.std(axis=0, ddof=1) / math.sqrt(vals.shape[0])
        d0 = initial_bond(spec, T)
        dev = np.abs(est - d0)
        res = BondTestResult(
            maturity=float(T),
            measure=cfg.measure,
            times=ks * cfg.dt,
            estimates=est,
            stderr=se,
            d0=d0,
            max_dev_se=float(np.max(dev / np.where(se > 0, se, np.inf))) if np.any(se > 0) else 0.0,
            n_paths=int(ok.sum()),
            n_excluded=n_excl,
            valid=valid,
        )
        if cfg.measure == "Q":
            allowance = 0.0
            if fine is not None:
                fvals = fine.functionals[name][fine.ok][:, 2 * ks]
                fest = fvals.mean(axis=0)
                allowance = 2.0 * float(np.max(np.abs(est - fest)))
                res.fine_estimates = fest
            res.allowance = allowance
            res.bias_constant = allowance / cfg.dt
            res.passed = bool(valid and np.all(dev <= n_se * se + allowance))
        else:
            t_all = np.r_[0.0, ks * cfg.dt]
            D = np.column_stack([np.full(vals.shape[0], d0), vals])
            tc = t_all - t_all.mean()
            slopes = (D - D.mean(axis=1, keepdims=True)) @ tc / np.sum(tc * tc)
            res.slope = float(slopes.mean())
            res.slope_se = float(slopes.std(ddof=1) / math.sqrt(slopes.size))
            res.t_stat = res.slope / res.slope_se if res.slope_se > 0 else 0.0
            try:
                res.expected_sign = expected_drift_sign(spec, T, float(ks[-1] * cfg.dt))
            except StructuralError:
                res.expected_sign = 0
            sign_ok = res.expected_sign == 0 or np.sign(res.t_stat) == res.expected_sign
            res.passed = bool(valid and abs(res.t_stat) > n_se and sign_ok)
        results.append(res)
    return results


def write_bond_csv(path, results: Sequence[BondTestResult]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["maturity", "time", "estimate", "stderr", "d0"])
        for r in results:
            for t, e, s in zip(r.times, r.estimates, r.stderr):
                w.writerow([repr(r.maturity), repr(float(t)), repr(float(e)), repr(float(s)), repr(r.d0)])


# ---------------------------------------------------------------- Girsanov


def _grid_index(spec: ModelSpec, z: float) -> int:
    step = spec.points[1] - spec.points[0]
    return int(min(round(z / step), spec.grid.size - 1))


def default_functionals(spec: ModelSpec) -> dict:
    """Five bounded functionals of the terminal curve and the short-rate path."""
    pts = spec.points
    i2 = _grid_index(spec, 2.0)
    i5 = _grid_index(spec, 5.0)
    r0 = float(spec.h0.values[0])
    return {
        "short_rate": lambda t, X, ctx: np.clip(X[:, 0], -0.2, 0.2),
        "yield_5y": lambda t, X, ctx: np.clip(
            trapezoid(X[:, : i5 + 1], pts[: i5 + 1], axis=-1) / pts[i5], -0.2, 0.2
        ),
        "slope_2y": lambda t, X, ctx: np.clip(X[:, i2] - X[:, 0], -0.1, 0.1),
        "short_above_start": lambda t, X, ctx: (X[:, 0] > r0).astype(float),
        "path_discount": lambda t, X, ctx: np.exp(-np.clip(ctx.int_short, -1.0, 1.0)),
    }


@dataclass
class GirsanovReport:
    items: list
    z_mean: float
    z_se: float
    z_min: float
    ess: float
    stopped: list
    passed: bool
    status: str = "pass"
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "status": self.status,
            "Z_T_mean": self.z_mean,
            "Z_T_se": self.z_se,
            "Z_T_min": self.z_min,
            "ess": self.ess,
            "functionals": self.items,
            "stopped": [asdict(s) for s in self.stopped],
            "details": self.details,
        }


def girsanov_consistency(
    spec: ModelSpec,
    cfg: SimConfig,
    functionals: Optional[dict] = None,
    levels: Sequence[int] = DEFAULT_LEVELS,
    ess_floor: float = 100.0,
    n_se: float = 3.0,
) -> GirsanovReport:
    """Compare ``E_P[Z_T g]`` with ``E_Q[g]``; Q uses ``seed + 1``."""
    funcs = default_functionals(spec) if functionals is None else functionals
    base = replace(cfg, record_stride=cfg.n_steps, record_curves=False, keep_terminal=False)
    ens_p = simulate(spec, replace(base, measure="P"), observers=funcs, density=density_tracker(levels))
    ens_q = simulate(spec, replace(base, measure="Q", seed=cfg.seed + 1), observers=funcs)
    items = []
    ok_all = True
    inconclusive = False
    for name in funcs:
        rw = reweighted_expectation(ens_p, name, ess_floor)
        dq = direct_expectation(ens_q, name)
        comb = math.sqrt(rw.stderr**2 + dq.stderr**2)
        diff = rw.value - dq.value
        ok = abs(diff) <= n_se * comb
        inconclusive |= rw.status != "pass"
        ok_all &= ok
        items.append(
            {
                "name": name,
                "reweighted_P": rw.value,
                "reweighted_se": rw.stderr,
                "direct_Q": dq.value,
                "direct_se": dq.stderr,
                "diff": diff,
                "combined_se": comb,
                "passed": bool(ok),
            }
        )
    norm = reweighted_expectation(ens_p, None, ess_floor)
    z = np.exp(ens_p.density["log_z_T"][ens_p.ok])
    stopped = stopped_martingale_check(ens_p, levels)
    z_ok = abs(norm.value - 1.0) <= n_se * norm.stderr
    min_ok = bool(np.all(z > 0))
    stop_ok = all(abs(s.value - 1.0) <= n_se * s.stderr or s.stderr == 0.0 and s.value == 1.0 for s in stopped)
    passed = bool(ok_all and z_ok and min_ok and stop_ok)
    status = "inconclusive" if inconclusive else ("pass" if passed else "fail")
    return GirsanovReport(
        items=items,
        z_mean=norm.value,
        z_se=norm.stderr,
        z_min=float(z.min()),
        ess=norm.ess,
        stopped=stopped,
        passed=passed,
        status=status,
        details={"normalization_ok": z_ok, "positive": min_ok, "stopped_ok": stop_ok},
    )


# ---------------------------------------------------------------- positivity


@dataclass
class PositivityResult:
    fraction: float
    worst: float
    n_triples: int
    threshold: float
    passed: bool
    measure: str
    probes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def positivity_test(
    spec: ModelSpec,
    cfg: SimConfig,
    threshold: float = 1e-3,
    probes: Sequence[tuple] = (),
) -> PositivityResult:
    """Fraction of negative values over (path, recorded time t > 0, maturity).

    ``probes`` are ``(t, z)`` points at which the per-point negativity
    frequency is reported with its binomial standard error; ``t`` must be
    a recorded time.
    """
    if np.any(spec.h0.values < 0):
        raise DomainError("positivity test needs a nonnegative initial curve")
    rec = cfg.record_steps()
    probe_idx = []
    for t, z in probes:
        k = int(round(t / cfg.dt))
        if abs(k * cfg.dt - t) > 1e-9 or k not in set(rec.tolist()):
            raise DomainError(f"probe time {t} is not a recorded time")
        probe_idx.append((k, spec.grid.index_of(z)))

    def neg_count(t, X, ctx):
        return np.sum(X < 0, axis=-1).astype(float)

    def min_val(t, X, ctx):
        return np.min(X, axis=-1)

    observers = {"neg": neg_count, "min": min_val}
    for i, (k, iz) in enumerate(probe_idx):
        observers[f"probe_{i}"] = lambda t, X, ctx, iz=iz: X[:, iz]
    ens = simulate(spec, replace(cfg, record_curves=False, keep_terminal=False), observers=observers)
    ok = ens.ok
    neg = ens.functionals["neg"][ok][:, 1:]
    n_trip = int(neg.size * spec.grid.size)
    frac = float(neg.sum() / n_trip) if n_trip else 0.0
    worst = float(min(0.0, np.min(ens.functionals["min"][ok][:, 1:])))
    pos_rec = {int(s): i for i, s in enumerate(rec)}
    out_probes = []
    for i, ((t, z), (k, iz)) in enumerate(zip(probes, probe_idx)):
        vals = ens.functionals[f"probe_{i}"][ok][:, pos_rec[k]]
        p = float(np.mean(vals < 0))
        out_probes.append(
            {"t": float(t), "z": float(z), "fraction": p, "se": math.sqrt(max(p * (1 - p), 0.0) / vals.size)}
        )
    return PositivityResult(frac, worst, n_trip, threshold, frac <= threshold, cfg.measure, out_probes)


__all__ = [
    "discounted_bond",
    "initial_bond",
    "bond_observer",
    "monitor_steps",
    "BondTestResult",
    "martingale_test",
    "expected_drift_sign",
    "write_bond_csv",
    "default_functionals",
    "GirsanovReport",
    "girsanov_consistency",
    "PositivityResult",
    "positivity_test",
]
