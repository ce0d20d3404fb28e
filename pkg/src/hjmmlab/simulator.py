"""Time stepping of the HJMM equation in Musiela parameterization.

One step of size ``dt`` (equal to the grid step, so the shift is exact):

1. transport ``h <- h(. + dt)`` with the last value repeated,
2. drift ``+ dt * drift(h_pre)``,
3. diffusion ``+ sum_j a_j(h_pre) dB_j``,
4. jumps ``+ sum_k gamma(h_pre, x_k) - dt * int gamma(h_pre, y) F(dy)``.

The vol columns ``a_j`` already carry the factor ``sqrt(lambda_j)``, so the
``dB_j`` used here are standard Brownian increments with variance ``dt``.

Paths are simulated in fixed-size batches; each path draws its noise from
its own counter-based stream, so results do not depend on the number of
worker threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace
from typing import Callable, Optional

import numpy as np

from ._kernels import advance
from .curves import ForwardCurve, shift_index_values
from .drivers import JumpLog, RngStream, brownian_increments, mark_integral, sample_jumps
from .errors import BlowUpError, DomainError, StructuralError
from .model import ModelSpec, compensator_values, xi_values

BLOWUP_NORM = 1e6
MAX_BLOWUP_FRACTION = 0.01
OK = "ok"
BLOWUP = "blowup"


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``record_stride`` is in steps; the initial and terminal times are always
    recorded. ``substeps > 1`` draws the Brownian motion on a grid ``dt /
    substeps`` and sums it, which couples this run with a finer run that
    uses the same seed (needed for refinement studies).
    """

    horizon: float
    dt: float
    n_paths: int
    measure: str = "Q"
    seed: int = 0
    record_stride: int = 1
    threads: int = 1
    batch_size: int = 256
    substeps: int = 1
    record_curves: bool = True
    keep_terminal: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        if self.n_paths < 1:
            raise DomainError("n_paths must be at least 1")
        if self.measure not in ("P", "Q"):
            raise DomainError(f"measure must be 'P' or 'Q', got {self.measure!r}")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise DomainError(f"dt={self.dt} does not divide horizon={self.horizon}")
        if self.record_stride < 1 or self.batch_size < 1 or self.threads < 1 or self.substeps < 1:
            raise DomainError("record_stride, batch_size, threads and substeps must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def record_steps(self) -> np.ndarray:
        return np.unique(np.r_[np.arange(0, self.n_steps + 1, self.record_stride), self.n_steps])


@dataclass
class PathEnsemble:
    config: SimConfig
    spec_digest: str
    points: np.ndarray
    beta: float
    times: np.ndarray
    record_steps: np.ndarray
    status: np.ndarray
    blowup_step: np.ndarray
    jump_logs: list
    jumps_applied: np.ndarray
    short_rate: np.ndarray
    curves: Optional[np.ndarray] = None
    terminal: Optional[np.ndarray] = None
    functionals: dict = field(default_factory=dict)
    density: Optional[dict] = None

    @property
    def n_paths(self) -> int:
        return int(self.status.size)

    @property
    def ok(self) -> np.ndarray:
        return self.status == OK

    @property
    def n_blowups(self) -> int:
        return int(np.sum(~self.ok))

    def provenance(self, i: int) -> RngStream:
        return RngStream(self.config.seed, i)

    def short_rate_integral(self) -> np.ndarray:
        """Left-point ``int_0^t X_s(0) ds`` at every simulation step, ``(N, n_steps + 1)``."""
        dt = self.config.dt
        out = np.zeros_like(self.short_rate)
        out[:, 1:] = np.cumsum(self.short_rate[:, :-1], axis=1) * dt
        return out

    def curve(self, path: int, record: int) -> ForwardCurve:
        if self.curves is None:
            raise StructuralError("curves were not recorded (record_curves=False)")
        from .curves import CurveGrid

        grid = CurveGrid(self.points, self.config.dt)
        return ForwardCurve(grid, self.curves[path, record], self.beta)


Observer = Callable[[float, np.ndarray, SimpleNamespace], np.ndarray]


def _drift_parts(spec: ModelSpec, measure: str):
    """Callable drift plus a flag saying it can be evaluated once."""
    if measure == "Q":
        return (lambda H: xi_values(spec, H)), spec.state_independent("Q")
    return spec.real_drift, spec.real_drift.state_independent


def _event_table(logs, dt, n_steps):
    """Flattened jump events of a batch sorted by step: ``(step, row, marks)``."""
    rows, steps, marks = [], [], []
    for r, log in enumerate(logs):
        if len(log):
            k = np.clip(np.ceil(log.times / dt - 1e-12).astype(np.int64) - 1, 0, n_steps - 1)
            steps.append(k)
            rows.append(np.full(k.size, r))
            marks.append(log.marks)
    if not steps:
        return None
    steps = np.concatenate(steps)
    order = np.argsort(steps, kind="stable")
    return steps[order], np.concatenate(rows)[order], np.concatenate(marks)[order]


def _check_setup(spec: ModelSpec, cfg: SimConfig):
    step = spec.grid.uniform_step
    if step is None or abs(step - cfg.dt) > 1e-9 * cfg.dt:
        raise StructuralError(f"dt={cfg.dt} must equal the uniform grid step {step}")


def _run_batch(spec, cfg, start, stop, observers, density, drift_const, vol_const, comp_const):
    n = spec.grid.size
    n_steps = cfg.n_steps
    B = stop - start
    dt = cfg.dt
    jf = spec.jumps(cfg.measure)
    drift_fn, _ = _drift_parts(spec, cfg.measure)
    w = np.ascontiguousarray(spec.weights)
    rec = cfg.record_steps()
    rec_pos = {int(s): i for i, s in enumerate(rec)}

    # noise
    sqrt_lam = np.sqrt(np.asarray(spec.cov.eigenvalues))
    s = cfg.substeps
    dB = np.empty((n_steps, B, spec.cov.dim))
    logs = []
    for r, idx in enumerate(range(start, stop)):
        rng = RngStream(cfg.seed, idx)
        fine = brownian_increments(spec.cov, n_steps * s, dt / s, rng) / sqrt_lam
        if s > 1:
            fine = fine.reshape(n_steps, s, -1).sum(axis=1)
        dB[:, r, :] = fine
        if jf.measure.total_mass > 0:
            logs.append(sample_jumps(jf.measure, cfg.horizon, rng))
        else:
            logs.append(JumpLog(np.zeros(0), np.zeros((0, jf.measure.support_dim))))
    events = _event_table(logs, dt, n_steps)
    ev_ptr = 0
    applied = np.zeros(B, dtype=np.int64)

    buf = np.empty((B, n + n_steps))
    buf[:, :n] = spec.h0.values
    status = np.full(B, OK, dtype=object)
    blow = np.full(B, -1, dtype=np.int64)
    int_short = np.zeros(B)
    curves = np.empty((B, rec.size, n)) if cfg.record_curves else None
    funcs = {}

    X0 = buf[:, :n]
    norms = np.sqrt(np.sum(np.diff(X0, axis=-1) ** 2 * w, axis=-1) + X0[:, 0] ** 2)
    tracker = density(spec, cfg, B) if density is not None else None
    if tracker is not None:
        tracker.begin(X0, norms)

    def record(k, X):
        i = rec_pos[k]
        if curves is not None:
            curves[:, i] = X
        if observers:
            ctx = SimpleNamespace(
                step=k,
                int_short=int_short.copy(),
                log_z=None if tracker is None else tracker.log_z.copy(),
                points=spec.points,
                spec=spec,
            )
            for name, obs in observers.items():
                val = np.asarray(obs(k * dt, X, ctx), dtype=float)
                arr = funcs.get(name)
                if arr is None:
                    arr = funcs[name] = np.full((B, rec.size) + val.shape[1:], np.nan)
                arr[:, i] = val
        if tracker is not None:
            tracker.record(i, rec.size)

    record(0, X0)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            X = buf[:, k : k + n]
            if drift_const is not None:
                drift = drift_const
            else:
                drift = np.ascontiguousarray(np.broadcast_to(drift_fn(X), X.shape), dtype=float)
                if jf.measure.total_mass > 0:
                    comp = comp_const
                    if comp is None:
                        comp = compensator_values(spec, X, cfg.measure)
                    drift = drift - comp
            if drift.ndim == 1:
                drift = drift[None, :]
            if vol_const is not None:
                vol = vol_const
            else:
                vol = np.ascontiguousarray(spec.vol(X), dtype=float)

            # jumps in this step, evaluated on the pre-step curve
            ev_rows = None
            ev_G = None
            ev_marks = None
            if events is not None:
                steps_e, rows_e, marks_e = events
                end = ev_ptr
                while end < steps_e.size and steps_e[end] == k:
                    end += 1
                if end > ev_ptr:
                    ev_rows = rows_e[ev_ptr:end]
                    ev_marks = marks_e[ev_ptr:end]
                    ev_G = np.array(jf.evaluate(X[ev_rows], ev_marks), dtype=float)
                ev_ptr = end

            dBk = dB[k]
            if tracker is not None:
                tracker.pre_step(k, X, dBk, ev_rows, ev_G, ev_marks)
            int_short += dt * buf[:, k]

            sq = advance(buf, k, n, dt, drift, vol, dBk, w)
            Xn = buf[:, k + 1 : k + 1 + n]
            if ev_rows is not None:
                np.add.at(Xn, ev_rows, ev_G)
                np.add.at(applied, ev_rows, 1)
                touched = np.unique(ev_rows)
                d = np.diff(Xn[touched], axis=-1)
                sq[touched] = np.sum(d * d * w, axis=-1) + Xn[touched, 0] ** 2
            norms = np.sqrt(sq)
            bad = ~np.isfinite(norms) | (norms > BLOWUP_NORM)
            if np.any(bad):
                fresh = bad & (blow < 0)
                blow[fresh] = k + 1
                status[bad] = BLOWUP
                Xn[bad] = 0.0
                norms[bad] = 0.0
            if tracker is not None:
                tracker.post_step(k, norms)
            if k + 1 in rec_pos:
                record(k + 1, Xn)

    # blown-up paths: recorded values from the failure onwards are meaningless
    for r in np.flatnonzero(blow >= 0):
        after = rec >= blow[r]
        if curves is not None:
            curves[r, after] = np.nan
        for arr in funcs.values():
            arr[r, after] = np.nan

    out = {
        "status": status,
        "blowup_step": blow,
        "logs": logs,
        "applied": applied,
        "short_rate": buf[:, : n_steps + 1].copy(),
        "curves": curves,
        "terminal": buf[:, n_steps : n_steps + n].copy() if cfg.keep_terminal else None,
        "functionals": funcs,
        "density": tracker.result() if tracker is not None else None,
    }
    return out


def simulate(
    spec: ModelSpec,
    cfg: SimConfig,
    observers: Optional[dict] = None,
    density=None,
    raise_on_blowup: bool = True,
) -> PathEnsemble:
    """Simulate ``cfg.n_paths`` independent paths from ``spec.h0``.

    Parameters
    ----------
    observers : dict, optional
        ``name -> fn(t, X, ctx)`` evaluated at every recorded time on the
        batch of curves ``X`` (``(B, n)``); ``ctx`` carries the left-point
        short-rate integral ``int_short`` and, when tracked, ``log_z``.
    density : callable, optional
        Factory ``(spec, cfg, batch) -> tracker`` accumulating a quantity
        along each path (see :mod:`hjmmlab.measure_change`).
    raise_on_blowup : bool
        Raise :class:`BlowUpError` when more than 1% of the paths blow up.
    """
    _check_setup(spec, cfg)
    jf = spec.jumps(cfg.measure)
    drift_fn, drift_indep = _drift_parts(spec, cfg.measure)
    comp_const = None
    if jf.measure.total_mass > 0 and jf.state_independent:
        comp_const = np.asarray(compensator_values(spec, spec.h0.values, cfg.measure), dtype=float)
    drift_const = None
    if drift_indep:
        d = np.array(np.broadcast_to(drift_fn(spec.h0.values[None, :]), (1, spec.grid.size)))
        if jf.measure.total_mass > 0:
            d = None if comp_const is None else d - comp_const
        drift_const = None if d is None else np.ascontiguousarray(d, dtype=float)
    vol_const = None
    if spec.vol.state_independent:
        vol_const = np.ascontiguousarray(spec.vol(spec.h0.values[None, :]), dtype=float)

    batches = [
        (a, min(a + cfg.batch_size, cfg.n_paths)) for a in range(0, cfg.n_paths, cfg.batch_size)
    ]

    def work(b):
        return _run_batch(spec, cfg, b[0], b[1], observers, density, drift_const, vol_const, comp_const)

    if cfg.threads == 1 or len(batches) == 1:
        parts = [work(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(work, batches))

    def cat(key):
        vals = [p[key] for p in parts]
        return None if vals[0] is None else np.concatenate(vals)

    funcs = {k: np.concatenate([p["functionals"][k] for p in parts]) for k in parts[0]["functionals"]}
    dens = None
    if parts[0]["density"] is not None:
        dens = {
            k: (np.concatenate([p["density"][k] for p in parts]) if isinstance(v, np.ndarray) else v)
            for k, v in parts[0]["density"].items()
        }
    rec = cfg.record_steps()
    ens = PathEnsemble(
        config=cfg,
        spec_digest=spec.digest(),
        points=spec.points,
        beta=spec.beta,
        times=rec * cfg.dt,
        record_steps=rec,
        status=cat("status"),
        blowup_step=cat("blowup_step"),
        jump_logs=[log for p in parts for log in p["logs"]],
        jumps_applied=cat("applied"),
        short_rate=cat("short_rate"),
        curves=cat("curves"),
        terminal=cat("terminal"),
        functionals=funcs,
        density=dens,
    )
    if raise_on_blowup and ens.n_blowups > MAX_BLOWUP_FRACTION * cfg.n_paths:
        first = int(ens.blowup_step[ens.blowup_step >= 0].min())
        err = BlowUpError(
            f"{ens.n_blowups} of {cfg.n_paths} paths blew up (first at step {first})",
            step=first,
            n_failed=ens.n_blowups,
        )
        err.ensemble = ens
        raise err
    return ens


# ---------------------------------------------------------------- reference


def step(h: ForwardCurve, drift, vol, jumps_in_step, jump_field, dW, dt, compensator=None):
    """One explicit step for a single curve (reference implementation).

    Parameters
    ----------
    h : ForwardCurve
        Pre-step curve on a uniform grid with step ``dt``.
    drift : callable or array
        Drift field evaluated at ``h`` (``(n,) -> (n,)``) or its values.
    vol : callable
        Vol field, ``(n,) -> (J, n)``.
    jumps_in_step : array_like
        Marks ``(K, d)`` of the jumps falling into the step.
    jump_field : JumpField
    dW : array_like
        Standard Brownian increments ``(J,)`` with variance ``dt``.
    compensator : array, optional
        Precomputed ``int gamma(h, y) F(dy)``; computed when omitted.
    """
    if h.grid.uniform_step is None or abs(h.grid.uniform_step - dt) > 1e-9 * dt:
        raise StructuralError("dt must equal the uniform grid step")
    H = h.values
    out = shift_index_values(H, 1)
    d = drift(H) if callable(drift) else drift
    out = out + dt * np.asarray(d, dtype=float)
    A = np.asarray(vol(H), dtype=float).reshape(-1, H.size)
    out = out + np.asarray(dW, dtype=float) @ A
    jf = jump_field
    if jf.measure.total_mass > 0:
        if compensator is None:
            compensator = mark_integral(jf.measure, lambda x: jf.evaluate(H[None, :], x)).value
        out = out - dt * compensator
    marks = np.asarray(jumps_in_step, dtype=float).reshape(-1, jf.measure.support_dim)
    if marks.shape[0]:
        out = out + np.sum(jf.evaluate(H[None, :], marks), axis=0)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite curve values after step")
    return h.with_values(out)


def simulate_path(spec: ModelSpec, cfg: SimConfig, path_index: int = 0):
    """Full path of one trajectory via :func:`step`; ``(times, curves, jump_log)``.

    Uses the same noise streams as :func:`simulate`, so it serves as an
    independent check of the batched kernel.
    """
    _check_setup(spec, cfg)
    n_steps = cfg.n_steps
    jf = spec.jumps(cfg.measure)
    rng = RngStream(cfg.seed, path_index)
    s = cfg.substeps
    sqrt_lam = np.sqrt(np.asarray(spec.cov.eigenvalues))
    dB = brownian_increments(spec.cov, n_steps * s, cfg.dt / s, rng) / sqrt_lam
    if s > 1:
        dB = dB.reshape(n_steps, s, -1).sum(axis=1)
    if jf.measure.total_mass > 0:
        log = sample_jumps(jf.measure, cfg.horizon, rng)
    else:
        log = JumpLog(np.zeros(0), np.zeros((0, jf.measure.support_dim)))
    ks = np.clip(np.ceil(log.times / cfg.dt - 1e-12).astype(np.int64) - 1, 0, n_steps - 1)
    drift_fn, _ = _drift_parts(spec, cfg.measure)
    h = spec.h0
    curves = np.empty((n_steps + 1, spec.grid.size))
    curves[0] = h.values
    for k in range(n_steps):
        comp = None
        if jf.measure.total_mass > 0:
            comp = np.asarray(compensator_values(spec, h.values[None, :], cfg.measure)).reshape(-1)
        d = np.asarray(drift_fn(h.values[None, :])).reshape(-1)
        h = step(
            h,
            d,
            lambda H: spec.vol(H[None, :])[0],
            log.marks[ks == k],
            jf,
            dB[k],
            cfg.dt,
            compensator=comp,
        )
        curves[k + 1] = h.values
    return np.arange(n_steps + 1) * cfg.dt, curves, log


# ---------------------------------------------------------------- mild form


@dataclass(frozen=True)
class MildResidual:
    value: float
    stderr: float
    status: str
    n_paths: int


def mild_residual(
    spec: ModelSpec,
    cfg: SimConfig,
    z_probe: float,
    t_probe: float,
    se_tol: Optional[float] = None,
) -> MildResidual:
    """Monte Carlo residual of the mild form at ``(t_probe, z_probe)``.

    ``E[X_t(z)] - h0(z + t) - int_0^t E[drift(X_s)(z + t - s)] ds`` with the
    time integral taken by the left-point rule on the simulation grid; the
    compensated martingale parts have zero mean. The residual of the
    scheme is therefore a pure discretization bias of order ``dt``.
    """
    from .reports import INCONCLUSIVE, PASS

    _check_setup(spec, cfg)
    iz = spec.grid.index_of(z_probe)
    n_t = int(round(t_probe / cfg.dt))
    if abs(n_t * cfg.dt - t_probe) > 1e-9 or n_t > cfg.n_steps:
        raise DomainError("t_probe must be a simulation time")
    if iz + n_t >= spec.grid.size:
        raise DomainError("z_probe + t_probe must stay on the grid")
    drift_fn, _ = _drift_parts(spec, cfg.measure)
    sub = SimConfig(
        horizon=n_t * cfg.dt,
        dt=cfg.dt,
        n_paths=cfg.n_paths,
        measure=cfg.measure,
        seed=cfg.seed,
        record_stride=1,
        threads=cfg.threads,
        batch_size=cfg.batch_size,
        substeps=cfg.substeps,
        record_curves=False,
        keep_terminal=False,
    )

    def drift_obs(t, X, ctx):
        k = ctx.step
        if k >= n_t:
            return np.zeros(X.shape[0])
        d = np.broadcast_to(drift_fn(X), X.shape)
        return d[:, iz + n_t - k]

    def x_obs(t, X, ctx):
        return X[:, iz]

    ens = simulate(spec, sub, observers={"drift": drift_obs, "x": x_obs})
    ok = ens.ok
    per_path = ens.functionals["x"][ok, -1] - cfg.dt * ens.functionals["drift"][ok, :-1].sum(axis=1)
    target = spec.h0.values[iz + n_t]
    value = float(per_path.mean() - target)
    m = per_path.size
    se = float(per_path.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    status = PASS if se_tol is None or se <= se_tol else INCONCLUSIVE
    return MildResidual(value, se, status, m)


# ---------------------------------------------------------------- outputs


def summary_rows(ens: PathEnsemble) -> list:
    """Per recorded time: mean and SD of every recorded functional."""
    rows = []
    ok = ens.ok
    for i, t in enumerate(ens.times):
        row = {"time": float(t)}
        for name, arr in ens.functionals.items():
            col = arr[ok, i]
            if col.ndim > 1:
                continue
            row[f"{name}_mean"] = float(np.mean(col))
            row[f"{name}_sd"] = float(np.std(col, ddof=1)) if col.size > 1 else 0.0
        rows.append(row)
    return rows


def write_summary_csv(path, ens: PathEnsemble, header: str = "") -> None:
    rows = summary_rows(ens)
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) for k, v in r.items()})


def write_terminal_csv(path, ens: PathEnsemble, max_paths: Optional[int] = None) -> None:
    if ens.terminal is None:
        raise StructuralError("terminal curves were not kept")
    k = ens.n_paths if max_paths is None else min(max_paths, ens.n_paths)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["maturity"] + [f"path_{i}" for i in range(k)])
        for j, z in enumerate(ens.points):
            w.writerow([repr(float(z))] + [repr(float(v)) for v in ens.terminal[:k, j]])


__all__ = [
    "SimConfig",
    "PathEnsemble",
    "simulate",
    "simulate_path",
    "step",
    "mild_residual",
    "MildResidual",
    "write_summary_csv",
    "write_terminal_csv",
]
