"""Command-line entry point: ``hjmmlab <command> --config <file>``.

Every command writes into ``--out`` (default: the config's ``output.dir``):
the resolved configuration echo ``config.yaml``, CSV tables and a
``<command>_summary.json``. Outputs carry no timestamps, so re-running
with the echoed configuration reproduces them byte for byte.

Exit codes: 0 all pass, 1 test or check failure, 2 configuration error,
3 numerical blow-up.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checks import run_checks
from .config import ExperimentConfig, load_config
from .diagnostics import (
    bond_observer,
    girsanov_consistency,
    martingale_test,
    positivity_test,
    write_bond_csv,
)
from .errors import BlowUpError, ConfigError, DomainError, StructuralError
from .reports import dump_json
from .simulator import SimConfig, simulate, write_summary_csv, write_terminal_csv
from .zoo import build_model

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3
COMMANDS = ("simulate", "check", "martingale-test", "girsanov-test", "positivity-test", "all")


def _sim_config(cfg: ExperimentConfig, threads: int, **over) -> SimConfig:
    s = cfg["simulation"]
    kw = dict(
        horizon=s["horizon"],
        dt=s["dt"],
        n_paths=s["n_paths"],
        measure=s["measure"],
        seed=s["seed"],
        record_stride=s["record_stride"],
        substeps=s["substeps"],
        batch_size=s["batch_size"],
        threads=threads,
    )
    kw.update(over)
    return SimConfig(**kw)


def _header(cfg: ExperimentConfig, spec) -> str:
    return f"model digest {spec.digest()}\n" + cfg.to_yaml()


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text)


def cmd_simulate(cfg, spec, out: Path, threads: int) -> int:
    sc = _sim_config(cfg, threads, keep_terminal=cfg["simulation"]["terminal_csv_paths"] > 0, record_curves=False)
    obs = {"short_rate": lambda t, X, ctx: X[:, 0].copy()}
    for T in cfg["diagnostics"]["maturities"]:
        obs[f"D_{T:g}"] = bond_observer(spec, T)
    ens = simulate(spec, sc, observers=obs)
    write_summary_csv(out / "simulate_summary.csv", ens, _header(cfg, spec))
    k = cfg["simulation"]["terminal_csv_paths"]
    if k > 0:
        write_terminal_csv(out / "terminal_curves.csv", ens, k)
    summary = {
        "command": "simulate",
        "model_digest": spec.digest(),
        "n_paths": ens.n_paths,
        "n_blowups": ens.n_blowups,
        "jumps_applied": int(np.sum(ens.jumps_applied)),
        "status": "pass",
    }
    _write(out, "simulate_summary.json", dump_json(summary))
    return EXIT_OK


def cmd_check(cfg, spec, out: Path, threads: int) -> int:
    report = run_checks(spec, cfg["check"])
    report.write(out, "check_report")
    print(report.to_text(), end="")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_martingale(cfg, spec, out: Path, threads: int) -> int:
    d = cfg["diagnostics"]
    sc = _sim_config(cfg, threads)
    results = martingale_test(spec, sc, d["maturities"], d["n_monitor"], d["calibrate"])
    write_bond_csv(out / "martingale_bonds.csv", results)
    summary = {
        "command": "martingale-test",
        "measure": sc.measure,
        "model_digest": spec.digest(),
        "results": [r.to_dict() for r in results],
        "passed": all(r.passed for r in results),
    }
    _write(out, "martingale_summary.json", dump_json(summary))
    for r in results:
        if sc.measure == "Q":
            print(
                f"T*={r.maturity:g}: max |E D_t - D_0|/SE = {r.max_dev_se:.3f}, "
                f"bias allowance {r.allowance:.3g}: {'PASS' if r.passed else 'FAIL'}"
            )
        else:
            print(
                f"T*={r.maturity:g}: slope {r.slope:.4g} (t = {r.t_stat:.2f}, expected sign "
                f"{r.expected_sign:+d}): {'PASS' if r.passed else 'FAIL'}"
            )
    if not all(r.valid for r in results):
        return EXIT_BLOWUP
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def cmd_girsanov(cfg, spec, out: Path, threads: int) -> int:
    d = cfg["diagnostics"]
    sc = _sim_config(cfg, threads)
    rep = girsanov_consistency(spec, sc, levels=d["levels"], ess_floor=d["ess_floor"])
    summary = {"command": "girsanov-test", "model_digest": spec.digest(), **rep.to_dict()}
    _write(out, "girsanov_summary.json", dump_json(summary))
    for it in rep.items:
        print(
            f"{it['name']}: P-reweighted {it['reweighted_P']:.6g} vs Q {it['direct_Q']:.6g} "
            f"(diff {it['diff']:.3g}, SE {it['combined_se']:.3g}): {'PASS' if it['passed'] else 'FAIL'}"
        )
    print(f"E_P[Z_T] = {rep.z_mean:.5f} +- {rep.z_se:.5f}, status {rep.status}")
    return EXIT_OK if rep.status != "fail" else EXIT_FAIL


def cmd_positivity(cfg, spec, out: Path, threads: int) -> int:
    d = cfg["diagnostics"]
    sc = _sim_config(cfg, threads)
    probes = [tuple(float(v) for v in p) for p in d["probes"]]
    res = positivity_test(spec, sc, d["positivity_threshold"], probes)
    summary = {"command": "positivity-test", "model_digest": spec.digest(), **res.to_dict()}
    _write(out, "positivity_summary.json", dump_json(summary))
    print(
        f"negative fraction {res.fraction:.3g} (threshold {res.threshold:g}), worst {res.worst:.3g}: "
        f"{'PASS' if res.passed else 'FAIL'}"
    )
    return EXIT_OK if res.passed else EXIT_FAIL


HANDLERS = {
    "simulate": cmd_simulate,
    "check": cmd_check,
    "martingale-test": cmd_martingale,
    "girsanov-test": cmd_girsanov,
    "positivity-test": cmd_positivity,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjmmlab", description="HJM-type forward-curve experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML experiment file")
    ap.add_argument("--seed", type=int, default=None, help="override simulation.seed (unsigned 64-bit)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    ap.add_argument("--out", default=None, help="output directory (default: output.dir)")
    return ap


def run(command: str, config: str, seed: Optional[int] = None, threads: int = 1, out: Optional[str] = None) -> int:
    """Execute one command and return its exit code."""
    try:
        if threads < 1:
            raise ConfigError("--threads must be at least 1", field="--threads")
        overrides = {} if seed is None else {"simulation.seed": seed}
        cfg = load_config(config, overrides)
        out_dir = Path(out if out is not None else cfg["output"]["dir"])
        spec = build_model(cfg["model"]["name"], **cfg.model_params())
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, StructuralError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir, "config.yaml", cfg.to_yaml())
    print("resolved configuration:")
    print(cfg.to_yaml(), end="")
    names = list(HANDLERS) if command == "all" else [command]
    codes = []
    for name in names:
        try:
            codes.append(HANDLERS[name](cfg, spec, out_dir, threads))
        except BlowUpError as exc:
            print(f"{name}: numerical blow-up: {exc}", file=sys.stderr)
            codes.append(EXIT_BLOWUP)
        except (ConfigError, DomainError, StructuralError) as exc:
            print(f"{name}: configuration error: {exc}", file=sys.stderr)
            codes.append(EXIT_CONFIG)
    if EXIT_BLOWUP in codes:
        return EXIT_BLOWUP
    if EXIT_CONFIG in codes:
        return EXIT_CONFIG
    return EXIT_FAIL if EXIT_FAIL in codes else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.seed, args.threads, args.out)


if __name__ == "__main__":
    sys.exit(main())
