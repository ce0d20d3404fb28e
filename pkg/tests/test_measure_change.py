import numpy as np
import pytest

from hjmmlab.errors import ContractViolation, DomainError, StructuralError
from hjmmlab.measure_change import (
    StopLevels,
    density_along_path,
    density_summary,
    density_tracker,
    direct_expectation,
    reweighted_expectation,
    stopped_martingale_check,
)
from hjmmlab.reports import INCONCLUSIVE
from hjmmlab.simulator import SimConfig, simulate
from hjmmlab.zoo import build_model


def _p_config(**kw):
    base = dict(horizon=1.0, dt=0.02, n_paths=400, measure="P", seed=3, record_stride=10)
    base.update(kw)
    return SimConfig(**base)


def test_trivial_density_is_one():
    s = build_model("hull_white", z_max=3.0, dz=0.02, jump={"lam": 2.0, "x0": 0.01})
    ens = simulate(s, _p_config(), density=density_tracker())
    assert np.all(ens.density["log_z"] == 0.0)
    est = reweighted_expectation(ens, lambda T: T[:, 0])
    assert est.value == pytest.approx(np.mean(ens.terminal[:, 0]), abs=1e-15)
    assert all(st.value == 1.0 for st in stopped_martingale_check(ens))


def test_tracker_matches_single_path_reference():
    s = build_model("capped_proportional", z_max=3.0, dz=0.02, zeta=2.0, jump={"lam": 5.0, "x0": 0.01}, y=2.0)
    cfg = _p_config(n_paths=6, record_stride=1)
    ens = simulate(s, cfg, density=density_tracker((2, 5)))
    for i in (0, 4):
        ref = density_along_path(s, cfg, i, (2, 5))
        assert np.allclose(ens.density["log_z"][i], ref.log_density, atol=1e-12, rtol=0)
        assert ref.status == "positive"


def test_normalisation_constant_theta():
    s = build_model("hull_white", z_max=3.0, dz=0.02, zeta=20.0)
    ens = simulate(s, _p_config(n_paths=4000, record_curves=False), density=density_tracker())
    est = reweighted_expectation(ens)
    assert abs(est.value - 1.0) <= 3 * est.stderr
    assert est.status != INCONCLUSIVE


def test_reweighting_matches_q_for_clipped_short_rate():
    s = build_model("hull_white", z_max=3.0, dz=0.02, zeta=20.0)
    g = lambda T: np.clip(T[:, 0], -0.1, 0.1)  # noqa: E731
    p = simulate(s, _p_config(n_paths=4000, record_curves=False), density=density_tracker())
    q = simulate(s, SimConfig(horizon=1.0, dt=0.02, n_paths=4000, seed=4, record_curves=False))
    a, b = reweighted_expectation(p, g), direct_expectation(q, g)
    assert abs(a.value - b.value) <= 3 * np.hypot(a.stderr, b.stderr)


def test_stopping_inactive_for_bounded_model():
    s = build_model("hull_white", z_max=3.0, dz=0.02, zeta=5.0)
    ens = simulate(s, _p_config(), density=density_tracker((2, 5, 10)))
    zt = reweighted_expectation(ens).value
    for st in stopped_martingale_check(ens):
        assert st.fraction_stopped == 0.0 and st.value == pytest.approx(zt, rel=1e-14)
    summary = density_summary(ens)
    assert summary["Z_T_min"] > 0


def test_stopping_caps_at_level_time():
    # tau_n is capped at n: with a horizon of 3 the level-2 stop happens by t = 2
    s = build_model("hull_white", z_max=4.0, dz=0.02, zeta=1.0)
    ens = simulate(s, _p_config(horizon=3.0, n_paths=20), density=density_tracker((2, 5)))
    assert np.all(ens.density["tau"][:, 0] <= 2.0 + 1e-12)
    assert stopped_martingale_check(ens, [2])[0].fraction_stopped == 1.0


def test_density_needs_p_and_positive_y():
    s = build_model("hull_white", z_max=3.0, dz=0.02)
    with pytest.raises(StructuralError):
        simulate(s, SimConfig(horizon=1.0, dt=0.02, n_paths=2), density=density_tracker())
    from dataclasses import replace

    from hjmmlab.model import MprData

    t = build_model("hull_white", z_max=3.0, dz=0.02, jump={"lam": 50.0, "x0": 0.01})
    bad = replace(t, mpr=MprData(t.mpr.zeta, lambda H, G: np.full(np.shape(G)[:-1], -1.0)), _cache={})
    with pytest.raises(ContractViolation):
        simulate(bad, _p_config(n_paths=2), density=density_tracker())


def test_ess_floor_gives_inconclusive():
    s = build_model("hull_white", z_max=3.0, dz=0.02, zeta=300.0)
    ens = simulate(s, _p_config(n_paths=50), density=density_tracker())
    assert reweighted_expectation(ens, ess_floor=1e6).status == INCONCLUSIVE


def test_levels_validation_and_untracked_level():
    with pytest.raises(DomainError):
        StopLevels((5, 2))
    s = build_model("hull_white", z_max=3.0, dz=0.02)
    ens = simulate(s, _p_config(n_paths=2), density=density_tracker((2,)))
    with pytest.raises(DomainError):
        stopped_martingale_check(ens, [3])
    q = simulate(s, SimConfig(horizon=1.0, dt=0.02, n_paths=2))
    with pytest.raises(StructuralError):
        reweighted_expectation(q)
