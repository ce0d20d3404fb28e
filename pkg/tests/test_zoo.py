import numpy as np
import pytest

from hjmmlab.curves import CurveGrid, norm_beta_values
from hjmmlab.errors import ConfigError
from hjmmlab.zoo import MODEL_NAMES, build_model, exp_shape_norm


@pytest.mark.parametrize("name", [n for n in MODEL_NAMES if n != "custom"])
def test_every_preset_builds_with_tail_zero_fields(name):
    s = build_model(name, z_max=3.0, dz=0.01)
    A = s.vol(s.h0.values)
    assert A.shape == (s.cov.dim, s.grid.size)
    assert np.all(A[..., -1] == 0.0)
    assert s.grid.uniform_step == 0.01


def test_exp_shape_norm_matches_grid_norm():
    s = build_model("hull_white", z_max=40.0, dz=0.005, sigma=0.01, kappa=0.5)
    a = s.vol(s.h0.values)[0]
    assert float(norm_beta_values(a, s.weights)) == pytest.approx(exp_shape_norm(0.01, 0.5, 0.1), rel=1e-4)


def test_capped_amplitude_saturates():
    s = build_model("capped_proportional", z_max=3.0, dz=0.01, cap=0.1)
    small = s.vol(np.full(s.grid.size, 0.01))
    big = s.vol(np.full(s.grid.size, 5.0))
    assert np.allclose(big, s.vol(np.full(s.grid.size, 50.0)))
    assert np.allclose(small * 10, s.vol(np.full(s.grid.size, 0.1)))


def test_pointwise_amplitude_vanishes_with_curve():
    s = build_model("pointwise_proportional", z_max=3.0, dz=0.01)
    h = np.where(s.points < 1.0, 0.0, 0.02)
    A = s.vol(h)
    assert np.all(A[0, s.points < 1.0] == 0.0)


def test_refined_rebuilds_on_new_grid():
    s = build_model("exp_jump", z_max=2.0, dz=0.02, h0={"level": 0.02, "slope": 0.01})
    r = s.refined(CurveGrid.uniform(2.0, 0.01))
    assert r.grid.size == 201 and r.name == s.name
    assert np.allclose(r.h0.values[::2], s.h0.values)


def test_unknown_names_and_params():
    with pytest.raises(ConfigError):
        build_model("vasicek")
    with pytest.raises(ConfigError):
        build_model("hull_white", colour="red")
    with pytest.raises(ConfigError):
        build_model("hull_white", real_drift="sideways")


def test_custom_composition():
    s = build_model(
        "custom",
        z_max=2.0,
        dz=0.01,
        vol=[{"shape": "exp", "sigma": 0.01, "kappa": 1.0}, {"shape": "taper", "sigma": 0.005, "width": 1.0}],
        eigenvalues=[1.0, 0.5],
    )
    assert s.cov.dim == 2 and s.vol(s.h0.values).shape == (2, 201)


def test_digest_distinguishes_models():
    a = build_model("hull_white", z_max=2.0, dz=0.01)
    b = build_model("hull_white", z_max=2.0, dz=0.01, sigma=0.02)
    assert a.digest() != b.digest()
    assert a.digest() == build_model("hull_white", z_max=2.0, dz=0.01).digest()
