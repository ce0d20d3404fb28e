import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjmmlab.curves import CovarianceSpec
from hjmmlab.drivers import (
    RngStream,
    brownian_increments,
    mark_integral,
    point_masses,
    sample_jumps,
    truncated_exponential,
    write_jumplog_csv,
    zero_measure,
)
from hjmmlab.errors import AccuracyError, DomainError


def test_increment_variance_matches_eigenvalues():
    cov = CovarianceSpec((2.0, 0.5, 0.01))
    n, dt = 100_000, 0.004
    dW = brownian_increments(cov, n, dt, RngStream(7, 0))
    var = dW.var(axis=0, ddof=0)
    target = np.array(cov.eigenvalues) * dt
    # chi-square sampling sd of the variance estimator is target * sqrt(2 / n)
    assert np.all(np.abs(var - target) <= 5 * target * np.sqrt(2.0 / n))


def test_small_eigenvalue_gives_small_increments():
    dW = brownian_increments(CovarianceSpec((1e-12,)), 1000, 0.01, RngStream(0, 0))
    assert np.max(np.abs(dW)) < 1e-6


@given(seed=st.integers(0, 2**64 - 1), path=st.integers(0, 10**9))
def test_streams_are_deterministic(seed, path):
    a = brownian_increments(CovarianceSpec((1.0,)), 5, 0.1, RngStream(seed, path))
    b = brownian_increments(CovarianceSpec((1.0,)), 5, 0.1, RngStream(seed, path))
    assert np.array_equal(a, b)


def test_streams_differ_across_paths_and_purposes():
    r = RngStream(1, 0)
    assert r.generator("brownian").random() != RngStream(1, 1).generator("brownian").random()
    assert r.generator("brownian").random() != r.generator("jumps").random()


def test_seed_domain():
    with pytest.raises(DomainError):
        RngStream(-1, 0)
    with pytest.raises(DomainError):
        RngStream(2**64, 0)


def test_zero_intensity_gives_empty_log():
    log = sample_jumps(zero_measure(), 1.0, RngStream(0, 0))
    assert len(log) == 0


def test_poisson_mean_count():
    m = point_masses([0.01], [2.0])
    counts = np.array([len(sample_jumps(m, 1.0, RngStream(3, i))) for i in range(10_000)])
    se = np.sqrt(2.0 / counts.size)
    assert abs(counts.mean() - 2.0) <= 5 * se


def test_jump_times_sorted_in_horizon():
    log = sample_jumps(point_masses([1.0], [50.0]), 2.0, RngStream(0, 4))
    assert np.all(np.diff(log.times) >= 0)
    assert np.all((log.times > 0) & (log.times <= 2.0))


def test_compensator_consistency():
    m = truncated_exponential(3.0, 2.0, 4.0)
    g = lambda x: np.cos(x[:, 0])  # noqa: E731
    totals = []
    for i in range(4000):
        log = sample_jumps(m, 0.5, RngStream(11, i))
        totals.append(float(np.sum(g(log.marks))) if len(log) else 0.0)
    totals = np.array(totals)
    # int g dF = 3 * E[cos X] for X ~ Exp(2) conditioned on [0, 4]
    from scipy.integrate import quad

    c = -np.expm1(-8.0)
    eg = quad(lambda x: np.cos(x) * 2 * np.exp(-2 * x) / c, 0, 4)[0]
    target = 0.5 * 3.0 * eg
    assert abs(totals.mean() - target) <= 5 * totals.std(ddof=1) / np.sqrt(totals.size)


def test_mark_integral_exact_on_atoms():
    m = point_masses([[0.1], [0.3]], [1.0, 3.0])
    res = mark_integral(m, lambda x: x[:, 0] ** 2)
    assert res.exact and res.value == pytest.approx(0.01 + 0.27, abs=1e-15)


def test_mark_integral_monte_carlo_and_accuracy_error():
    m = truncated_exponential(2.0, 1.0, 50.0)
    res = mark_integral(m, lambda x: x[:, 0], n_mc=200_000)
    assert not res.exact
    assert abs(res.value - 2.0) <= 5 * res.stderr
    with pytest.raises(AccuracyError):
        mark_integral(m, lambda x: x[:, 0], n_mc=100, rel_tol=1e-6)


def test_scaled_measure():
    m = point_masses([0.5], [2.0]).scaled(0.5)
    assert m.total_mass == 1.0
    assert mark_integral(m, lambda x: x[:, 0]).value == pytest.approx(0.5)


def test_jumplog_csv(tmp_path):
    log = sample_jumps(point_masses([0.2], [5.0]), 1.0, RngStream(0, 0))
    p = tmp_path / "j.csv"
    write_jumplog_csv(p, log)
    rows = p.read_text().splitlines()
    assert rows[0] == "time,mark_0" and len(rows) == len(log) + 1
