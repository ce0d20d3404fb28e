"""Coefficient fields of an HJMM model and the structural drift formulas.

Fields act on arrays of curve values whose last axis is the maturity grid,
so the same code evaluates one curve or a whole batch of simulated paths:

* ``CurveField.fn``: ``(..., n) -> (..., n)``
* ``VolField.fn``: ``(..., n) -> (..., J, n)``; the columns ``a_j`` are
  already scaled by ``sqrt(lambda_j)``
* ``JumpField.gamma``: ``((..., n), (..., d)) -> (..., n)``
* ``MprData.y_density``: ``((..., n), (..., n)) -> (...)``

State-independent fields may return arrays without the leading batch axes;
results are broadcast by the callers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .curves import (
    CovarianceSpec,
    CurveGrid,
    ForwardCurve,
    antiderivative_values,
    cell_weights,
    inner_beta_values,
    norm_beta_values,
)
from .drivers import MarkMeasure, mark_integral, zero_measure
from .errors import AccuracyError, StructuralError
from .reports import FAIL, PASS, CheckItem
from .sampling import sample_curves

# elements per mark chunk when integrating curve-valued integrands
_CHUNK_ELEMS = 4_000_000


@dataclass(frozen=True)
class CurveField:
    fn: Callable[[np.ndarray], np.ndarray]
    state_independent: bool = False
    label: str = ""

    def __call__(self, H):
        H = np.asarray(H, dtype=float)
        return np.broadcast_to(self.fn(H), H.shape)


def zero_field(label: str = "zero") -> CurveField:
    return CurveField(lambda H: np.zeros(np.shape(H)[-1]), True, label)


@dataclass(frozen=True)
class VolField:
    fn: Callable[[np.ndarray], np.ndarray]
    dim: int
    state_independent: bool = False
    label: str = ""

    def __call__(self, H):
        H = np.asarray(H, dtype=float)
        out = self.fn(H)
        return np.broadcast_to(out, H.shape[:-1] + (self.dim, H.shape[-1]))


def zero_vol(dim: int = 1) -> VolField:
    return VolField(lambda H: np.zeros((dim, np.shape(H)[-1])), dim, True, "zero")


@dataclass(frozen=True)
class JumpField:
    gamma: Callable[[np.ndarray, np.ndarray], np.ndarray]
    measure: MarkMeasure
    beta_prime: float
    dgamma: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    state_independent: bool = False
    label: str = ""

    def evaluate(self, H, X):
        """``gamma(H, X)`` broadcast to the joint leading shape."""
        H = np.asarray(H, dtype=float)
        X = np.asarray(X, dtype=float)
        out = self.gamma(H, X)
        lead = np.broadcast_shapes(H.shape[:-1], X.shape[:-1])
        return np.broadcast_to(out, lead + (H.shape[-1],))


def no_jumps(beta_prime: float, dim: int = 1) -> JumpField:
    return JumpField(
        lambda H, X: np.zeros(np.shape(H)[-1]),
        zero_measure(dim),
        beta_prime,
        dgamma=lambda H, X: np.zeros(np.shape(H)[-1]),
        state_independent=True,
        label="none",
    )


@dataclass(frozen=True)
class MprData:
    """Market price of risk ``zeta`` and jump density ``Y``."""

    zeta: CurveField
    y_density: Callable[[np.ndarray, np.ndarray], np.ndarray]
    y_constant: Optional[float] = None

    def y(self, H, G):
        H = np.asarray(H, dtype=float)
        G = np.asarray(G, dtype=float)
        out = np.asarray(self.y_density(H, G), dtype=float)
        return np.broadcast_to(out, np.broadcast_shapes(H.shape[:-1], G.shape[:-1]))


def constant_mpr(zeta_level: float = 0.0, y: float = 1.0) -> MprData:
    """``zeta`` the constant curve ``zeta_level``; ``Y`` the constant ``y``."""
    if not y > 0:
        raise StructuralError("Y must be positive")
    zeta = CurveField(
        lambda H: np.full(np.shape(H)[-1], float(zeta_level)), True, f"const({zeta_level:g})"
    )
    return MprData(zeta, lambda H, G: np.full(np.shape(G)[:-1], float(y)), float(y))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """All coefficients of a real-world / risk-neutral model pair."""

    grid: CurveGrid
    beta: float
    cov: CovarianceSpec
    vol: VolField
    real_jumps: JumpField
    rn_jumps: JumpField
    real_drift: CurveField
    mpr: MprData
    h0: ForwardCurve
    name: str = "custom"
    meta: dict = field(default_factory=dict)
    builder: Optional[Callable[[CurveGrid], "ModelSpec"]] = None
    mark_mc: int = 100_000
    mark_seed: int = 12345
    mark_rel_tol: float = 1e-2
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.h0.grid.same_as(self.grid):
            raise StructuralError("h0 must live on the model grid")
        if self.h0.beta != self.beta:
            raise StructuralError("h0 beta differs from model beta")
        if self.vol.dim != self.cov.dim:
            raise StructuralError(
                f"vol has {self.vol.dim} columns but covariance has dimension {self.cov.dim}"
            )
        for jf in (self.real_jumps, self.rn_jumps):
            if not jf.beta_prime > self.beta:
                raise StructuralError("jump fields need beta_prime > beta")

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    @property
    def weights(self) -> np.ndarray:
        w = self._cache.get("w")
        if w is None:
            w = self._cache["w"] = cell_weights(self.grid.points, self.beta)
        return w

    def weights_prime(self, beta_prime: float) -> np.ndarray:
        key = ("wp", beta_prime)
        w = self._cache.get(key)
        if w is None:
            w = self._cache[key] = cell_weights(self.grid.points, beta_prime)
        return w

    def jumps(self, measure: str) -> JumpField:
        return self.rn_jumps if measure == "Q" else self.real_jumps

    def state_independent(self, measure: str) -> bool:
        jf = self.jumps(measure)
        ok = self.vol.state_independent and jf.state_independent
        if measure == "Q":
            return ok
        return ok and self.real_drift.state_independent

    def curve(self, values, tail_zero=False) -> ForwardCurve:
        return ForwardCurve(self.grid, values, self.beta, tail_zero)

    def digest(self) -> str:
        payload = json.dumps(
            {"name": self.name, "meta": self.meta, "beta": self.beta, "cov": self.cov.eigenvalues},
            sort_keys=True,
            default=str,
        ).encode()
        hsh = hashlib.sha256(payload)
        hsh.update(self.grid.points.tobytes())
        hsh.update(self.h0.values.tobytes())
        return hsh.hexdigest()

    def refined(self, grid: CurveGrid) -> "ModelSpec":
        """The same model rebuilt on another grid (needs a builder)."""
        if self.builder is None:
            raise StructuralError("model has no builder; cannot rebuild on a new grid")
        return self.builder(grid)

    def with_real_drift(self, drift: CurveField) -> "ModelSpec":
        return replace(self, real_drift=drift, _cache={})


# ---------------------------------------------------------------- helpers


def _values(h) -> np.ndarray:
    return h.values if isinstance(h, ForwardCurve) else np.asarray(h, dtype=float)


def _mark_chunk(H: np.ndarray) -> int:
    return max(1, _CHUNK_ELEMS // max(1, H.size))


def _integrate_over_marks(spec: ModelSpec, jf: JumpField, H, integrand, rel_tol="spec"):
    """``int integrand(gamma(H, x), x) F(dx)`` with the mark axis first.

    ``integrand`` receives the jump curves ``(K, ..., n)`` and marks
    ``(K, ..., d)`` and returns an array with leading mark axis.
    """
    H = np.asarray(H, dtype=float)
    lead = (1,) * (H.ndim - 1)

    def fn(x):
        xb = x.reshape((x.shape[0],) + lead + (x.shape[1],))
        G = jf.evaluate(H[None, ...], xb)
        return integrand(G, xb)

    tol = spec.mark_rel_tol if rel_tol == "spec" else rel_tol
    return mark_integral(
        jf.measure, fn, n_mc=spec.mark_mc, seed=spec.mark_seed, chunk=_mark_chunk(H), rel_tol=tol
    )


def vol_values(spec: ModelSpec, H) -> np.ndarray:
    return spec.vol(_values(H))


def l2_norm_values(spec: ModelSpec, A: np.ndarray) -> np.ndarray:
    """Hilbert-Schmidt norm of vol columns ``(..., J, n) -> (...)``."""
    return np.sqrt(np.sum(norm_beta_values(A, spec.weights) ** 2, axis=-1))


def diffusion_drift_values(spec: ModelSpec, H) -> np.ndarray:
    """``sum_j a_j(h) * int_0^. a_j(h)(z) dz``."""
    A = vol_values(spec, H)
    return np.sum(A * antiderivative_values(A, spec.points), axis=-2)


def jump_drift_values(spec: ModelSpec, H, jf: Optional[JumpField] = None):
    """``-int gamma'(h,x) (exp(-Gamma'(h,x)) - 1) F'(dx)`` and its stderr."""
    jf = spec.rn_jumps if jf is None else jf
    pts = spec.points

    def integrand(G, x):
        return G * np.expm1(-antiderivative_values(G, pts))

    res = _integrate_over_marks(spec, jf, H, integrand)
    return -res.value, res.stderr


def xi_values(spec: ModelSpec, H) -> np.ndarray:
    """Risk-neutral (no-arbitrage) drift as an array; tail set to zero.

    For state-independent coefficients the result is computed once and
    returned as a read-only ``(n,)`` array.
    """
    indep = spec.state_independent("Q")
    if indep:
        cached = spec._cache.get("xi")
        if cached is not None:
            return cached
        H = spec.h0.values
    else:
        H = _values(H)
    jd, _ = jump_drift_values(spec, H)
    out = np.array(np.broadcast_to(diffusion_drift_values(spec, H) + jd, H.shape), dtype=float)
    out[..., -1] = 0.0
    if indep:
        out.setflags(write=False)
        spec._cache["xi"] = out
    return out


def theta_values(spec: ModelSpec, H) -> np.ndarray:
    """Projected market price of risk ``<zeta(h), a_j(h)>_beta``, shape ``(..., J)``."""
    H = _values(H)
    A = vol_values(spec, H)
    Z = spec.mpr.zeta(H)
    return inner_beta_values(A, Z[..., None, :], spec.weights)


def aastar_zeta_values(spec: ModelSpec, H) -> np.ndarray:
    """``a a^* zeta`` applied as ``sum_j <a_j, zeta> a_j``."""
    H = _values(H)
    A = vol_values(spec, H)
    theta = inner_beta_values(A, spec.mpr.zeta(H)[..., None, :], spec.weights)
    return np.sum(theta[..., None] * A, axis=-2)


def real_jump_correction_values(spec: ModelSpec, H):
    """``int gamma(h,y) (Y(h, gamma(h,y)) - 1) F(dy)`` and its stderr."""
    H = _values(H)
    mpr = spec.mpr

    def integrand(G, x):
        return G * (mpr.y(H[None, ...], G) - 1.0)[..., None]

    res = _integrate_over_marks(spec, spec.real_jumps, H, integrand)
    return res.value, res.stderr


def compensator_values(spec: ModelSpec, H, measure: str) -> np.ndarray:
    """``int gamma(h, y) F(dy)`` for the jump field of ``measure``."""
    jf = spec.jumps(measure)
    key = ("comp", measure)
    if jf.state_independent:
        cached = spec._cache.get(key)
        if cached is not None:
            return cached
        H = spec.h0.values
    out = _integrate_over_marks(spec, jf, H, lambda G, x: G).value
    if jf.state_independent:
        out = np.array(out, dtype=float)
        out.setflags(write=False)
        spec._cache[key] = out
    return out


# ---------------------------------------------------------------- operations


def hjm_drift_xi(spec: ModelSpec, h: ForwardCurve) -> ForwardCurve:
    """No-arbitrage drift: diffusion part plus jump correction under ``F'``."""
    return spec.curve(xi_values(spec, _values(h)), tail_zero=True)


def classical_real_drift(spec: ModelSpec, h: ForwardCurve) -> ForwardCurve:
    """Real-world drift of the continuous case: ``sum_j a_j int a_j - a a^* zeta``."""
    H = _values(h)
    out = diffusion_drift_values(spec, H) - aastar_zeta_values(spec, H)
    return spec.curve(out)


def classical_drift_field(spec: ModelSpec) -> CurveField:
    indep = spec.vol.state_independent and spec.mpr.zeta.state_independent

    def fn(H):
        return diffusion_drift_values(spec, H) - aastar_zeta_values(spec, H)

    return CurveField(fn, indep, "classical")


def drift_from_mpre(spec: ModelSpec) -> CurveField:
    """Real-world drift solving the market price of risk equation by construction.

    ``b = xi - a a^* zeta - int gamma (Y - 1) dF``.
    """
    indep = (
        spec.state_independent("Q")
        and spec.mpr.zeta.state_independent
        and spec.real_jumps.state_independent
        and spec.mpr.y_constant is not None
    )
    base = spec.with_real_drift(zero_field())

    def fn(H):
        xi = xi_values(base, H)
        corr, _ = real_jump_correction_values(base, H)
        return xi - aastar_zeta_values(base, H) - corr

    return CurveField(fn, indep, "mpre")


def xi_drift_field(spec: ModelSpec) -> CurveField:
    base = spec.with_real_drift(zero_field())
    return CurveField(lambda H: xi_values(base, H), spec.state_independent("Q"), "xi")


def mpre_residual(spec: ModelSpec, h: ForwardCurve) -> float:
    """beta-norm of ``xi - b - a a^* zeta - int gamma (Y - 1) dF``."""
    H = _values(h)
    xi = xi_values(spec, H)
    corr, _ = real_jump_correction_values(spec, H)
    resid = xi - spec.real_drift(H) - aastar_zeta_values(spec, H) - corr
    return float(norm_beta_values(resid, spec.weights))


def _norm_prime(spec: ModelSpec, G, beta_prime):
    return norm_beta_values(G, spec.weights_prime(beta_prime))


def default_test_functions(spec: ModelSpec) -> dict:
    """Bounded test functions of a jump curve, mark axis first."""
    bp = spec.rn_jumps.beta_prime
    tests = {"one": lambda G: np.ones(G.shape[:-1])}
    for s in (1.0, 10.0, 100.0):
        tests[f"exp_norm_{s:g}"] = lambda G, s=s: np.exp(-s * _norm_prime(spec, G, bp))
    for r in (0.005, 0.02, 0.1):
        tests[f"smooth_ball_{r:g}"] = lambda G, r=r: 1.0 / (
            1.0 + np.exp((_norm_prime(spec, G, bp) - r) / (0.1 * r))
        )
    return tests


def measure_identity_residual(
    spec: ModelSpec, h: ForwardCurve, tests: Optional[dict] = None
) -> float:
    """Max over test functions ``g`` of
    ``|int g(gamma) Y(h, gamma) dF - int g(gamma') dF'|``."""
    H = _values(h)
    tests = default_test_functions(spec) if tests is None else tests
    worst = 0.0
    for g in tests.values() if isinstance(tests, dict) else tests:
        lhs = _integrate_over_marks(
            spec, spec.real_jumps, H, lambda G, x: g(G) * spec.mpr.y(H[None, ...], G), None
        )
        rhs = _integrate_over_marks(spec, spec.rn_jumps, H, lambda G, x: g(G), None)
        worst = max(worst, float(np.max(np.abs(lhs.value - rhs.value))))
    return worst


def alpha_and_derivative(spec: ModelSpec, h: ForwardCurve):
    """``alpha(h)`` and its weak derivative in ``z``.

    ``alpha(h)(z) = -int gamma'(h,x)(z) (exp(Gamma'(h,x)(z)) - 1) F'(dx)`` with
    ``Gamma'`` the antiderivative of ``gamma'``. Differentiating under the
    integral gives
    ``D alpha = -int gamma'^2 exp(Gamma') dF' - int D gamma' (exp(Gamma') - 1) dF'``.
    """
    jf = spec.rn_jumps
    if jf.dgamma is None:
        raise StructuralError("jump field has no z-derivative companion (dgamma)")
    H = _values(h)
    pts = spec.points

    def alpha_int(G, x):
        return G * np.expm1(antiderivative_values(G, pts))

    def dalpha_int(G, x):
        dG = np.broadcast_to(jf.dgamma(H[None, ...], x), G.shape)
        gam = antiderivative_values(G, pts)
        return G * G * np.exp(gam) + dG * np.expm1(gam)

    alpha = -_integrate_over_marks(spec, jf, H, alpha_int).value
    dalpha = -_integrate_over_marks(spec, jf, H, dalpha_int).value
    return spec.curve(alpha), spec.curve(dalpha)


def gamma_antiderivative_bound(
    spec: ModelSpec,
    phi: Callable[[np.ndarray], np.ndarray],
    samples: int = 200,
    radius: float = 1.0,
    seed: int = 0,
    rtol: float = 1e-5,
    atol: float = 1e-12,
) -> CheckItem:
    """Audit ``|Gamma'(h, x)(z)| <= phi(x)`` over sampled curves, marks and grid maturities.

    The trapezoid antiderivative of a convex integrand overshoots by
    ``O(dz^2)``; violations smaller than ``atol + rtol * phi(x)`` are
    attributed to that and not reported.
    """
    jf = spec.rn_jumps
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 7])))
    H = sample_curves(spec.points, spec.beta, samples, radius, gen)
    X = np.asarray(jf.measure.sampler(gen, samples), dtype=float).reshape(
        samples, jf.measure.support_dim
    )
    G = jf.evaluate(H, X)
    Gam = np.abs(antiderivative_values(G, spec.points))
    bound = np.asarray(phi(X), dtype=float).reshape(samples)
    worst_z = np.argmax(Gam, axis=-1)
    margin = bound - Gam[np.arange(samples), worst_z]
    slack = margin + atol + rtol * bound
    i = int(np.argmin(slack))
    worst = float(margin[i])
    witness = {
        "h": H[i],
        "mark": X[i],
        "z": float(spec.points[worst_z[i]]),
        "abs_Gamma": float(Gam[i, worst_z[i]]),
        "phi": float(bound[i]),
    }
    status = PASS if slack[i] >= 0 else FAIL
    return CheckItem(
        "gamma_antiderivative_bound",
        status,
        worst,
        samples,
        witness=witness if status == FAIL else None,
        message="worst margin phi(x) - |Gamma'(h,x)(z)|",
        details={"witness_candidate": witness},
    )


def check_mark_accuracy(res, tol):
    if res.relative_error() > tol:
        raise AccuracyError(f"mark integral relative error {res.relative_error():.3g} > {tol:g}")


__all__: Sequence[str] = [
    "CurveField",
    "VolField",
    "JumpField",
    "MprData",
    "ModelSpec",
    "hjm_drift_xi",
    "mpre_residual",
    "measure_identity_residual",
    "classical_real_drift",
    "drift_from_mpre",
    "gamma_antiderivative_bound",
    "alpha_and_derivative",
]
