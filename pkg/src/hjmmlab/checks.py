"""Sampling audits of the deterministic model hypotheses.

Each audit draws curves from the beta-ball of a chosen radius (see
:mod:`hjmmlab.sampling`), evaluates a ratio or margin, and reports the worst
value found. A failing item carries the offending input; re-evaluating the
public predicate on that single input reproduces the reported value
bitwise. Passing means that no violation was found among the samples.

Samples are generated in fixed blocks with their own seeds, so a run with
more samples extends the sample set of a smaller run and the estimated
suprema are non-decreasing in the sample count.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .curves import norm_beta_values
from .drivers import mark_integral
from .errors import ConfigError, StructuralError
from .model import (
    ModelSpec,
    _integrate_over_marks,
    default_test_functions,
    gamma_antiderivative_bound,
    measure_identity_residual,
    mpre_residual,
)
from .reports import FAIL, INCONCLUSIVE, PASS, CheckItem, CheckReport
from .sampling import sample_boundary_curves, sample_curves, sample_pairs

BLOCK = 64
CHECK_MARKS = 4096
_CHUNK_ELEMS = 4_000_000

Phi = Callable[[np.ndarray], np.ndarray]


def _gen(seed: int, block: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), tag, block])))


def sampled_pairs(spec: ModelSpec, n: int, radius: float, seed: int = 0):
    """First ``n`` pairs of the seeded block sequence."""
    hs, ks = [], []
    for b in range(-(-n // BLOCK)):
        h, k = sample_pairs(
            spec.points, spec.beta, BLOCK, radius, _gen(seed, b, 1), spec.h0.values if b == 0 else None
        )
        hs.append(h)
        ks.append(k)
    return np.concatenate(hs)[:n], np.concatenate(ks)[:n]


def sampled_curves(spec: ModelSpec, n: int, radius: float, seed: int = 0, nonnegative=False):
    out = [
        sample_curves(spec.points, spec.beta, BLOCK, radius, _gen(seed, b, 2), nonnegative)
        for b in range(-(-n // BLOCK))
    ]
    return np.concatenate(out)[:n]


def make_phi(kind="zero", scale: float = 1.0) -> Phi:
    """Bound functions for ``|Gamma'(h, x)(z)|``: ``zero``, ``abs`` or ``const``."""
    if isinstance(kind, dict):
        return make_phi(kind.get("kind", "zero"), float(kind.get("scale", 1.0)))
    if kind == "zero":
        return lambda x: np.zeros(np.shape(x)[0])
    if kind == "abs":
        return lambda x: scale * np.sum(np.abs(np.asarray(x, dtype=float)), axis=-1)
    if kind == "const":
        return lambda x: np.full(np.shape(x)[0], scale)
    raise ConfigError(f"unknown phi {kind!r}", field="check.phi")


def _mark_chunk(P: int, n: int) -> int:
    return max(1, _CHUNK_ELEMS // max(1, 2 * P * n))


def _jump_integral(spec, jf, fn, P, n_mc):
    return mark_integral(
        jf.measure, fn, n_mc=n_mc, seed=spec.mark_seed, chunk=_mark_chunk(P, spec.grid.size)
    ).value


def _l2_diff(spec, A, B):
    return np.sqrt(np.sum(norm_beta_values(A - B, spec.weights) ** 2, axis=-1))


def _jump_diff(spec, jf, H, K, phi, n_mc):
    """``(int e^{phi(x)} ||gamma(h,x) - gamma(k,x)||_{beta'}^2 dF)^(1/2)``."""
    if jf.measure.total_mass == 0:
        return np.zeros(H.shape[0])
    wp = spec.weights_prime(jf.beta_prime)

    def fn(x):
        xb = x[:, None, :]
        d = jf.evaluate(H[None], xb) - jf.evaluate(K[None], xb)
        return np.exp(phi(x))[:, None] * norm_beta_values(d, wp) ** 2

    return np.sqrt(_jump_integral(spec, jf, fn, H.shape[0], n_mc))


def lipschitz_ratio_rn(spec: ModelSpec, H, K, phi: Optional[Phi] = None, n_mc: int = CHECK_MARKS):
    """Lipschitz quotient of ``(a, gamma')`` under ``F'`` for curve pairs."""
    phi = make_phi() if phi is None else phi
    H = np.atleast_2d(np.asarray(H, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    num = _l2_diff(spec, spec.vol(H), spec.vol(K)) + _jump_diff(spec, spec.rn_jumps, H, K, phi, n_mc)
    return num / norm_beta_values(H - K, spec.weights)


def growth_value_rn(spec: ModelSpec, H, phi: Optional[Phi] = None, n_mc: int = CHECK_MARKS):
    """``||a(h)||_{L2} + int e^{phi} (||gamma'||^2 v ||gamma'||^4) dF'``."""
    phi = make_phi() if phi is None else phi
    H = np.atleast_2d(np.asarray(H, dtype=float))
    A = spec.vol(H)
    out = np.sqrt(np.sum(norm_beta_values(A, spec.weights) ** 2, axis=-1))
    jf = spec.rn_jumps
    if jf.measure.total_mass > 0:
        wp = spec.weights_prime(jf.beta_prime)

        def fn(x):
            g2 = norm_beta_values(jf.evaluate(H[None], x[:, None, :]), wp) ** 2
            return np.exp(phi(x))[:, None] * np.maximum(g2, g2 * g2)

        out = out + _jump_integral(spec, jf, fn, H.shape[0], n_mc)
    return out


def lipschitz_ratio_real(spec: ModelSpec, H, K, n_mc: int = CHECK_MARKS):
    """Quotients of the two real-world Lipschitz inequalities, ``(P, 2)``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    dist = norm_beta_values(H - K, spec.weights)
    db = norm_beta_values(spec.real_drift(H) - spec.real_drift(K), spec.weights)
    da = _l2_diff(spec, spec.vol(H), spec.vol(K))
    dg = _jump_diff(spec, spec.real_jumps, H, K, make_phi(), n_mc)
    return np.stack([(db + da) / dist, dg / dist], axis=-1)


def _pair_item(name, ratios, H, K, L, rtol, n_pairs, predicate, extra=None):
    dist_ok = np.isfinite(ratios)
    if not np.any(dist_ok):
        raise StructuralError("all sampled pairs are degenerate (h == k)")
    r = np.where(dist_ok, ratios, -np.inf)
    i = int(np.argmax(r))
    est = float(r[i])
    threshold = L * (1.0 + rtol)
    status = PASS if est <= threshold else FAIL
    witness = None
    if status == FAIL:
        again = float(np.asarray(predicate(H[i : i + 1], K[i : i + 1])).reshape(-1)[0])
        witness = {"h": H[i], "k": K[i], "ratio": again, "index": i}
    return CheckItem(
        name,
        status,
        est,
        int(np.sum(dist_ok)),
        witness=witness,
        threshold=float(L),
        message=f"worst quotient over {n_pairs} sampled pairs",
        details=extra or {},
    )


def _degenerate_mask(spec, H, K):
    return norm_beta_values(H - K, spec.weights) > 0


def check_lipschitz_rn(
    spec: ModelSpec,
    L_declared: float,
    n_pairs: int = 200,
    radius: float = 1.0,
    seed: int = 0,
    phi: Optional[Phi] = None,
    rtol: float = 1e-6,
    n_mc: int = CHECK_MARKS,
) -> CheckItem:
    """Sampled Lipschitz constant of ``(a, gamma')`` against ``L_declared``."""
    if n_pairs < 1:
        raise StructuralError("n_pairs must be at least 1")
    H, K = sampled_pairs(spec, n_pairs, radius, seed)
    keep = _degenerate_mask(spec, H, K)
    ratios = np.full(n_pairs, np.nan)
    if np.any(keep):
        ratios[keep] = lipschitz_ratio_rn(spec, H[keep], K[keep], phi, n_mc)

    def pred(h, k):
        return lipschitz_ratio_rn(spec, h, k, phi, n_mc)

    return _pair_item("lipschitz_rn", ratios, H, K, L_declared, rtol, n_pairs, pred)


def check_growth_rn(
    spec: ModelSpec,
    L_declared: float,
    n_samples: int = 200,
    radius: float = 1.0,
    seed: int = 0,
    phi: Optional[Phi] = None,
    rtol: float = 1e-6,
    n_mc: int = CHECK_MARKS,
) -> CheckItem:
    """Sampled growth bound of ``(a, gamma')`` against ``L_declared``."""
    if n_samples < 1:
        raise StructuralError("n_samples must be at least 1")
    H = sampled_curves(spec, n_samples, radius, seed)
    H[0] = spec.h0.values
    vals = growth_value_rn(spec, H, phi, n_mc)
    i = int(np.argmax(vals))
    est = float(vals[i])
    status = PASS if est <= L_declared * (1.0 + rtol) else FAIL
    witness = None
    if status == FAIL:
        again = float(growth_value_rn(spec, H[i : i + 1], phi, n_mc)[0])
        witness = {"h": H[i], "value": again, "index": i}
    return CheckItem(
        "growth_rn", status, est, n_samples, witness=witness, threshold=float(L_declared),
        message=f"worst bound over {n_samples} sampled curves",
    )


def check_lipschitz_real(
    spec: ModelSpec,
    L_declared: float,
    n_pairs: int = 200,
    radius: float = 1.0,
    seed: int = 0,
    rtol: float = 1e-6,
    n_mc: int = CHECK_MARKS,
) -> CheckItem:
    """Lipschitz audit of ``(b, a, gamma)`` under ``F`` plus ``int ||gamma(0, .)||^2 dF``."""
    if n_pairs < 1:
        raise StructuralError("n_pairs must be at least 1")
    H, K = sampled_pairs(spec, n_pairs, radius, seed)
    keep = _degenerate_mask(spec, H, K)
    ratios = np.full(n_pairs, np.nan)
    if np.any(keep):
        ratios[keep] = np.max(lipschitz_ratio_real(spec, H[keep], K[keep], n_mc), axis=-1)
    jf = spec.real_jumps
    g0 = 0.0
    if jf.measure.total_mass > 0:
        wp = spec.weights_prime(jf.beta_prime)
        zero = np.zeros(spec.grid.size)
        g0 = float(
            _integrate_over_marks(
                spec, jf, zero, lambda G, x: norm_beta_values(G, wp) ** 2, None
            ).value
        )

    def pred(h, k):
        return np.max(lipschitz_ratio_real(spec, h, k, n_mc), axis=-1)

    item = _pair_item(
        "lipschitz_real", ratios, H, K, L_declared, rtol, n_pairs, pred, {"gamma0_integral": g0}
    )
    if not np.isfinite(g0):
        item = CheckItem(
            item.name, FAIL, item.estimate, item.samples_used,
            witness={"h": np.zeros(spec.grid.size), "gamma0_integral": g0},
            threshold=item.threshold, message="int ||gamma(0, .)||^2 dF is not finite",
            details=item.details,
        )
    return item


# ---------------------------------------------------------------- smoothness


def vol_directional_derivative(spec: ModelSpec, h, v, eps: float) -> np.ndarray:
    """Central difference ``(a(h + eps v) - a(h - eps v)) / (2 eps)``, ``(..., J, n)``."""
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float)
    return (spec.vol(h + eps * v) - spec.vol(h - eps * v)) / (2.0 * eps)


def stratonovich_field(spec: ModelSpec, H, rel_step: float = 1e-4, fd_rtol: float = 1e-3):
    """``sum_j Da_j(h)[a_j(h)]`` by Richardson-extrapolated central differences.

    Returns ``(values, converged)``: a pair of step sizes ``eps`` and
    ``eps / 2`` that disagree by more than ``fd_rtol`` (relative to the
    scale of the result) marks the sample as not converged.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    A = spec.vol(H)
    w = spec.weights
    hn = norm_beta_values(H, w)
    out = np.zeros_like(H)
    conv = np.ones(H.shape[0], dtype=bool)
    for j in range(A.shape[-2]):
        aj = A[..., j, :]
        an = norm_beta_values(aj, w)
        live = an > 0
        if not np.any(live):
            continue
        eps = np.where(live, rel_step * np.maximum(hn, 1e-8) / np.where(live, an, 1.0), 1.0)[:, None]
        d1 = vol_directional_derivative(spec, H, aj, eps)[..., j, :]
        d2 = vol_directional_derivative(spec, H, aj, eps / 2)[..., j, :]
        rich = (4.0 * d2 - d1) / 3.0
        rich[~live] = 0.0
        gap = norm_beta_values(d1 - d2, w)
        scale = norm_beta_values(rich, w) + rel_step * an
        conv &= ~live | (gap <= fd_rtol * scale + 1e-14)
        out += rich
    return out, conv


def check_vol_smoothness(
    spec: ModelSpec,
    n_samples: int = 100,
    radius: float = 1.0,
    seed: int = 0,
    L_declared: Optional[float] = None,
    rel_step: float = 1e-4,
    fd_rtol: float = 1e-3,
    stability: float = 1.2,
) -> CheckItem:
    """Lipschitz estimate of ``h -> <Da(h), a(h)>`` from sampled pairs.

    The estimate must be finite and stable: the estimate over all pairs may
    exceed the estimate over the first half by at most ``stability``; with
    ``L_declared`` it must also stay below the declared constant.
    """
    if spec.vol.state_independent:
        return CheckItem("vol_smoothness", PASS, 0.0, 0, message="volatility does not depend on h")
    H, K = sampled_pairs(spec, n_samples, radius, seed)
    keep = _degenerate_mask(spec, H, K)
    H, K = H[keep], K[keep]
    if H.shape[0] == 0:
        raise StructuralError("all sampled pairs are degenerate (h == k)")
    fh, ch = stratonovich_field(spec, H, rel_step, fd_rtol)
    fk, ck = stratonovich_field(spec, K, rel_step, fd_rtol)
    ratios = norm_beta_values(fh - fk, spec.weights) / norm_beta_values(H - K, spec.weights)
    if not np.all(ch & ck):
        bad = int(np.flatnonzero(~(ch & ck))[0])
        return CheckItem(
            "vol_smoothness", INCONCLUSIVE, float(np.max(ratios)), int(H.shape[0]),
            message="finite differences did not converge (Richardson pair disagrees)",
            details={"first_unconverged_pair": bad},
        )
    half = max(1, H.shape[0] // 2)
    est = float(np.max(ratios))
    est_half = float(np.max(ratios[:half]))
    i = int(np.argmax(ratios))
    stable = np.isfinite(est) and est <= stability * est_half + 1e-12
    ok = stable and (L_declared is None or est <= L_declared * (1.0 + 1e-6))
    witness = None
    if not ok:
        witness = {"h": H[i], "k": K[i], "ratio": float(ratios[i]), "estimate_half": est_half}
    return CheckItem(
        "vol_smoothness", PASS if ok else FAIL, est, int(H.shape[0]), witness=witness,
        threshold=None if L_declared is None else float(L_declared),
        message="Lipschitz estimate of <Da, a>" + ("" if stable else " is unstable under doubling"),
        details={"estimate_half": est_half},
    )


# ---------------------------------------------------------------- positivity


def jump_positivity_margin(spec: ModelSpec, H, X) -> np.ndarray:
    """``min_z (h + gamma'(h, x))(z)`` for paired curves and marks."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.min(H + spec.rn_jumps.evaluate(H, X), axis=-1)


def boundary_values(spec: ModelSpec, H, X, s_idx) -> np.ndarray:
    """``max(|gamma'(h, x)(s)|, max_j |a_j(h)(s)|)`` for curves vanishing at ``s``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    s_idx = np.atleast_1d(s_idx)
    rows = np.arange(H.shape[0])
    G = spec.rn_jumps.evaluate(H, X)
    A = spec.vol(H)
    g = np.abs(G[rows, s_idx])
    a = np.max(np.abs(A[rows, :, s_idx]), axis=-1)
    return np.maximum(g, a)


def check_positivity_conditions(
    spec: ModelSpec,
    n_samples: int = 200,
    radius: float = 1.0,
    seed: int = 0,
    tol: float = 1e-6,
) -> CheckItem:
    """(i) jumps keep nonnegative curves nonnegative; (ii) ``gamma'`` and ``a`` vanish where ``h`` does."""
    jf = spec.rn_jumps
    H = sampled_curves(spec, n_samples, radius, seed, nonnegative=True)
    gen = _gen(seed, 0, 3)
    X = np.asarray(jf.measure.sampler(gen, n_samples), dtype=float).reshape(
        n_samples, jf.measure.support_dim
    )
    if jf.measure.total_mass == 0:
        margin_i = np.min(H, axis=-1)
    else:
        margin_i = jump_positivity_margin(spec, H, X)
    Hb, s_idx = sample_boundary_curves(spec.points, spec.beta, n_samples, radius, _gen(seed, 0, 4))
    Xb = np.asarray(jf.measure.sampler(_gen(seed, 0, 5), n_samples), dtype=float).reshape(
        n_samples, jf.measure.support_dim
    )
    vals_ii = boundary_values(spec, Hb, Xb, s_idx)
    worst_i = float(np.min(margin_i))
    worst_ii = float(np.max(vals_ii))
    fail_i = worst_i < -tol
    fail_ii = worst_ii > tol
    witness = None
    if fail_ii:
        i = int(np.argmax(vals_ii))
        again = float(boundary_values(spec, Hb[i], Xb[i], s_idx[i])[0])
        witness = {
            "part": "ii", "h": Hb[i], "x": Xb[i], "s": float(spec.points[s_idx[i]]),
            "s_index": int(s_idx[i]), "value": again,
        }
    elif fail_i:
        i = int(np.argmin(margin_i))
        witness = {"part": "i", "h": H[i], "x": X[i], "margin": worst_i}
    status = FAIL if (fail_i or fail_ii) else PASS
    return CheckItem(
        "positivity_conditions", status, max(-worst_i, worst_ii), 2 * n_samples,
        witness=witness, threshold=tol,
        message="(i) worst jump margin {:.3g}; (ii) worst boundary value {:.3g}".format(worst_i, worst_ii),
        details={"jump_margin_min": worst_i, "boundary_max": worst_ii},
    )


# ---------------------------------------------------------------- drift condition


def check_drift_condition(
    spec: ModelSpec, n_samples: int = 20, radius: float = 1.0, seed: int = 0, tol: float = 1e-8
) -> list:
    """MPRE residual and measure identity on sampled curves; tail of ``xi``."""
    from .model import xi_values

    H = sampled_curves(spec, n_samples, radius, seed)
    H[0] = spec.h0.values
    res = np.array([mpre_residual(spec, spec.curve(h)) for h in H])
    i = int(np.argmax(res))
    items = [
        CheckItem(
            "mpre_residual", PASS if res[i] <= tol else FAIL, float(res[i]), n_samples,
            witness={"h": H[i], "residual": float(res[i])} if res[i] > tol else None,
            threshold=tol, message="beta-norm residual of the market price of risk equation",
        )
    ]
    tests = default_test_functions(spec)
    exact = spec.real_jumps.measure.atoms is not None and spec.rn_jumps.measure.atoms is not None
    id_tol = 1e-10 if exact else 1e-2
    ident = np.array([measure_identity_residual(spec, spec.curve(h), tests) for h in H[: min(5, n_samples)]])
    j = int(np.argmax(ident))
    items.append(
        CheckItem(
            "measure_identity", PASS if ident[j] <= id_tol else FAIL, float(ident[j]), ident.size,
            witness={"h": H[j], "residual": float(ident[j])} if ident[j] > id_tol else None,
            threshold=id_tol, message="max over bounded test functions",
        )
    )
    tails = np.abs(np.asarray(xi_values(spec, H))[..., -1])
    tail = float(np.max(tails))
    items.append(
        CheckItem(
            "xi_tail_zero", PASS if tail == 0.0 else FAIL, tail, n_samples,
            witness={"h": H[int(np.argmax(np.broadcast_to(tails, (n_samples,))))]} if tail else None,
            threshold=0.0,
        )
    )
    return items


def run_checks(spec: ModelSpec, section: Optional[dict] = None) -> CheckReport:
    """All audits configured by a ``check`` config section."""
    sec = dict(section or {})
    seed = int(sec.get("seed", 0))
    radius = float(sec.get("radius", 1.0))
    n_pairs = int(sec.get("n_pairs", 200))
    n_samples = int(sec.get("n_samples", 200))
    phi = make_phi(sec.get("phi", "zero"), float(sec.get("phi_scale", 1.0)))
    L = sec.get("L", {}) or {}
    tol_pos = float(sec.get("positivity_tol", 1e-6))
    items = []
    items += check_drift_condition(spec, min(n_samples, 20), radius, seed)
    items.append(gamma_antiderivative_bound(spec, phi, n_samples, radius, seed))
    if "lipschitz_rn" in L:
        items.append(check_lipschitz_rn(spec, float(L["lipschitz_rn"]), n_pairs, radius, seed, phi))
    if "growth_rn" in L:
        items.append(check_growth_rn(spec, float(L["growth_rn"]), n_samples, radius, seed, phi))
    if "lipschitz_real" in L:
        items.append(check_lipschitz_real(spec, float(L["lipschitz_real"]), n_pairs, radius, seed))
    if sec.get("smoothness", True):
        items.append(check_vol_smoothness(spec, min(n_pairs, 100), radius, seed, L.get("smoothness")))
    if sec.get("positivity", True):
        items.append(check_positivity_conditions(spec, n_samples, radius, seed, tol_pos))
    tolerances = {
        "lipschitz_rtol": 1e-6,
        "positivity_tol": tol_pos,
        "mpre_tol": 1e-8,
        "radius": radius,
    }
    return CheckReport(items, spec.digest(), tolerances)


__all__ = [
    "check_lipschitz_rn",
    "check_growth_rn",
    "check_lipschitz_real",
    "check_vol_smoothness",
    "check_positivity_conditions",
    "check_drift_condition",
    "run_checks",
    "make_phi",
    "lipschitz_ratio_rn",
    "growth_value_rn",
    "lipschitz_ratio_real",
    "vol_directional_derivative",
    "stratonovich_field",
    "jump_positivity_margin",
    "boundary_values",
    "sampled_pairs",
    "sampled_curves",
]
