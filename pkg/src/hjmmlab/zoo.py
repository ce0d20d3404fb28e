"""Built-in models assembled from a few curve primitives.

A volatility column or jump field is ``amplitude(h) * shape(z)``:

shapes
    ``exp``   -- ``sigma * exp(-kappa z)``
    ``taper`` -- ``sigma`` up to ``z_max - width``, then a cosine ramp to 0
amplitudes
    ``const``     -- 1
    ``norm``      -- ``||h||_beta`` (uncapped; breaks the growth bound)
    ``norm_cap``  -- ``min(||h||_beta, cap)``
    ``pointwise`` -- ``min(h(z), cap)``, vanishes wherever the curve does

Every shape is forced to 0 at the last grid point so that fields take values
in the tail-zero subspace.
"""

from __future__ import annotations

import copy
from typing import Optional

import numpy as np

from .curves import CovarianceSpec, CurveGrid, ForwardCurve, norm_beta_values
from .drivers import point_masses, truncated_exponential, zero_measure
from .errors import ConfigError
from .model import (
    CurveField,
    JumpField,
    ModelSpec,
    classical_drift_field,
    constant_mpr,
    drift_from_mpre,
    no_jumps,
    xi_drift_field,
    zero_field,
    zero_vol,
)

DEFAULT_Z_MAX = 30.0
DEFAULT_DZ = 1.0 / 250.0

PRESETS = {
    "zero": {"vol": [], "jump": None},
    "ho_lee": {"vol": [{"shape": "taper", "sigma": 0.01, "width": 5.0}], "jump": None},
    "hull_white": {"vol": [{"shape": "exp", "sigma": 0.01, "kappa": 0.5}], "jump": None},
    "capped_proportional": {
        "vol": [{"shape": "exp", "sigma": 0.3, "kappa": 0.5, "amplitude": "norm_cap", "cap": 0.1}],
        "jump": None,
    },
    "proportional": {
        "vol": [{"shape": "exp", "sigma": 0.3, "kappa": 0.5, "amplitude": "norm"}],
        "jump": None,
    },
    "pointwise_proportional": {
        "vol": [{"shape": "exp", "sigma": 0.3, "kappa": 0.5, "amplitude": "pointwise", "cap": 1.0}],
        "jump": None,
    },
    "exp_jump": {"vol": [], "jump": {"lam": 2.0, "x0": 0.01}},
    "drift_only": {"vol": [], "jump": None, "real_drift": "drift_only"},
}

MODEL_NAMES = tuple(PRESETS) + ("custom",)


# ---------------------------------------------------------------- shapes


def shape_values(points: np.ndarray, spec: dict):
    """Values and z-derivative of a shape primitive on the grid."""
    kind = spec.get("shape", "exp")
    z = np.asarray(points, dtype=float)
    if kind == "exp":
        s = float(spec.get("sigma", spec.get("scale", 1.0)))
        k = float(spec.get("kappa", 1.0))
        v = s * np.exp(-k * z)
        d = -k * v
    elif kind == "taper":
        s = float(spec.get("sigma", spec.get("scale", 1.0)))
        width = float(spec.get("width", 5.0))
        start = z[-1] - width
        u = np.clip((z - start) / width, 0.0, 1.0)
        v = s * 0.5 * (1.0 + np.cos(np.pi * u))
        d = np.where((z > start), -s * 0.5 * np.pi / width * np.sin(np.pi * u), 0.0)
    else:
        raise ConfigError(f"unknown shape {kind!r}", field="shape")
    v = v.copy()
    v[-1] = 0.0
    return v, d


def _amplitude(spec: dict, weights: np.ndarray):
    """Returns ``(amp(H), damp_dz(H), state_independent)`` callables."""
    kind = spec.get("amplitude", "const")
    cap = float(spec.get("cap", np.inf))
    if kind == "const":
        return (lambda H: 1.0), (lambda H: 0.0), True
    if kind == "norm":
        return (lambda H: norm_beta_values(H, weights)[..., None]), (lambda H: 0.0), False
    if kind == "norm_cap":
        return (
            lambda H: np.minimum(norm_beta_values(H, weights), cap)[..., None],
            (lambda H: 0.0),
            False,
        )
    if kind == "pointwise":

        def damp(H):
            dh = np.gradient(H, axis=-1) / np.gradient(np.arange(H.shape[-1]) * 1.0)
            return np.where(H < cap, dh, 0.0)

        return (lambda H: np.minimum(H, cap)), damp, False
    raise ConfigError(f"unknown amplitude {kind!r}", field="amplitude")


def make_vol(points, weights, columns: list) -> "VolFieldLike":
    from .model import VolField

    if not columns:
        return zero_vol(1)
    shapes = [shape_values(points, c)[0] for c in columns]
    amps = [_amplitude(c, weights) for c in columns]
    J = len(columns)
    if all(a[2] for a in amps):
        table = np.vstack(shapes)
        table.setflags(write=False)
        return VolField(lambda H: table, J, True, "+".join(c.get("shape", "exp") for c in columns))

    def fn(H):
        cols = [np.broadcast_to(a[0](H) * s, H.shape) for a, s in zip(amps, shapes)]
        return np.stack(cols, axis=-2)

    return VolField(fn, J, False, "+".join(c.get("amplitude", "const") for c in columns))


def _mark_measure(jump: dict):
    marks = jump.get("marks", "point")
    lam = float(jump.get("lam", 2.0))
    if marks == "point":
        return point_masses([[float(jump.get("x0", 0.01))]], [lam])
    if marks == "exponential":
        return truncated_exponential(lam, float(jump.get("rate", 100.0)), float(jump.get("upper", 0.1)))
    raise ConfigError(f"unknown mark law {marks!r}", field="jump.marks")


def make_jump(points, weights, jump: Optional[dict], beta_prime: float, mark_scale: float = 1.0):
    """``gamma(h, x)(z) = -x * amplitude(h)(z) * shape(z)`` with its z-derivative."""
    if not jump:
        return no_jumps(beta_prime)
    shp = {"shape": jump.get("shape", "exp"), "sigma": jump.get("scale", 1.0),
           "kappa": jump.get("kappa", 1.0), "width": jump.get("width", 5.0)}
    sv, sd = shape_values(points, shp)
    amp, damp, indep = _amplitude(jump, weights)
    measure = _mark_measure(jump)
    if mark_scale != 1.0:
        measure = measure.scaled(mark_scale)

    def gamma(H, X):
        return -X[..., :1] * (amp(H) * sv)

    def dgamma(H, X):
        return -X[..., :1] * (damp(H) * sv + amp(H) * sd)

    return JumpField(gamma, measure, beta_prime, dgamma, indep, f"jump[{jump.get('marks', 'point')}]")


def _h0_values(points, h0) -> np.ndarray:
    z = np.asarray(points, dtype=float)
    if isinstance(h0, ForwardCurve):
        return np.interp(z, h0.grid.points, h0.values)
    if isinstance(h0, (int, float)):
        return np.full(z.size, float(h0))
    if isinstance(h0, dict):
        level = float(h0.get("level", 0.03))
        slope = float(h0.get("slope", 0.0))
        decay = float(h0.get("decay", 1.0))
        return level + slope * (-np.expm1(-decay * z))
    raise ConfigError("h0 must be a number, a mapping or a ForwardCurve", field="h0")


def _drift_only_field(points, params: dict) -> CurveField:
    c = float(params.get("c", 0.01))
    r = float(params.get("r", 0.5))
    e = np.exp(-np.asarray(points))
    e[-1] = 0.0

    def fn(H):
        return (c - r * H[..., :1]) * e

    return CurveField(fn, r == 0.0, "drift_only")


def build_model(name: str = "hull_white", grid: Optional[CurveGrid] = None, **params) -> ModelSpec:
    """Assemble a zoo model.

    Parameters
    ----------
    name : str
        One of ``MODEL_NAMES``.
    grid : CurveGrid, optional
        Maturity grid; by default uniform on ``[0, z_max]`` with step ``dz``.
    **params
        ``beta``, ``beta_prime``, ``h0``, ``sigma``, ``kappa``, ``cap``,
        ``width`` (override the preset's first column), ``vol`` (list of
        column mappings), ``jump`` (mapping or ``None``), ``zeta`` (level of
        the constant market price of risk curve), ``y`` (constant jump
        density), ``real_drift`` (``mpre``, ``classical``, ``xi``,
        ``drift_only`` or ``zero``), ``drift`` (parameters of
        ``drift_only``), ``eigenvalues``, ``mark_mc``.
    """
    if name not in MODEL_NAMES:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}", field="model.name")
    raw = copy.deepcopy(params)
    p = copy.deepcopy(params)
    if grid is None:
        grid = CurveGrid.uniform(float(p.pop("z_max", DEFAULT_Z_MAX)), float(p.pop("dz", DEFAULT_DZ)))
    else:
        p.pop("z_max", None)
        p.pop("dz", None)
    preset = copy.deepcopy(PRESETS.get(name, {"vol": [], "jump": None}))
    columns = p.pop("vol", None)
    if columns is None:
        columns = preset["vol"]
        for key in ("sigma", "kappa", "cap", "width", "amplitude"):
            if key in p and columns:
                columns[0][key] = p[key]
    for key in ("sigma", "kappa", "cap", "width", "amplitude"):
        p.pop(key, None)
    jump = p.pop("jump", preset["jump"])
    if jump is not None and not isinstance(jump, dict):
        jump = {} if jump is True else None
    if jump is not None and preset["jump"] is not None:
        jump = {**preset["jump"], **jump}

    beta = float(p.pop("beta", 0.1))
    beta_prime = float(p.pop("beta_prime", 2.0 * beta))
    y = float(p.pop("y", 1.0))
    zeta = float(p.pop("zeta", 0.0))
    drift_kind = p.pop("real_drift", preset.get("real_drift", "mpre"))
    drift_params = p.pop("drift", {}) or {}
    h0 = p.pop("h0", 0.03)
    eig = p.pop("eigenvalues", None)
    mark_mc = int(p.pop("mark_mc", 100_000))
    if p:
        raise ConfigError(f"unknown model parameters: {sorted(p)}", field="model")

    from .curves import cell_weights

    w = cell_weights(grid.points, beta)
    vol = make_vol(grid.points, w, columns)
    if eig is None:
        eig = (1.0,) * vol.dim
    cov = CovarianceSpec(tuple(eig))
    rn_jumps = make_jump(grid.points, w, jump, beta_prime)
    real_jumps = make_jump(grid.points, w, jump, beta_prime, mark_scale=1.0 / y)
    h0c = ForwardCurve(grid, _h0_values(grid.points, h0), beta)

    def rebuild(g):
        return build_model(name, g, **raw)

    spec = ModelSpec(
        grid=grid,
        beta=beta,
        cov=cov,
        vol=vol,
        real_jumps=real_jumps,
        rn_jumps=rn_jumps,
        real_drift=zero_field(),
        mpr=constant_mpr(zeta, y),
        h0=h0c,
        name=name,
        meta={"name": name, **{k: v for k, v in raw.items() if not isinstance(v, ForwardCurve)}},
        builder=rebuild,
        mark_mc=mark_mc,
    )
    if drift_kind == "mpre":
        drift = drift_from_mpre(spec)
    elif drift_kind == "classical":
        drift = classical_drift_field(spec)
    elif drift_kind == "xi":
        drift = xi_drift_field(spec)
    elif drift_kind == "drift_only":
        drift = _drift_only_field(grid.points, drift_params)
    elif drift_kind == "zero":
        drift = zero_field()
    else:
        raise ConfigError(f"unknown real_drift {drift_kind!r}", field="model.real_drift")
    return spec.with_real_drift(drift)


def exp_shape_norm(sigma: float, kappa: float, beta: float, z_max: float = np.inf) -> float:
    """Closed-form beta-norm of ``sigma * exp(-kappa z)`` on ``[0, z_max]``."""
    r = 2.0 * kappa - beta
    if np.isinf(z_max):
        tail = kappa**2 / r
    else:
        tail = kappa**2 * (-np.expm1(-r * z_max)) / r
    return float(sigma * np.sqrt(1.0 + tail))


__all__ = ["build_model", "MODEL_NAMES", "PRESETS", "exp_shape_norm", "make_vol", "make_jump"]
