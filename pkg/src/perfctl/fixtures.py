"""Shipped experiment fixtures with documented constants.

Each fixture freezes a small linear-quadratic instance plus a control-scaled
noise family.  The ``[meta]`` table records the hand-derived constants of the
instance (strong convexity in u, smoothness in w, per-step quantile
sensitivity, and the resulting contraction coefficient); tests cross-check
them against the diagnostics module.
"""

from __future__ import annotations

import numpy as np

from .config import emit_toml, loads_config
from .errors import ConfigError

__all__ = ["FIXTURE_NAMES", "fixture_config", "fixture_toml", "fixture_objects"]

# chi-distribution quantiles used by the closed-form oracle radii:
# one dof at level 0.95 (T=2, p=0.1) and two dof at level 0.9 (T=1, p=0.1)
_Z1_95 = 1.9599639845400538
_Z2_90 = 2.145966026289347


def _ltv_scalar(T, a=1.0, b=1.0):
    return {
        "kind": "ltv",
        "A": [[[a]]] * T,
        "B": [[[b]]] * T,
        "c": [[0.0]] * T,
    }


def _scalar_gaussian():
    # lambda = 6 (min eig of the u-Hessian), beta = 4 (max eig of the
    # w-Hessian), eps_t = sigma1 * chi1-quantile(0.95)
    eps = 0.1 * _Z1_95
    return {
        "schema_version": 1,
        "experiment": "e_irpc",
        "name": "scalar_gaussian",
        "seeds": [0],
        "system": {
            "n": 1, "m": 1, "T": 2, "x0": [1.0],
            "dynamics": _ltv_scalar(2),
            "control_box": {"lower": [[-1.5], [-1.5]], "upper": [[1.5], [1.5]]},
        },
        "loss": {
            "kind": "quadratic",
            "P": [[1.0]], "Q": [[[0.0]], [[0.0]]], "R": [[[3.0]], [[3.0]]],
            "lambda_reg": 0.0,
        },
        "noise": {
            "family": "gaussian_isotropic",
            "sigma0": 0.2, "sigma1": 0.1, "sigma_min": 1e-09,
        },
        "run": {
            "p": 0.1, "fix_tol": 1e-08, "iters_max": 12, "workers": 1,
            "schedule": {"kind": "constant", "N": 999},
        },
        "meta": {
            "lambda": 6.0, "beta": 4.0,
            "eps_t": [eps, eps],
            "alpha1": 0.18478717657995705,
            "notes": "scalar two-step system; Gaussian noise scale 0.2 + 0.1|u(t)|",
        },
    }


def _lq_2d():
    eps = 0.05 * _Z2_90
    return {
        "schema_version": 1,
        "experiment": "i_irpc",
        "name": "lq_2d",
        "seeds": [0],
        "system": {
            "n": 2, "m": 2, "T": 1, "x0": [1.0, 0.5],
            "dynamics": {
                "kind": "ltv",
                "A": [[[1.0, 0.1], [0.0, 1.0]]],
                "B": [[[1.0, 0.0], [0.0, 1.0]]],
                "c": [[0.0, 0.0]],
            },
            "control_box": {"lower": [[-3.0, -3.0]], "upper": [[3.0, 3.0]]},
        },
        "loss": {
            "kind": "quadratic",
            "P": [[1.0, 0.0], [0.0, 1.0]],
            "Q": [[[0.0, 0.0], [0.0, 0.0]]],
            "R": [[[2.0, 0.0], [0.0, 2.0]]],
            "lambda_reg": 0.0,
        },
        "noise": {
            "family": "gaussian_isotropic",
            "sigma0": 0.15, "sigma1": 0.05, "sigma_min": 1e-09,
        },
        "run": {
            "p": 0.1, "fix_tol": 1e-08, "iters_max": 30, "workers": 1,
            "schedule": {"kind": "constant", "N": 999},
        },
        "meta": {
            "lambda": 6.0, "beta": 2.0,
            "eps_t": [eps],
            "alpha1": 0.03576610043815579,
            "notes": "planar single-step system; Gaussian noise scale 0.15 + 0.05|u(0)|",
        },
    }


def _uniform_ball():
    eps = 0.1 * 0.95
    return {
        "schema_version": 1,
        "experiment": "e_irpc",
        "name": "uniform_ball",
        "seeds": [0],
        "system": {
            "n": 1, "m": 1, "T": 2, "x0": [1.0],
            "dynamics": _ltv_scalar(2),
            "control_box": {"lower": [[-2.0], [-2.0]], "upper": [[2.0], [2.0]]},
        },
        "loss": {
            "kind": "quadratic",
            "P": [[1.0]], "Q": [[[0.0]], [[0.0]]], "R": [[[2.0]], [[2.0]]],
            "lambda_reg": 0.0,
        },
        "noise": {"family": "uniform_ball", "rho0": 0.3, "rho1": 0.1},
        "run": {
            "p": 0.1, "fix_tol": 1e-08, "iters_max": 12, "workers": 1,
            "schedule": {"kind": "constant", "N": 999},
        },
        "meta": {
            "lambda": 4.0, "beta": 4.0,
            "eps_t": [eps, eps],
            "alpha1": 0.13435028842544403,
            "notes": "bounded noise on a ball of radius 0.3 + 0.1|u(t)|",
        },
    }


def _diverging_alpha():
    # control cost small enough that the refinement amplifies: alpha1 >> 1
    eps = 0.645 * _Z1_95
    return {
        "schema_version": 1,
        "experiment": "i_irpc",
        "name": "diverging_alpha",
        "seeds": [0],
        "system": {
            "n": 1, "m": 1, "T": 2, "x0": [1.0],
            "dynamics": _ltv_scalar(2),
            "control_box": {"lower": [[-40.0], [-40.0]], "upper": [[40.0], [40.0]]},
        },
        "loss": {
            "kind": "quadratic",
            "P": [[1.0]], "Q": [[[0.0]], [[0.0]]], "R": [[[0.2]], [[0.2]]],
            "lambda_reg": 0.0,
        },
        "noise": {
            "family": "gaussian_isotropic",
            "sigma0": 0.2, "sigma1": 0.645, "sigma_min": 1e-09,
        },
        "run": {
            "p": 0.1, "fix_tol": 1e-08, "iters_max": 100, "workers": 1,
            "schedule": {"kind": "constant", "N": 999},
        },
        "meta": {
            "lambda": 0.4, "beta": 4.0,
            "eps_t": [eps, eps],
            "alpha1": 17.878159334110844,
            "notes": "non-contracting: quantile sensitivity overwhelms the control penalty",
        },
    }


_BUILDERS = {
    "scalar_gaussian": _scalar_gaussian,
    "lq_2d": _lq_2d,
    "uniform_ball": _uniform_ball,
    "diverging_alpha": _diverging_alpha,
}

FIXTURE_NAMES = tuple(_BUILDERS)

_HEADER = """\
# perfctl fixture: {name}
# {notes}
# Documented constants (see [meta]): lambda = {lam}, beta = {beta},
# alpha1 = beta * sqrt(sum eps_t^2) / lambda = {alpha1}
"""


def fixture_config(name) -> dict:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown fixture {name!r}; valid names: {', '.join(FIXTURE_NAMES)}"
        ) from None


def fixture_toml(name) -> str:
    cfg = fixture_config(name)
    meta = cfg["meta"]
    header = _HEADER.format(
        name=name, notes=meta["notes"], lam=meta["lambda"],
        beta=meta["beta"], alpha1=meta["alpha1"],
    )
    return header + emit_toml(cfg)


def fixture_objects(name):
    """(model, loss, noise, config) for a named fixture."""
    from .config import build_loss, build_noise, build_system

    cfg = loads_config(fixture_toml(name))
    return build_system(cfg), build_loss(cfg), build_noise(cfg), cfg
