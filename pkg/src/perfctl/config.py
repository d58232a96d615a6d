"""Plain-text run configuration: a versioned TOML schema.

The schema serializes every value-object kind that has a data representation
(linear time-varying systems, quadratic losses, the closed-form noise
families, constant-covariance anisotropic noise, score specs).  Callback
kinds (generic dynamics or losses, custom samplers) are library-level only
and refuse to serialize.

Top-level layout::

    schema_version = 1
    experiment = "e_irpc"   # e_irpc | i_irpc | coverage_audit | ps_po_gap | contraction
    name = "scalar_gaussian"
    seeds = [0]

    [system]        n, m, T, x0, dynamics (kind="ltv": A, B, c), control_box
    [loss]          kind="quadratic": P, Q, R, lambda_reg
    [noise]         family + parameters
    [run]           p, fix_tol, iters_max, workers, schedule
    [solver]        restarts, block_sweeps_max, block_tol, step_rule,
                    grad_tol, iters_max, seed
    [score]         kind="euclidean" | "mahalanobis" (H)
    [coverage]      reps, fresh, N          (coverage_audit experiments)
    [gap]           points_per_axis, refinements, zoom (ps_po_gap)
    [contraction]   delta                   (contraction experiments)
    [meta]          free-form documentation, ignored by the runner
"""

from __future__ import annotations

import json

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

from .conformal import Euclidean, Mahalanobis
from .errors import ConfigError
from .irpc import Constant, RunConfig, Theoretical
from .solver import SolverConfig
from .types import (
    GaussianAnisotropic,
    GaussianIsotropic,
    LinearTimeVarying,
    QuadraticLoss,
    SystemModel,
    UniformBall,
)

__all__ = [
    "CONFIG_SCHEMA_VERSION",
    "load_config",
    "loads_config",
    "apply_overrides",
    "build_system",
    "build_loss",
    "build_noise",
    "build_score",
    "build_run_config",
    "system_to_dict",
    "loss_to_dict",
    "noise_to_dict",
    "score_to_dict",
    "run_config_to_dict",
    "emit_toml",
]

CONFIG_SCHEMA_VERSION = 1

EXPERIMENTS = ("e_irpc", "i_irpc", "coverage_audit", "ps_po_gap", "contraction")


# ---------------------------------------------------------------------------
# loading and validation
# ---------------------------------------------------------------------------


def loads_config(text: str) -> dict:
    try:
        cfg = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse as TOML: {exc}") from exc
    _validate(cfg)
    return cfg


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_config(fh.read())


def _lookup(cfg, dotted):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _require(cfg, dotted):
    val = _lookup(cfg, dotted)
    if val is None:
        raise ConfigError(f"missing required field: {dotted}")
    return val


def _validate(cfg):
    version = _require(cfg, "schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version: expected {CONFIG_SCHEMA_VERSION}, got {version}"
        )
    experiment = _require(cfg, "experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"experiment: unknown kind {experiment!r}; valid: {', '.join(EXPERIMENTS)}"
        )
    for dotted in ("system.n", "system.m", "system.T", "system.x0",
                   "system.dynamics", "system.control_box",
                   "loss.kind", "noise.family", "run.p"):
        _require(cfg, dotted)
    p = cfg["run"]["p"]
    if not (isinstance(p, (int, float)) and 0.0 < p < 1.0):
        raise ConfigError(f"run.p: must lie in (0, 1), got {p!r}")
    if experiment == "coverage_audit":
        for dotted in ("coverage.reps", "coverage.fresh", "coverage.N"):
            _require(cfg, dotted)


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``key.path=value`` overrides; values parse as TOML literals."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key.path=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        try:
            value = _toml.loads(f"v = {raw}")["v"]
        except _toml.TOMLDecodeError:
            value = raw
        node = cfg
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} crosses a non-table value")
        node[parts[-1]] = value
    _validate(cfg)
    return cfg


# ---------------------------------------------------------------------------
# builders (config dict -> domain objects)
# ---------------------------------------------------------------------------


def build_system(cfg) -> SystemModel:
    sys = cfg["system"]
    dyn = sys["dynamics"]
    if dyn.get("kind") != "ltv":
        raise ConfigError(f"system.dynamics.kind: unsupported kind {dyn.get('kind')!r}")
    nominal = LinearTimeVarying(
        A=np.asarray(dyn["A"], dtype=float),
        B=np.asarray(dyn["B"], dtype=float),
        c=np.asarray(dyn["c"], dtype=float),
    )
    box = sys["control_box"]
    return SystemModel(
        n=int(sys["n"]), m=int(sys["m"]), T=int(sys["T"]),
        x0=np.asarray(sys["x0"], dtype=float),
        nominal=nominal,
        lower=np.asarray(box["lower"], dtype=float),
        upper=np.asarray(box["upper"], dtype=float),
    )


def build_loss(cfg) -> QuadraticLoss:
    loss = cfg["loss"]
    if loss.get("kind") != "quadratic":
        raise ConfigError(f"loss.kind: unsupported kind {loss.get('kind')!r}")
    return QuadraticLoss(
        P=np.asarray(loss["P"], dtype=float),
        Q=np.asarray(loss["Q"], dtype=float),
        R=np.asarray(loss["R"], dtype=float),
        lambda_reg=float(loss.get("lambda_reg", 0.0)),
    )


def build_noise(cfg):
    noise = cfg["noise"]
    family = noise["family"]
    if family == "gaussian_isotropic":
        return GaussianIsotropic(
            sigma0=float(noise["sigma0"]),
            sigma1=float(noise.get("sigma1", 0.0)),
            sigma_min=float(noise.get("sigma_min", 1e-12)),
        )
    if family == "uniform_ball":
        return UniformBall(rho0=float(noise["rho0"]), rho1=float(noise.get("rho1", 0.0)))
    if family == "gaussian_anisotropic":
        C = np.asarray(noise["cov"], dtype=float)
        return GaussianAnisotropic(cov=lambda x, u, _C=C: _C, label="constant")
    raise ConfigError(f"noise.family: unsupported family {family!r}")


def build_score(cfg):
    score = cfg.get("score", {})
    kind = score.get("kind", "euclidean")
    if kind == "euclidean":
        return Euclidean()
    if kind == "mahalanobis":
        return Mahalanobis(H=np.asarray(score["H"], dtype=float))
    raise ConfigError(f"score.kind: unsupported kind {kind!r}")


def build_run_config(cfg, master_seed) -> RunConfig:
    run = cfg.get("run", {})
    sched = run.get("schedule", {"kind": "constant", "N": 999})
    if sched.get("kind", "constant") == "constant":
        schedule = Constant(int(sched.get("N", 999)))
    elif sched["kind"] == "theoretical":
        schedule = Theoretical(
            lam=float(sched["lambda"]), beta=float(sched["beta"]),
            eps_t=tuple(float(e) for e in sched["eps_t"]),
            delta=float(sched["delta"]), c=float(sched.get("c", 1.0)),
        )
    else:
        raise ConfigError(f"run.schedule.kind: unsupported kind {sched['kind']!r}")
    sv = cfg.get("solver", {})
    solver = SolverConfig(
        restarts=int(sv.get("restarts", 16)),
        block_sweeps_max=int(sv.get("block_sweeps_max", 200)),
        block_tol=float(sv.get("block_tol", 1e-10)),
        step_rule=str(sv.get("step_rule", "auto")),
        grad_tol=float(sv.get("grad_tol", 1e-8)),
        iters_max=int(sv.get("iters_max", 10_000)),
        seed=int(sv.get("seed", 0)),
    )
    return RunConfig(
        p=float(run["p"]),
        schedule=schedule,
        fix_tol=float(run.get("fix_tol", 1e-8)),
        iters_max=int(run.get("iters_max", 100)),
        solver=solver,
        score=build_score(cfg),
        master_seed=int(master_seed),
        workers=int(run.get("workers", 1)),
    )


# ---------------------------------------------------------------------------
# serializers (domain objects -> config dict)
# ---------------------------------------------------------------------------


def _nested(a):
    return np.asarray(a, dtype=float).tolist()


def system_to_dict(model: SystemModel) -> dict:
    if not model.is_ltv:
        raise ConfigError("generic callback dynamics cannot be serialized")
    return {
        "n": model.n, "m": model.m, "T": model.T,
        "x0": _nested(model.x0),
        "dynamics": {
            "kind": "ltv",
            "A": _nested(model.nominal.A),
            "B": _nested(model.nominal.B),
            "c": _nested(model.nominal.c),
        },
        "control_box": {"lower": _nested(model.lower), "upper": _nested(model.upper)},
    }


def loss_to_dict(loss) -> dict:
    if not isinstance(loss, QuadraticLoss):
        raise ConfigError("generic callback losses cannot be serialized")
    return {
        "kind": "quadratic",
        "P": _nested(loss.P), "Q": _nested(loss.Q), "R": _nested(loss.R),
        "lambda_reg": float(loss.lambda_reg),
    }


def noise_to_dict(noise) -> dict:
    if isinstance(noise, GaussianIsotropic):
        return {"family": "gaussian_isotropic", "sigma0": noise.sigma0,
                "sigma1": noise.sigma1, "sigma_min": noise.sigma_min}
    if isinstance(noise, UniformBall):
        return {"family": "uniform_ball", "rho0": noise.rho0, "rho1": noise.rho1}
    if isinstance(noise, GaussianAnisotropic) and noise.label == "constant":
        C = noise.cov(None, None)
        return {"family": "gaussian_anisotropic", "cov": _nested(C)}
    raise ConfigError(f"noise family {type(noise).__name__} cannot be serialized")


def score_to_dict(score) -> dict:
    if isinstance(score, Euclidean):
        return {"kind": "euclidean"}
    if isinstance(score, Mahalanobis):
        return {"kind": "mahalanobis", "H": _nested(score.H)}
    raise ConfigError(f"score {type(score).__name__} cannot be serialized")


def run_config_to_dict(run_cfg: RunConfig) -> dict:
    if isinstance(run_cfg.schedule, Constant):
        sched = {"kind": "constant", "N": run_cfg.schedule.N}
    else:
        s = run_cfg.schedule
        sched = {"kind": "theoretical", "lambda": s.lam, "beta": s.beta,
                 "eps_t": list(s.eps_t), "delta": s.delta, "c": s.c}
    sv = run_cfg.solver
    return {
        "run": {
            "p": run_cfg.p, "fix_tol": run_cfg.fix_tol,
            "iters_max": run_cfg.iters_max, "workers": run_cfg.workers,
            "schedule": sched,
        },
        "solver": {
            "restarts": sv.restarts, "block_sweeps_max": sv.block_sweeps_max,
            "block_tol": sv.block_tol, "step_rule": sv.step_rule,
            "grad_tol": sv.grad_tol, "iters_max": sv.iters_max, "seed": sv.seed,
        },
        "score": score_to_dict(run_cfg.score),
    }


# ---------------------------------------------------------------------------
# deterministic TOML emission
# ---------------------------------------------------------------------------


def _toml_scalar(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        r = repr(float(v))
        return r if any(c in r for c in ".einf") else r + ".0"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise ConfigError(f"cannot emit value of type {type(v).__name__} to TOML")


def emit_toml(d: dict, _prefix="") -> str:
    """Emit a nested dict as TOML with deterministic (insertion) ordering."""
    lines = []
    tables = []
    for key, val in d.items():
        if isinstance(val, dict):
            tables.append((key, val))
        else:
            lines.append(f"{key} = {_toml_scalar(val)}")
    out = "\n".join(lines)
    for key, val in tables:
        name = f"{_prefix}{key}"
        body = emit_toml(val, _prefix=name + ".")
        out += f"\n\n[{name}]\n{body}" if body else f"\n\n[{name}]"
    return out.strip() + ("\n" if not _prefix else "")
