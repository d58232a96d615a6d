"""Batch experiment runner.

    perfctl run CONFIG [--seed N] [--out-dir DIR] [--override k.ey=value ...] [--quiet]
    perfctl compare HISTORY_A HISTORY_B
    perfctl emit-fixture NAME [--out-dir DIR]

Each run writes into a fresh artifact directory (never overwriting an
existing one): the resolved config, a manifest (config hash, seed, schema
versions), the iteration history as JSON lines, a summary CSV, and a
human-readable report.  History files are byte-identical across repeated
runs with the same config and seed, regardless of worker count.

Exit codes: 0 success, 2 config/input errors, 3 solver or sampling failures
(partial artifacts are preserved), 4 model invariant violations.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import (
    CONFIG_SCHEMA_VERSION,
    apply_overrides,
    build_loss,
    build_noise,
    build_run_config,
    build_score,
    build_system,
    emit_toml,
    load_config,
)
from .conformal import build_confidence_product, coverage_audit
from .diagnostics import (
    contraction_report,
    estimate_constants,
    ps_po_gap_bound,
    write_ratios_csv,
)
from .dynamics import sample_noise_batch
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionMismatchError,
    InsufficientSamplesError,
    NonContractionError,
    PerfctlError,
    SamplingError,
)
from .fixtures import FIXTURE_NAMES, fixture_toml
from .history import (
    HISTORY_SCHEMA_VERSION,
    SUMMARY_SCHEMA_VERSION,
    compare_histories,
    load_history_jsonl,
    save_history_jsonl,
    write_summary_csv,
)
from .irpc import GridSpec, estimate_u_ps, grid_search_u_po, run_e_irpc, run_i_irpc, solve_nominal
from .types import validate_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_INVARIANT = 4

MANIFEST_SCHEMA_VERSION = 1


def _default_out_dir():
    return os.environ.get("PERFCTL_OUT_DIR", "./runs")


def _fresh_dir(root, stem):
    """Create ``root/stem`` or the first free suffixed variant of it."""
    os.makedirs(root, exist_ok=True)
    candidate = os.path.join(root, stem)
    k = 0
    while True:
        try:
            os.mkdir(candidate)
            return candidate
        except FileExistsError:
            k += 1
            candidate = os.path.join(root, f"{stem}-{k:03d}")


def _write_manifest(art_dir, cfg_text, experiment, name, seed, files, status, error=None):
    manifest = {
        "manifest_schema": MANIFEST_SCHEMA_VERSION,
        "config_schema": CONFIG_SCHEMA_VERSION,
        "history_schema": HISTORY_SCHEMA_VERSION,
        "summary_schema": SUMMARY_SCHEMA_VERSION,
        "package_version": __version__,
        "experiment": experiment,
        "name": name,
        "master_seed": seed,
        "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "files": sorted(files),
        "status": status,
    }
    if error:
        manifest["error"] = error
    with open(os.path.join(art_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _say(quiet, *msg):
    if not quiet:
        print(*msg)


# ---------------------------------------------------------------------------
# experiment bodies
# ---------------------------------------------------------------------------


def _seed_pair(master_seed, rep):
    ss = np.random.SeedSequence([int(master_seed), int(rep)])
    a, b = ss.generate_state(2, np.uint64)
    return int(a), int(b)


def _run_refinement(cfg, model, loss, noise, seed, art_dir, files):
    run_cfg = build_run_config(cfg, master_seed=seed)
    runner = run_e_irpc if cfg["experiment"] == "e_irpc" else run_i_irpc
    error = None
    try:
        history = runner(model, noise, loss, run_cfg)
    except (ConvergenceError, InsufficientSamplesError, SamplingError) as exc:
        history = getattr(exc, "history", None)
        error = exc
    if history is not None:
        hist_path = os.path.join(art_dir, "history.jsonl")
        save_history_jsonl(history, hist_path)
        files.append("history.jsonl")
        write_summary_csv(history, os.path.join(art_dir, "summary.csv"))
        files.append("summary.csv")
    lines = [f"experiment: {cfg['experiment']}", f"seed: {seed}"]
    if history is not None:
        total_ms = sum(r.wall_time for r in history.records) * 1000.0
        lines += [
            f"iterations: {len(history) - 1}",
            f"stop reason: {history.stop_reason}",
            f"converged: {history.converged}   diverged: {history.diverged}",
            f"final control (flat): {history.final_u.ravel().tolist()}",
            f"final worst-case value: {history.records[-1].inner_value!r}",
            f"total wall time: {total_ms:.1f} ms",
        ]
    if error is not None:
        lines.append(f"FAILED: {error}")
    _write_report(art_dir, files, lines)
    if error is not None:
        raise error


def _write_report(art_dir, files, lines):
    with open(os.path.join(art_dir, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    files.append("report.txt")


def _run_coverage(cfg, model, loss, noise, seed, art_dir, files):
    cov = cfg["coverage"]
    reps, fresh_m, n_cal = int(cov["reps"]), int(cov["fresh"]), int(cov["N"])
    p = float(cfg["run"]["p"])
    score = build_score(cfg)
    run_cfg = build_run_config(cfg, master_seed=seed)
    if "control" in cov:
        u = np.asarray(cov["control"], dtype=float)
    else:
        u = solve_nominal(model, loss, run_cfg.solver)

    per_step = np.empty((reps, model.T))
    joint = np.empty(reps)
    target = None
    t0 = time.perf_counter()
    for rep in range(reps):
        cal_seed, fresh_seed = _seed_pair(seed, rep)
        batch = sample_noise_batch(model, noise, u, n_cal, cal_seed,
                                   workers=run_cfg.workers)
        conf = build_confidence_product(batch, score, p)
        fresh = sample_noise_batch(model, noise, u, fresh_m, fresh_seed,
                                   workers=run_cfg.workers)
        rep_report = coverage_audit(conf, fresh)
        per_step[rep] = rep_report.per_step
        joint[rep] = rep_report.joint
        target = rep_report.target
    elapsed = time.perf_counter() - t0

    csv_path = os.path.join(art_dir, "coverage.csv")
    with open(csv_path, "w") as fh:
        fh.write("rep," + ",".join(f"cov_t{t}" for t in range(model.T)) + ",joint\n")
        for rep in range(reps):
            row = [str(rep)] + [repr(float(v)) for v in per_step[rep]] + [repr(float(joint[rep]))]
            fh.write(",".join(row) + "\n")
    files.append("coverage.csv")

    jthresh = 1.0 - p
    lines = [
        f"coverage audit: reps={reps}  calibration N={n_cal}  fresh M={fresh_m}",
        f"target k/(N+1) = {target!r}",
        "",
        "step  mean coverage",
    ]
    for t in range(model.T):
        lines.append(f"{t:4d}  {per_step[:, t].mean():.6f}")
    lines += [
        "",
        f"mean per-step coverage: {per_step.mean():.6f}",
        f"mean joint coverage: {joint.mean():.6f}",
        f"fraction of reps with joint >= {jthresh}: {(joint >= jthresh).mean():.4f}",
        f"elapsed: {elapsed:.1f} s",
    ]
    _write_report(art_dir, files, lines)


def _run_gap(cfg, model, loss, noise, seed, art_dir, files):
    gap = cfg.get("gap", {})
    grid = GridSpec(
        points_per_axis=int(gap.get("points_per_axis", 41)),
        refinements=int(gap.get("refinements", 2)),
        zoom=float(gap.get("zoom", 10.0)),
    )
    run_cfg = build_run_config(cfg, master_seed=seed)
    p = run_cfg.p
    ps = estimate_u_ps(model, noise, loss, run_cfg)
    po = grid_search_u_po(model, noise, loss, p, grid, run_cfg.solver)
    est = estimate_constants(model, loss, noise, p)
    bound = ps_po_gap_bound(est.L_w, est.lam, est.eps_t)
    measured = float(np.linalg.norm(ps.u - po.u))
    lines = [
        "stable-vs-optimal proximity",
        f"stable control (flat):  {ps.u.ravel().tolist()}  (residual {ps.residual!r})",
        f"optimal control (flat): {po.u.ravel().tolist()}  (grid value {po.value!r})",
        f"measured |u_ps - u_po| = {measured!r}",
        f"bound 2 L_w sqrt(sum eps^2) / lambda = {bound!r}",
        f"estimated constants: lambda={est.lam!r} beta={est.beta!r} "
        f"eps_t={est.eps_t.tolist()} L_w={est.L_w!r}",
        f"bound satisfied: {measured <= bound}",
    ]
    _write_report(art_dir, files, lines)


def _run_contraction(cfg, model, loss, noise, seed, art_dir, files):
    run_cfg = build_run_config(cfg, master_seed=seed)
    ps = estimate_u_ps(model, noise, loss, run_cfg)
    history = run_i_irpc(model, noise, loss, run_cfg)
    save_history_jsonl(history, os.path.join(art_dir, "history.jsonl"))
    files.append("history.jsonl")
    write_summary_csv(history, os.path.join(art_dir, "summary.csv"))
    files.append("summary.csv")
    report = contraction_report(history, ps.u)
    write_ratios_csv(report, os.path.join(art_dir, "ratios.csv"))
    files.append("ratios.csv")
    _write_report(art_dir, files, [
        f"contraction run toward the stable control (residual {ps.residual!r})",
        report.to_text(),
    ])


_EXPERIMENT_BODIES = {
    "e_irpc": _run_refinement,
    "i_irpc": _run_refinement,
    "coverage_audit": _run_coverage,
    "ps_po_gap": _run_gap,
    "contraction": _run_contraction,
}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_run(args):
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, args.override)
        if args.seed is not None:
            cfg["seeds"] = [args.seed]
        seeds = [int(s) for s in cfg.get("seeds", [0])]
        model = build_system(cfg)
        loss = build_loss(cfg)
        noise = build_noise(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    report = validate_model(model, loss)
    if not report.ok:
        for violation in report.violations:
            print(f"invariant violation: {violation}", file=sys.stderr)
        return EXIT_INVARIANT

    out_root = args.out_dir or _default_out_dir()
    cfg_text = emit_toml(cfg)
    name = cfg.get("name", "run")
    experiment = cfg["experiment"]
    body = _EXPERIMENT_BODIES[experiment]

    code = EXIT_OK
    for seed in seeds:
        art_dir = _fresh_dir(out_root, f"{name}-{experiment}-seed{seed}")
        files = ["manifest.json", "resolved_config.toml"]
        with open(os.path.join(art_dir, "resolved_config.toml"), "w") as fh:
            fh.write(cfg_text)
        try:
            body(cfg, model, loss, noise, seed, art_dir, files)
        except (ConvergenceError, NonContractionError, InsufficientSamplesError,
                SamplingError) as exc:
            _write_manifest(art_dir, cfg_text, experiment, name, seed, files,
                            status="failed", error=str(exc))
            print(f"run failed (seed {seed}): {exc}", file=sys.stderr)
            code = EXIT_RUNTIME
            continue
        except (ConfigError, ValueError) as exc:
            _write_manifest(art_dir, cfg_text, experiment, name, seed, files,
                            status="failed", error=str(exc))
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        _write_manifest(art_dir, cfg_text, experiment, name, seed, files, status="ok")
        _say(args.quiet, f"seed {seed}: artifacts in {art_dir}")
    return code


def _cmd_compare(args):
    try:
        a = load_history_jsonl(args.history_a)
        b = load_history_jsonl(args.history_b)
        report = compare_histories(a, b)
    except (OSError, ValueError, DimensionMismatchError, json.JSONDecodeError) as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(report.to_text())
    return EXIT_OK


def _cmd_emit_fixture(args):
    try:
        text = fixture_toml(args.fixture)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{args.fixture}.toml")
    with open(path, "w") as fh:
        fh.write(text)
    _say(args.quiet, path)
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="perfctl",
        description="Robust open-loop control experiments for decision-dependent noise.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment from a config file")
    p_run.add_argument("config", help="path to a TOML config")
    p_run.add_argument("--seed", type=int, default=None, help="override the seed list")
    p_run.add_argument("--out-dir", default=None,
                       help="artifact root (default: $PERFCTL_OUT_DIR or ./runs)")
    p_run.add_argument("--override", action="append", default=[],
                       metavar="KEY.PATH=VALUE", help="override a config value")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="diff two history files")
    p_cmp.add_argument("history_a")
    p_cmp.add_argument("history_b")
    p_cmp.set_defaults(func=_cmd_compare)

    p_fix = sub.add_parser("emit-fixture", help="write a shipped fixture config")
    p_fix.add_argument("fixture", help=f"one of: {', '.join(FIXTURE_NAMES)}")
    p_fix.add_argument("--out-dir", default=None)
    p_fix.add_argument("--quiet", action="store_true")
    p_fix.set_defaults(func=_cmd_emit_fixture)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PerfctlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
