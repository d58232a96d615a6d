"""Acceptance suite: one test per shipped guarantee, each at its stated
tolerance and runtime budget, printing one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import time
from itertools import product

import numpy as np
import pytest

import perfctl as pc
from perfctl.cli import main
from perfctl.fixtures import fixture_objects, fixture_toml
from perfctl.solver import RobustProblem, SolverConfig

from helpers import brute_force_inner, random_ltv_instance


def _verdict(name, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# 1. coverage identity
# ---------------------------------------------------------------------------


def test_criterion_1_coverage_identity():
    """Mean per-step coverage = k/(N+1) within 0.005; joint >= 1-p in >= 95%
    of 200 calibration repetitions (state-coupled noise fixture)."""
    T, N, M, reps, p = 5, 999, 100_000, 200, 0.1
    k = pc.quantile_index(N, p, T)
    assert k == 980

    def sampler(rng, X, u):
        return (0.05 + 1.2 * np.abs(X)) * rng.standard_normal(X.shape)

    noise = pc.CustomNoise(sampler, label="state_scaled")
    dyn = pc.LinearTimeVarying(A=[[[1.0]]] * T, B=[[[1.0]]] * T, c=[[0.0]] * T)
    lower, upper = pc.box_from_bounds(T, 1, -1, 1)
    model = pc.SystemModel(n=1, m=1, T=T, x0=[1.0], nominal=dyn,
                           lower=lower, upper=upper)
    u = np.zeros((T, 1))

    t0 = time.perf_counter()
    per_step = np.empty((reps, T))
    joint = np.empty(reps)
    for rep in range(reps):
        ss = np.random.SeedSequence([505, rep])
        cal_seed, fresh_seed = (int(v) for v in ss.generate_state(2, np.uint64))
        cal = pc.sample_noise_batch(model, noise, u, N, cal_seed)
        conf = pc.build_confidence_product(cal, pc.Euclidean(), p)
        fresh = pc.sample_noise_batch(model, noise, u, M, fresh_seed)
        audit = pc.coverage_audit(conf, fresh)
        per_step[rep] = audit.per_step
        joint[rep] = audit.joint
    elapsed = time.perf_counter() - t0

    mean_cov = per_step.mean()
    joint_hits = int((joint >= 1 - p).sum())
    ok = (abs(mean_cov - k / (N + 1)) <= 0.005
          and joint_hits >= int(0.95 * reps)
          and elapsed <= 120.0)
    _verdict("criterion 1 (coverage identity)", ok,
             f"mean per-step {mean_cov:.5f} vs {k/(N+1):.3f}; "
             f"joint>= {1-p}: {joint_hits}/{reps}; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. inner-max exactness
# ---------------------------------------------------------------------------


def test_criterion_2_inner_max_exactness():
    """100 random 1-D instances, T in 2..6: inner_max matches the 2^T
    sign-pattern brute force within 1e-8 relative error."""
    rng = np.random.default_rng(20_240_201)
    cfg = SolverConfig(restarts=64)  # enumerates every pattern for T <= 6
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(100):
        T = 2 + trial % 5
        model, loss = random_ltv_instance(rng, T)
        radii = rng.uniform(0.1, 1.0, T)
        v = rng.uniform(-2, 2, (T, 1))
        sol = RobustProblem(model, loss).inner_max(radii, v, cfg)
        oracle, _ = brute_force_inner(model, loss, radii, v)
        worst = max(worst, abs(sol.value - oracle) / (1 + abs(oracle)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed <= 30.0
    _verdict("criterion 2 (inner-max exactness)", ok,
             f"worst relative error {worst:.2e}; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. Danskin gradient check
# ---------------------------------------------------------------------------


def test_criterion_3_danskin_gradient():
    """50 random instances: finite-difference gradient of the inner value
    matches the analytic gradient at the maximizer within 1e-5 max-abs
    (locally unique maximizers only)."""
    rng = np.random.default_rng(777)
    cfg = SolverConfig(restarts=24)
    t0 = time.perf_counter()
    checked, max_err = 0, 0.0
    for _ in range(50):
        T = int(rng.integers(1, 4))
        n = int(rng.integers(1, 3))
        m = int(rng.integers(1, 3))
        model, loss = random_ltv_instance(rng, T, n=n, m=m)
        prob = RobustProblem(model, loss)
        radii = rng.uniform(0.1, 0.8, T)
        v = rng.uniform(-1.5, 1.5, (T, m))
        sol = prob.inner_max(radii, v, cfg)
        gd = prob.gradients(v, sol.w_star)[0]
        h = 1e-5
        unique = True
        fd = np.zeros_like(v)
        for t in range(T):
            for j in range(m):
                vp, vm = v.copy(), v.copy()
                vp[t, j] += h
                vm[t, j] -= h
                sp = prob.inner_max(radii, vp, cfg)
                sm = prob.inner_max(radii, vm, cfg)
                if max(np.linalg.norm(sp.w_star - sol.w_star),
                       np.linalg.norm(sm.w_star - sol.w_star)) > 1e-2:
                    unique = False
                fd[t, j] = (sp.value - sm.value) / (2 * h)
        if not unique:
            continue
        checked += 1
        max_err = max(max_err, float(np.max(np.abs(fd - gd))))
    elapsed = time.perf_counter() - t0
    ok = max_err <= 1e-5 and checked >= 40
    _verdict("criterion 3 (Danskin gradients)", ok,
             f"max |fd - analytic| {max_err:.2e} over {checked} instances; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 4. ideal refinement contracts at the predicted linear rate
# ---------------------------------------------------------------------------


def test_criterion_4_ideal_contraction():
    """Scalar Gaussian fixture with alpha1 <= 0.3: distance ratios to the
    stable control <= alpha1 + 0.05 from iteration 2 on, and the first
    iteration within delta = 1e-4 is within the predicted count."""
    t0 = time.perf_counter()
    model, loss, noise, _ = fixture_objects("scalar_gaussian")
    rep = pc.validate_model(model, loss)
    eps = pc.quantile_lipschitz(noise, model.n, 1 - 0.1 / model.T)
    alpha1 = pc.theoretical_rate(rep.lambda_u, rep.beta_w, [eps] * model.T).alpha1
    assert alpha1 <= 0.3

    ps = pc.estimate_u_ps(model, noise, loss, pc.RunConfig(p=0.1))
    hist = pc.run_i_irpc(model, noise, loss,
                         pc.RunConfig(p=0.1, fix_tol=1e-8,
                                      solver=pc.SolverConfig(grad_tol=1e-11)))
    crep = pc.contraction_report(hist, ps.u)
    late = crep.ratios[crep.ratio_index >= 2]
    delta = 1e-4
    first = next(i for i, d in enumerate(crep.distances) if d <= delta)
    bound = pc.iterations_to_delta(alpha1, crep.distances[0], delta)
    elapsed = time.perf_counter() - t0
    ok = (late.size > 0 and float(np.max(late)) <= alpha1 + 0.05
          and first <= bound and elapsed <= 60.0)
    _verdict("criterion 4 (ideal contraction)", ok,
             f"alpha1={alpha1:.4f}, max ratio {float(np.max(late)):.4f} "
             f"(cap {alpha1+0.05:.4f}), first<=delta at {first} (bound {bound}); "
             f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 5. stable-to-optimal proximity
# ---------------------------------------------------------------------------


def test_criterion_5_ps_po_proximity():
    """Measured |u_ps - u_po| <= 2 L_w sqrt(sum eps^2) / lambda with
    estimated constants, on the scalar and planar fixtures."""
    t0 = time.perf_counter()
    details = []
    ok = True
    for name in ("scalar_gaussian", "lq_2d"):
        model, loss, noise, _ = fixture_objects(name)
        ps = pc.estimate_u_ps(model, noise, loss, pc.RunConfig(p=0.1))
        po = pc.grid_search_u_po(model, noise, loss, 0.1, pc.GridSpec())
        est = pc.estimate_constants(model, loss, noise, p=0.1)
        bound = pc.ps_po_gap_bound(est.L_w, est.lam, est.eps_t)
        gap = float(np.linalg.norm(ps.u - po.u))
        ok = ok and gap <= bound
        details.append(f"{name}: gap {gap:.4f} <= bound {bound:.4f}")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed <= 300.0
    _verdict("criterion 5 (stable-optimal proximity)", ok,
             "; ".join(details) + f"; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 6. empirical refinement reaches the stable control's neighborhood
# ---------------------------------------------------------------------------


def test_criterion_6_empirical_convergence():
    """Scalar fixture with alpha1 <= 0.2, N=999, delta=0.05, p=0.1: at least
    18 of 20 master seeds finish within delta of the stable control."""
    t0 = time.perf_counter()
    model, loss, noise, cfg = fixture_objects("scalar_gaussian")
    assert cfg["meta"]["alpha1"] <= 0.2
    ps = pc.estimate_u_ps(model, noise, loss, pc.RunConfig(p=0.1))
    delta = 0.05
    hits = 0
    dists = []
    for seed in range(20):
        hist = pc.run_e_irpc(model, noise, loss,
                             pc.RunConfig(p=0.1, schedule=pc.Constant(999),
                                          iters_max=8, master_seed=seed))
        d = float(np.linalg.norm(hist.final_u - ps.u))
        dists.append(d)
        hits += d <= delta
    elapsed = time.perf_counter() - t0
    ok = hits >= 18 and elapsed <= 300.0
    _verdict("criterion 6 (empirical convergence)", ok,
             f"{hits}/20 within {delta} (max {max(dists):.4f}); {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 7. consistency in the sample size
# ---------------------------------------------------------------------------


def test_criterion_7_consistency_in_n():
    """Median terminal distance to the ideal iterate is nonincreasing over
    N in {99, 999, 9999} (20 seeds each)."""
    t0 = time.perf_counter()
    model, loss, noise, _ = fixture_objects("scalar_gaussian")
    ideal = pc.run_i_irpc(model, noise, loss, pc.RunConfig(p=0.1, fix_tol=1e-10))
    target = ideal.final_u
    medians = []
    for N in (99, 999, 9999):
        ds = []
        for seed in range(20):
            hist = pc.run_e_irpc(model, noise, loss,
                                 pc.RunConfig(p=0.1, schedule=pc.Constant(N),
                                              iters_max=8, master_seed=seed))
            ds.append(float(np.linalg.norm(hist.final_u - target)))
        medians.append(float(np.median(ds)))
    elapsed = time.perf_counter() - t0
    ok = medians[0] >= medians[1] >= medians[2]
    _verdict("criterion 7 (consistency in N)", ok,
             f"medians {[round(m, 5) for m in medians]}; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 8. CLI determinism
# ---------------------------------------------------------------------------


def test_criterion_8_cli_determinism(tmp_path):
    """Identical config and seed give byte-identical history files,
    regardless of worker count."""
    fixture = tmp_path / "scalar_gaussian.toml"
    fixture.write_text(fixture_toml("scalar_gaussian"))
    out = str(tmp_path / "runs")
    assert main(["run", str(fixture), "--seed", "11", "--out-dir", out, "--quiet"]) == 0
    assert main(["run", str(fixture), "--seed", "11", "--out-dir", out, "--quiet"]) == 0
    assert main(["run", str(fixture), "--seed", "11", "--out-dir", out, "--quiet",
                 "--override", "run.workers=8"]) == 0
    base = (tmp_path / "runs" / "scalar_gaussian-e_irpc-seed11" / "history.jsonl").read_bytes()
    rep1 = (tmp_path / "runs" / "scalar_gaussian-e_irpc-seed11-001" / "history.jsonl").read_bytes()
    rep2 = (tmp_path / "runs" / "scalar_gaussian-e_irpc-seed11-002" / "history.jsonl").read_bytes()
    ok = base == rep1 == rep2 and len(base) > 0
    _verdict("criterion 8 (CLI determinism)", ok,
             f"3 runs, {len(base)} bytes each, byte-identical={ok}")
