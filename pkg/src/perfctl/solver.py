"""Robust min-max machinery.

The inner problem maximizes the loss over a product of per-timestep score
balls.  For linear dynamics with quadratic losses this is the maximization of
a convex quadratic over a product of balls/ellipsoids: each block restricted
to its ball is solved exactly on the boundary through the eigenvalue form of
the boundary stationarity condition, blocks are swept Gauss-Seidel style, and
deterministic multi-start guards against non-global block-stationary points.
In one dimension with few enough timesteps the start set enumerates every
extreme sign pattern, which certifies the result.

The outer problem runs projected gradient descent on the worst-case value,
driving it with the gradient of the loss at the inner maximizer (the
max-function subgradient), with per-coordinate clamping onto the control box.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .conformal import ConfidenceProduct, Euclidean, Mahalanobis
from .errors import ConvergenceError
from .quadform import build_stacked
from .types import GenericLoss, QuadraticLoss, SystemModel

__all__ = [
    "SolverConfig",
    "InnerSolution",
    "OuterSolution",
    "AlignmentReport",
    "RobustProblem",
    "evaluate_loss",
    "loss_gradients",
    "inner_max",
    "outer_min",
    "check_alignment",
]

_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the inner maximization and the outer projected descent."""

    restarts: int = 16
    block_sweeps_max: int = 200
    block_tol: float = 1e-10
    step_rule: str = "auto"          # "auto": 1/beta_u when available, else backtracking
    grad_tol: float = 1e-8
    iters_max: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.block_sweeps_max < 1 or self.iters_max < 1:
            raise ValueError("counts must be positive")
        if self.block_tol <= 0 or self.grad_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class InnerSolution:
    w_star: np.ndarray            # (T, n)
    value: float
    certificate: str              # "exact_block" | "multi_start" | "brute_force"
    start_index: int = 0
    sweeps: int = 0


@dataclass
class OuterSolution:
    u: np.ndarray                 # (T, m)
    value: float
    inner: InnerSolution
    grad_norm: float
    iterations: int
    status: str = "grad_tol"      # "grad_tol" | "stalled"


@dataclass
class AlignmentReport:
    angles: np.ndarray            # (T,) radians between unit maximizers
    unit_diff: np.ndarray         # (T,) norm of unit-vector difference
    vacuous: np.ndarray           # (T,) True where a maximizer had zero norm
    aligned: bool
    w_a: np.ndarray
    w_b: np.ndarray


# ---------------------------------------------------------------------------
# exact boundary maximization of a convex quadratic over one ball
# ---------------------------------------------------------------------------


def _max_quadratic_ball(lam, V, lin, r):
    """Maximize z'Az + lin'z over |z| <= r given the eigensystem of A.

    A is positive semidefinite here (convex objective), so the maximum sits
    on the boundary; the stationarity condition (nu I - A) z = lin/2 with
    nu >= lam_max is solved for |z(nu)| = r, falling back to the top
    eigenvector when lin has no component there.
    """
    if r <= 0.0:
        return np.zeros_like(lin)
    lt = V.T @ lin
    lam_max = lam[-1]
    scale = max(abs(lam_max), np.linalg.norm(lin) / (2.0 * r), 1e-30)
    tiny = 1e-14 * max(scale, 1.0)

    def znorm(nu):
        return math.sqrt(float(np.sum((lt / (2.0 * (nu - lam))) ** 2)))

    if np.linalg.norm(lin) <= tiny and lam_max <= tiny:
        return np.zeros_like(lin)

    lo = lam_max + 1e-12 * max(scale, 1.0)
    if znorm(lo) >= r:
        hi = lam_max + max(scale, 1.0)
        while znorm(hi) >= r:
            hi = lam_max + 2.0 * (hi - lam_max)
        nu = brentq(lambda s: 1.0 / znorm(s) - 1.0 / r, lo, hi, xtol=1e-15 * max(scale, 1.0))
        return V @ (lt / (2.0 * (nu - lam)))

    # hard case: no root above lam_max; pad with the top eigenvector
    top = lam >= lam_max - 1e-12 * max(scale, 1.0)
    zt = np.where(top, 0.0, lt / np.where(top, 1.0, 2.0 * (lam_max - lam)))
    z_perp = V @ zt
    tau = math.sqrt(max(r * r - float(z_perp @ z_perp), 0.0))
    v_top = V[:, -1]
    j = int(np.argmax(np.abs(v_top)))
    if v_top[j] < 0:
        v_top = -v_top
    return z_perp + tau * v_top


# ---------------------------------------------------------------------------
# deterministic multi-start
# ---------------------------------------------------------------------------


def _start_patterns(T, n, radii, cfg):
    """Boundary starts: exhaustive sign patterns when cheap (n = 1), else
    2T contiguous sign-flip patterns padded with seeded random directions."""
    if n == 1 and 2 ** T <= cfg.restarts:
        pats = np.array(list(itertools.product((1.0, -1.0), repeat=T)))
        return (pats * radii[None, :])[:, :, None], "brute_force"

    starts = []
    e1 = np.zeros(n)
    e1[0] = 1.0
    for tau in range(T):
        for s in (1.0, -1.0):
            signs = np.where(np.arange(T) < tau, -s, s)
            starts.append(signs[:, None] * radii[:, None] * e1[None, :])
            if len(starts) >= cfg.restarts:
                break
        if len(starts) >= cfg.restarts:
            break
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x57A7]))
    while len(starts) < cfg.restarts:
        d = rng.standard_normal((T, n))
        norms = np.linalg.norm(d, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        starts.append(radii[:, None] * d / norms)
    return np.stack(starts), "multi_start"


# ---------------------------------------------------------------------------
# the problem object (precomputes everything reusable across solves)
# ---------------------------------------------------------------------------


class RobustProblem:
    """Loss evaluation plus inner/outer solvers for one (model, loss, score).

    Building this object once and reusing it amortizes the stacked quadratic
    form and per-block eigendecompositions across the many inner solves of an
    iterative run.
    """

    def __init__(self, model: SystemModel, loss, score=None):
        self.model = model
        self.loss = loss
        self.score = score if score is not None else Euclidean()
        self.n, self.m, self.T = model.n, model.m, model.T
        self.quadratic = model.is_ltv and isinstance(loss, QuadraticLoss)
        self._S_inv = None
        if self.quadratic:
            self.form = build_stacked(model, loss)
            self._prepare_blocks()
            eig = np.linalg.eigvalsh(self.form.Huu)
            self.lambda_u = float(eig[0])
            self.beta_u = float(eig[-1])
        else:
            self.form = None
            self.lambda_u = getattr(loss, "lambda_u", None)
            self.beta_u = None
            if isinstance(self.score, Mahalanobis):
                S_inv = np.zeros((self.T, self.n, self.n))
                for t in range(self.T):
                    lam, V = np.linalg.eigh(0.5 * (self.score.H[t] + self.score.H[t].T))
                    S_inv[t] = V @ np.diag(1.0 / np.sqrt(lam)) @ V.T
                self._S_inv = S_inv

    # -- transforms -------------------------------------------------------

    def _prepare_blocks(self):
        n, T = self.n, self.T
        if isinstance(self.score, Mahalanobis):
            S_inv = np.zeros((T, n, n))
            for t in range(T):
                lam, V = np.linalg.eigh(0.5 * (self.score.H[t] + self.score.H[t].T))
                S_inv[t] = V @ np.diag(1.0 / np.sqrt(lam)) @ V.T
            self._S_inv = S_inv
            D = np.zeros((n * T, n * T))
            for t in range(T):
                D[t * n:(t + 1) * n, t * n:(t + 1) * n] = S_inv[t]
            self._Mz = D @ self.form.M @ D
            self._Dz = D
        else:
            self._S_inv = None
            self._Mz = self.form.M
            self._Dz = None
        self._block_eig = []
        for t in range(T):
            blk = self._Mz[t * n:(t + 1) * n, t * n:(t + 1) * n]
            lam, V = np.linalg.eigh(0.5 * (blk + blk.T))
            self._block_eig.append((lam, V))

    def _z_to_w(self, Z):
        if self._S_inv is None:
            return Z
        return np.einsum("tij,tj->ti", self._S_inv, Z)

    # -- loss evaluation ---------------------------------------------------

    def evaluate(self, u, w):
        u = self.model.check_control(u)
        w = np.asarray(w, dtype=float)
        if w.shape != (self.T, self.n):
            w = w.reshape(self.T, self.n)
        if self.quadratic:
            return self.form.value(u.ravel(), w.ravel())
        return self._evaluate_generic(u, w)

    def _evaluate_generic(self, u, w):
        x = np.empty((self.T + 1, self.n))
        x[0] = self.model.x0
        total = 0.0
        for t in range(self.T):
            total += float(self.loss.stage(t, x[t], u[t]))
            x[t + 1] = self.model.nominal.step(t, x[t], u[t]) + w[t]
        total += float(self.loss.terminal(x[self.T]))
        total += 0.5 * self.loss.lambda_reg * float(np.sum(u * u))
        return total

    def gradients(self, u, w):
        """(grad_u, grad_w) of the loss at (u, w), shapes (T, m), (T, n)."""
        u = self.model.check_control(u)
        w = np.asarray(w, dtype=float).reshape(self.T, self.n)
        if self.quadratic:
            gu = self.form.grad_u(u.ravel(), w.ravel()).reshape(self.T, self.m)
            gw = self.form.grad_w(u.ravel(), w.ravel()).reshape(self.T, self.n)
            return gu, gw
        return self._fd_grad_u(u, w), self._fd_grad_w(u, w)

    def _fd_grad_u(self, u, w):
        g = np.zeros((self.T, self.m))
        for t in range(self.T):
            for j in range(self.m):
                h = 1e-6 * (1.0 + abs(u[t, j]))
                up, um = u.copy(), u.copy()
                up[t, j] += h
                um[t, j] -= h
                g[t, j] = (self._evaluate_generic(up, w) - self._evaluate_generic(um, w)) / (2 * h)
        return g

    def _fd_grad_w(self, u, w):
        g = np.zeros((self.T, self.n))
        for t in range(self.T):
            for j in range(self.n):
                h = 1e-6 * (1.0 + abs(w[t, j]))
                wp, wm = w.copy(), w.copy()
                wp[t, j] += h
                wm[t, j] -= h
                g[t, j] = (self._evaluate_generic(u, wp) - self._evaluate_generic(u, wm)) / (2 * h)
        return g

    # -- inner maximization ------------------------------------------------

    def inner_max(self, radii, v, cfg: SolverConfig) -> InnerSolution:
        radii = np.asarray(radii, dtype=float)
        if radii.shape != (self.T,):
            raise ValueError(f"radii must have shape ({self.T},), got {radii.shape}")
        if not np.all(np.isfinite(radii)) or np.any(radii < 0):
            raise ValueError("radii must be finite and nonnegative")
        v = self.model.check_control(v)
        if self.quadratic:
            sol = self._inner_quadratic(radii, v, cfg)
        else:
            sol = self._inner_generic(radii, v, cfg)
        scores = self.score.scores(sol.w_star[None, :, :])[0]
        if np.any(scores > radii + _FEAS_TOL):
            raise AssertionError("inner maximizer left its confidence set")
        return sol

    def _inner_quadratic(self, radii, v, cfg):
        T, n = self.T, self.n
        v_flat = v.ravel()
        if np.all(radii == 0.0):
            w = np.zeros((T, n))
            return InnerSolution(w, self.form.value(v_flat, w.ravel()), "exact_block")
        b = self.form.bw0 + self.form.Buw @ v_flat
        if self._Dz is not None:
            bz = self._Dz @ b
        else:
            bz = b
        starts, certificate = _start_patterns(T, n, radii, cfg)
        if T == 1:
            certificate = "exact_block"
            starts = starts[:1]
        if n == 1:
            Z, best, sweeps = self._sweep_scalar(starts[:, :, 0], bz, radii, cfg)
        else:
            Z, best, sweeps = self._sweep_blocks(starts, bz, radii, cfg)
        w = self._z_to_w(Z)
        value = self.form.value(v_flat, w.ravel())
        return InnerSolution(w, value, certificate, start_index=best, sweeps=sweeps)

    def _sweep_scalar(self, Z, bz, radii, cfg):
        # all restarts advance in lockstep; Z has shape (R, T)
        M = self._Mz
        diag = np.diag(M)
        sweeps = 0
        for sweeps in range(1, cfg.block_sweeps_max + 1):
            changed = False
            for t in range(self.T):
                if radii[t] == 0.0:
                    continue
                lin = bz[t] + 2.0 * (Z @ M[:, t]) - 2.0 * diag[t] * Z[:, t]
                new = np.where(lin >= 0.0, radii[t], -radii[t])
                if not np.array_equal(new, Z[:, t]):
                    changed = True
                    Z[:, t] = new
            if not changed:
                break
        vals = np.einsum("rt,ts,rs->r", Z, M, Z) + Z @ bz
        best = int(np.argmax(vals))
        return Z[best][:, None], best, sweeps

    def _sweep_blocks(self, starts, bz, radii, cfg):
        T, n = self.T, self.n
        M = self._Mz
        best_val, best_Z, best_idx, best_sweeps = -np.inf, None, 0, 0

        def qval(zf):
            return float(zf @ M @ zf + bz @ zf)

        for idx in range(starts.shape[0]):
            Z = starts[idx].copy()
            val = qval(Z.ravel())
            sweeps = 0
            for sweeps in range(1, cfg.block_sweeps_max + 1):
                zf = Z.ravel()
                for t in range(T):
                    if radii[t] == 0.0:
                        Z[t] = 0.0
                        continue
                    sl = slice(t * n, (t + 1) * n)
                    lin = bz[sl] + 2.0 * (M[sl] @ zf) - 2.0 * (M[sl, sl] @ zf[sl])
                    lam, V = self._block_eig[t]
                    Z[t] = _max_quadratic_ball(lam, V, lin, radii[t])
                    zf = Z.ravel()
                new_val = qval(zf)
                if new_val - val <= cfg.block_tol * (1.0 + abs(val)):
                    val = max(val, new_val)
                    break
                val = new_val
            if val > best_val:
                best_val, best_Z, best_idx, best_sweeps = val, Z, idx, sweeps
        return best_Z, best_idx, best_sweeps

    def _inner_generic(self, radii, v, cfg):
        T, n = self.T, self.n
        starts, certificate = _start_patterns(T, n, radii, cfg)

        def project(W):
            Wp = W.copy()
            s = self.score.scores(Wp[None])[0]
            for t in range(T):
                if s[t] > radii[t]:
                    Wp[t] *= 0.0 if radii[t] == 0.0 else radii[t] / s[t]
            return Wp

        best_val, best_W, best_idx = -np.inf, None, 0
        for idx in range(starts.shape[0]):
            W = project(self._z_to_w(starts[idx]))
            val = self._evaluate_generic(v, W)
            step = 1.0
            for _ in range(cfg.block_sweeps_max):
                g = self._fd_grad_w(v, W)
                moved = False
                for _ in range(30):
                    Wn = project(W + step * g)
                    vn = self._evaluate_generic(v, Wn)
                    if vn > val + 1e-14:
                        W, val, moved = Wn, vn, True
                        step *= 1.3
                        break
                    step *= 0.5
                if not moved or np.linalg.norm(step * g) <= cfg.block_tol:
                    break
            if val > best_val:
                best_val, best_W, best_idx = val, W, idx
        return InnerSolution(best_W, best_val, certificate, start_index=best_idx)

    # -- outer minimization --------------------------------------------------

    def outer_min(self, radii, cfg: SolverConfig, v0=None, trace=None) -> OuterSolution:
        """Projected gradient descent on v -> max_w L(w, v) over the box.

        Uses the loss gradient at the inner maximizer as the descent
        direction (the max-function subgradient).  The reference step is
        1/beta_u on the quadratic path and 1 otherwise; a step is halved
        until it does not increase the worst-case value (Armijo slope 1e-4
        on the generic path) and regrows after acceptance.

        Returns when the projected-gradient norm at the reference step falls
        below ``cfg.grad_tol``.  Where the worst-case objective has a kink at
        its minimizer that norm cannot vanish: monotone descent collapses the
        step instead, and the solve raises ConvergenceError (carrying the
        best iterate, marked "stalled") because gradient descent cannot
        certify a minimizer there.  Exceeding ``cfg.iters_max`` raises the
        same error.
        """
        model = self.model
        if self.quadratic:
            if self.lambda_u <= 0:
                raise ValueError("loss is not strongly convex in u; outer problem ill-posed")
            step = 1.0 / self.beta_u
            armijo = 1e-4 if cfg.step_rule == "backtracking" else 0.0
        else:
            if not self.lambda_u or self.lambda_u <= 0:
                raise ValueError(
                    "generic losses need a positive user-asserted lambda_u "
                    "for the outer minimization"
                )
            step = 1.0
            armijo = 1e-4

        if v0 is None:
            v = model.project(0.5 * (model.lower + model.upper))
        else:
            v = model.project(np.asarray(v0, dtype=float))

        sol = self.inner_max(radii, v, cfg)
        s = step
        rejected = 0
        best_val, best_pg, no_progress = np.inf, np.inf, 0
        tracer = _open_trace(trace)
        try:
            for it in range(1, cfg.iters_max + 1):
                gu, _ = self.gradients(v, sol.w_star)
                v_ref = model.project(v - step * gu)
                pg = float(np.linalg.norm(v - v_ref)) / step
                if tracer is not None:
                    tracer.write(json.dumps(
                        {"iter": it - 1, "value": sol.value, "grad_norm": pg}) + "\n")
                if pg <= cfg.grad_tol:
                    return OuterSolution(v, sol.value, sol, pg, it - 1)
                # chatter watch: around a kink minimizer neither the value nor
                # the gradient norm makes headway, only oscillates
                improved = False
                if sol.value < best_val - 1e-12 * (1.0 + abs(best_val)):
                    best_val, improved = sol.value, True
                if pg < 0.99 * best_pg:
                    best_pg, improved = pg, True
                no_progress = 0 if improved else no_progress + 1
                accepted = False
                slack = 8.0 * np.finfo(float).eps * (1.0 + abs(sol.value))
                for _ in range(60):
                    v_new = model.project(v - s * gu)
                    sol_new = self.inner_max(radii, v_new, cfg)
                    if sol_new.value <= sol.value + slack - armijo * float(
                        gu.ravel() @ (v - v_new).ravel()
                    ):
                        accepted = True
                        break
                    s *= 0.5
                if accepted:
                    v, sol = v_new, sol_new
                    s = min(2.0 * s, step)
                else:
                    rejected += 1
                if rejected >= 10 or no_progress >= 50:
                    raise ConvergenceError(
                        "outer descent stalled: the worst-case objective has a "
                        "nonsmooth (kink) minimizer that projected gradient "
                        "descent cannot certify",
                        best=OuterSolution(v, sol.value, sol, pg, it, status="stalled"),
                    )
            raise ConvergenceError(
                f"outer projected gradient did not reach grad_tol={cfg.grad_tol} "
                f"within {cfg.iters_max} iterations",
                best=OuterSolution(v, sol.value, sol, pg, cfg.iters_max, status="stalled"),
            )
        finally:
            if tracer is not None and tracer is not trace:
                tracer.close()


def _open_trace(trace):
    if trace is None:
        return None
    if hasattr(trace, "write"):
        return trace
    return open(trace, "w")


# ---------------------------------------------------------------------------
# functional façade
# ---------------------------------------------------------------------------


def evaluate_loss(model, loss, u, w):
    """L(w, u): roll the noise through the dynamics and evaluate the loss."""
    return RobustProblem(model, loss).evaluate(u, w)


def loss_gradients(model, loss, u, w):
    """Gradients of L with respect to u and w at (w, u)."""
    return RobustProblem(model, loss).gradients(u, w)


def inner_max(model, loss, conf: ConfidenceProduct, v, cfg=None, problem=None):
    """Worst-case noise in the confidence product at control ``v``."""
    cfg = cfg or SolverConfig()
    prob = problem or RobustProblem(model, loss, conf.score)
    return prob.inner_max(conf.radii, v, cfg)


def outer_min(model, loss, conf: ConfidenceProduct, cfg=None, v0=None, problem=None):
    """Robust control against a fixed confidence product (min over the box)."""
    cfg = cfg or SolverConfig()
    prob = problem or RobustProblem(model, loss, conf.score)
    return prob.outer_min(conf.radii, cfg, v0=v0)


def _scores_equal(a, b):
    if a.kind != b.kind:
        return False
    if isinstance(a, Mahalanobis):
        return np.allclose(a.H, b.H)
    return True


def check_alignment(model, loss, conf_a, conf_b, v, cfg=None, tol=1e-6):
    """Compare the worst-case noise directions under two confidence products.

    At each timestep reports the angle between the normalized inner
    maximizers; a zero-norm maximizer on either side is vacuously aligned.
    """
    if not _scores_equal(conf_a.score, conf_b.score):
        raise ValueError("confidence products must share the same score spec")
    cfg = cfg or SolverConfig()
    prob = RobustProblem(model, loss, conf_a.score)
    wa = prob.inner_max(conf_a.radii, v, cfg).w_star
    wb = prob.inner_max(conf_b.radii, v, cfg).w_star
    T = model.T
    angles = np.zeros(T)
    diffs = np.zeros(T)
    vacuous = np.zeros(T, dtype=bool)
    aligned = True
    for t in range(T):
        na, nb = np.linalg.norm(wa[t]), np.linalg.norm(wb[t])
        if na <= 1e-12 or nb <= 1e-12:
            vacuous[t] = True
            continue
        ua, ub = wa[t] / na, wb[t] / nb
        angles[t] = float(np.arccos(np.clip(ua @ ub, -1.0, 1.0)))
        diffs[t] = float(np.linalg.norm(ua - ub))
        if diffs[t] > tol:
            aligned = False
    return AlignmentReport(angles, diffs, vacuous, aligned, wa, wb)
