"""Domain types: system models, losses, noise families, and validation.

Trajectories are plain numpy arrays with fixed shape conventions:

* state trajectory   -- ``(T+1, n)``, row ``t`` is ``x(t)``
* control trajectory -- ``(T, m)``, row ``t`` is ``u(t)``
* noise trajectory   -- ``(T, n)``, row ``t`` is ``w(t)``

All model objects are frozen dataclasses and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatchError

__all__ = [
    "LinearTimeVarying",
    "GenericDynamics",
    "SystemModel",
    "QuadraticLoss",
    "GenericLoss",
    "GaussianIsotropic",
    "UniformBall",
    "GaussianAnisotropic",
    "CustomNoise",
    "ValidationReport",
    "validate_model",
    "box_from_bounds",
]


def _farray(a, name, shape=None):
    out = np.asarray(a, dtype=float)
    if shape is not None and out.shape != shape:
        raise DimensionMismatchError(f"{name}: expected shape {shape}, got {out.shape}")
    return out


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearTimeVarying:
    """x(t+1) = A[t] x(t) + B[t] u(t) + c[t], one triple per step."""

    A: np.ndarray  # (T, n, n)
    B: np.ndarray  # (T, n, m)
    c: np.ndarray  # (T, n)

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))

    def step(self, t, x, u):
        return self.A[t] @ x + self.B[t] @ u + self.c[t]

    def step_batch(self, t, X, u):
        # X: (N, n) -> (N, n)
        return X @ self.A[t].T + self.B[t] @ u + self.c[t]


@dataclass(frozen=True)
class GenericDynamics:
    """Deterministic callback dynamics: ``step_fn(t, x, u) -> next state``."""

    step_fn: Callable

    def step(self, t, x, u):
        return np.asarray(self.step_fn(t, x, u), dtype=float)

    def step_batch(self, t, X, u):
        return np.stack([self.step(t, x, u) for x in X])


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time system with horizon ``T`` and per-step control boxes."""

    n: int
    m: int
    T: int
    x0: np.ndarray
    nominal: "LinearTimeVarying | GenericDynamics"
    lower: np.ndarray  # (T, m)
    upper: np.ndarray  # (T, m)

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))

    @property
    def is_ltv(self):
        return isinstance(self.nominal, LinearTimeVarying)

    def check_control(self, u):
        u = _farray(u, "control trajectory")
        if u.shape != (self.T, self.m):
            raise DimensionMismatchError(
                f"control trajectory: expected {(self.T, self.m)}, got {u.shape}"
            )
        return u

    def check_state(self, x):
        x = _farray(x, "state trajectory")
        if x.shape != (self.T + 1, self.n):
            raise DimensionMismatchError(
                f"state trajectory: expected {(self.T + 1, self.n)}, got {x.shape}"
            )
        return x

    def project(self, u):
        """Clamp a control trajectory into the box, coordinate by coordinate."""
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)

    def contains(self, u, tol=0.0):
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


def box_from_bounds(T, m, lo, hi):
    """Constant-in-time box bounds, returned as the (lower, upper) pair."""
    return np.full((T, m), float(lo)), np.full((T, m), float(hi))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticLoss:
    """J = x(T)' P x(T) + sum_t [x(t)' Q[t] x(t) + u(t)' R[t] u(t)].

    ``lambda_reg`` adds (lambda_reg / 2) |u|^2 on top, for callers that need
    to enforce strong convexity when R alone is too weak.
    """

    P: np.ndarray  # (n, n)
    Q: np.ndarray  # (T, n, n)
    R: np.ndarray  # (T, m, m)
    lambda_reg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))


@dataclass(frozen=True)
class GenericLoss:
    """Callback loss: terminal(x_T) + sum_t stage(t, x_t, u_t).

    The strong-convexity constant in u and smoothness constant in w cannot be
    derived from callbacks, so callers may assert them via ``lambda_u`` and
    ``beta_w`` for use by solvers and diagnostics.
    """

    terminal: Callable
    stage: Callable
    lambda_reg: float = 0.0
    lambda_u: Optional[float] = None
    beta_w: Optional[float] = None


# ---------------------------------------------------------------------------
# noise families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianIsotropic:
    """w ~ N(0, sigma^2 I) with sigma = max(sigma0 + sigma1 |u(t)|, sigma_min)."""

    sigma0: float
    sigma1: float = 0.0
    sigma_min: float = 1e-12

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be > 0")
        if self.sigma1 < 0:
            raise ValueError("sigma1 must be >= 0")
        if not self.sigma_min > 0:
            raise ValueError("sigma_min must be > 0")

    depends_on_state = False

    def scale(self, u):
        return max(self.sigma0 + self.sigma1 * float(np.linalg.norm(u)), self.sigma_min)

    def sample_batch(self, rng, X, u):
        N, n = X.shape
        return self.scale(u) * rng.standard_normal((N, n))


@dataclass(frozen=True)
class UniformBall:
    """w uniform on the ball of radius rho = rho0 + rho1 |u(t)|."""

    rho0: float
    rho1: float = 0.0

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ValueError("rho0 must be > 0")
        if self.rho1 < 0:
            raise ValueError("rho1 must be >= 0")

    depends_on_state = False

    def radius(self, u):
        return self.rho0 + self.rho1 * float(np.linalg.norm(u))

    def sample_batch(self, rng, X, u):
        # Direction from normalized Gaussians, radius from the inverse-CDF of
        # |w| (fixed draw count per sample keeps streams prefix-stable).
        N, n = X.shape
        z = rng.standard_normal((N, n))
        r01 = rng.random(N)
        norms = np.linalg.norm(z, axis=1)
        norms[norms == 0.0] = 1.0
        return self.radius(u) * (r01 ** (1.0 / n))[:, None] * z / norms[:, None]


@dataclass(frozen=True)
class GaussianAnisotropic:
    """w ~ N(0, cov(x, u)) with a caller-supplied covariance factory.

    The factory must accept a single state ``(n,)`` and return ``(n, n)``.  It
    may additionally accept a batch ``(N, n)`` and return ``(N, n, n)``; the
    sampler uses that vectorized path when available.
    """

    cov: Callable
    label: str = "anisotropic"

    depends_on_state = True

    def sample_batch(self, rng, X, u):
        N, n = X.shape
        z = rng.standard_normal((N, n))
        C = None
        try:
            C = np.asarray(self.cov(X, u), dtype=float)
            if C.shape != (N, n, n):
                C = None
        except Exception:
            C = None
        if C is None:
            C = np.stack([np.asarray(self.cov(x, u), dtype=float) for x in X])
        L = np.linalg.cholesky(C)
        return np.einsum("nij,nj->ni", L, z)


@dataclass(frozen=True)
class CustomNoise:
    """Caller-defined sampler: ``sampler(rng, X, u) -> (N, n)`` given X ``(N, n)``.

    Samplers must be deterministic functions of the generator state and draw a
    fixed number of variates per sample if batch results are to be independent
    of the batch size.
    """

    sampler: Callable
    label: str = "custom"

    depends_on_state = True

    def sample_batch(self, rng, X, u):
        out = np.asarray(self.sampler(rng, X, u), dtype=float)
        if out.shape != X.shape:
            raise DimensionMismatchError(
                f"custom sampler returned shape {out.shape}, expected {X.shape}"
            )
        return out


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    """Result of :func:`validate_model` -- report-only, never raises.

    ``lambda_u`` is the minimum eigenvalue of the Hessian of L(w, u) in u and
    ``beta_w`` the maximum eigenvalue of the Hessian in w, both computed
    numerically for the linear-dynamics + quadratic-loss composition.
    ``r_lambda_lower`` is the guaranteed lower bound 2 * min eig(R_t) coming
    from the control penalty alone.
    """

    violations: list = field(default_factory=list)
    lambda_u: Optional[float] = None
    beta_w: Optional[float] = None
    r_lambda_lower: Optional[float] = None

    @property
    def ok(self):
        return not self.violations


def _min_eig(Msym):
    return float(np.linalg.eigvalsh(0.5 * (Msym + Msym.T))[0])


def validate_model(model: SystemModel, loss) -> ValidationReport:
    """Check every structural invariant; list violations instead of raising."""
    rep = ValidationReport()
    v = rep.violations

    if model.n < 1:
        v.append("n >= 1 violated")
    if model.m < 1:
        v.append("m >= 1 violated")
    if model.T < 1:
        v.append("T >= 1 violated")
    if model.x0.shape != (model.n,):
        v.append(f"x0 must have length n={model.n}, got shape {model.x0.shape}")

    if model.lower.shape != (model.T, model.m) or model.upper.shape != (model.T, model.m):
        v.append(
            f"control box must be two (T, m)={(model.T, model.m)} arrays, "
            f"got {model.lower.shape} and {model.upper.shape}"
        )
    elif np.any(model.lower > model.upper):
        t, j = np.argwhere(model.lower > model.upper)[0]
        v.append(f"empty control box at t={t}, coordinate {j} (lower > upper)")

    if isinstance(model.nominal, LinearTimeVarying):
        dyn = model.nominal
        want = {
            "A": (model.T, model.n, model.n),
            "B": (model.T, model.n, model.m),
            "c": (model.T, model.n),
        }
        for name, shape in want.items():
            got = getattr(dyn, name).shape
            if got != shape:
                v.append(f"dynamics {name}: expected shape {shape}, got {got}")

    if isinstance(loss, QuadraticLoss):
        if loss.P.shape != (model.n, model.n):
            v.append(f"terminal matrix P: expected {(model.n, model.n)}, got {loss.P.shape}")
        if loss.Q.shape != (model.T, model.n, model.n):
            v.append(f"stage matrices Q: expected {(model.T, model.n, model.n)}, got {loss.Q.shape}")
        if loss.R.shape != (model.T, model.m, model.m):
            v.append(f"stage matrices R: expected {(model.T, model.m, model.m)}, got {loss.R.shape}")
        if loss.lambda_reg < 0:
            v.append("lambda_reg must be >= 0")
        if not v:
            tol = 1e-10
            if _min_eig(loss.P) < -tol:
                v.append("terminal matrix P is not positive semidefinite")
            for t in range(model.T):
                if _min_eig(loss.Q[t]) < -tol:
                    v.append(f"stage matrix Q[{t}] is not positive semidefinite")
                if _min_eig(loss.R[t]) <= 0 and loss.lambda_reg == 0.0:
                    v.append(f"stage matrix R[{t}] is not positive definite")
            rep.r_lambda_lower = 2.0 * min(_min_eig(loss.R[t]) for t in range(model.T))
    elif isinstance(loss, GenericLoss):
        rep.lambda_u = loss.lambda_u
        rep.beta_w = loss.beta_w
        if loss.lambda_reg < 0:
            v.append("lambda_reg must be >= 0")
    else:
        v.append(f"unknown loss kind: {type(loss).__name__}")

    if not v and isinstance(loss, QuadraticLoss) and model.is_ltv:
        from .quadform import build_stacked

        form = build_stacked(model, loss)
        rep.lambda_u = float(np.linalg.eigvalsh(form.Huu)[0])
        rep.beta_w = float(np.linalg.eigvalsh(form.Hww)[-1])
        if rep.lambda_u <= 0:
            v.append("loss is not strongly convex in u (u-Hessian has a nonpositive eigenvalue)")

    return rep
