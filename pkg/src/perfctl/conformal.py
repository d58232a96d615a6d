"""Distribution-free confidence products and the ideal quantile oracle.

The empirical construction follows the split-calibration recipe: score each
calibration noise sample, sort the scores at each timestep, and take the k-th
order statistic with k = ceil((N+1)(1 - p/T)).  For a fresh exchangeable
sample the event {score <= radius} then has probability exactly k/(N+1)
(continuous scores), and the product over timesteps covers the whole noise
trajectory with probability at least 1 - p by the union bound.

The ideal variant replaces order statistics with the true quantile of the
noise-norm law induced by the control: closed forms for the Gaussian
isotropic and uniform-ball families, fixed-seed Monte Carlo otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import gammaincinv

from .dynamics import rollout_nominal, sample_noise_batch
from .errors import InsufficientSamplesError
from .types import (
    CustomNoise,
    GaussianAnisotropic,
    GaussianIsotropic,
    SystemModel,
    UniformBall,
)

__all__ = [
    "Euclidean",
    "Mahalanobis",
    "Provenance",
    "ConfidenceProduct",
    "quantile_index",
    "empirical_quantile",
    "build_confidence_product",
    "chi_quantile",
    "ideal_quantile",
    "ideal_confidence_product",
    "coverage_audit",
    "CoverageReport",
    "quantile_lipschitz",
]

ORACLE_SEED = 0xC0FFEE
ORACLE_MC_SIZE = 1_000_000
ORACLE_PREFIX_SIZE = 100_000


# ---------------------------------------------------------------------------
# score functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Euclidean:
    """Score s(w(t)) = |w(t)|."""

    kind = "euclidean"

    def scores(self, batch):
        return np.linalg.norm(np.asarray(batch, dtype=float), axis=-1)


@dataclass(frozen=True)
class Mahalanobis:
    """Score s(w(t)) = sqrt(w(t)' H[t] w(t)), one SPD matrix per timestep."""

    H: np.ndarray  # (T, n, n)

    kind = "mahalanobis"

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        object.__setattr__(self, "H", H)
        for t in range(H.shape[0]):
            if np.linalg.eigvalsh(0.5 * (H[t] + H[t].T))[0] <= 0:
                raise ValueError(f"Mahalanobis matrix at t={t} is not positive definite")

    def scores(self, batch):
        b = np.asarray(batch, dtype=float)
        return np.sqrt(np.einsum("...ti,tij,...tj->...t", b, self.H, b))


# ---------------------------------------------------------------------------
# confidence products
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Provenance:
    kind: str           # "empirical" | "ideal"
    p: float
    N: int = 0
    k: int = 0


@dataclass(frozen=True)
class ConfidenceProduct:
    """Per-timestep score radii (r_0, ..., r_{T-1}) plus their provenance."""

    score: "Euclidean | Mahalanobis"
    radii: np.ndarray   # (T,)
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=float))

    @property
    def T(self):
        return len(self.radii)

    def record(self):
        """Structured dict for embedding in iteration logs and reports."""
        return {
            "score": self.score.kind,
            "radii": [float(r) for r in self.radii],
            "provenance": {
                "kind": self.provenance.kind,
                "p": self.provenance.p,
                "N": self.provenance.N,
                "k": self.provenance.k,
            },
        }


def quantile_index(N, p, T):
    """k = ceil((N+1)(1 - p/T)), the calibration order statistic to report.

    Computed in exact rational arithmetic so box-boundary products such as
    1000 * 0.98 never ceil to the wrong integer.  Raises
    InsufficientSamplesError when k would exceed N.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if T < 1:
        raise ValueError("T must be >= 1")
    k = int(math.ceil((N + 1) * (1 - Fraction(p) / T)))
    if k > N:
        raise InsufficientSamplesError(N, k)
    return max(k, 1)


def empirical_quantile(scores, k):
    """The k-th smallest score (1-indexed ascending order statistic)."""
    scores = np.asarray(scores, dtype=float)
    N = scores.shape[0]
    if not 1 <= k <= N:
        raise ValueError(f"k={k} out of range for {N} scores")
    return float(np.partition(scores, k - 1)[k - 1])


def build_confidence_product(batch, score, p) -> ConfidenceProduct:
    """Calibrate per-timestep radii from a batch of noise trajectories.

    ``batch`` has shape (N, T, n).  radii[t] is the k-th smallest score of
    the N samples at timestep t, so a fresh exchangeable sample is covered at
    each t with probability exactly k/(N+1).
    """
    batch = np.asarray(batch, dtype=float)
    N, T = batch.shape[0], batch.shape[1]
    k = quantile_index(N, p, T)
    s = score.scores(batch)  # (N, T)
    radii = np.partition(s, k - 1, axis=0)[k - 1]
    return ConfidenceProduct(score, radii, Provenance("empirical", p=float(p), N=N, k=k))


# ---------------------------------------------------------------------------
# ideal quantiles
# ---------------------------------------------------------------------------


def chi_quantile(n, level):
    """Quantile of the chi distribution with ``n`` degrees of freedom.

    Inverts the regularized lower incomplete gamma: if |z| with z standard
    normal in R^n, then P(|z| <= r) = gammainc(n/2, r^2/2).
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return float(np.sqrt(2.0 * gammaincinv(n / 2.0, level)))


def _mc_quantile(draws, level):
    scores = np.linalg.norm(draws, axis=-1)
    N = scores.shape[0]
    idx = int(math.ceil((N + 1) * Fraction(level)))
    if idx > N:
        raise InsufficientSamplesError(N, idx, "Monte Carlo oracle size too small for level")
    return float(np.partition(scores, idx - 1)[idx - 1])


def ideal_quantile(noise, x, u_t, level, n_mc=ORACLE_MC_SIZE):
    """The (level)-quantile of |w(t)| when w(t) ~ noise law at (x, u_t).

    Gaussian isotropic and uniform-ball laws are inverted in closed form; the
    anisotropic and custom families fall back to fixed-seed Monte Carlo with
    ``n_mc`` draws and report the ceil((n_mc+1) * level)-th order statistic.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if isinstance(noise, GaussianIsotropic):
        return noise.scale(u_t) * chi_quantile(n, level)
    if isinstance(noise, UniformBall):
        return noise.radius(u_t) * level ** (1.0 / n)
    rng = np.random.default_rng(np.random.SeedSequence([ORACLE_SEED]))
    X = np.broadcast_to(x, (n_mc, n))
    draws = noise.sample_batch(rng, X, np.asarray(u_t, dtype=float))
    return _mc_quantile(draws, level)


def ideal_confidence_product(
    model: SystemModel, noise, u, p, n_prefix=ORACLE_PREFIX_SIZE
) -> ConfidenceProduct:
    """Oracle radii: radii[t] = (1 - p/T)-quantile of |w(t)| under ``u``.

    For families whose law depends on the control only, quantiles are exact
    and evaluated along the nominal rollout.  For state-dependent families
    the marginal law of w(t) is itself shaped by the random state, so the
    oracle resamples ``n_prefix`` noisy prefixes at a fixed seed and takes
    the matching order statistic at each timestep.
    """
    u = model.check_control(u)
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    level = float(1 - Fraction(p) / model.T)
    if getattr(noise, "depends_on_state", True) and not (
        isinstance(noise, (GaussianIsotropic, UniformBall))
    ):
        batch = sample_noise_batch(model, noise, u, n_prefix, seed=ORACLE_SEED)
        N = batch.shape[0]
        idx = int(math.ceil((N + 1) * Fraction(level)))
        if idx > N:
            raise InsufficientSamplesError(N, idx, "oracle prefix sample too small for level")
        scores = np.linalg.norm(batch, axis=-1)
        radii = np.partition(scores, idx - 1, axis=0)[idx - 1]
    else:
        x = rollout_nominal(model, u)
        radii = np.array(
            [ideal_quantile(noise, x[t], u[t], level) for t in range(model.T)]
        )
    return ConfidenceProduct(Euclidean(), radii, Provenance("ideal", p=float(p)))


def quantile_lipschitz(noise, n, level):
    """Closed-form Lipschitz constant of u -> (level)-quantile of |w(t)|.

    Available for the control-scaled families: sigma1 * chi-quantile for the
    isotropic Gaussian and rho1 * level^(1/n) for the uniform ball.
    """
    if isinstance(noise, GaussianIsotropic):
        return noise.sigma1 * chi_quantile(n, level)
    if isinstance(noise, UniformBall):
        return noise.rho1 * level ** (1.0 / n)
    raise TypeError(f"no closed-form quantile Lipschitz constant for {type(noise).__name__}")


# ---------------------------------------------------------------------------
# coverage audit
# ---------------------------------------------------------------------------


@dataclass
class CoverageReport:
    per_step: np.ndarray   # (T,) fraction of fresh samples covered at each t
    joint: float           # fraction covered at every t simultaneously
    target: float          # k/(N+1) for empirical products, the level for ideal

    def __post_init__(self):
        self.per_step = np.asarray(self.per_step, dtype=float)


def coverage_audit(conf: ConfidenceProduct, fresh) -> CoverageReport:
    """Audit a confidence product against fresh noise trajectories (M, T, n)."""
    fresh = np.asarray(fresh, dtype=float)
    scores = conf.score.scores(fresh)  # (M, T)
    covered = scores <= conf.radii[None, :]
    prov = conf.provenance
    if prov.kind == "empirical":
        target = prov.k / (prov.N + 1)
    else:
        target = float(1 - Fraction(prov.p) / conf.T)
    return CoverageReport(
        per_step=covered.mean(axis=0),
        joint=float(covered.all(axis=1).mean()),
        target=float(target),
    )
