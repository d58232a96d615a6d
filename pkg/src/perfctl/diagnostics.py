"""Closed-form convergence bounds and their empirical validation helpers.

The refinement operator contracts with coefficient

    alpha1 = beta * sqrt(sum_t eps_t^2) / lambda

where lambda is the strong-convexity constant of the loss in u, beta its
smoothness constant in w, and eps_t the Lipschitz constant of the per-step
noise-norm quantile in u.  alpha1 < 1 gives linear convergence of the ideal
refinement; alpha1 < 1/2 is the regime the finite-sample analysis needs.
Natural logarithms throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .conformal import ideal_confidence_product
from .solver import RobustProblem
from .types import QuadraticLoss

__all__ = [
    "RateReport",
    "theoretical_rate",
    "iterations_to_delta",
    "ps_po_gap_bound",
    "ProbeSpec",
    "ConstantEstimates",
    "estimate_constants",
    "ContractionReport",
    "contraction_report",
    "write_ratios_csv",
]


@dataclass(frozen=True)
class RateReport:
    alpha1: float
    i_irpc_contracts: bool    # alpha1 < 1
    e_irpc_contracts: bool    # alpha1 < 1/2


def theoretical_rate(lam, beta, eps_t) -> RateReport:
    """Contraction coefficient alpha1 = beta * sqrt(sum eps_t^2) / lambda."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if beta < 0 or np.any(np.asarray(eps_t, dtype=float) < 0):
        raise ValueError("beta and eps_t must be nonnegative")
    alpha1 = beta * math.sqrt(float(np.sum(np.square(np.asarray(eps_t, dtype=float))))) / lam
    return RateReport(alpha1=alpha1, i_irpc_contracts=alpha1 < 1.0,
                      e_irpc_contracts=alpha1 < 0.5)


def iterations_to_delta(alpha, u0_dist, delta):
    """Iterations guaranteeing distance <= delta under contraction rate alpha.

    ceil((1 - alpha)^-1 * log(u0_dist / delta)); 0 when already within delta.
    Use 2 * alpha1 for the finite-sample variant.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if u0_dist <= 0 or delta <= 0:
        raise ValueError("distances must be positive")
    if u0_dist <= delta:
        return 0
    return int(math.ceil(math.log(u0_dist / delta) / (1.0 - alpha)))


def ps_po_gap_bound(L_w, lam, eps_t):
    """Bound on the stable-to-optimal gap: 2 L_w sqrt(sum eps_t^2) / lambda."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return 2.0 * L_w * math.sqrt(float(np.sum(np.square(np.asarray(eps_t, dtype=float))))) / lam


# ---------------------------------------------------------------------------
# constant estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeSpec:
    """Probe plan for estimating Lipschitz-type constants on the control box."""

    num_controls: int = 24
    seed: int = 0
    w_radius: Optional[float] = None   # default: max oracle radius over probes


@dataclass
class ConstantEstimates:
    lam: float
    beta: float
    eps_t: np.ndarray
    L_w: float
    degenerate: bool = False


def estimate_constants(model, loss, noise, p=0.1, probes: ProbeSpec = None) -> ConstantEstimates:
    """Estimate (lambda, beta, eps_t, L_w) on the control box.

    lambda and beta come from the exact Hessian eigenvalues (linear dynamics
    with quadratic loss required); eps_t is the largest observed quantile
    difference ratio over probe control pairs, and L_w the largest noise
    gradient norm over probe (control, noise) pairs.
    """
    probes = probes or ProbeSpec()
    prob = RobustProblem(model, loss)
    if not prob.quadratic:
        raise TypeError("exact constant estimation requires linear dynamics and a quadratic loss")
    assert isinstance(loss, QuadraticLoss)
    lam = prob.lambda_u
    beta = float(np.linalg.eigvalsh(prob.form.Hww)[-1])

    rng = np.random.default_rng(np.random.SeedSequence([probes.seed, 0xD1A6]))
    lo, hi = model.lower, model.upper
    span = hi - lo
    n_rand = max(probes.num_controls, 2)
    controls = [lo + rng.random((model.T, model.m)) * span for _ in range(n_rand)]

    degenerate = bool(np.all(span == 0.0))

    # structured single-coordinate pairs pick up the per-step sensitivity
    pairs = []
    base = controls[0]
    h_rel = 0.05
    for t in range(model.T):
        for j in range(model.m):
            if span[t, j] == 0.0:
                continue
            u2 = base.copy()
            step = h_rel * span[t, j]
            u2[t, j] = min(u2[t, j] + step, hi[t, j])
            if not np.allclose(u2, base):
                pairs.append((base, u2))
    pairs.extend((controls[i], controls[i + 1]) for i in range(len(controls) - 1))

    radii_probe = []
    eps = np.zeros(model.T)
    for ua, ub in pairs:
        qa = ideal_confidence_product(model, noise, ua, p).radii
        qb = ideal_confidence_product(model, noise, ub, p).radii
        radii_probe.append(max(qa.max(), qb.max()))
        d = float(np.linalg.norm(ua - ub))
        if d < 1e-12:
            continue
        eps = np.maximum(eps, np.abs(qa - qb) / d)
    if not pairs or all(
        float(np.linalg.norm(a - b)) < 1e-12 for a, b in pairs
    ):
        degenerate = True

    w_rad = probes.w_radius
    if w_rad is None:
        w_rad = max(radii_probe) if radii_probe else 1.0
    L_w = 0.0
    for u in controls[: max(4, n_rand // 2)]:
        for _ in range(8):
            d = rng.standard_normal((model.T, model.n))
            norms = np.linalg.norm(d, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            w = w_rad * rng.random() * d / norms
            _, gw = prob.gradients(u, w)
            L_w = max(L_w, float(np.linalg.norm(gw)))

    return ConstantEstimates(lam=lam, beta=beta, eps_t=eps, L_w=L_w, degenerate=degenerate)


# ---------------------------------------------------------------------------
# contraction measurement
# ---------------------------------------------------------------------------


@dataclass
class ContractionReport:
    distances: np.ndarray     # |u_i - u_ps| per record
    ratios: np.ndarray        # successive distance ratios (denominator > 1e-12)
    ratio_index: np.ndarray   # iteration index i of each ratio d_{i+1}/d_i
    fitted_rate: float        # exp(slope) of least-squares fit of log d_i vs i
    intercept: float

    def to_text(self):
        lines = [
            f"fitted contraction rate: {self.fitted_rate:.6f}",
            "iter  distance        ratio",
        ]
        ratio_at = dict(zip(self.ratio_index.tolist(), self.ratios.tolist()))
        for i, d in enumerate(self.distances):
            r = ratio_at.get(i)
            lines.append(f"{i:4d}  {d:.6e}  {'' if r is None else format(r, '.6f')}")
        return "\n".join(lines)


def contraction_report(history, u_ps) -> ContractionReport:
    """Distance ratios toward a fixed point, plus a fitted geometric rate."""
    records = getattr(history, "records", None)
    controls = (
        history.controls() if records is not None else np.asarray(history, dtype=float)
    )
    if len(controls) < 3:
        raise ValueError("need a history of at least 3 iterates")
    u_ps = np.asarray(u_ps, dtype=float)
    dists = np.array([float(np.linalg.norm(c - u_ps)) for c in controls])
    ratios, idx = [], []
    for i in range(len(dists) - 1):
        if dists[i] > 1e-12:
            ratios.append(dists[i + 1] / dists[i])
            idx.append(i)
    keep = dists > 1e-12
    i_fit = np.arange(len(dists))[keep]
    if len(i_fit) >= 2:
        slope, intercept = np.polyfit(i_fit, np.log(dists[keep]), 1)
    else:
        slope, intercept = -np.inf, 0.0
    return ContractionReport(
        distances=dists,
        ratios=np.asarray(ratios),
        ratio_index=np.asarray(idx, dtype=int),
        fitted_rate=float(np.exp(slope)),
        intercept=float(intercept),
    )


def write_ratios_csv(report: ContractionReport, path_or_file):
    close = False
    if hasattr(path_or_file, "write"):
        fh = path_or_file
    else:
        fh = open(path_or_file, "w", newline="")
        close = True
    try:
        writer = csv.writer(fh)
        writer.writerow(["i", "distance", "ratio"])
        ratio_at = dict(zip(report.ratio_index.tolist(), report.ratios.tolist()))
        for i, d in enumerate(report.distances):
            r = ratio_at.get(i)
            writer.writerow([i, repr(float(d)), "" if r is None else repr(float(r))])
    finally:
        if close:
            fh.close()
