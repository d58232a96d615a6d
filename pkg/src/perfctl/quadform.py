"""Stacked quadratic form of the loss for linear dynamics.

For linear time-varying dynamics the full state trajectory is affine in the
stacked control u and stacked noise w:

    x = xf + Fu u + Fw w

so a quadratic trajectory loss becomes an explicit quadratic form in (u, w).
Everything downstream (exact gradients, Hessian constants, the per-timestep
inner maximization blocks) is derived from this object once per problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import LinearTimeVarying, QuadraticLoss, SystemModel

__all__ = ["StackedQuadratic", "build_stacked"]


@dataclass(frozen=True)
class StackedQuadratic:
    """L(w, u) = (xf + Fu u + Fw w)' Qbar (...) + u' Rbar u + (lreg/2)|u|^2."""

    n: int
    m: int
    T: int
    xf: np.ndarray      # (n(T+1),)
    Fu: np.ndarray      # (n(T+1), mT)
    Fw: np.ndarray      # (n(T+1), nT)
    Qbar: np.ndarray    # (n(T+1), n(T+1))
    Rbar: np.ndarray    # (mT, mT)
    lreg: float
    # precomputed second-order data
    Huu: np.ndarray     # (mT, mT)   Hessian in u
    Hww: np.ndarray     # (nT, nT)   Hessian in w
    M: np.ndarray       # (nT, nT)   = Fw' Qbar Fw = Hww / 2
    Buw: np.ndarray     # (nT, mT)   = 2 Fw' Qbar Fu
    bw0: np.ndarray     # (nT,)      = 2 Fw' Qbar xf
    Gu: np.ndarray      # (mT, n(T+1)) = 2 Fu' Qbar (for gradients)

    def value(self, u_flat, w_flat):
        x = self.xf + self.Fu @ u_flat + self.Fw @ w_flat
        return float(
            x @ self.Qbar @ x
            + u_flat @ self.Rbar @ u_flat
            + 0.5 * self.lreg * u_flat @ u_flat
        )

    def grad_u(self, u_flat, w_flat):
        x = self.xf + self.Fu @ u_flat + self.Fw @ w_flat
        return self.Gu @ x + 2.0 * (self.Rbar @ u_flat) + self.lreg * u_flat

    def grad_w(self, u_flat, w_flat):
        x = self.xf + self.Fu @ u_flat + self.Fw @ w_flat
        return 2.0 * (self.Fw.T @ (self.Qbar @ x))

    def w_problem(self, v_flat):
        """Coefficients of w -> L(w, v): (M, b, const) with L = w'Mw + b'w + const."""
        b = self.bw0 + self.Buw @ v_flat
        const = self.value(v_flat, np.zeros(self.n * self.T))
        return self.M, b, const


def build_stacked(model: SystemModel, loss: QuadraticLoss) -> StackedQuadratic:
    if not isinstance(model.nominal, LinearTimeVarying):
        raise TypeError("stacked quadratic form requires linear time-varying dynamics")
    if not isinstance(loss, QuadraticLoss):
        raise TypeError("stacked quadratic form requires a quadratic loss")

    n, m, T = model.n, model.m, model.T
    A, B, c = model.nominal.A, model.nominal.B, model.nominal.c

    nx = n * (T + 1)
    xf = np.zeros(nx)
    Fu = np.zeros((nx, m * T))
    Fw = np.zeros((nx, n * T))

    xf[:n] = model.x0
    for t in range(T):
        r0, r1 = (t + 1) * n, (t + 2) * n
        p0, p1 = t * n, (t + 1) * n
        xf[r0:r1] = A[t] @ xf[p0:p1] + c[t]
        Fu[r0:r1] = A[t] @ Fu[p0:p1]
        Fu[r0:r1, t * m:(t + 1) * m] = B[t]
        Fw[r0:r1] = A[t] @ Fw[p0:p1]
        Fw[r0:r1, t * n:(t + 1) * n] = np.eye(n)

    Qbar = np.zeros((nx, nx))
    for t in range(T):
        Qbar[t * n:(t + 1) * n, t * n:(t + 1) * n] = 0.5 * (loss.Q[t] + loss.Q[t].T)
    Qbar[T * n:, T * n:] = 0.5 * (loss.P + loss.P.T)

    Rbar = np.zeros((m * T, m * T))
    for t in range(T):
        Rbar[t * m:(t + 1) * m, t * m:(t + 1) * m] = 0.5 * (loss.R[t] + loss.R[t].T)

    Huu = 2.0 * (Fu.T @ Qbar @ Fu + Rbar) + loss.lambda_reg * np.eye(m * T)
    M = Fw.T @ Qbar @ Fw
    Hww = 2.0 * M
    Buw = 2.0 * (Fw.T @ Qbar @ Fu)
    bw0 = 2.0 * (Fw.T @ (Qbar @ xf))
    Gu = 2.0 * (Fu.T @ Qbar)

    return StackedQuadratic(
        n=n, m=m, T=T, xf=xf, Fu=Fu, Fw=Fw, Qbar=Qbar, Rbar=Rbar,
        lreg=loss.lambda_reg, Huu=Huu, Hww=Hww, M=M, Buw=Buw, bw0=bw0, Gu=Gu,
    )
