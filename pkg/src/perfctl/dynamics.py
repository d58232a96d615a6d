"""Trajectory engine: nominal rollouts, noisy sampling, noise extraction.

Randomness is organized as one independent generator per (seed, timestep).
Within a timestep the generator produces sample variates in index order, so

* sample j of a batch is identical for every batch size > j (prefix
  stability), which makes batches order-independent,
* a single noisy rollout with seed s equals row 0 of any batch with seed s,
* the output never depends on how work is distributed across workers.

Worker threads only parallelize per-sample Python work (generic dynamics
steps, non-vectorized covariance factories); raw variates are always drawn
once, centrally, in index order.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import DimensionMismatchError, SamplingError
from .types import CustomNoise, SystemModel

__all__ = [
    "rollout_nominal",
    "rollout_noisy",
    "sample_noise_batch",
    "extract_noise",
    "noise_batch_to_csv",
    "noise_stream",
]


def noise_stream(seed, t):
    """The generator feeding noise draws at timestep ``t`` for this seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(t)]))


def rollout_nominal(model: SystemModel, u) -> np.ndarray:
    """Propagate the nominal dynamics from x0 under ``u``; returns (T+1, n)."""
    u = model.check_control(u)
    x = np.empty((model.T + 1, model.n))
    x[0] = model.x0
    for t in range(model.T):
        x[t + 1] = model.nominal.step(t, x[t], u[t])
    return x


def _batch_rollout(model, noise, u, N, seed, workers=1):
    u = model.check_control(u)
    T, n = model.T, model.n
    X = np.empty((N, T + 1, n))
    W = np.empty((N, T, n))
    X[:, 0] = model.x0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(T):
            rng = noise_stream(seed, t)
            try:
                W[:, t] = noise.sample_batch(rng, X[:, t], u[t])
            except Exception as exc:
                if isinstance(noise, CustomNoise):
                    raise SamplingError(
                        f"custom noise sampler failed at t={t}: {exc}"
                    ) from exc
                raise
            if model.is_ltv:
                X[:, t + 1] = model.nominal.step_batch(t, X[:, t], u[t]) + W[:, t]
            elif pool is not None:
                step = model.nominal.step
                rows = list(pool.map(lambda j: step(t, X[j, t], u[t]), range(N)))
                X[:, t + 1] = np.stack(rows) + W[:, t]
            else:
                for j in range(N):
                    X[j, t + 1] = model.nominal.step(t, X[j, t], u[t]) + W[j, t]
    finally:
        if pool is not None:
            pool.shutdown()
    return X, W


def rollout_noisy(model: SystemModel, noise, u, seed):
    """One noisy rollout; returns ``(x, w)`` with shapes (T+1, n), (T, n).

    Bit-reproducible for a fixed seed, and identical to sample index 0 of
    :func:`sample_noise_batch` run with the same seed.
    """
    X, W = _batch_rollout(model, noise, u, 1, seed)
    return X[0], W[0]


def sample_noise_batch(model: SystemModel, noise, u, N, seed, workers=1):
    """Sample ``N`` independent noise trajectories under ``u``; returns (N, T, n).

    At each timestep the samples are i.i.d. draws from the noise law at that
    step's (state, control) pair; the result is independent of ``workers``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    _, W = _batch_rollout(model, noise, u, N, seed, workers=workers)
    return W


def extract_noise(model: SystemModel, x, u):
    """Recover w(t) = x(t+1) - fhat(t, x(t), u(t)); returns (T, n)."""
    x = model.check_state(x)
    u = model.check_control(u)
    w = np.empty((model.T, model.n))
    for t in range(model.T):
        w[t] = x[t + 1] - model.nominal.step(t, x[t], u[t])
    return w


def noise_batch_to_csv(batch, path_or_file):
    """Write a batch as CSV: one row per (sample, t), columns = coordinates."""
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 3:
        raise DimensionMismatchError(f"batch must be (N, T, n), got {batch.shape}")
    N, T, n = batch.shape
    close = False
    if hasattr(path_or_file, "write"):
        fh = path_or_file
    else:
        fh = open(path_or_file, "w", newline="")
        close = True
    try:
        writer = csv.writer(fh)
        writer.writerow(["sample", "t"] + [f"w{i}" for i in range(n)])
        for j in range(N):
            for t in range(T):
                writer.writerow([j, t] + [repr(float(v)) for v in batch[j, t]])
    finally:
        if close:
            fh.close()
