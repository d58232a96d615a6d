"""Shared builders for small test systems."""

import numpy as np

import perfctl as pc


def scalar_model(T=1, x0=1.0, a=1.0, b=1.0, lo=-10.0, hi=10.0, c=0.0):
    dyn = pc.LinearTimeVarying(A=[[[a]]] * T, B=[[[b]]] * T, c=[[c]] * T)
    lower, upper = pc.box_from_bounds(T, 1, lo, hi)
    return pc.SystemModel(n=1, m=1, T=T, x0=[x0], nominal=dyn, lower=lower, upper=upper)


def scalar_loss(T=1, P=1.0, Q=0.0, R=1.0):
    return pc.QuadraticLoss(
        P=[[P]], Q=[[[Q]]] * T, R=[[[R]]] * T
    )


def euclid_conf(radii, p=0.1):
    return pc.ConfidenceProduct(pc.Euclidean(), radii, pc.Provenance("ideal", p))


def random_ltv_instance(rng, T, n=1, m=1, box=3.0):
    A = rng.uniform(-1.5, 1.5, (T, n, n))
    B = rng.uniform(-1.2, 1.2, (T, n, m))
    if n == 1 and m == 1:
        B = rng.uniform(0.5, 1.5, (T, n, m))
    c = rng.uniform(-0.5, 0.5, (T, n))
    x0 = rng.uniform(-1, 1, n)
    lower, upper = pc.box_from_bounds(T, m, -box, box)
    model = pc.SystemModel(n, m, T, x0, pc.LinearTimeVarying(A, B, c), lower, upper)
    M = rng.uniform(-1, 1, (n, n))
    P = M @ M.T + 0.2 * np.eye(n)
    Q = np.stack([0.3 * (lambda W: W @ W.T)(rng.uniform(-1, 1, (n, n))) for _ in range(T)])
    R = np.stack([(lambda W: W @ W.T + 0.4 * np.eye(m))(rng.uniform(-1, 1, (m, m)))
                  for _ in range(T)])
    return model, pc.QuadraticLoss(P, Q, R)


def brute_force_inner(model, loss, radii, v):
    """Independent sign-pattern oracle for the 1-D inner maximization."""
    from itertools import product

    best = -np.inf
    best_w = None
    for pat in product((1.0, -1.0), repeat=model.T):
        w = (np.asarray(pat) * np.asarray(radii))[:, None]
        val = pc.evaluate_loss(model, loss, v, w)
        if val > best:
            best, best_w = val, w
    return best, best_w
