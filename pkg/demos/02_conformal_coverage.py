"""Distribution-free confidence products.

Calibrates per-timestep radii from sampled noise trajectories and audits the
coverage guarantee: at each step the k-th order statistic of N calibration
scores covers a fresh sample with probability exactly k/(N+1), and the
product over steps covers the whole trajectory with probability >= 1 - p.
"""

import numpy as np

import perfctl as pc

T, p, N = 4, 0.1, 999
dyn = pc.LinearTimeVarying(A=[[[1.0]]] * T, B=[[[1.0]]] * T, c=[[0.0]] * T)
lower, upper = pc.box_from_bounds(T, 1, -2.0, 2.0)
model = pc.SystemModel(n=1, m=1, T=T, x0=[0.0], nominal=dyn, lower=lower, upper=upper)
noise = pc.GaussianIsotropic(sigma0=0.5, sigma1=0.2)
u = np.full((T, 1), -0.5)

k = pc.quantile_index(N, p, T)
print(f"N={N}, p={p}, T={T}  ->  order statistic k={k}, "
      f"per-step coverage k/(N+1) = {k/(N+1):.4f}")

batch = pc.sample_noise_batch(model, noise, u, N, seed=0)
conf = pc.build_confidence_product(batch, pc.Euclidean(), p)
print("calibrated radii:", conf.radii.round(4))

fresh = pc.sample_noise_batch(model, noise, u, 200_000, seed=1)
audit = pc.coverage_audit(conf, fresh)
print("fresh per-step coverage:", audit.per_step.round(4))
print("fresh joint coverage: %.4f (union-bound target >= %.2f)" % (audit.joint, 1 - p))

# The ideal oracle knows the law of |w(t)| and returns its exact quantile;
# the empirical radii approach it as N grows.
ideal = pc.ideal_confidence_product(model, noise, u, p)
print("\nideal radii:     ", ideal.radii.round(4))
for n_cal in (99, 999, 9999):
    b = pc.sample_noise_batch(model, noise, u, n_cal, seed=2)
    c = pc.build_confidence_product(b, pc.Euclidean(), p)
    print(f"empirical N={n_cal:5d}:", c.radii.round(4),
          " max gap %.4f" % np.max(np.abs(c.radii - ideal.radii)))

# Any positive-definite score reshapes the set without changing the
# guarantee; with the identity matrix it reproduces the Euclidean radii.
H = np.stack([np.eye(1)] * T)
same = pc.build_confidence_product(batch, pc.Mahalanobis(H), p)
print("\nMahalanobis with identity H matches Euclidean:",
      np.array_equal(same.radii, conf.radii))
