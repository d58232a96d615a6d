"""The robust min-max layer.

Shows the inner maximization (worst-case noise in a confidence product), its
exactness against brute force at desk scale, the max-function gradient it
exposes, and the outer projected-descent solve over the control box.
"""

from itertools import product

import numpy as np

import perfctl as pc

T = 3
dyn = pc.LinearTimeVarying(A=[[[1.1]]] * T, B=[[[1.0]]] * T, c=[[0.0]] * T)
lower, upper = pc.box_from_bounds(T, 1, -2.0, 2.0)
model = pc.SystemModel(n=1, m=1, T=T, x0=[1.0], nominal=dyn, lower=lower, upper=upper)
loss = pc.QuadraticLoss(P=[[1.0]], Q=[[[0.3]]] * T, R=[[[3.0]]] * T)

radii = np.array([0.3, 0.2, 0.25])
conf = pc.ConfidenceProduct(pc.Euclidean(), radii, pc.Provenance("ideal", 0.1))
v = np.zeros((T, 1))

sol = pc.inner_max(model, loss, conf, v)
print("worst-case noise:", sol.w_star.ravel(), " value %.5f" % sol.value)
print("certificate:", sol.certificate)

# Desk-scale check: a convex loss is maximized at extreme points, so in one
# dimension enumerating the 2^T sign patterns is a complete oracle.
best = max(
    pc.evaluate_loss(model, loss, v, (np.array(sig) * radii)[:, None])
    for sig in product((1.0, -1.0), repeat=T)
)
print("sign-pattern oracle agrees: %.2e" % abs(best - sol.value))

# The loss gradient at the maximizer is the gradient of the max function;
# finite differences of the inner value confirm it.
gu, _ = pc.loss_gradients(model, loss, v, sol.w_star)
h = 1e-5
fd = np.zeros(T)
for t in range(T):
    vp, vm = v.copy(), v.copy()
    vp[t, 0] += h
    vm[t, 0] -= h
    fd[t] = (pc.inner_max(model, loss, conf, vp).value
             - pc.inner_max(model, loss, conf, vm).value) / (2 * h)
print("max-function gradient:", gu.ravel().round(5), " fd:", fd.round(5))

# Outer solve: minimize the worst case over the box.
out = pc.outer_min(model, loss, conf)
print("\nrobust control:", out.u.ravel().round(5),
      " worst-case value %.5f" % out.value,
      " (projected-gradient norm %.1e)" % out.grad_norm)

# With zero radii this reduces to the nominal optimum.
zero = pc.ConfidenceProduct(pc.Euclidean(), np.zeros(T), pc.Provenance("ideal", 0.1))
print("zero-radius robust == nominal:",
      np.allclose(pc.outer_min(model, loss, zero).u, pc.solve_nominal(model, loss),
                  atol=1e-7))
