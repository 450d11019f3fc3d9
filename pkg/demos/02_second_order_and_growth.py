"""
Second-order conditions: coercivity and quadratic growth
========================================================

At a stationary point we sample directions from the critical cone and
its tau-extensions, evaluate the second variation on them, and compare
against the cost along nearby admissible controls.  Two instances are
contrasted: a cubic nonlinearity where the condition holds, and an
exponential one where the curvature is negative on the cone.
"""

from parabolic_ssc import ConeQuery, ReferencePoint, growth_report, ssc_report
from parabolic_ssc.instances import indefinite_exponential, sparse_cubic

good = sparse_cubic()
bad = indefinite_exponential()

# %%
# A :class:`ReferencePoint` caches the state, adjoint and a linearized
# solver so the sampling campaigns only solve linear problems.
for name, inst in (("cubic", good), ("exponential", bad)):
    point = ReferencePoint(inst.spec, inst.ubar, inst.phibar)
    for tau in (0.001, 0.01, 0.1):
        rep = ssc_report(point, None, ConeQuery("Ctau", tau), 200, seed=0)
        print(f"{name:12s} tau={tau:<6g} samples={rep.samples:4d} "
              f"acceptance={rep.acceptance_rate:.2f} min ratio={rep.min_ratio:+.4f}")

# %%
# Quadratic growth: for controls ``u = clamp(u_bar + rho r)`` we record
# ``(J(u) - J(u_bar)) / ||z_{u - u_bar}||^2``.  A positive minimum and no
# control with lower cost is what the sufficient condition predicts.
point = ReferencePoint(good.spec, good.ubar, good.phibar)
gr = growth_report(point, None, 1.0, 300, seed=0)
print(f"cubic: min kappa={gr.min_kappa:.4f}, counterexamples={len(gr.counterexamples)}")

point = ReferencePoint(bad.spec, bad.ubar, bad.phibar)
gr = growth_report(point, None, 1.0, 300, seed=0)
print(f"exponential: min kappa={gr.min_kappa:.4f}, counterexamples={len(gr.counterexamples)}")
