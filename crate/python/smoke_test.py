"""Smoke test for the backstep extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import math

import backstep


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok   {what}")


k = backstep.Kernel(6.0, nx=101)
check(k.order > 0, f"kernel truncated at order {k.order}")
x = k.nodes
diag = [k.value(i, i) for i in range(len(x))]
check(max(abs(d + 3.0 * xi) for d, xi in zip(diag, x)) < 1e-10, "kernel diagonal equals -mu x / (2 nu)")

t = backstep.Transform(15.0, 2, nx=200)
check(len(t.one_plus_a) == 2 and all(abs(v) > 1e-6 for v in t.one_plus_a), f"1 + a_j = {t.one_plus_a}")
u = [math.sin(math.pi * xi) * xi for xi in backstep.Kernel(15.0, nx=200).nodes]
back = t.inverse(t.forward(u))
check(max(abs(a - b) for a, b in zip(u, back)) < 1e-8, "inverse undoes forward")
check(abs(t.control(u) - t.control_direct(u)) < 1e-10, "gain vector matches direct control")
norms = t.operator_norms()
check(norms["c0"] >= 1.0, f"operator norms {norms}")

rep = backstep.design(15.0, rate=2.0, nx=300)
check(rep["gamma"] >= 2.0 - 1e-9, f"design picks mu = {rep['mu']:.4f}, N = {rep['modes']}")
g = backstep.gamma_rate(15.0, rep["mu"], rep["modes"])
check(g == rep["gamma"], f"gamma_rate agrees with the design report ({g})")
check(backstep.rho_rate(15.0, rep["mu"], rep["modes"]) == rep["rho"], "rho_rate agrees with the design report")

run = backstep.simulate(nx=100, nt=100, tmax=1.0)
check(len(run["l2_norms"]) == 100, "one norm per time level")
check(run["l2_norms"][-1] < 1e-2 * run["l2_norms"][0], "controlled linear run decays")

exp = backstep.experiment("exp2", nx=120, nt=120)
check(exp["fit"]["rate"] > 0.0, f"exp2 fitted rate {exp['fit']['rate']:.3f}")

try:
    backstep.simulate(nx=1)
except ValueError as e:
    check(True, f"bad grid rejected: {e}")
else:
    raise SystemExit("FAIL: nx = 1 accepted")

try:
    backstep.simulate(model="nonlinear", newton_max_iter=1, nx=60, nt=30)
except backstep.SolverError as e:
    check(True, "Newton failure raises SolverError")
else:
    raise SystemExit("FAIL: Newton cap ignored")

print("smoke test passed")
