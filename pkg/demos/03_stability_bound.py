"""Error bound on consistent synthetic data.

The data are built from the operator itself: U = A s* + eta with eta in the
left null space of A and s* in the range of A^T A.  Then the reconstruction
error at the bound-optimal lambda must stay below the bound.
"""

import numpy as np

from marfm import assembly, basis, harness, quadmesh, solver

V0 = ((0.0, 0.0), (2.0, 2.0))
layout = harness.rectangle_layout(((-0.5, -0.5), (2.5, 2.5)), 15)
ks = harness.arithmetic_wavenumbers(1, 89, 4)

# smaller than the acceptance setup (800 features, 40 Gauss points) so it runs in seconds
mesh = quadmesh.build_uniform_mesh(V0, 1, quadmesh.gauss_legendre(40))
A = assembly.assemble_operator(mesh, basis.build_random_set(800, 20, "sin", 0, domain=V0),
                               ks, layout.points()).A
F = solver.svd_factors(A)
w = np.random.default_rng(1).standard_normal(A.shape[1])

print(" eta_M    delta_all   error      bound     bound/error")
for eta in (1e-4, 1e-3, 1e-2, 1e-1, 1.0):
    spec = harness.synthesize_consistent_data(A, 1.0, eta, seed=1, w=w, factors=F, clean_norm=1.0)
    U = harness.add_real_noise(spec.U_true, 0.05, seed=2)
    d_all = np.linalg.norm(U - spec.U_true)
    bound = solver.stability_bound(d_all, eta, nu=1.0, w_norm=np.linalg.norm(spec.w))
    s = solver.solve_tikhonov(A, U, bound.lambda_opt_sq, F.with_rhs(U)).s
    err = np.linalg.norm(s - spec.s_star)
    print(f"{eta:7.0e}  {d_all:9.4f}  {err:9.3e}  {bound.bound_value:9.3e}  {bound.bound_value / err:8.2f}")
