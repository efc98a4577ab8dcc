"""
Noncritical squeezing in the linearized theory
==============================================

Above threshold the dark mode is perfectly squeezed at zero frequency at
every pump level.  Below threshold each supermode is an ordinary squeezer
whose squeezing degrades away from threshold.
"""
import numpy as np

from spopo import (
    analytic_dark_spectra,
    below_threshold_spectrum,
    build_linear_model,
    dark_quadrature_vectors,
    decompose,
    make_config,
    numeric_spectrum,
    solve_steady_state,
)

omega = np.linspace(0, 6, 7)
base = make_config(n_side=2, pump="gaussian", width=3.0, kappa=0.5, sigma=1.0)
basis = decompose(base.coupling)

print("above threshold: dark-mode Y_d spectrum")
for ratio in (1.2, 2.0, 5.0):
    cfg = base.replace(sigma=ratio * basis.threshold_sigma)
    state = solve_steady_state(cfg, basis)
    model = build_linear_model(cfg, state)
    qX, qY = dark_quadrature_vectors(state.rho)
    vy = numeric_spectrum(model, qY, omega).values
    print(f"  sigma/sigma_th={ratio}:", np.round(vy, 4))
print("  analytic:          ", np.round(analytic_dark_spectra(omega, 1.0)[0], 4))

print("below threshold: leading supermode, zero frequency")
for ratio in (0.3, 0.6, 0.9, 0.99):
    cfg = base.replace(sigma=ratio * basis.threshold_sigma)
    v_minus, v_plus = below_threshold_spectrum(basis, cfg, 0, [0.0])
    print(f"  sigma/sigma_th={ratio}: V- = {v_minus[0]:.4f}  V+ = {v_plus[0]:.2f}")
