"""
Perturbation coefficients and c0 vectors
========================================

Coefficient field for one span, its -20 dB support and the c0 vectors that
seed the nonlinear steps for several spans per step.
"""
import numpy as np

from paldbp.channel import LinkParams
from paldbp.perturbation import c0_vector, compute_field, contours_csv, export_contours, matched_gaussian

link = LinkParams()
pulse = matched_gaussian()
print(f"Gaussian t0 = {pulse.t0 * 1e12:.2f} ps on a {pulse.symbol_period * 1e12:.2f} ps lattice")

# %% field for one span, |m|, |k| <= 12
field = compute_field(link, 1, pulse, 12, "closed_form")
C = field.coeffs
print("C00 =", field.C(0, 0).real)
print("symmetric:", np.allclose(C, C.T), " row 0 real:", np.allclose(field.row0().imag, 0))
print("C0k, k = 0..5, magnitude (dB re C00):", np.round(20 * np.log10(np.abs(field.row0()[:6] / field.C(0, 0))), 1))

# %% c0 lengths versus spans per step at chi = -20 dB
for S in (1, 2, 4, 10):
    v = c0_vector(link, S, -20.0, pulse)
    print(f"S = {S:2d}: c0 length {v.length:3d}, centre tap {v.half_taps[0]:.3f} 1/W")

# %% contour boundary cells as CSV
cells = export_contours(field, [-25, -20, -15, -10, -5])
print(len(cells), "boundary cells;", contours_csv(cells).splitlines()[:3])
