"""Time-sliced path integrals: coherent-state propagation and a Gaussian slice.

Run: python3 demos/path_integrals.py
"""

import numpy as np

from gfvar import coherent_overlap, ho_propagator, quad_gaussian_pi, window
from gfvar.mollifiers import mollifier
from gfvar.pathintegral import damped_gaussian_oracle, quad_matrix

b_i, b_f, T = 1.0, 0.5 + 0.3j, 1.0
closed = coherent_overlap(b_f, b_i * np.exp(-1j * T))
print(f"closed form <b_f|b_i(T)> = {closed:.12f}")
print(f"exact flow, 5 slices      = {ho_propagator(b_i, b_f, T, 5, mode='exact'):.12f}")
# Euler slicing converges at first order in the step.
for N in (11, 101, 1001, 10001):
    err = abs(ho_propagator(b_i, b_f, T, N) - closed)
    print(f"  Euler N={N:<6} dt={T / (N - 1):.0e}  error={err:.2e}")

# Gaussian integral over the slice values of a windowed quadratic action,
# checked against brute-force damped quadrature.
m = mollifier("gaussian", 0, 0.3)
w = window(0.0, 2.0, m)
for N, deltas in ((2, (1e-2, 1e-3)), (3, (2e-3, 1e-3, 5e-4))):
    value = quad_gaussian_pi(m, N, 0.4, 1.0, 1.0, w)
    A, _ = quad_matrix(m, N, 0.4, 1.0, 1.0, w)
    oracle, _ = damped_gaussian_oracle(A, 0.4, deltas)
    print(f"N={N}: closed Gaussian {value:.8f}  brute force {oracle:.8f}")
