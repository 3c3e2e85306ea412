"""A plane wave on a 64 x 64 lattice as an extremal of the scalar OC action.

Run: python3 demos/scalar_boundary.py
"""

import numpy as np

from gfvar.scalarfield import plane_wave_extremal, scalar_boundary_cost, scalar_oc_action, scalar_pmp_check

lat, zeta = plane_wave_extremal(64)
for name, value in scalar_pmp_check(lat, zeta).as_dict().items():
    print(f"{name:16} {value:.3e}")
# pi_n_plus_P_n vanishes while pi_n_minus_P_n does not: with phi = psi the
# adjoint momentum is minus the state momentum on the boundary.

print(f"\nbulk action at the extremal: {scalar_oc_action(lat):.2e}")
print(f"boundary cost, matched data: {scalar_boundary_cost(zeta, lat)}")
kick = zeta + 0.1 * np.exp(1j * np.linspace(0, 2 * np.pi, zeta.size))
h = scalar_boundary_cost(kick, lat)
print(f"after a 0.1 kick:            {h:.4f}  (overlap modulus {abs(np.exp(-1j * h)):.4f})")
