"""Smoothing a step and a sine with higher-order mollifiers.

Run: python3 demos/regularize_and_converge.py
"""

import numpy as np

from gfvar import build_family, convolve, moments, mollifier, order_estimate
from gfvar.mollifiers import Mollifier

fam = build_family("gaussian", {"sigma": 1.0}, 6)
print("expansion coefficients:", np.round(fam.alphas, 6))
for q in (0, 2, 4, 6):
    mu = np.asarray(moments(Mollifier(fam, q, 1.0), q), dtype=float)
    print(f"  q={q}: mass-1 = {mu[0] - 1:+.1e}, worst vanishing moment = {np.max(np.abs(mu[1:]), initial=0.0):.1e}")

# A step regularized at a few widths: the value at the jump stays at 1/2,
# the transition narrows linearly with eps.
step = lambda x: (np.asarray(x) >= 0).astype(float)
for eps in (0.4, 0.1, 0.025):
    g = convolve(step, mollifier("gaussian", 0, eps), check=False)
    print(f"eps={eps:<6} step_reg(0)={float(g(0.0)):.6f}  step_reg(2 eps)={float(g(2 * eps)):.6f}")

# For smooth input the error falls like eps^(q+1) (q odd repeats the even order below it).
for q in (1, 3, 5):
    est = order_estimate(np.sin, "gaussian", q)
    errs = " ".join(f"{e:.2e}" for e in est.errors)
    print(f"sin, q={q}: errors {errs}  slope {est.slope:.2f}")
