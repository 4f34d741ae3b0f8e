#!/usr/bin/env python3
"""Smoothing a drift that blows up on the positive integers.

The square-root log-series drift is undefined at 1, 2, 3, ...; convolving
it with a compactly supported bump kernel gives an everywhere-defined
field the scheme can consume.  The demo prints values across a singular
point, probes the exponential-moment condition at two strengths, and
evaluates the drift-perturbation bound as the smoothing width shrinks.
"""

import numpy as np

from sdeweak import (
    SingularDriftError,
    bump_kernel,
    gaussian_reference,
    integrability_probe,
    mollify,
    singular_log_drift,
    singular_log_series,
    theory_bound_bracket,
)

# the truncation keeps ~1/tol terms around the argument, so the tolerance
# is also the price: 1e-3 is plenty for printing and quadrature
series = singular_log_series(n_max=50, tail_bound_tol=1e-3)
drift = singular_log_drift(n_max=50, tail_bound_tol=1e-3)

print("raw drift near the singular point x = 1:")
for x in (0.9, 0.99, 0.999):
    print(f"  b({x}) = {drift.at(0.0, [x])[0]:+.4f}")
try:
    drift.at(0.0, [1.0])
except SingularDriftError as err:
    print(f"  b(1.0) -> {err}")

smooth = mollify(series, bump_kernel(1), epsilon=0.1, quad_points=128)
print("\nsmoothed drift (width 0.1) is finite everywhere:")
for x in (0.9, 1.0, 1.1):
    print(f"  b_eps({x}) = {smooth.at(0.0, [x])[0]:+.4f}")

ref = gaussian_reference()
print("\nexponential-moment probe of the raw series part:")
for eta in (0.2, 1.0):
    rep = integrability_probe(series, ref, eta=eta, quad_points=8192)
    print(f"  eta={eta}: value={rep.value:.4g}  converged={rep.converged}"
          f"  (finite only for eta < 1/2)")

print("\nperturbation bound vs smoothing width (baseline width 0.025):")
base = mollify(series, bump_kernel(1), epsilon=0.025, quad_points=128,
               linear_part=None, table_range=(-12.0, 12.0)).smoothed_field()
for eps in (0.4, 0.2, 0.1, 0.05):
    z_eps = mollify(series, bump_kernel(1), epsilon=eps, quad_points=128,
                    linear_part=None, table_range=(-12.0, 12.0)).smoothed_field()
    val = theory_bound_bracket(z_eps, base, ref, T=1.0, xi=2.0, q0=2.0,
                               quad_points=2048)
    print(f"  width {eps:>5}: bracket = {val:.4f}")
