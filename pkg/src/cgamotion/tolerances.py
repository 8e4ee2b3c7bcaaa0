"""Repo-wide numerical tolerances, defined once.

Three tiers, loosest to tightest:

* ``TOL_CLASSIFY`` — pattern matching on versor kinds and quantized data.
* ``TOL_GEOMETRIC`` — geometric identities (null cone, oracle agreement).
* ``TOL_ALGEBRAIC`` — exact algebraic identities up to float round-off.
"""

TOL_CLASSIFY = 1e-6
TOL_GEOMETRIC = 1e-9
TOL_ALGEBRAIC = 1e-12

# Homogeneous weight below this is treated as a point at infinity.
TOL_NULL_WEIGHT = 1e-12

# Blend norms below this are considered antipodal/degenerate.
TOL_BLEND = 1e-9
