"""Conformal geometric algebra motion engine.

Multivector-only character skinning, type-closed versor interpolation,
keyframe reduction, a quantized snapshot/delta wire protocol with a
simulated lossy link, shape-matching soft bodies, and position-based ropes
with knots and sutures.
"""

from .cga import (
    Multivector,
    VersorKind,
    apply_versor,
    classify_versor,
    dilator,
    down,
    format_debug,
    geometric_product,
    interpolate_versor,
    normalize_versor,
    reverse,
    rotor,
    translator,
    up,
)

__version__ = "0.1.0"

__all__ = [
    "Multivector",
    "VersorKind",
    "apply_versor",
    "classify_versor",
    "dilator",
    "down",
    "format_debug",
    "geometric_product",
    "interpolate_versor",
    "normalize_versor",
    "reverse",
    "rotor",
    "translator",
    "up",
    "__version__",
]
