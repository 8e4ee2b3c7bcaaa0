"""Dense conformal geometric algebra CGA(4,1) kernel.

Every value is a 32-coefficient multivector over the orthonormal basis
{e1, e2, e3, e+, e-} with metric (+, +, +, +, -).  Blade index ``i`` is a
bitmask: bit 0 = e1, bit 1 = e2, bit 2 = e3, bit 3 = e+, bit 4 = e-, and
the blade's factors are ordered by ascending bit.  The null basis is

    e0   = (e- - e+) / 2        (origin)
    einf = e- + e+              (infinity)

so that e0 . einf = -1 and points embed as ``up(p) = p + 0.5|p|^2 einf + e0``.

Products are driven by a precomputed 32x32 sign table; per-versor 32x32
sandwich matrices turn batch point transformation into a single matmul,
which is what the skinning and codec paths use.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import (
    DegenerateBlend,
    InvalidAxis,
    InvalidScale,
    KindMismatch,
    NotAVersor,
    NullWeightError,
    Unclassifiable,
)
from .tolerances import (
    TOL_ALGEBRAIC,
    TOL_BLEND,
    TOL_CLASSIFY,
    TOL_GEOMETRIC,
    TOL_NULL_WEIGHT,
)

DIM = 32
_SIGNATURE = (1.0, 1.0, 1.0, 1.0, -1.0)

# A Euclidean point is a plain length-3 float array (model units).
EuclideanPoint = np.ndarray

# Blade bitmask constants used throughout the package.
B_SCALAR = 0
B_E1, B_E2, B_E3 = 1, 2, 4
B_EP, B_EM = 8, 16
B_E12, B_E13, B_E23 = 3, 5, 6
B_E1P, B_E2P, B_E3P = 9, 10, 12
B_E1M, B_E2M, B_E3M = 17, 18, 20
B_EPM = 24            # e+ ^ e-  ==  einf ^ e0  (the dilation plane)
B_E123 = 7
B_E123P, B_E123M = 15, 23


def _reorder_sign(a: int, b: int) -> float:
    """Sign from sorting the concatenated factors of blades a and b."""
    a >>= 1
    swaps = 0
    while a:
        swaps += bin(a & b).count("1")
        a >>= 1
    return -1.0 if swaps & 1 else 1.0


def _build_tables():
    sign = np.zeros((DIM, DIM))
    for a in range(DIM):
        for b in range(DIM):
            s = _reorder_sign(a, b)
            common = a & b
            for i in range(5):
                if common >> i & 1:
                    s *= _SIGNATURE[i]
            sign[a, b] = s
    return sign


_SIGN = _build_tables()
_K = np.arange(DIM)[:, None]
_J = np.arange(DIM)[None, :]
_IDX = _K ^ _J
# (x y)_k = sum_j L[k,j] y_j with L = _SGN_L * x[_IDX]
_SGN_L = _SIGN[_IDX, _J]
# (x w)_k = sum_j R[k,j] x_j with R = _SGN_R * w[_IDX]
_SGN_R = _SIGN[_J, _IDX]

GRADE = np.array([bin(i).count("1") for i in range(DIM)])
_REVERSE_SIGN = np.where(GRADE * (GRADE - 1) // 2 % 2 == 0, 1.0, -1.0)
_GRADE_MASK = [GRADE == k for k in range(6)]
_EVEN = GRADE % 2 == 0
_ODD = ~_EVEN

# Raw-coefficient constants for the null basis.
_E0 = np.zeros(DIM)
_E0[B_EM] = 0.5
_E0[B_EP] = -0.5
_EINF = np.zeros(DIM)
_EINF[B_EM] = 1.0
_EINF[B_EP] = 1.0
# <x einf>_0 = sum_j w_j x_j  (row of the right-multiplication matrix);
# the homogeneous weight of a conformal point is -<x . einf>.
_WEIGHT_ROW = -(_SGN_R * _EINF[_IDX])[0]


# ------------------------------------------------------------------ raw ops

def _gp(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (_SGN_L * x[_IDX]) @ y


def _rev(x: np.ndarray) -> np.ndarray:
    return _REVERSE_SIGN * x


def left_matrix(x: np.ndarray) -> np.ndarray:
    """32x32 matrix L with L @ y == geometric product x y (raw coeffs)."""
    return _SGN_L * x[_IDX]


def right_matrix(w: np.ndarray) -> np.ndarray:
    """32x32 matrix R with R @ x == geometric product x w (raw coeffs)."""
    return _SGN_R * w[_IDX]


def sandwich_matrix_raw(v: np.ndarray) -> np.ndarray:
    """Matrix S with S @ x == v x reverse(v); one matmul per batch."""
    return left_matrix(v) @ right_matrix(_rev(v))


def up_raw(points: np.ndarray) -> np.ndarray:
    """Embed an (N,3) array of Euclidean points as (N,32) null vectors."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros((pts.shape[0], DIM))
    half_sq = 0.5 * np.einsum("ij,ij->i", pts, pts)
    out[:, [B_E1, B_E2, B_E3]] = pts
    out[:, B_EP] = half_sq - 0.5
    out[:, B_EM] = half_sq + 0.5
    return out


def down_raw(arr: np.ndarray) -> np.ndarray:
    """Project (N,32) conformal points back to (N,3) Euclidean points."""
    arr = np.atleast_2d(arr)
    w = arr @ _WEIGHT_ROW
    bad = np.abs(w) < TOL_NULL_WEIGHT
    if np.any(bad):
        raise NullWeightError(
            f"point(s) at infinity: |weight| < {TOL_NULL_WEIGHT:g} "
            f"at rows {np.nonzero(bad)[0][:8].tolist()}"
        )
    return arr[:, [B_E1, B_E2, B_E3]] / w[:, None]


# --------------------------------------------------------------- multivector

class Multivector:
    """Immutable-by-convention wrapper around 32 blade coefficients."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        arr = np.asarray(coeffs, dtype=float).reshape(DIM).copy()
        if not np.all(np.isfinite(arr)):
            raise ValueError("multivector coefficients must be finite")
        self.coeffs = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Multivector":
        mv = object.__new__(cls)
        mv.coeffs = arr
        return mv

    # -- algebra ------------------------------------------------------------

    def __mul__(self, other):
        if isinstance(other, Multivector):
            return Multivector._wrap(_gp(self.coeffs, other.coeffs))
        return Multivector._wrap(self.coeffs * float(other))

    def __rmul__(self, other):
        return Multivector._wrap(self.coeffs * float(other))

    def __truediv__(self, other):
        return Multivector._wrap(self.coeffs / float(other))

    def __add__(self, other):
        if isinstance(other, Multivector):
            return Multivector._wrap(self.coeffs + other.coeffs)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Multivector):
            return Multivector._wrap(self.coeffs - other.coeffs)
        return NotImplemented

    def __neg__(self):
        return Multivector._wrap(-self.coeffs)

    def __invert__(self):
        """Reverse: grade-k part picks up (-1)^(k(k-1)/2)."""
        return Multivector._wrap(_rev(self.coeffs))

    # -- accessors ----------------------------------------------------------

    @property
    def scalar(self) -> float:
        return float(self.coeffs[0])

    def grade(self, k: int) -> "Multivector":
        out = np.where(_GRADE_MASK[k], self.coeffs, 0.0)
        return Multivector._wrap(out)

    def norm(self) -> float:
        """Coefficient 2-norm (not the versor magnitude)."""
        return float(np.linalg.norm(self.coeffs))

    def versor_norm(self) -> float:
        """sqrt(|scalar part of m * reverse(m)|)."""
        return float(np.sqrt(abs(_gp(self.coeffs, _rev(self.coeffs))[0])))

    def approx_eq(self, other: "Multivector", tol: float = TOL_ALGEBRAIC) -> bool:
        return bool(np.max(np.abs(self.coeffs - other.coeffs)) <= tol)

    def __repr__(self):
        return f"Multivector<{format_debug(self)}>"


ONE = Multivector._wrap(np.eye(DIM)[0].copy())
E0 = Multivector._wrap(_E0.copy())
EINF = Multivector._wrap(_EINF.copy())


def blade(index: int, coeff: float = 1.0) -> Multivector:
    """Unit basis blade by bitmask index (bit 0 = e1 ... bit 4 = e-)."""
    arr = np.zeros(DIM)
    arr[index] = coeff
    return Multivector._wrap(arr)


class VersorKind(enum.Enum):
    POINT = "Point"
    TRANSLATOR = "Translator"
    ROTOR = "Rotor"
    DILATOR = "Dilator"
    MOTOR = "Motor"


# ----------------------------------------------------------------- products

def geometric_product(a: Multivector, b: Multivector) -> Multivector:
    """Associative Clifford product from the precomputed sign table."""
    return Multivector._wrap(_gp(a.coeffs, b.coeffs))


def reverse(a: Multivector) -> Multivector:
    """Reverse the factor order of every blade."""
    return Multivector._wrap(_rev(a.coeffs))


# --------------------------------------------------------------- embeddings

def up(p) -> Multivector:
    """Embed a Euclidean point as a null conformal point."""
    return Multivector._wrap(up_raw(np.asarray(p, dtype=float).reshape(3))[0])


def down(c: Multivector) -> EuclideanPoint:
    """Read the Euclidean point back out of a conformal point.

    Divides by the homogeneous weight -(c . einf) first, so any nonzero
    scaling of the point maps to the same Euclidean position.  Raises
    NullWeightError for points at infinity (weight below 1e-12).
    """
    return down_raw(c.coeffs[None, :])[0]


# -------------------------------------------------------------- constructors

def translator(t) -> Multivector:
    """Versor translating points by the vector ``t``:  1 - (t einf)/2."""
    t = np.asarray(t, dtype=float).reshape(3)
    arr = np.zeros(DIM)
    arr[0] = 1.0
    arr[[B_E1P, B_E2P, B_E3P]] = -0.5 * t
    arr[[B_E1M, B_E2M, B_E3M]] = -0.5 * t
    return Multivector._wrap(arr)


def rotor(axis, angle: float) -> Multivector:
    """Versor rotating by ``angle`` about the unit ``axis`` through the origin.

    cos(a/2) - sin(a/2) B, with B the unit Euclidean bivector whose plane
    is orthogonal to the axis (B = ax e23 + ay e31 + az e12).
    """
    axis = np.asarray(axis, dtype=float).reshape(3)
    n = np.linalg.norm(axis)
    if abs(n - 1.0) > TOL_GEOMETRIC:
        raise InvalidAxis(f"rotation axis must be unit length, got |axis| = {n!r}")
    half = 0.5 * float(angle)
    c, s = np.cos(half), np.sin(half)
    arr = np.zeros(DIM)
    arr[0] = c
    arr[B_E23] = -s * axis[0]
    arr[B_E13] = s * axis[1]      # e31 = -e13
    arr[B_E12] = -s * axis[2]
    return Multivector._wrap(arr)


def dilator(scale: float) -> Multivector:
    """Versor scaling points about the origin by the positive factor ``scale``.

    exp(-(ln scale / 2) E) = cosh(u) - sinh(u) E with E = einf ^ e0 = e+ e-.
    """
    scale = float(scale)
    if not np.isfinite(scale) or scale <= 0.0:
        raise InvalidScale(f"dilation scale must be positive and finite, got {scale!r}")
    u = 0.5 * np.log(scale)
    arr = np.zeros(DIM)
    arr[0] = np.cosh(u)
    arr[B_EPM] = -np.sinh(u)
    return Multivector._wrap(arr)


def rotor_from_quaternion(w: float, x: float, y: float, z: float) -> Multivector:
    """Rotor with the same action as the unit quaternion w + xi + yj + zk.

    The Euclidean even subalgebra is isomorphic to the quaternions via
    i -> -e23, j -> -e13 reversed ... concretely: coefficients map to
    (scalar, e23, e13, e12) = (w, -x, y, -z).
    """
    arr = np.zeros(DIM)
    arr[0] = w
    arr[B_E23] = -x
    arr[B_E13] = y
    arr[B_E12] = -z
    return Multivector._wrap(arr)


# ----------------------------------------------------------------- versors

def _versor_defect(n: np.ndarray) -> tuple[float, float]:
    """Scalar part and off-scalar mass of a (versor * reverse) product."""
    s = float(n[0])
    off = float(np.linalg.norm(n[1:]))
    return s, off


def apply_versor(v: Multivector, x: Multivector) -> Multivector:
    """Sandwich product v x reverse(v); the conformal group action."""
    n = _gp(v.coeffs, _rev(v.coeffs))
    s, off = _versor_defect(n)
    if off > TOL_CLASSIFY * max(1.0, abs(s)) or abs(s) < TOL_CLASSIFY:
        raise NotAVersor(
            f"v * reverse(v) must be a nonzero scalar; got scalar {s!r}, "
            f"off-scalar mass {off!r}"
        )
    return Multivector._wrap(_gp(_gp(v.coeffs, x.coeffs), _rev(v.coeffs)))


def sandwich_matrix(v: Multivector) -> np.ndarray:
    """32x32 matrix of x -> v x reverse(v) for batch application."""
    return sandwich_matrix_raw(v.coeffs)


def normalize_versor_raw(m: np.ndarray, tol: float = TOL_BLEND) -> np.ndarray:
    """Project raw coefficients onto the unit-versor manifold.

    Iterates m <- m (n/s)^(-1/2) / sqrt(s) with n = m reverse(m), s = <n>_0,
    using the first-order inverse square root (1 - (n-s)/(2s)).  One pass is
    exact when the off-scalar part of n squares to zero (true for motors,
    where it lies on the nilpotent blade e123 einf); the loop handles the
    general even versor.  Plain scalar division falls out when n is scalar.
    """
    for _ in range(8):
        n = _gp(m, _rev(m))
        s = float(n[0])
        if not np.isfinite(s) or s <= tol * tol:
            raise DegenerateBlend(f"blend norm {np.sqrt(max(s, 0.0))!r} below {tol:g}")
        off = n.copy()
        off[0] = 0.0
        resid = float(np.max(np.abs(off)))
        corr = -off / (2.0 * s)
        corr[0] += 1.0
        m = _gp(m, corr) / np.sqrt(s)
        if resid <= 1e-14 * s:
            break
    return m


def normalize_versor(m: Multivector) -> Multivector:
    """Unit-magnitude projection of an even versor (see normalize_versor_raw)."""
    return Multivector._wrap(normalize_versor_raw(m.coeffs.copy()))


_SCALAR_ONLY = np.zeros(DIM, dtype=bool)
_SCALAR_ONLY[0] = True
_ROTOR_SUPPORT = np.zeros(DIM, dtype=bool)
_ROTOR_SUPPORT[[0, B_E12, B_E13, B_E23]] = True
_DILATOR_SUPPORT = np.zeros(DIM, dtype=bool)
_DILATOR_SUPPORT[[0, B_EPM]] = True
_GRADE1 = _GRADE_MASK[1]
# Blades a rigid motor may occupy: {1, e12, e13, e23, e1inf, e2inf, e3inf,
# e123inf}; the einf-carrying blades each span an (e+, e-) index pair.
MOTOR_SUPPORT = np.zeros(DIM, dtype=bool)
MOTOR_SUPPORT[[0, B_E12, B_E13, B_E23, B_E1P, B_E2P, B_E3P,
               B_E1M, B_E2M, B_E3M, B_E123P, B_E123M]] = True


def _is_scalar_only(c: np.ndarray, tol: float) -> bool:
    return float(np.linalg.norm(c[1:])) <= tol * max(1.0, abs(c[0]))


def classify_versor(a: Multivector, tol: float = TOL_CLASSIFY) -> VersorKind:
    """Decide the versor kind from grade support and defining identities.

    Priority: null grade-1 vector -> POINT; Euclidean even -> ROTOR
    (a pure scalar is the identity rotor); scalar + e_i einf bivector ->
    TRANSLATOR; scalar + dilation plane -> DILATOR; any other even element
    with m reverse(m) = 1 -> MOTOR.  Raises Unclassifiable otherwise.
    """
    c = a.coeffs
    n = float(np.linalg.norm(c))
    if n <= tol:
        raise Unclassifiable("zero multivector")
    u = c / n
    odd_mass = float(np.linalg.norm(u[_ODD]))
    if odd_mass > tol:
        if float(np.linalg.norm(u[~_GRADE1])) <= tol:
            sq = _gp(u, u)
            if abs(sq[0]) <= tol and float(np.linalg.norm(u @ _WEIGHT_ROW)) >= 0.0:
                return VersorKind.POINT
        raise Unclassifiable("odd element that is not a null point")
    if float(np.linalg.norm(u[~_ROTOR_SUPPORT])) <= tol:
        return VersorKind.ROTOR
    if abs(u[0]) > tol:
        v = c / c[0]
        vn = max(1.0, float(np.linalg.norm(v)))
        off = np.linalg.norm(v[~(_SCALAR_ONLY
                                 | np.isin(np.arange(DIM), [B_E1P, B_E2P, B_E3P,
                                                            B_E1M, B_E2M, B_E3M]))]) ** 2
        # an e_i ^ einf blade weighs equally on the e_i e+ / e_i e- indices
        asym = (v[[B_E1P, B_E2P, B_E3P]] - v[[B_E1M, B_E2M, B_E3M]])
        off = float(np.sqrt(off + np.dot(asym, asym)))
        if off <= tol * vn:
            return VersorKind.TRANSLATOR
    if float(np.linalg.norm(u[~_DILATOR_SUPPORT])) <= tol:
        return VersorKind.DILATOR
    nn = _gp(c, _rev(c))
    s, off = _versor_defect(nn)
    if abs(s - 1.0) <= tol * max(1.0, abs(s)) and off <= tol * max(1.0, abs(s)):
        return VersorKind.MOTOR
    raise Unclassifiable(
        f"no versor pattern within {tol:g} (m rev(m): scalar {s!r}, off {off!r})"
    )


_RIGID_KINDS = frozenset(
    {VersorKind.ROTOR, VersorKind.TRANSLATOR, VersorKind.MOTOR})


def interpolate_versor(a: Multivector, b: Multivector, t: float) -> Multivector:
    """Type-closed blend between two versors of the same kind.

    Linear coefficient blend followed by projection back onto the versor
    manifold (null re-projection for points, unit-magnitude renormalization
    for the even kinds).  Endpoints are exact; the result classifies as the
    common input kind.  Rotor/motor endpoints are hemisphere-aligned first
    (b is negated when the scalar part of a * reverse(b) is negative).
    """
    t = float(t)
    ka = classify_versor(a)
    kb = classify_versor(b)
    if ka is not kb:
        # the identity versor (pure scalar) is a valid endpoint for any
        # even kind: translator((0,0,0)) == rotor(z, 0) == dilator(1) == 1
        if ka is not VersorKind.POINT and _is_scalar_only(a.coeffs, TOL_CLASSIFY):
            ka = kb
        elif kb is not VersorKind.POINT and _is_scalar_only(b.coeffs, TOL_CLASSIFY):
            kb = ka
        elif ka in _RIGID_KINDS and kb in _RIGID_KINDS:
            # rotors, translators, and their products share one group and
            # one blend path; a screw whose angle passes through zero flips
            # label between frames, which must not poison the blend
            ka = kb = VersorKind.MOTOR
        else:
            raise KindMismatch(f"cannot blend {ka.value} with {kb.value}")
    if ka is VersorKind.POINT:
        if t == 0.0:
            return a
        if t == 1.0:
            return b
        m = (1.0 - t) * a.coeffs + t * b.coeffs
        w = float(m @ _WEIGHT_ROW)
        if abs(w) < TOL_BLEND:
            raise DegenerateBlend(f"blended point weight {w!r} below {TOL_BLEND:g}")
        return Multivector._wrap(w * up_raw(down_raw(m[None, :]))[0])
    bc = b.coeffs
    if float(_gp(a.coeffs, _rev(bc))[0]) < 0.0:
        bc = -bc
    if t == 0.0:
        return a
    if t == 1.0:
        return Multivector._wrap(bc.copy())
    m = (1.0 - t) * a.coeffs + t * bc
    return Multivector._wrap(normalize_versor_raw(m))


# ------------------------------------------------------------- debug format

def _build_null_basis():
    """Change of basis from e+/e- blades to {e1,e2,e3,eo,einf} blades.

    Column c of the matrix holds the e+/e- coefficients of the null-basis
    blade whose bitmask is c (bit 3 = eo, bit 4 = einf), built by wedging
    the factor vectors in ascending order.
    """
    vectors = [np.eye(DIM)[B_E1], np.eye(DIM)[B_E2], np.eye(DIM)[B_E3],
               _E0, _EINF]
    mat = np.zeros((DIM, DIM))
    for idx in range(DIM):
        acc = np.eye(DIM)[0].copy()
        g = 0
        for bit in range(5):
            if idx >> bit & 1:
                acc = np.where(_GRADE_MASK[g + 1], _gp(acc, vectors[bit]), 0.0)
                g += 1
        mat[:, idx] = acc
    names = []
    for idx in range(DIM):
        digits = "".join(str(bit + 1) for bit in range(3) if idx >> bit & 1)
        tail = ("o" if idx & 8 else "") + ("inf" if idx & 16 else "")
        names.append("e" + digits + tail if digits or tail else "1")
    # entries are dyadic rationals, so snapping kills inversion round-off
    inv = np.round(np.linalg.inv(mat) * 16.0) / 16.0
    return mat, inv, names


_NULL_MAT, _NULL_INV, _NULL_NAMES = _build_null_basis()


def format_debug(a: Multivector, tol: float = 0.0) -> str:
    """Deterministic textual form: ``blade:coeff`` pairs in null-basis names.

    Coefficients are re-expressed over {e1, e2, e3, eo, einf} blades (so a
    translator prints e1inf terms, a point prints an eo term), ordered by
    blade index, full precision, UTF-8.  Zero coefficients are omitted;
    the zero multivector prints as ``0``.
    """
    coeffs = _NULL_INV @ a.coeffs
    parts = [f"{_NULL_NAMES[i]}:{float(coeffs[i])!r}"
             for i in range(DIM) if abs(coeffs[i]) > tol]
    return " ".join(parts) if parts else "0"


def from_debug(text: str) -> Multivector:
    """Inverse of format_debug (used by fixture files)."""
    arr = np.zeros(DIM)
    text = text.strip()
    if text and text != "0":
        index = {name: i for i, name in enumerate(_NULL_NAMES)}
        for token in text.split():
            name, _, value = token.rpartition(":")
            arr[index[name]] = float(value)
    return Multivector._wrap(_NULL_MAT @ arr)
