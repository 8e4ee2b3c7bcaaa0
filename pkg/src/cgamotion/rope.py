"""Position-based rope with bending, knots, and suture attachments.

Nodes integrate with Verlet (velocity lives in the position history), then
a fixed number of constraint rounds runs in a fixed order — distance, then
bending, then attachments, then segment-segment collision — node and pair
indices ascending, so trajectories are deterministic.  Collision pushes
any non-adjacent segment pair apart to twice the collision radius along
the closest-point axis, which is what lets knots hold instead of passing
through themselves; a single scalar friction damps tangential sliding at
those contacts.

Max-speed contract: fixtures keep per-step node displacement below half
the collision radius; there is no continuous collision detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, InvalidDt, IoError
from .softbody import ParticleBody


@dataclass
class Rope:
    positions: np.ndarray            # (N, 3)
    prev_positions: np.ndarray       # (N, 3), Verlet history
    masses: np.ndarray               # (N,)
    pinned: np.ndarray               # (N,) bool
    rest_length: float               # shared segment rest length
    radius: float                    # collision radius
    bend_stiffness: float            # [0, 1]
    iterations: int                  # constraint rounds per step
    friction: float = 0.3            # tangential contact damping in [0, 1]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.prev_positions = np.asarray(self.prev_positions, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        self.pinned = np.asarray(self.pinned, dtype=bool)
        n = self.positions.shape[0]
        if n < 2:
            raise ValueError("a rope needs at least 2 nodes")
        if self.positions.shape != (n, 3) or \
                self.prev_positions.shape != (n, 3) or \
                self.masses.shape != (n,) or self.pinned.shape != (n,):
            raise ValueError("rope arrays must agree on (N, 3)/(N,) shapes")
        if np.any(self.masses <= 0.0):
            raise ValueError("node masses must be positive")
        if self.rest_length <= 0.0 or self.radius <= 0.0:
            raise ValueError("rest length and radius must be positive")
        if not 0.0 <= self.bend_stiffness <= 1.0:
            raise ValueError("bend stiffness must be in [0, 1]")
        if self.iterations < 1:
            raise ValueError("need at least one solver iteration")
        if not 0.0 <= self.friction <= 1.0:
            raise ValueError("friction must be in [0, 1]")

    @property
    def node_count(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def from_positions(cls, positions, *, rest_length, radius,
                       bend_stiffness=0.5, iterations=20, masses=None,
                       pinned=None, friction=0.3):
        positions = np.asarray(positions, dtype=float)
        n = positions.shape[0]
        if masses is None:
            masses = np.ones(n)
        if pinned is None:
            pinned = np.zeros(n, dtype=bool)
        return cls(positions=positions.copy(),
                   prev_positions=positions.copy(),
                   masses=np.asarray(masses, dtype=float),
                   pinned=np.asarray(pinned, dtype=bool),
                   rest_length=float(rest_length), radius=float(radius),
                   bend_stiffness=float(bend_stiffness),
                   iterations=int(iterations), friction=float(friction))


def _copy_rope(rope: Rope) -> Rope:
    return Rope(positions=rope.positions.copy(),
                prev_positions=rope.prev_positions.copy(),
                masses=rope.masses, pinned=rope.pinned,
                rest_length=rope.rest_length, radius=rope.radius,
                bend_stiffness=rope.bend_stiffness,
                iterations=rope.iterations, friction=rope.friction)


@dataclass
class Attachment:
    """Suture: a rope node bound to a soft-body particle or world anchor."""

    node: int
    anchor: np.ndarray | None = None
    body: ParticleBody | None = None
    particle: int | None = None
    compliance: float = 0.0
    _lambda: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if (self.anchor is None) == (self.body is None):
            raise ValueError("attachment needs exactly one of anchor or body")
        if self.body is not None and self.particle is None:
            raise ValueError("body attachment needs a particle index")
        if self.anchor is not None:
            self.anchor = np.asarray(self.anchor, dtype=float)
        if self.compliance < 0.0:
            raise ValueError("compliance must be non-negative")


def tie_attachment(rope: Rope, node: int, target,
                   compliance: float = 0.0) -> Attachment:
    """Bind a rope node to a world anchor or a (body, particle) pair."""
    if not 0 <= node < rope.node_count:
        raise IndexOutOfRange(f"no rope node {node}")
    if isinstance(target, tuple) and len(target) == 2 and \
            isinstance(target[0], ParticleBody):
        body, particle = target
        if not 0 <= particle < body.particle_count:
            raise IndexOutOfRange(f"no particle {particle}")
        return Attachment(node=node, body=body, particle=particle,
                          compliance=compliance)
    return Attachment(node=node, anchor=np.asarray(target, dtype=float),
                      compliance=compliance)


# ------------------------------------------------------------ constraint ops

# the chain passes run on plain float triples: sequential Gauss-Seidel in
# ascending node order is inherently scalar, and Python float arithmetic is
# the same IEEE double math at a fraction of the per-element overhead

def _solve_distance(xs, ws, rest):
    for i in range(len(xs) - 1):
        wi, wj = ws[i], ws[i + 1]
        denom = wi + wj
        if denom == 0.0:
            continue
        a, b = xs[i], xs[i + 1]
        dx = b[0] - a[0]
        dy = b[1] - a[1]
        dz = b[2] - a[2]
        length = math.sqrt(dx * dx + dy * dy + dz * dz)
        if length < 1e-12:
            continue
        f = (length - rest) / (length * denom)
        cx, cy, cz = f * dx, f * dy, f * dz
        a[0] += wi * cx
        a[1] += wi * cy
        a[2] += wi * cz
        b[0] -= wj * cx
        b[1] -= wj * cy
        b[2] -= wj * cz


def _solve_bending(xs, ws, stiffness):
    if stiffness <= 0.0:
        return
    for i in range(1, len(xs) - 1):
        wp, wi, wn = ws[i - 1], ws[i], ws[i + 1]
        denom = 0.25 * wp + wi + 0.25 * wn
        if denom == 0.0:
            continue
        p, c, n = xs[i - 1], xs[i], xs[i + 1]
        f = stiffness / denom
        sx = f * (c[0] - 0.5 * (p[0] + n[0]))
        sy = f * (c[1] - 0.5 * (p[1] + n[1]))
        sz = f * (c[2] - 0.5 * (p[2] + n[2]))
        c[0] -= wi * sx
        c[1] -= wi * sy
        c[2] -= wi * sz
        p[0] += 0.5 * wp * sx
        p[1] += 0.5 * wp * sy
        p[2] += 0.5 * wp * sz
        n[0] += 0.5 * wn * sx
        n[1] += 0.5 * wn * sy
        n[2] += 0.5 * wn * sz


def _solve_attachments(x, w, attachments, dt):
    for a in attachments:
        if a.anchor is not None:
            target = a.anchor
            wt = 0.0
        else:
            target = a.body.positions[a.particle]
            wt = 0.0 if a.body.pinned[a.particle] else \
                1.0 / a.body.masses[a.particle]
        wn = w[a.node]
        denom = wn + wt + a.compliance / (dt * dt)
        if denom == 0.0:
            continue
        c = x[a.node] - target
        dlam = -(c + (a.compliance / (dt * dt)) * a._lambda) / denom
        a._lambda += dlam
        x[a.node] += wn * dlam
        if a.body is not None and wt > 0.0:
            a.body.positions[a.particle] -= wt * dlam


def _segment_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(n - 1, k=2)    # non-adjacent segment pairs
    return i, j


def _collision_candidates(x, pairs, rest, radius):
    """Per-step broad phase: keep pairs whose midpoints could touch.

    Segment-segment distance is at least the midpoint distance minus one
    segment length, so pairs further apart than the contact target plus a
    half-segment safety margin (covering within-step motion, which the
    max-speed contract keeps below half a radius) cannot collide this step.
    """
    i, j = pairs
    mids = 0.5 * (x[:-1] + x[1:])
    d = mids[i] - mids[j]
    near = np.einsum("ij,ij->i", d, d) <= (2.0 * radius + 1.5 * rest) ** 2
    return i[near], j[near]


def _closest_segment_params(p1, d1, p2, d2):
    """Vectorized closest points between segment batches (clamped params)."""
    r = p1 - p2
    a = np.sum(d1 * d1, axis=1)
    e = np.sum(d2 * d2, axis=1)
    b = np.sum(d1 * d2, axis=1)
    c = np.sum(d1 * r, axis=1)
    f = np.sum(d2 * r, axis=1)
    denom = a * e - b * b
    s = np.where(denom > 1e-12, (b * f - c * e) / np.where(denom > 1e-12,
                                                           denom, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    t = np.where(e > 1e-12, (b * s + f) / np.where(e > 1e-12, e, 1.0), 0.0)
    t_clamped = np.clip(t, 0.0, 1.0)
    # re-project s where t was clamped
    s = np.where(t != t_clamped,
                 np.clip(np.where(a > 1e-12, (t_clamped * b - c) /
                                  np.where(a > 1e-12, a, 1.0), 0.0), 0.0, 1.0),
                 s)
    return s, t_clamped


def _solve_collisions(x, xp, w, pairs, radius, friction):
    i, j = pairs
    p1, d1 = x[i], x[i + 1] - x[i]
    p2, d2 = x[j], x[j + 1] - x[j]
    s, t = _closest_segment_params(p1, d1, p2, d2)
    c1 = p1 + s[:, None] * d1
    c2 = p2 + t[:, None] * d2
    delta = c1 - c2
    dist = np.linalg.norm(delta, axis=1)
    target = 2.0 * radius
    hits = np.nonzero(dist < target)[0]
    for h in hits:                        # ascending pair order: deterministic
        ia, ib = int(i[h]), int(j[h])
        sa, ta = float(s[h]), float(t[h])
        d = float(dist[h])
        if d > 1e-12:
            axis = delta[h] / d
        else:
            axis = np.array([0.0, 1.0, 0.0])
        depth = target - d
        # barycentric inverse-mass weights of the four involved nodes
        wa = (1.0 - sa) ** 2 * w[ia] + sa ** 2 * w[ia + 1]
        wb = (1.0 - ta) ** 2 * w[ib] + ta ** 2 * w[ib + 1]
        denom = wa + wb
        if denom == 0.0:
            continue
        corr = (depth / denom) * axis
        if friction > 0.0:
            # damp the tangential part of the contact points' relative
            # motion since the step began (position-level friction)
            u = ((1.0 - sa) * (x[ia] - xp[ia]) + sa * (x[ia + 1] - xp[ia + 1])
                 - (1.0 - ta) * (x[ib] - xp[ib]) - ta * (x[ib + 1] - xp[ib + 1]))
            u_t = u - (u @ axis) * axis
            corr -= (friction / denom) * u_t
        x[ia] += (1.0 - sa) * w[ia] * corr
        x[ia + 1] += sa * w[ia + 1] * corr
        x[ib] -= (1.0 - ta) * w[ib] * corr
        x[ib + 1] -= ta * w[ib + 1] * corr


# ---------------------------------------------------------------- stepping

def rope_step(rope: Rope, dt: float, gravity,
              attachments=()) -> Rope:
    """One Verlet step plus the fixed-order constraint rounds."""
    if not (np.isfinite(dt) and dt > 0.0):
        raise InvalidDt(f"dt must be positive and finite, got {dt!r}")
    gravity = np.asarray(gravity, dtype=float)
    out = _copy_rope(rope)
    x = out.positions
    live = ~out.pinned
    inertia = x[live] - out.prev_positions[live]
    out.prev_positions[:] = x
    x[live] += inertia + gravity * (dt * dt)

    w = np.where(out.pinned, 0.0, 1.0 / out.masses)
    pairs = _collision_candidates(x, _segment_pairs(out.node_count),
                                  out.rest_length, out.radius)
    for a in attachments:
        if not 0 <= a.node < out.node_count:
            raise IndexOutOfRange(f"attachment names missing node {a.node}")
        if a.body is not None and not 0 <= a.particle < a.body.particle_count:
            raise IndexOutOfRange(
                f"attachment names missing particle {a.particle}")
        a._lambda = np.zeros(3)
    ws = w.tolist()
    for _ in range(out.iterations):
        xs = x.tolist()
        _solve_distance(xs, ws, out.rest_length)
        _solve_bending(xs, ws, out.bend_stiffness)
        x[:] = xs
        _solve_attachments(x, w, attachments, dt)
        if pairs[0].size:
            _solve_collisions(x, out.prev_positions, w, pairs, out.radius,
                              out.friction)
    x[out.pinned] = rope.positions[out.pinned]
    return out


def velocities(rope: Rope, dt: float) -> np.ndarray:
    """Verlet velocity estimate from the stored position history."""
    return (rope.positions - rope.prev_positions) / dt


# --------------------------------------------------------------- knot check

def knot_integrity_check(rope: Rope) -> dict:
    """Minimum clearance between non-adjacent segments, and a pass flag.

    The flag requires the closest non-adjacent approach to stay at or above
    one collision radius — half the projection target, so transient solver
    violations fail loudly while resolved contacts pass.
    """
    pairs = _segment_pairs(rope.node_count)
    if pairs[0].size == 0:
        return {"min_distance": float("inf"), "radius": rope.radius,
                "passed": True, "pair": None}
    x = rope.positions
    i, j = pairs
    s, t = _closest_segment_params(x[i], x[i + 1] - x[i], x[j],
                                   x[j + 1] - x[j])
    c1 = x[i] + s[:, None] * (x[i + 1] - x[i])
    c2 = x[j] + t[:, None] * (x[j + 1] - x[j])
    dist = np.linalg.norm(c1 - c2, axis=1)
    k = int(np.argmin(dist))
    return {"min_distance": float(dist[k]), "radius": rope.radius,
            "passed": bool(dist[k] >= rope.radius),
            "pair": (int(i[k]), int(j[k]))}


# ------------------------------------------------------------- suture solve

def suture_step(rope: Rope, body: ParticleBody, attachments, dt: float,
                gravity) -> tuple[Rope, ParticleBody]:
    """Combined rope + soft-body step with shared attachment solving.

    The body steps first, then the rope's constraint rounds run with the
    attachments projecting both sides.  A sutured particle's velocity is
    rebuilt from its whole-step displacement — the same position-history
    velocity the rope nodes use — so projection corrections do not pile
    impulses on top of the body's internal velocity and pump the coupling.
    """
    from . import softbody

    start = body.positions.copy()
    new_body = softbody.step(body, dt, gravity)
    before = new_body.positions.copy()
    bound = []
    for a in attachments:
        bound.append(Attachment(node=a.node, anchor=a.anchor,
                                body=None if a.body is None else new_body,
                                particle=a.particle,
                                compliance=a.compliance))
    new_rope = rope_step(rope, dt, gravity, bound)
    moved = np.any(new_body.positions != before, axis=1)
    new_body.velocities[moved] = \
        (new_body.positions[moved] - start[moved]) / dt
    return new_rope, new_body


# ------------------------------------------------------------------ file io

def save_rope(rope: Rope, path) -> None:
    """Write the ``format rope 1`` structured-text node-position file."""
    lines = ["format rope 1",
             f"nodes {rope.node_count}",
             f"rest_length {float(rope.rest_length)!r}",
             f"radius {float(rope.radius)!r}",
             f"bend {float(rope.bend_stiffness)!r}",
             f"iterations {rope.iterations}",
             f"friction {float(rope.friction)!r}",
             "[nodes]"]
    for n in range(rope.node_count):
        x, y, z = (repr(float(c)) for c in rope.positions[n])
        lines.append(f"{x} {y} {z} {float(rope.masses[n])!r} "
                     f"{int(rope.pinned[n])}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write rope file {path}: {exc}") from exc


def load_rope(path) -> Rope:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = [ln.strip() for ln in fh]
    except OSError as exc:
        raise IoError(f"cannot read rope file {path}: {exc}") from exc
    lines = [ln for ln in raw if ln and not ln.startswith("#")]
    if not lines or lines[0] != "format rope 1":
        raise IoError(f"{path}: not a 'format rope 1' file")
    try:
        header: dict[str, str] = {}
        pos = 1
        while pos < len(lines) and lines[pos] != "[nodes]":
            key, value = lines[pos].split(None, 1)
            header[key] = value
            pos += 1
        count = int(header["nodes"])
        pos += 1
        positions = np.empty((count, 3))
        masses = np.empty(count)
        pinned = np.zeros(count, dtype=bool)
        for n in range(count):
            vals = lines[pos + n].split()
            positions[n] = [float(v) for v in vals[:3]]
            masses[n] = float(vals[3])
            pinned[n] = bool(int(vals[4]))
        return Rope.from_positions(
            positions, rest_length=float(header["rest_length"]),
            radius=float(header["radius"]), bend_stiffness=float(header["bend"]),
            iterations=int(header["iterations"]),
            friction=float(header.get("friction", 0.3)),
            masses=masses, pinned=pinned)
    except (ValueError, KeyError, IndexError) as exc:
        raise IoError(f"{path}: malformed rope file: {exc}") from exc
