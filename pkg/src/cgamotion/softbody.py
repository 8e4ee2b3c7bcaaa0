"""Shape-matching particle soft bodies with handles, grabs, and tearing.

Particles integrate with semi-implicit Euler; each cluster pulls its
members toward the best-fit rigid placement of their rest shape through a
velocity correction of strength alpha.  The best-fit rotation comes from a
deterministic iterative polar extraction seeded by the previous frame's
result, so trajectories are reproducible and temporally coherent.

All mutating operations return a new body; bodies are never edited in
place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cga
from .cga import Multivector
from .errors import (
    DegenerateCluster,
    IndexOutOfRange,
    InvalidDt,
    IoError,
)

# the update-step tolerance must sit well under the 1e-8 rotation accuracy
# contract: convergence is linear near half-turn rotations, so the last
# accepted step bounds the remaining error only up to a modest factor
_EXTRACT_ITERATIONS = 64
_EXTRACT_TOL = 1e-12


@dataclass
class Cluster:
    indices: np.ndarray               # particle indices, sorted ascending
    rest_centroid: np.ndarray         # mass-weighted mean of rest positions
    seed_rotation: np.ndarray = field(
        default_factory=lambda: np.eye(3))   # previous frame's extraction


@dataclass
class ParticleBody:
    positions: np.ndarray             # (N, 3)
    velocities: np.ndarray            # (N, 3)
    masses: np.ndarray                # (N,)
    pinned: np.ndarray                # (N,) bool
    rest_positions: np.ndarray        # (N, 3)
    clusters: list[Cluster]
    alpha: float                      # shape-matching stiffness in (0, 1]
    damping: float                    # velocity retention loss in [0, 1)
    center_target: np.ndarray | None = None
    center_strength: float = 0.0
    grabs: dict[int, tuple[np.ndarray, float]] = field(default_factory=dict)
    ground_y: float | None = None
    spheres: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        self.pinned = np.asarray(self.pinned, dtype=bool)
        self.rest_positions = np.asarray(self.rest_positions, dtype=float)
        n = self.positions.shape[0]
        if self.positions.shape != (n, 3) or self.rest_positions.shape != (n, 3) \
                or self.velocities.shape != (n, 3) or self.masses.shape != (n,) \
                or self.pinned.shape != (n,):
            raise ValueError("particle arrays must agree on (N, 3)/(N,) shapes")
        if np.any(self.masses <= 0.0):
            raise ValueError("particle masses must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("stiffness alpha must be in (0, 1]")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must be in [0, 1)")
        for k, cl in enumerate(self.clusters):
            cl.indices = np.asarray(cl.indices, dtype=int)
            if cl.indices.size < 3:
                raise DegenerateCluster(
                    f"cluster {k} has {cl.indices.size} particles, needs >= 3")
            if np.any(cl.indices < 0) or np.any(cl.indices >= n):
                raise IndexOutOfRange(f"cluster {k} references invalid particles")
            m = self.masses[cl.indices]
            want = m @ self.rest_positions[cl.indices] / m.sum()
            cl.rest_centroid = np.asarray(cl.rest_centroid, dtype=float)
            if np.max(np.abs(cl.rest_centroid - want)) > 1e-12:
                raise ValueError(
                    f"cluster {k} rest centroid disagrees with its particles")
            spread = self.rest_positions[cl.indices] - want
            sv = np.linalg.svd(spread.T * m, compute_uv=False)
            if sv[1] <= 1e-12 * max(1.0, sv[0]):
                raise DegenerateCluster(
                    f"cluster {k} rest shape is collinear; rotation extraction "
                    "is ill-posed")

    @property
    def particle_count(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def from_rest(cls, rest_positions, masses, *, alpha, damping,
                  pinned=None, clusters=None, ground_y=None, spheres=None):
        """Body at rest: positions = rest, zero velocity, one cluster."""
        rest = np.asarray(rest_positions, dtype=float)
        masses = np.asarray(masses, dtype=float)
        n = rest.shape[0]
        if pinned is None:
            pinned = np.zeros(n, dtype=bool)
        if clusters is None:
            # same expression as _make_cluster so that a body definition
            # reloaded from disk reproduces the centroid bit-for-bit
            clusters = [Cluster(indices=np.arange(n),
                                rest_centroid=masses @ rest / masses.sum())]
        return cls(positions=rest.copy(), velocities=np.zeros((n, 3)),
                   masses=masses, pinned=np.asarray(pinned, dtype=bool),
                   rest_positions=rest, clusters=clusters, alpha=alpha,
                   damping=damping, ground_y=ground_y,
                   spheres=list(spheres or []))


def _copy_body(body: ParticleBody) -> ParticleBody:
    return ParticleBody(
        positions=body.positions.copy(), velocities=body.velocities.copy(),
        masses=body.masses, pinned=body.pinned,
        rest_positions=body.rest_positions,
        clusters=[Cluster(cl.indices.copy(), cl.rest_centroid.copy(),
                          cl.seed_rotation.copy()) for cl in body.clusters],
        alpha=body.alpha, damping=body.damping,
        center_target=None if body.center_target is None
        else body.center_target.copy(),
        center_strength=body.center_strength,
        grabs={i: (t.copy(), s) for i, (t, s) in body.grabs.items()},
        ground_y=body.ground_y,
        spheres=[(c.copy(), r) for c, r in body.spheres])


# -------------------------------------------------------------- shape match

@dataclass
class ShapeMatchState:
    """Best-fit rigid placement of a cluster's rest shape."""

    rotor: Multivector                # unit rotor form of the rotation
    rotation: np.ndarray              # (3, 3) proper rotation matrix
    centroid: np.ndarray              # mass-weighted current centroid
    scale: float | None = None        # optional uniform dilation factor


def _rodrigues(omega: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(omega))
    if angle < 1e-300:
        return np.eye(3)
    k = omega / angle
    kx = np.array([[0.0, -k[2], k[1]],
                   [k[2], 0.0, -k[0]],
                   [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def _extract_rotation(a: np.ndarray, seed: np.ndarray) -> np.ndarray:
    """Closest proper rotation to a 3x3 moment matrix, iteratively.

    Fixed-point refinement of the polar factor: rotate by the axis that
    aligns the current frame's columns with the target's, until the
    residual torque vanishes.  Deterministic, warm-started, and robust for
    rank-2 (planar) moments where direct division would blow up.
    """
    r = seed.copy()
    for _ in range(_EXTRACT_ITERATIONS):
        torque = (np.cross(r[:, 0], a[:, 0]) + np.cross(r[:, 1], a[:, 1]) +
                  np.cross(r[:, 2], a[:, 2]))
        trace = float(r[:, 0] @ a[:, 0] + r[:, 1] @ a[:, 1] + r[:, 2] @ a[:, 2])
        omega = torque / (abs(trace) + 1e-12)
        if float(np.linalg.norm(omega)) < _EXTRACT_TOL:
            break
        r = _rodrigues(omega) @ r
    return r


def _quaternion_from_matrix(r: np.ndarray) -> np.ndarray:
    """(w, x, y, z) from a proper rotation matrix, largest-pivot branch."""
    t = float(np.trace(r))
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        return np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                         (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    i = int(np.argmax(np.diag(r)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
    q = np.empty(4)
    q[0] = (r[k, j] - r[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (r[j, i] + r[i, j]) / s
    q[1 + k] = (r[k, i] + r[i, k]) / s
    return q


def _cluster_moment(body: ParticleBody, cl: Cluster):
    idx = cl.indices
    m = body.masses[idx]
    centroid = m @ body.positions[idx] / m.sum()
    p = body.positions[idx] - centroid
    q = body.rest_positions[idx] - cl.rest_centroid
    a = (p * m[:, None]).T @ q
    return a, centroid, q, m


def shape_match(body: ParticleBody, cluster: int,
                with_scale: bool = False) -> ShapeMatchState:
    """Best-fit rotation + centroid of one cluster's current placement."""
    if not 0 <= cluster < len(body.clusters):
        raise IndexOutOfRange(f"no cluster {cluster}")
    cl = body.clusters[cluster]
    a, centroid, q, m = _cluster_moment(body, cl)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] <= 1e-12 * max(1.0, sv[0]):
        raise DegenerateCluster(
            f"cluster {cluster} moment matrix is rank-deficient "
            f"(singular values {sv.tolist()})")
    rotation = _extract_rotation(a, cl.seed_rotation)
    rotor = cga.rotor_from_quaternion(*_quaternion_from_matrix(rotation))
    scale = None
    if with_scale:
        rest_trace = float(np.sum(m[:, None] * q * q))
        scale = float(np.trace(rotation.T @ a)) / rest_trace
    return ShapeMatchState(rotor=rotor, rotation=rotation,
                           centroid=centroid, scale=scale)


def _goals(body: ParticleBody, cl: Cluster, rotation: np.ndarray,
           centroid: np.ndarray) -> np.ndarray:
    rest = body.rest_positions[cl.indices] - cl.rest_centroid
    return rest @ rotation.T + centroid


# ---------------------------------------------------------------- stepping

def step(body: ParticleBody, dt: float, gravity) -> ParticleBody:
    """One fixed-dt update; see the module docstring for the pipeline.

    Order: gravity, handle/grab velocity corrections, integrate positions,
    per-cluster shape-matching pull (velocity space, stiffness alpha),
    damping, ground/sphere projection, pinned restore.
    """
    if not (np.isfinite(dt) and dt > 0.0):
        raise InvalidDt(f"dt must be positive and finite, got {dt!r}")
    gravity = np.asarray(gravity, dtype=float)
    out = _copy_body(body)
    live = ~out.pinned
    x, v = out.positions, out.velocities

    v[live] += gravity * dt
    if out.center_target is not None and out.center_strength > 0.0:
        m = out.masses
        centroid = m @ x / m.sum()
        v[live] += out.center_strength * (out.center_target - centroid)
    for i, (target, strength) in out.grabs.items():
        if not out.pinned[i]:
            v[i] += strength * (target - x[i])
    x[live] += v[live] * dt

    for k, cl in enumerate(out.clusters):
        state = shape_match(out, k)
        goals = _goals(out, cl, state.rotation, state.centroid)
        pull = (out.alpha / dt) * (goals - x[cl.indices])
        pull[out.pinned[cl.indices]] = 0.0
        v[cl.indices] += pull
        cl.seed_rotation = state.rotation

    v[live] *= 1.0 - out.damping

    if out.ground_y is not None:
        low = live & (x[:, 1] < out.ground_y)
        x[low, 1] = out.ground_y
        v[low, 1] = np.maximum(v[low, 1], 0.0)
    for center, radius in out.spheres:
        d = x - center
        dist = np.linalg.norm(d, axis=1)
        inside = live & (dist < radius)
        if np.any(inside):
            n = d[inside] / np.maximum(dist[inside], 1e-12)[:, None]
            x[inside] = center + n * radius
            inward = np.sum(v[inside] * n, axis=1)
            v[inside] -= np.minimum(inward, 0.0)[:, None] * n

    x[out.pinned] = body.positions[out.pinned]
    v[out.pinned] = 0.0
    return out


# ------------------------------------------------------------------ handles

def grab_particle(body: ParticleBody, index: int, target,
                  strength: float) -> ParticleBody:
    """Velocity servo pulling one particle toward a target point."""
    if not 0 <= index < body.particle_count:
        raise IndexOutOfRange(f"no particle {index}")
    if strength < 0.0:
        raise ValueError("grab strength must be non-negative")
    out = _copy_body(body)
    out.grabs[index] = (np.asarray(target, dtype=float), float(strength))
    return out


def release_grab(body: ParticleBody, index: int) -> ParticleBody:
    if index not in body.grabs:
        raise IndexOutOfRange(f"particle {index} is not grabbed")
    out = _copy_body(body)
    del out.grabs[index]
    return out


def set_center_target(body: ParticleBody, target,
                      strength: float) -> ParticleBody:
    """Whole-body servo: uniform correction toward a centroid target.

    The same velocity is added to every particle, so the correction moves
    the body without deforming it (shape deviation stays identically what
    it was).
    """
    if strength < 0.0:
        raise ValueError("center strength must be non-negative")
    out = _copy_body(body)
    out.center_target = np.asarray(target, dtype=float)
    out.center_strength = float(strength)
    return out


def clear_center_target(body: ParticleBody) -> ParticleBody:
    out = _copy_body(body)
    out.center_target = None
    out.center_strength = 0.0
    return out


# ------------------------------------------------------------------ tearing

def tear(body: ParticleBody, threshold: float) -> ParticleBody:
    """Split over-strained particles out of their clusters.

    Per cluster (lowest cluster then lowest particle index first), every
    particle whose distance to its shape-matching goal exceeds threshold
    times its rest distance to the cluster centroid leaves the cluster.
    Leavers of one cluster form a new cluster when at least 3 remain
    non-degenerate together; otherwise they become free particles.  A
    remainder shrunk below 3 particles is also freed.
    """
    if threshold <= 1.0:
        raise ValueError("tear threshold must exceed 1")
    out = _copy_body(body)
    kept: list[Cluster] = []
    born: list[Cluster] = []
    for k, cl in enumerate(out.clusters):
        state = shape_match(body, k)
        goals = _goals(out, cl, state.rotation, state.centroid)
        rest_dist = np.linalg.norm(
            out.rest_positions[cl.indices] - cl.rest_centroid, axis=1)
        deviation = np.linalg.norm(out.positions[cl.indices] - goals, axis=1)
        leaving = deviation > threshold * np.maximum(rest_dist, 1e-12)
        if not np.any(leaving):
            kept.append(cl)
            continue
        remain = _make_cluster(out, cl.indices[~leaving], cl.seed_rotation)
        if remain is not None:
            kept.append(remain)
        new = _make_cluster(out, cl.indices[leaving], cl.seed_rotation)
        if new is not None:
            born.append(new)
    out.clusters = kept + born
    return out


def _make_cluster(body: ParticleBody, indices: np.ndarray,
                  seed: np.ndarray) -> Cluster | None:
    """Cluster over the given particles, or None when too few/degenerate."""
    indices = np.sort(np.asarray(indices, dtype=int))
    if indices.size < 3:
        return None
    m = body.masses[indices]
    centroid = m @ body.rest_positions[indices] / m.sum()
    spread = body.rest_positions[indices] - centroid
    sv = np.linalg.svd(spread.T * m, compute_uv=False)
    if sv[1] <= 1e-12 * max(1.0, sv[0]):
        return None
    return Cluster(indices=indices, rest_centroid=centroid,
                   seed_rotation=seed.copy())


# ------------------------------------------------------------------ metrics

def deformation_energy(body: ParticleBody) -> float:
    """Mass-weighted squared deviation from all cluster goals."""
    total = 0.0
    for k, cl in enumerate(body.clusters):
        state = shape_match(body, k)
        goals = _goals(body, cl, state.rotation, state.centroid)
        dev = body.positions[cl.indices] - goals
        total += float(np.sum(body.masses[cl.indices] * np.sum(dev * dev, axis=1)))
    return total


def body_summary(body: ParticleBody, cluster: int = 0,
                 residual_threshold: float = 1e-6,
                 with_scale: bool = False):
    """Wire summary of one cluster: rigid motor + sparse residuals.

    The motor maps rest space to world (translate to the current centroid,
    rotate about it, un-translate the rest centroid); residuals are the
    per-particle corrections past the rigid prediction, kept only where
    they exceed the threshold.
    """
    from .net_sync import SoftBodySummary

    cl = body.clusters[cluster]
    state = shape_match(body, cluster, with_scale=with_scale)
    motor = (cga.translator(state.centroid) * state.rotor *
             cga.translator(-cl.rest_centroid))
    predicted = _goals(body, cl, state.rotation, state.centroid)
    if state.scale is not None:
        predicted = (predicted - state.centroid) * state.scale + state.centroid
    resid = body.positions[cl.indices] - predicted
    keep = np.linalg.norm(resid, axis=1) > residual_threshold
    return SoftBodySummary(
        motor=motor, scale=state.scale,
        residual_indices=cl.indices[keep], residuals=resid[keep],
        particle_count=body.particle_count)


def apply_summary(rest_positions: np.ndarray, rest_centroid: np.ndarray,
                  summary) -> np.ndarray:
    """Receiver-side reconstruction of particle positions from a summary."""
    mats = cga.sandwich_matrix(summary.motor)
    emb = cga.up_raw(np.asarray(rest_positions, dtype=float))
    world = cga.down_raw(emb @ mats.T)
    if summary.scale is not None:
        center = cga.down_raw(
            (cga.up_raw(np.asarray(rest_centroid)[None, :]) @ mats.T))[0]
        world = (world - center) * summary.scale + center
    out = world.copy()
    out[summary.residual_indices] += summary.residuals
    return out


# ------------------------------------------------------------------ file io

def save_body(body: ParticleBody, path) -> None:
    """Write the ``format body 1`` structured-text body definition."""
    lines = ["format body 1",
             f"particles {body.particle_count}",
             f"alpha {float(body.alpha)!r}",
             f"damping {float(body.damping)!r}"]
    if body.ground_y is not None:
        lines.append(f"ground {float(body.ground_y)!r}")
    lines.append("[particles]")
    for i in range(body.particle_count):
        x, y, z = (repr(float(c)) for c in body.rest_positions[i])
        lines.append(f"{x} {y} {z} {float(body.masses[i])!r} "
                     f"{int(body.pinned[i])}")
    lines.append("[clusters]")
    for cl in body.clusters:
        lines.append(" ".join(str(int(i)) for i in cl.indices))
    if body.spheres:
        lines.append("[spheres]")
        for center, radius in body.spheres:
            cx, cy, cz = (repr(float(c)) for c in center)
            lines.append(f"{cx} {cy} {cz} {float(radius)!r}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write body file {path}: {exc}") from exc


def load_body(path) -> ParticleBody:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = [ln.strip() for ln in fh]
    except OSError as exc:
        raise IoError(f"cannot read body file {path}: {exc}") from exc
    lines = [ln for ln in raw if ln and not ln.startswith("#")]
    if not lines or lines[0] != "format body 1":
        raise IoError(f"{path}: not a 'format body 1' file")
    try:
        header: dict[str, str] = {}
        pos = 1
        while pos < len(lines) and not lines[pos].startswith("["):
            key, value = lines[pos].split(None, 1)
            header[key] = value
            pos += 1
        count = int(header["particles"])
        alpha = float(header["alpha"])
        damping = float(header["damping"])
        ground = float(header["ground"]) if "ground" in header else None
        if lines[pos] != "[particles]":
            raise IoError(f"{path}: expected [particles] section")
        pos += 1
        rest = np.empty((count, 3))
        masses = np.empty(count)
        pinned = np.zeros(count, dtype=bool)
        for i in range(count):
            vals = lines[pos + i].split()
            rest[i] = [float(v) for v in vals[:3]]
            masses[i] = float(vals[3])
            pinned[i] = bool(int(vals[4]))
        pos += count
        clusters = None
        spheres = []
        while pos < len(lines):
            if lines[pos] == "[clusters]":
                pos += 1
                clusters = []
                while pos < len(lines) and not lines[pos].startswith("["):
                    idx = np.array([int(v) for v in lines[pos].split()])
                    m = masses[idx]
                    clusters.append(Cluster(
                        indices=idx, rest_centroid=m @ rest[idx] / m.sum()))
                    pos += 1
            elif lines[pos] == "[spheres]":
                pos += 1
                while pos < len(lines) and not lines[pos].startswith("["):
                    vals = [float(v) for v in lines[pos].split()]
                    spheres.append((np.array(vals[:3]), vals[3]))
                    pos += 1
            else:
                raise IoError(f"{path}: unexpected line {lines[pos]!r}")
    except (ValueError, KeyError, IndexError) as exc:
        raise IoError(f"{path}: malformed body file: {exc}") from exc
    return ParticleBody.from_rest(rest, masses, alpha=alpha, damping=damping,
                                  pinned=pinned, clusters=clusters,
                                  ground_y=ground, spheres=spheres)
