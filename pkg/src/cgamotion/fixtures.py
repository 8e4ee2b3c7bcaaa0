"""Deterministic fixture builders: models, tracks, bodies, ropes.

Everything here is seeded or closed-form so the committed fixture files
under fixtures/ can be regenerated bit-identically (`cgamotion fixtures
write`).  Tests and the verify suites build the same objects in memory.
"""

from __future__ import annotations

import numpy as np

from . import cga
from .skinning import PoseSample, SkinBinding, SkinnedModel


def random_rigid_motor(rng) -> cga.Multivector:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return cga.translator(rng.uniform(-2, 2, 3)) * \
        cga.rotor(axis, rng.uniform(-np.pi, np.pi))


def random_pose(rng, bones: int) -> PoseSample:
    return PoseSample([random_rigid_motor(rng) for _ in range(bones)])


def random_model(rng, vertices: int, bones: int,
                 max_influences: int = 3) -> SkinnedModel:
    """Randomized skinned model with a random rigid bind pose."""
    rest = rng.uniform(-2.0, 2.0, size=(vertices, 3))
    infl, wts = [], []
    for _ in range(vertices):
        k = int(rng.integers(1, max_influences + 1))
        idx = rng.choice(bones, size=min(k, bones), replace=False)
        w = rng.uniform(0.1, 1.0, size=idx.size)
        infl.append(idx)
        wts.append(w / w.sum())
    bind = random_pose(rng, bones)
    offsets = [cga.reverse(bind.motor(n)) for n in range(bones)]
    binding = SkinBinding(influences=infl, weights=wts, bind_offsets=offsets)
    parents = np.arange(-1, bones - 1)
    return SkinnedModel(rest_vertices=rest, binding=binding, bone_count=bones,
                        parents=parents, bind_pose=bind)


# ------------------------------------------------------------------ arm model

def arm_model() -> SkinnedModel:
    """Three-bone arm: a tube of vertex rings along +x with smooth weights.

    Bone n sits at joint x = n with bind motor translator((n,0,0)); vertex
    weights ramp linearly between neighboring bones along the tube.
    """
    bones = 3
    rings_per_bone = 3
    ring = np.array([[0.0, 0.2, 0.0], [0.0, 0.0, 0.2],
                     [0.0, -0.2, 0.0], [0.0, 0.0, -0.2]])
    rest, infl, wts, edges = [], [], [], []
    for n in range(bones):
        for r in range(rings_per_bone):
            x = n + (r + 1) / (rings_per_bone + 1)
            frac = x - n
            base = len(rest)
            for k in range(4):
                rest.append(ring[k] + [x, 0.0, 0.0])
                if n + 1 < bones and frac > 0.5:
                    t = 2.0 * (frac - 0.5)
                    infl.append([n, n + 1])
                    wts.append([1.0 - t, t])
                else:
                    infl.append([n])
                    wts.append([1.0])
                edges.append([base + k, base + (k + 1) % 4])
            if base >= 4:
                edges.extend([base - 4 + k, base + k] for k in range(4))
    bind = PoseSample([cga.translator([n, 0.0, 0.0]) for n in range(bones)])
    offsets = [cga.reverse(bind.motor(n)) for n in range(bones)]
    binding = SkinBinding(influences=infl, weights=wts, bind_offsets=offsets)
    return SkinnedModel(rest_vertices=np.array(rest), binding=binding,
                        bone_count=bones, parents=np.array([-1, 0, 1]),
                        bind_pose=bind, edges=np.array(edges))


def smooth_track(frames: int = 120, rate: float = 60.0):
    """Smooth sinusoidal arm animation for the keyframe codec fixture."""
    from .anim_codec import PoseTrack
    return PoseTrack(frame_rate=rate,
                     frames=[arm_wave_pose(np.pi * k / (frames - 1))
                             for k in range(frames)])


# ------------------------------------------------------------------ walk rig

WALK_BONES = 30
_WALK_MOVING = list(range(9))      # root + 8 limb bones swing while walking


def _walk_joints() -> np.ndarray:
    joints = np.zeros((WALK_BONES, 3))
    joints[0] = (0.0, 1.0, 0.0)                    # pelvis/root
    limb = [(0.25, 1.40, 0.0), (-0.25, 1.40, 0.0),   # shoulders
            (0.55, 1.15, 0.0), (-0.55, 1.15, 0.0),   # elbows
            (0.15, 0.85, 0.0), (-0.15, 0.85, 0.0),   # hips
            (0.18, 0.45, 0.0), (-0.18, 0.45, 0.0)]   # knees
    joints[1:9] = limb
    for n in range(9, WALK_BONES):                 # quasi-static extras
        joints[n] = (0.35 * np.sin(0.7 * n), 0.9 + 0.02 * n,
                     0.35 * np.cos(0.7 * n))
    return joints


def walk_model() -> SkinnedModel:
    """30-bone rig with four single-influence vertices per bone."""
    joints = _walk_joints()
    offs = np.array([[0.12, 0.0, 0.0], [-0.12, 0.0, 0.0],
                     [0.0, 0.12, 0.0], [0.0, 0.0, 0.12]])
    rest, infl, wts = [], [], []
    for n in range(WALK_BONES):
        for o in offs:
            rest.append(joints[n] + o)
            infl.append([n])
            wts.append([1.0])
    bind = PoseSample([cga.translator(j) for j in joints])
    offsets = [cga.reverse(bind.motor(n)) for n in range(WALK_BONES)]
    binding = SkinBinding(influences=infl, weights=wts, bind_offsets=offsets)
    parents = np.full(WALK_BONES, 0, dtype=int)
    parents[0] = -1
    return SkinnedModel(rest_vertices=np.array(rest), binding=binding,
                        bone_count=WALK_BONES, parents=parents, bind_pose=bind)


def walk_pose(frame: int, rate: float = 60.0) -> PoseSample:
    """Walking-in-place pose: bobbing root, swinging limbs, still extras.

    The 21 extra bones carry a sub-threshold flutter (~2e-4 model units) so
    delta encoding at the default 1e-3 change threshold never resends them.
    """
    t = frame / rate
    joints = _walk_joints()
    bob = np.array([0.0, 0.03 * np.sin(2.0 * np.pi * 1.0 * t), 0.0])
    # world motor composes with the bind offset translator(-joint), so a
    # bone that swings about its (bobbed) joint is T(joint + bob) R
    motors = [cga.translator(joints[0] + bob)]
    axes = ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])
    for i, n in enumerate(range(1, 9)):
        amp = 0.25 + 0.02 * i
        phase = 2.0 * np.pi * 0.5 * t + (np.pi if i % 2 else 0.0) + 0.3 * (i // 2)
        swing = amp * np.sin(phase)
        motors.append(cga.translator(joints[n] + bob) *
                      cga.rotor(axes[i % 2], swing))
    for n in range(9, WALK_BONES):
        flutter = 2e-4 * np.sin(2.0 * np.pi * 0.3 * t + n)
        motors.append(cga.translator(joints[n] + [0.0, flutter, 0.0]))
    return PoseSample(motors)


def walk_track(frames: int = 240, rate: float = 60.0):
    from .anim_codec import PoseTrack
    return PoseTrack(frame_rate=rate,
                     frames=[walk_pose(k, rate) for k in range(frames)])


def arm_wave_pose(phase: float) -> PoseSample:
    """Arm pose bending shoulder/elbow/wrist by sinusoidal angles.

    Forward kinematics down the chain: each bone's world motor is its
    parent's world motor times the local offset and joint rotation, so at
    phase with all angles zero the pose equals the bind pose.
    """
    angles = [0.20 * np.sin(phase),
              0.30 * np.sin(phase + 0.8),
              0.45 * np.sin(phase + 1.6)]
    step = cga.translator([1.0, 0.0, 0.0])
    motors = [cga.rotor([0, 0, 1], angles[0])]
    for a in angles[1:]:
        motors.append(motors[-1] * step * cga.rotor([0, 0, 1], a))
    return PoseSample(motors)


# ------------------------------------------------------------- soft bodies

def _grid_points(shape, spacing, origin) -> np.ndarray:
    nx, ny, nz = shape
    pts = [(origin[0] + i * spacing, origin[1] + j * spacing,
            origin[2] + k * spacing)
           for i in range(nx) for j in range(ny) for k in range(nz)]
    return np.array(pts, dtype=float)


def jello_body(drop_height: float = 1.0):
    """4x4x4 particle cube above a ground plane, one shape-match cluster.

    Stiffness 0.5 with damping 0.1 settles a unit-scale perturbation well
    inside 200 steps at 60 Hz; the drop height leaves room for a visible
    bounce before the cube comes to rest on the ground.
    """
    from .softbody import ParticleBody

    rest = _grid_points((4, 4, 4), 0.25, (-0.375, -0.375, -0.375))
    body = ParticleBody.from_rest(rest, np.full(64, 0.05), alpha=0.5,
                                  damping=0.1, ground_y=0.0)
    body.positions[:, 1] += drop_height
    return body


def bar_body():
    """8x4x4 particle bar, one cluster; tearing splits it when stretched.

    Even grid dimensions keep every particle a finite distance from the
    rest centroid, so the tear criterion — goal deviation relative to rest
    distance — separates a displaced end slab cleanly from the rest.
    """
    from .softbody import ParticleBody

    rest = _grid_points((8, 4, 4), 0.2, (-0.7, -0.3, -0.3))
    return ParticleBody.from_rest(rest, np.full(128, 0.05), alpha=0.5,
                                  damping=0.1)


def jello_drop_stream(frames: int = 240, dt: float = 1.0 / 60.0,
                      residual_threshold: float = 1e-2) -> dict:
    """Drop the jello cube and stream one summary message per frame.

    Returns byte totals for the summary stream against the raw baseline of
    three float32 coordinates per particle per frame, plus the worst
    receiver-side reconstruction error, and per-frame rows for reporting.
    The residual threshold sits above the resting-contact goal deviation
    (about g*dt^2/alpha), so a body at rest on the ground ships motor-only
    frames instead of re-sending its equilibrium squash every frame.
    """
    from . import net_sync, softbody

    body = jello_body()
    rest_centroid = body.clusters[0].rest_centroid
    gravity = np.array([0.0, -9.81, 0.0])
    raw_per_frame = 12 * body.particle_count
    rows = []
    bytes_stream = 0
    max_error = 0.0
    for k in range(frames):
        body = softbody.step(body, dt, gravity)
        summary = softbody.body_summary(
            body, residual_threshold=residual_threshold)
        msg = net_sync.encode_softbody(summary, seq=k,
                                       timestamp_ms=int(round(k * dt * 1e3)))
        sent = net_sync.HEADER.size + len(msg.payload)
        bytes_stream += sent
        recon = softbody.apply_summary(body.rest_positions, rest_centroid,
                                       net_sync.decode(msg))
        err = float(np.max(np.linalg.norm(recon - body.positions, axis=1)))
        max_error = max(max_error, err)
        rows.append({"frame": k, "bytes": sent,
                     "residuals": len(summary.residual_indices),
                     "error": err,
                     "energy": softbody.deformation_energy(body)})
    bytes_raw = raw_per_frame * frames
    return {"frames": frames, "bytes_stream": bytes_stream,
            "bytes_raw": bytes_raw, "ratio": bytes_stream / bytes_raw,
            "max_error": max_error, "rows": rows}


# ------------------------------------------------------------------- ropes

def hanging_rope(nodes: int = 30, tilt: float = 0.15):
    """Rope pinned at the top, starting as a slightly tilted straight line."""
    from .rope import Rope

    rest = 0.05
    direction = np.array([np.sin(tilt), -np.cos(tilt), 0.0])
    positions = np.arange(nodes)[:, None] * (rest * direction)
    pinned = np.zeros(nodes, dtype=bool)
    pinned[0] = True
    return Rope.from_positions(positions, rest_length=rest, radius=0.01,
                               bend_stiffness=0.1, iterations=20,
                               masses=np.full(nodes, 0.02), pinned=pinned)


def _resample_polyline(points: np.ndarray, count: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], count)
    out = np.empty((count, 3))
    for axis in range(3):
        out[:, axis] = np.interp(targets, s, points[:, axis])
    return out


def trefoil_rope(nodes: int = 70, scale: float = 0.25):
    """Open trefoil: the closed curve cut open, with straight pull tails.

    The gap and tails sit where the closed curve would close up, so pulling
    the two ends apart tightens the crossings into a true overhand knot.
    The collision radius is sized well under the rest clearance between
    non-adjacent segments, leaving the solver headroom to keep the knot
    from passing through itself while it tightens.
    """
    from .rope import Rope

    t = np.linspace(0.35, 2.0 * np.pi - 0.35, 1200)
    curve = scale * np.stack([np.sin(t) + 2.0 * np.sin(2.0 * t),
                              np.cos(t) - 2.0 * np.cos(2.0 * t),
                              -np.sin(3.0 * t)], axis=1)
    tail_len = 2.4 * scale
    head_dir = curve[0] - curve[1]
    head_dir /= np.linalg.norm(head_dir)
    tail_dir = curve[-1] - curve[-2]
    tail_dir /= np.linalg.norm(tail_dir)
    head = curve[0] + np.linspace(tail_len, 0.0, 220)[:, None] * head_dir
    tail = curve[-1] + np.linspace(0.0, tail_len, 220)[:, None] * tail_dir
    poly = np.vstack([head, curve[1:-1], tail])
    positions = _resample_polyline(poly, nodes)
    rest = float(np.linalg.norm(np.diff(positions, axis=0), axis=1).mean())
    return Rope.from_positions(positions, rest_length=rest, radius=0.022,
                               bend_stiffness=0.05, iterations=25,
                               masses=np.full(nodes, 0.01))


def pull_knot(rope, steps: int = 1000, dt: float = 1.0 / 120.0,
              pull_speed: float | None = None, travel: float = 1.5,
              compliance: float = 5e-3):
    """Tighten a knot by dragging both rope ends outward on soft anchors.

    Each anchor advances along its end tangent until it has covered
    ``travel``, then holds, so the remaining steps settle the tightened
    knot instead of stretching the rope without bound.  The anchors are
    compliant, keeping tension finite once the knot locks up, and their
    per-step advance stays under half the collision radius, the
    fixture-wide max-speed bound.
    """
    from .rope import Attachment, rope_step

    if pull_speed is None:
        pull_speed = 0.4 * rope.radius / dt
    if pull_speed * dt > 0.5 * rope.radius:
        raise ValueError("pull speed breaks the max-speed bound")
    n = rope.node_count
    dir0 = rope.positions[0] - rope.positions[1]
    dir0 /= np.linalg.norm(dir0)
    dir1 = rope.positions[-1] - rope.positions[-2]
    dir1 /= np.linalg.norm(dir1)
    a0 = Attachment(node=0, anchor=rope.positions[0].copy(),
                    compliance=compliance)
    a1 = Attachment(node=n - 1, anchor=rope.positions[-1].copy(),
                    compliance=compliance)
    moved = 0.0
    for _ in range(steps):
        advance = min(pull_speed * dt, travel - moved)
        if advance > 0.0:
            moved += advance
            a0.anchor = a0.anchor + advance * dir0
            a1.anchor = a1.anchor + advance * dir1
        rope = rope_step(rope, dt, (0.0, 0.0, 0.0), (a0, a1))
    return rope


# ---------------------------------------------------------- golden messages

GOLDEN_HEX = {
    'snapshot': (
        '0101000000000000001e0000000000803f4a6c3d3fff7f000000000000000082'
        'a900000000ff7f00000000000061eae98600000000ff7f0000000000009f15e9'
        '8600000000e17f0000000084fa79d0a09c43040a02dd7fdc05000000001334d1'
        '9e00000000717f0000000018f415f3cdb6d70635015f7fa10c000000002a141f'
        'b800000000a87e0000000084ed98f07dd99f054002817e7a13000000004f15e7'
        'db00000000ff7f0000000000007eff95a2bbe10000ff7f0000000000001decde'
        'a02ee90000ff7f00000000000016e2269f5bfb0000ff7f00000000000021e669'
        '9db80f0000ff7f00000000000057f6aa9bb11c0000ff7f000000000000180bec'
        '992a1c0000ff7f000000000000a11a3398650e0000ff7f000000000000a41d7c'
        '96dbf90000ff7f000000000000b612c49434e80000ff7f000000000000fbfe09'
        '93bfe10000ff7f000000000000bbeb4a9184e90000ff7f00000000000003e28c'
        '8fdcfb0000ff7f00000000000066e6d18d27100000ff7f000000000000d3f61a'
        '8cd91c0000ff7f000000000000910b638afa1b0000ff7f000000000000de1aa8'
        '88f20d0000ff7f000000000000891dea865bf90000ff7f0000000000004f122b'
        '85e5e70000ff7f00000000000079fe6f83c4e10000ff7f0000000000005bebb8'
        '81dce90000ff7f000000000000f2e101805efc0000'
    ),
    'delta': (
        '0202000000c800000001000000ff0100000000803fd65b363fff7f0000000000'
        '00000098a300000000a77f000000009bf69ae901806c09a601987f250a000000'
        '009020d88100000000227f000000002df1ebced596440cb905037fd80f000000'
        '00243e0c9d00000000747e0000000030ecb0f206b2380c1602437e0115000000'
        '003f1a5ab400000000d17d000000007ae81bf0bdd5e707f902937dc718000000'
        '003018f4d800000000'
    ),
    'softbody': (
        '0303000000320000000000803f0ad7a338ff7f06000000feff06000180020000'
        '0000b0b81e3c01000d0024feff7f61ff'
    ),
    'ack': (
        '0404000000e70300000200000001'
    ),
}


def golden_messages():
    """Canonical wire messages pinned byte-for-byte by committed hex files.

    Everything here is closed-form deterministic; re-encoding must always
    reproduce the committed fixtures exactly.
    """
    from . import net_sync, softbody

    first = walk_pose(0)
    later = walk_pose(12)
    snapshot = net_sync.encode_snapshot(first, seq=1, timestamp_ms=0)
    delta = net_sync.encode_delta(first, later, threshold=1e-3,
                                  base_seq=1, seq=2, timestamp_ms=200)
    body = jello_body(drop_height=0.0)
    body.positions[13] += np.array([0.0, 0.01, 0.0])
    summary = softbody.body_summary(body, residual_threshold=5e-3)
    soft = net_sync.encode_softbody(summary, seq=3, timestamp_ms=50)
    ack = net_sync.encode_ack(ack_seq=2, flags=net_sync.ACK_FLAG_REQUEST_SNAPSHOT,
                              seq=4, timestamp_ms=999)
    return [("snapshot", snapshot), ("delta", delta),
            ("softbody", soft), ("ack", ack)]
