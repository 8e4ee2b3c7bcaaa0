"""Self-check suites that re-derive the engine's contracts with oracles.

Each suite returns a list of :class:`Check` records carrying the measured
value next to its bound so failures are diagnosable from the printed report
alone.  The oracles here are deliberately independent of the code under
test: blade products come from a from-scratch bitmask expansion, skinning
goes through 4x4 homogeneous matrices built straight from the generating
parameters, and the wire goldens are pinned hex strings.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import anim_codec, cga, fixtures, net_sync, rope, softbody
from .errors import UnknownSuite

_GRAVITY = (0.0, -9.81, 0.0)
_ZERO_G = (0.0, 0.0, 0.0)

_RELATIONS = {
    "<=": lambda m, b: m <= b,
    ">=": lambda m, b: m >= b,
    "==": lambda m, b: m == b,
}


@dataclasses.dataclass(frozen=True)
class Check:
    """One verified invariant: its measured value against the bound."""

    name: str
    passed: bool
    measured: float
    bound: float
    relation: str = "<="


def _check(name: str, measured, bound, relation: str = "<=") -> Check:
    measured = float(measured)
    bound = float(bound)
    return Check(name, _RELATIONS[relation](measured, bound),
                 measured, bound, relation)


def format_check(check: Check) -> str:
    status = "PASS" if check.passed else "FAIL"
    return (f"{status} {check.name} measured={check.measured!r} "
            f"{check.relation} {check.bound!r}")


# ------------------------------------------------------------------ algebra

def _oracle_blade_product(a: int, b: int) -> tuple[int, float]:
    """Product of two basis blades by explicit transposition counting.

    Walks the factors of ``b`` from lowest to highest, counts the swaps
    needed to sort each into ``a``, and contracts repeated factors with
    the metric signature.  Independent of the table builder in `cga`.
    """
    sign = 1.0
    acc = a
    for i in range(5):
        bit = 1 << i
        if not b & bit:
            continue
        higher = acc >> (i + 1)
        sign *= (-1.0) ** bin(higher).count("1")
        if acc & bit:
            sign *= cga._SIGNATURE[i]
            acc ^= bit
        else:
            acc |= bit
    return acc, sign


def _random_versor(rng) -> cga.Multivector:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    motor = (cga.translator(rng.uniform(-2.0, 2.0, 3))
             * cga.rotor(axis, rng.uniform(-np.pi, np.pi))
             * cga.dilator(float(np.exp(rng.uniform(-0.7, 0.7)))))
    return motor


_KIND_MAKERS = {
    cga.VersorKind.TRANSLATOR:
        lambda rng: cga.translator(rng.uniform(0.2, 2.0, 3) * _signs(rng)),
    cga.VersorKind.ROTOR:
        lambda rng: cga.rotor(_unit(rng), rng.uniform(0.2, 2.9)
                              * float(rng.choice([-1.0, 1.0]))),
    cga.VersorKind.DILATOR:
        lambda rng: cga.dilator(float(np.exp(rng.uniform(0.1, 0.7)
                                             * rng.choice([-1.0, 1.0])))),
    cga.VersorKind.MOTOR:
        lambda rng: (cga.translator(rng.uniform(0.2, 2.0, 3) * _signs(rng))
                     * cga.rotor(_unit(rng), rng.uniform(0.2, 2.9)
                                 * float(rng.choice([-1.0, 1.0])))),
}


def _unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _signs(rng) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=3)


def verify_algebra() -> list[Check]:
    started = time.perf_counter()
    checks = []

    # Full product table against the transposition-count oracle, exact.
    worst = 0.0
    for a in range(cga.DIM):
        for b in range(cga.DIM):
            got = (cga.blade(a) * cga.blade(b)).coeffs
            idx, sign = _oracle_blade_product(a, b)
            want = np.zeros(cga.DIM)
            want[idx] = sign
            worst = max(worst, float(np.max(np.abs(got - want))))
    checks.append(_check("algebra.blade-products", worst, 0.0))

    # Random versor sandwiches keep embedded points on the null cone.
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(10_000):
        v = _random_versor(rng)
        x = cga.apply_versor(v, cga.up(rng.uniform(-3.0, 3.0, 3)))
        worst = max(worst, abs((x * x).scalar))
    checks.append(_check("algebra.null-cone", worst, 1e-9))

    # Blending two versors of one kind stays inside that kind's blade
    # pattern for every t on the sample grid.
    rng = np.random.default_rng(77)
    kinds = sorted(_KIND_MAKERS, key=lambda k: k.name)
    mismatches = 0
    off_pattern = 0.0
    for trial in range(1000):
        kind = kinds[trial % len(kinds)]
        make = _KIND_MAKERS[kind]
        a, b = make(rng), make(rng)
        support = (np.abs(a.coeffs) > 0.0) | (np.abs(b.coeffs) > 0.0)
        for t in (0.0, 0.25, 0.5, 0.75, 1.0):
            m = cga.interpolate_versor(a, b, t)
            if cga.classify_versor(m) is not kind:
                mismatches += 1
            off_pattern = max(off_pattern,
                              float(np.linalg.norm(m.coeffs[~support])))
    checks.append(_check("algebra.blend-kind-mismatches", mismatches, 0.0))
    checks.append(_check("algebra.blend-off-pattern", off_pattern, 1e-6))

    checks.append(_check("algebra.runtime-seconds",
                         time.perf_counter() - started, 10.0))
    return checks


# ----------------------------------------------------------------- skinning

def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]],
                   [k[2], 0.0, -k[0]],
                   [-k[1], k[0], 0.0]])
    return (np.cos(angle) * np.eye(3) + np.sin(angle) * kx
            + (1.0 - np.cos(angle)) * np.outer(k, k))


def _random_rig(rng, bones: int):
    """Paired world transforms: CGA motors and 4x4 matrices from one set
    of (axis, angle, translation) parameters per bone."""
    from .skinning import PoseSample

    motors, mats = [], []
    for _ in range(bones):
        axis = _unit(rng)
        angle = rng.uniform(-np.pi, np.pi)
        t = rng.uniform(-1.5, 1.5, 3)
        motors.append(cga.translator(t) * cga.rotor(axis, angle))
        m = np.eye(4)
        m[:3, :3] = _rodrigues(axis, angle)
        m[:3, 3] = t
        mats.append(m)
    return PoseSample(motors), mats


def verify_skinning() -> list[Check]:
    from .skinning import SkinBinding, SkinnedModel, skin_model

    started = time.perf_counter()
    rng = np.random.default_rng(404)
    vertices, bones = 200, 4

    rest = rng.uniform(-2.0, 2.0, size=(vertices, 3))
    infl, wts = [], []
    for _ in range(vertices):
        w = rng.uniform(0.1, 1.0, size=bones)
        infl.append(np.arange(bones))
        wts.append(w / w.sum())
    bind_pose, bind_mats = _random_rig(rng, bones)
    offsets = [cga.reverse(bind_pose.motor(n)) for n in range(bones)]
    inv_bind = []
    for m in bind_mats:
        inv = np.eye(4)
        inv[:3, :3] = m[:3, :3].T
        inv[:3, 3] = -m[:3, :3].T @ m[:3, 3]
        inv_bind.append(inv)
    model = SkinnedModel(
        rest_vertices=rest,
        binding=SkinBinding(influences=infl, weights=wts, bind_offsets=offsets),
        bone_count=bones,
        parents=np.full(bones, -1),
        bind_pose=bind_pose,
    )

    bind_err = float(np.max(np.abs(skin_model(model, bind_pose) - rest)))

    rest_h = np.concatenate([rest, np.ones((vertices, 1))], axis=1)
    weights = np.stack(wts)
    worst = 0.0
    for _ in range(60):
        pose, pose_mats = _random_rig(rng, bones)
        got = skin_model(model, pose)
        want = np.zeros((vertices, 3))
        for n in range(bones):
            moved = rest_h @ (pose_mats[n] @ inv_bind[n]).T
            want += weights[:, n, None] * moved[:, :3]
        worst = max(worst, float(np.max(np.abs(got - want))))

    return [
        _check("skinning.matrix-blend-equivalence", worst, 1e-6),
        _check("skinning.bind-pose-identity", bind_err, 1e-9),
        _check("skinning.runtime-seconds",
               time.perf_counter() - started, 5.0),
    ]


# -------------------------------------------------------------------- codec

def verify_codec() -> list[Check]:
    model = fixtures.arm_model()
    track = fixtures.smooth_track()
    keys = anim_codec.reduce_keyframes(track, model, 1e-3)
    report = anim_codec.codec_report(track, keys, model)
    budget = 0.5 * track.frame_count * track.bone_count

    violations = 0
    previous = None
    for eps in (4e-3, 2e-3, 1e-3, 5e-4, 2.5e-4):
        count = anim_codec.reduce_keyframes(track, model, eps).total_keys
        if previous is not None and count < previous:
            violations += 1
        previous = count

    return [
        _check("codec.max-vertex-error", report["max_vertex_error"], 1e-3),
        _check("codec.key-budget", keys.total_keys, budget),
        _check("codec.compression-ratio", report["compression_ratio"], 2.0,
               ">="),
        _check("codec.epsilon-monotonicity-violations", violations, 0.0),
    ]


# ---------------------------------------------------------------------- net

def verify_net() -> list[Check]:
    started = time.perf_counter()
    track = fixtures.walk_track()
    model = fixtures.walk_model()

    cfg = net_sync.HarnessConfig(frames=60, snapshot_every=1,
                                 link=net_sync.LinkConfig(seed=3))
    clean = net_sync.bandwidth_report(
        net_sync.run_pose_session(track, model, cfg))

    cfg = net_sync.HarnessConfig(
        frames=240,
        link=net_sync.LinkConfig(latency_ms=40.0, jitter_ms=10.0,
                                 loss_probability=0.10, seed=7))
    lossy = net_sync.bandwidth_report(
        net_sync.run_pose_session(track, model, cfg))

    stale = 0
    for name, msg in fixtures.golden_messages():
        if msg.to_bytes().hex() != fixtures.GOLDEN_HEX[name]:
            stale += 1

    return [
        _check("net.snapshot-payload-ratio", clean["payload_ratio"], 4.0,
               "=="),
        _check("net.lossy-protocol-ratio", lossy["protocol_ratio"], 4.0,
               ">="),
        _check("net.lossy-rendered-error", lossy["rendered_error_max"], 5e-2),
        _check("net.stale-goldens", stale, 0.0),
        _check("net.runtime-seconds", time.perf_counter() - started, 30.0),
    ]


# ------------------------------------------------------------------ physics

def verify_physics() -> list[Check]:
    checks = []

    # A rigidly moved rest body is a fixed point of the step.
    body = fixtures.jello_body(drop_height=0.0)
    body.ground_y = None
    r0 = _rodrigues(np.array([0.3, 0.9, -0.2]), 1.1)
    body.positions = body.rest_positions @ r0.T + np.array([0.4, 1.2, -0.6])
    before = body.positions.copy()
    stepped = softbody.step(body, 1.0 / 60.0, _ZERO_G)
    checks.append(_check("softbody.rigid-invariance",
                         np.max(np.abs(stepped.positions - before)), 1e-9))

    # A squashed corner falls back under 1e-3 deviation within 200 steps.
    body = fixtures.jello_body(drop_height=0.0)
    body.ground_y = None
    body.positions[0] += np.array([0.12, -0.08, 0.05])
    deviation = np.inf
    for _ in range(200):
        body = softbody.step(body, 1.0 / 60.0, _ZERO_G)
        state = softbody.shape_match(body, 0)
        goals = softbody._goals(body, body.clusters[0], state.rotation,
                                state.centroid)
        deviation = float(np.max(np.linalg.norm(body.positions - goals,
                                                axis=1)))
        if deviation < 1e-3:
            break
    checks.append(_check("softbody.perturbation-recovery", deviation, 1e-3))

    # The center handle translates the body without deforming it.
    body = fixtures.jello_body(drop_height=0.0)
    body.ground_y = None
    target = np.array([1.5, 2.0, -0.7])
    body = softbody.set_center_target(body, target, 4.0)
    for _ in range(200):
        body = softbody.step(body, 1.0 / 60.0, _ZERO_G)
    centroid = body.masses @ body.positions / body.masses.sum()
    checks.append(_check("softbody.center-handle-deformation",
                         softbody.deformation_energy(body), 1e-9))
    checks.append(_check("softbody.center-handle-distance",
                         np.linalg.norm(centroid - target), 1e-3))

    # Hanging rope settles with at most 1% segment strain.
    line = fixtures.hanging_rope()
    for _ in range(600):
        line = rope.rope_step(line, 1.0 / 240.0, _GRAVITY)
    seg = np.linalg.norm(np.diff(line.positions, axis=0), axis=1)
    strain = float(np.max(np.abs(seg - line.rest_length)) / line.rest_length)
    checks.append(_check("rope.hanging-strain", strain, 0.01))

    # Pulling the knotted fixture must not pass rope through rope.
    knot = fixtures.pull_knot(fixtures.trefoil_rope())
    integrity = rope.knot_integrity_check(knot)
    checks.append(_check("rope.knot-min-distance",
                         integrity["min_distance"], integrity["radius"],
                         ">="))

    # A rigid suture holds rope node and body particle together.
    line = fixtures.hanging_rope(tilt=0.0)
    body = fixtures.jello_body(drop_height=0.0)
    top = int(np.argmax(body.rest_positions[:, 1]))
    body.positions += (line.positions[-1] - body.positions[top])
    body.positions[:, 1] -= 0.02
    body.ground_y = None
    att = rope.tie_attachment(line, line.node_count - 1, (body, top))
    for _ in range(600):
        line, body = rope.suture_step(line, body, [att], 1.0 / 240.0,
                                      _GRAVITY)
    sep = float(np.linalg.norm(line.positions[-1] - body.positions[top]))
    checks.append(_check("rope.suture-separation", sep, 1e-3))

    return checks


SUITES = {
    "algebra": verify_algebra,
    "skinning": verify_skinning,
    "codec": verify_codec,
    "net": verify_net,
    "physics": verify_physics,
}


def run_suite(name: str) -> list[Check]:
    try:
        suite = SUITES[name]
    except KeyError:
        raise UnknownSuite(
            f"unknown suite {name!r}; choose from {', '.join(sorted(SUITES))}"
        ) from None
    return suite()
