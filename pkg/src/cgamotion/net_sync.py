"""Quantized motor wire protocol, lossy-link simulation, jitter buffer.

Pose state travels as 8 int16 components per bone — the motor subalgebra
{1, e12, e13, e23, e1inf, e2inf, e3inf, e123inf} — against a declared
float32 4x4-matrix baseline of 64 bytes per bone per frame, which is where
the 4x payload ratio comes from (16 vs 64 bytes).  Exact byte layouts live
in docs/wire.md and are pinned by golden hex fixtures.

All multi-byte fields are little-endian.  The rotor-part quantization
scale is fixed (components of a unit motor's Euclidean-even part cannot
leave [-1, 1]); the translation-part scale adapts per message.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import cga
from .cga import Multivector
from .errors import (
    BaseMissing,
    BoneCountMismatch,
    EmptyBuffer,
    MalformedMessage,
    NotAMotor,
)
from .skinning import PoseSample
from .tolerances import TOL_CLASSIFY

KIND_SNAPSHOT = 1
KIND_DELTA = 2
KIND_SOFTBODY = 3
KIND_ACK = 4
_KIND_NAMES = {KIND_SNAPSHOT: "snapshot", KIND_DELTA: "delta",
               KIND_SOFTBODY: "softbody", KIND_ACK: "ack"}

HEADER = struct.Struct("<BII")          # kind, sequence, timestamp_ms
QSTEP = 32767
ACK_FLAG_REQUEST_SNAPSHOT = 0x01

# Blade rows of the 8 motor components in the 32-coefficient array; the
# einf-carrying components weigh equally on their (e+, e-) index pairs.
_MC_SINGLE = [cga.B_SCALAR, cga.B_E12, cga.B_E13, cga.B_E23]
_MC_PLUS = [cga.B_E1P, cga.B_E2P, cga.B_E3P, cga.B_E123P]
_MC_MINUS = [cga.B_E1M, cga.B_E2M, cga.B_E3M, cga.B_E123M]
_MC_OFF = np.ones(cga.DIM, dtype=bool)
_MC_OFF[_MC_SINGLE + _MC_PLUS + _MC_MINUS] = False


@dataclass
class WireMessage:
    kind: int
    sequence: int
    timestamp_ms: int
    payload: bytes

    def to_bytes(self) -> bytes:
        return HEADER.pack(self.kind, self.sequence, self.timestamp_ms) + \
            self.payload

    @property
    def size(self) -> int:
        return HEADER.size + len(self.payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WireMessage":
        if len(data) < HEADER.size:
            raise MalformedMessage(f"{len(data)} bytes is shorter than a header")
        kind, seq, ts = HEADER.unpack_from(data)
        if kind not in _KIND_NAMES:
            raise MalformedMessage(f"unknown message kind {kind}")
        return cls(kind=kind, sequence=seq, timestamp_ms=ts,
                   payload=data[HEADER.size:])


# ------------------------------------------------------------- quantization

def motor_components(coeffs: np.ndarray) -> np.ndarray:
    """Project a motor's 32 coefficients onto its 8 wire components.

    Raises NotAMotor when mass sits outside the motor subalgebra (e.g. a
    dilation's e+e- blade, or einf-pair asymmetry), since those components
    are not representable on the wire.
    """
    coeffs = np.atleast_2d(coeffs)
    norm = np.maximum(np.linalg.norm(coeffs, axis=1), 1e-30)
    off = np.linalg.norm(coeffs[:, _MC_OFF], axis=1)
    asym = np.linalg.norm(coeffs[:, _MC_PLUS] - coeffs[:, _MC_MINUS], axis=1)
    bad = (off + asym) > TOL_CLASSIFY * norm
    if np.any(bad):
        raise NotAMotor(
            f"bone(s) {np.nonzero(bad)[0][:8].tolist()} are not rigid motors "
            f"(off-subalgebra mass beyond {TOL_CLASSIFY:g})"
        )
    comps = np.empty((coeffs.shape[0], 8))
    comps[:, :4] = coeffs[:, _MC_SINGLE]
    comps[:, 4:] = 0.5 * (coeffs[:, _MC_PLUS] + coeffs[:, _MC_MINUS])
    return comps


def components_to_motor(comps: np.ndarray) -> np.ndarray:
    """Inverse of motor_components: (N,8) components -> (N,32) coefficients."""
    comps = np.atleast_2d(comps)
    out = np.zeros((comps.shape[0], cga.DIM))
    out[:, _MC_SINGLE] = comps[:, :4]
    out[:, _MC_PLUS] = comps[:, 4:]
    out[:, _MC_MINUS] = comps[:, 4:]
    return out


def quantize_components(comps: np.ndarray) -> tuple[np.ndarray, float, float]:
    """int16 grid for (N,8) components; returns (q, rotor_scale, trans_scale)."""
    rotor_scale = 1.0
    trans_scale = float(np.float32(max(float(np.max(np.abs(comps[:, 4:]), initial=0.0)),
                                       1e-9)))
    q = np.empty(comps.shape, dtype=np.int16)
    q[:, :4] = np.clip(np.rint(comps[:, :4] * (QSTEP / rotor_scale)),
                       -QSTEP, QSTEP)
    q[:, 4:] = np.clip(np.rint(comps[:, 4:] * (QSTEP / trans_scale)),
                       -QSTEP, QSTEP)
    return q, rotor_scale, trans_scale


def dequantize_components(q: np.ndarray, rotor_scale: float,
                          trans_scale: float) -> np.ndarray:
    comps = np.empty(q.shape)
    comps[:, :4] = q[:, :4] * (rotor_scale / QSTEP)
    comps[:, 4:] = q[:, 4:] * (trans_scale / QSTEP)
    return comps


def _renormalized_pose(coeffs: np.ndarray) -> PoseSample:
    arr = np.stack([cga.normalize_versor_raw(c) for c in coeffs])
    return PoseSample(arr, check=False)


# ------------------------------------------------------------------ encoding

def encode_snapshot(pose: PoseSample, seq: int, timestamp_ms: int) -> WireMessage:
    """Full pose: bone count u32, two f32 scales, then 8 int16 per bone."""
    comps = motor_components(pose.coeffs)
    q, rotor_scale, trans_scale = quantize_components(comps)
    payload = struct.pack("<Iff", pose.bone_count, rotor_scale, trans_scale)
    payload += q.astype("<i2").tobytes()
    return WireMessage(KIND_SNAPSHOT, seq, timestamp_ms, payload)


def encode_delta(prev: PoseSample, curr: PoseSample, threshold: float,
                 base_seq: int, seq: int, timestamp_ms: int) -> WireMessage:
    """Changed bones only, against the base snapshot pose ``prev``.

    A bone is resent when any of its 8 components moved more than
    ``threshold`` from the base.  No scale fields are emitted when nothing
    changed (payload is just base sequence + zero bitmask).
    """
    if prev.bone_count != curr.bone_count:
        raise BoneCountMismatch(
            f"delta base has {prev.bone_count} bones, current has {curr.bone_count}"
        )
    pc = motor_components(prev.coeffs)
    cc = motor_components(curr.coeffs)
    changed = np.max(np.abs(cc - pc), axis=1) > threshold
    mask = np.packbits(changed, bitorder="little").tobytes()
    mask = mask.ljust((curr.bone_count + 7) // 8, b"\x00")
    payload = struct.pack("<I", base_seq) + mask
    if np.any(changed):
        q, rotor_scale, trans_scale = quantize_components(cc[changed])
        payload += struct.pack("<ff", rotor_scale, trans_scale)
        payload += q.astype("<i2").tobytes()
    return WireMessage(KIND_DELTA, seq, timestamp_ms, payload)


def encode_ack(ack_seq: int, flags: int, seq: int, timestamp_ms: int) -> WireMessage:
    return WireMessage(KIND_ACK, seq, timestamp_ms,
                       struct.pack("<IB", ack_seq, flags))


@dataclass
class SoftBodySummary:
    """Cluster best-fit transform plus per-particle correction vectors."""

    motor: Multivector                    # rigid part (unit motor)
    scale: float | None                   # optional uniform dilation factor
    residual_indices: np.ndarray          # (K,) particle indices
    residuals: np.ndarray                 # (K, 3) position corrections
    particle_count: int


def encode_softbody(summary: SoftBodySummary, seq: int,
                    timestamp_ms: int) -> WireMessage:
    """Cluster motor + optional dilation + sparse quantized residuals."""
    comps = motor_components(summary.motor.coeffs[None, :])
    q, rotor_scale, trans_scale = quantize_components(comps)
    payload = struct.pack("<ff", rotor_scale, trans_scale)
    payload += q.astype("<i2").tobytes()
    flags = 1 if summary.scale is not None else 0
    payload += struct.pack("<B", flags)
    if summary.scale is not None:
        payload += struct.pack("<f", float(summary.scale))
    residuals = np.asarray(summary.residuals, dtype=float).reshape(-1, 3)
    resid_scale = float(np.float32(max(float(np.max(np.abs(residuals),
                                                    initial=0.0)), 1e-9)))
    payload += struct.pack("<fH", resid_scale, len(residuals))
    for idx, r in zip(summary.residual_indices, residuals):
        qr = np.clip(np.rint(r * (QSTEP / resid_scale)), -QSTEP, QSTEP)
        payload += struct.pack("<H3h", int(idx), *qr.astype(int))
    return WireMessage(KIND_SOFTBODY, seq, timestamp_ms, payload)


# ------------------------------------------------------------------ decoding

@dataclass
class DecodedSnapshot:
    sequence: int
    timestamp_ms: int
    pose: PoseSample


@dataclass
class DecodedSoftBody:
    sequence: int
    timestamp_ms: int
    motor: Multivector
    scale: float | None
    residual_indices: np.ndarray
    residuals: np.ndarray


@dataclass
class AckInfo:
    sequence: int
    timestamp_ms: int
    ack_seq: int
    flags: int

    @property
    def wants_snapshot(self) -> bool:
        return bool(self.flags & ACK_FLAG_REQUEST_SNAPSHOT)


def _unpack_exact(fmt: str, payload: bytes, offset: int):
    s = struct.Struct(fmt)
    if offset + s.size > len(payload):
        raise MalformedMessage(
            f"payload truncated: need {offset + s.size} bytes, have {len(payload)}"
        )
    return s.unpack_from(payload, offset), offset + s.size


def decode(msg: WireMessage, base: DecodedSnapshot | None = None):
    """Decode any wire message; motors are renormalized to unit magnitude.

    DELTA messages need ``base``, the decoded snapshot whose sequence the
    delta names; a stale or absent base raises BaseMissing (the caller
    should answer with a snapshot-request ACK).
    """
    p = msg.payload
    if msg.kind == KIND_SNAPSHOT:
        (bones, rotor_scale, trans_scale), off = _unpack_exact("<Iff", p, 0)
        expect = off + 16 * bones
        if len(p) != expect:
            raise MalformedMessage(
                f"snapshot payload is {len(p)} bytes, expected {expect}"
            )
        q = np.frombuffer(p, dtype="<i2", offset=off).reshape(bones, 8)
        comps = dequantize_components(q, rotor_scale, trans_scale)
        pose = _renormalized_pose(components_to_motor(comps))
        return DecodedSnapshot(msg.sequence, msg.timestamp_ms, pose)
    if msg.kind == KIND_DELTA:
        (base_seq,), off = _unpack_exact("<I", p, 0)
        if base is None or base.sequence != base_seq:
            have = "nothing" if base is None else f"sequence {base.sequence}"
            raise BaseMissing(f"delta needs base {base_seq}, decoder holds {have}")
        bones = base.pose.bone_count
        nmask = (bones + 7) // 8
        if len(p) < off + nmask:
            raise MalformedMessage("delta payload shorter than its bitmask")
        changed = np.unpackbits(
            np.frombuffer(p, dtype=np.uint8, count=nmask, offset=off),
            bitorder="little")[:bones].astype(bool)
        off += nmask
        coeffs = base.pose.coeffs.copy()
        count = int(changed.sum())
        if count:
            (rotor_scale, trans_scale), off = _unpack_exact("<ff", p, off)
            expect = off + 16 * count
            if len(p) != expect:
                raise MalformedMessage(
                    f"delta payload is {len(p)} bytes, expected {expect}"
                )
            q = np.frombuffer(p, dtype="<i2", offset=off).reshape(count, 8)
            comps = dequantize_components(q, rotor_scale, trans_scale)
            # only resent bones need renormalizing; untouched bones keep the
            # base state bit-for-bit
            fresh = components_to_motor(comps)
            coeffs[changed] = np.stack(
                [cga.normalize_versor_raw(c) for c in fresh])
        elif len(p) != off:
            raise MalformedMessage("empty delta carries trailing bytes")
        pose = PoseSample(coeffs, check=False)
        return DecodedSnapshot(msg.sequence, msg.timestamp_ms, pose)
    if msg.kind == KIND_SOFTBODY:
        (rotor_scale, trans_scale), off = _unpack_exact("<ff", p, 0)
        q = np.frombuffer(p, dtype="<i2", count=8, offset=off).reshape(1, 8) \
            if len(p) >= off + 16 else None
        if q is None:
            raise MalformedMessage("softbody payload shorter than its motor")
        off += 16
        (flags,), off = _unpack_exact("<B", p, off)
        scale = None
        if flags & 0x01:
            (scale,), off = _unpack_exact("<f", p, off)
        (resid_scale, count), off = _unpack_exact("<fH", p, off)
        expect = off + 8 * count
        if len(p) != expect:
            raise MalformedMessage(
                f"softbody payload is {len(p)} bytes, expected {expect}"
            )
        idxs = np.empty(count, dtype=int)
        resid = np.empty((count, 3))
        for i in range(count):
            (pi, rx, ry, rz), off = _unpack_exact("<H3h", p, off)
            idxs[i] = pi
            resid[i] = np.array([rx, ry, rz]) * (resid_scale / QSTEP)
        comps = dequantize_components(q, rotor_scale, trans_scale)
        motor = Multivector._wrap(
            cga.normalize_versor_raw(components_to_motor(comps)[0]))
        return DecodedSoftBody(msg.sequence, msg.timestamp_ms, motor,
                               scale, idxs, resid)
    if msg.kind == KIND_ACK:
        (ack_seq, flags), off = _unpack_exact("<IB", p, 0)
        if len(p) != off:
            raise MalformedMessage("ack payload has trailing bytes")
        return AckInfo(msg.sequence, msg.timestamp_ms, ack_seq, flags)
    raise MalformedMessage(f"unknown message kind {msg.kind}")


# ------------------------------------------------------------ simulated link

@dataclass
class LinkConfig:
    latency_ms: float = 40.0
    jitter_ms: float = 10.0
    loss_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.latency_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency and jitter must be non-negative")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss probability must be within [0, 1]")


@dataclass
class Delivery:
    deliver_ms: float
    send_ms: float
    order: int
    message: WireMessage


@dataclass
class DeliveryTrace:
    delivered: list[Delivery]
    dropped: list[tuple[float, WireMessage]]


def link_transmit(link: LinkConfig, messages) -> DeliveryTrace:
    """Push (send_ms, WireMessage) pairs through the lossy link.

    Per message, in send order: one Bernoulli drop draw, then one jitter
    draw (so the two random streams stay aligned regardless of outcomes);
    delivery happens at send + latency + uniform(-jitter, +jitter), never
    before the send time.  The delivered list is sorted by delivery time
    with ties broken by send order, so reordering is possible and stable.
    """
    rng = np.random.default_rng(link.seed)
    delivered, dropped = [], []
    last_send = None
    for order, (send_ms, msg) in enumerate(messages):
        if last_send is not None and send_ms < last_send:
            raise ValueError("send times must be non-decreasing")
        last_send = send_ms
        drop = rng.random() < link.loss_probability
        jitter = rng.uniform(-link.jitter_ms, link.jitter_ms)
        if drop:
            dropped.append((send_ms, msg))
            continue
        deliver = send_ms + max(0.0, link.latency_ms + jitter)
        delivered.append(Delivery(deliver, send_ms, order, msg))
    delivered.sort(key=lambda d: (d.deliver_ms, d.order))
    return DeliveryTrace(delivered=delivered, dropped=dropped)


# -------------------------------------------------------------- jitter buffer

@dataclass
class JitterBuffer:
    """Time-delayed pose render buffer fed by decoded snapshots/deltas."""

    delay_ms: float
    states: dict[int, PoseSample] = field(default_factory=dict)
    last_rendered: PoseSample | None = None

    def insert(self, timestamp_ms: int, pose: PoseSample) -> None:
        self.states[int(timestamp_ms)] = pose

    def evict_older_than(self, cutoff_ms: float) -> None:
        for ts in [t for t in self.states if t < cutoff_ms]:
            del self.states[ts]


def jitter_buffer_render(buffer: JitterBuffer, now_ms: float) -> PoseSample:
    """Interpolated pose at (now - delay); clamps to the newest state.

    Picks the buffered states bracketing the render time and blends each
    bone with interpolate_versor; when the render time is past the newest
    buffered state the newest is held as-is (no extrapolation), and times
    before the oldest return the oldest.
    """
    if not buffer.states:
        raise EmptyBuffer("no snapshots buffered")
    target = now_ms - buffer.delay_ms
    times = sorted(buffer.states)
    pos = int(np.searchsorted(times, target))
    if pos == 0:
        out = buffer.states[times[0]]
    elif pos >= len(times):
        out = buffer.states[times[-1]]
    elif times[pos] == target:
        out = buffer.states[times[pos]]
    else:
        t0, t1 = times[pos - 1], times[pos]
        a, b = buffer.states[t0], buffer.states[t1]
        t = (target - t0) / (t1 - t0)
        out = PoseSample([cga.interpolate_versor(a.motor(n), b.motor(n), t)
                          for n in range(a.bone_count)], check=False)
    buffer.last_rendered = out
    return out


# ------------------------------------------------------------ session harness

@dataclass
class HarnessConfig:
    """Knobs for a simulated pose-streaming session on one shared clock."""

    frame_rate: float = 60.0
    frames: int = 240
    snapshot_every: int = 30
    delta_threshold: float = 1e-3
    link: LinkConfig = field(default_factory=LinkConfig)
    render_delay_ms: float | None = None   # None -> 2x snapshot interval
    ack_every_ms: float = 500.0
    request_min_gap_ms: float = 250.0
    send_empty_deltas: bool = False

    @property
    def snapshot_interval_ms(self) -> float:
        return self.snapshot_every * 1000.0 / self.frame_rate

    @property
    def effective_render_delay_ms(self) -> float:
        if self.render_delay_ms is not None:
            return self.render_delay_ms
        return 2.0 * self.snapshot_interval_ms


class Sender:
    """Streams one pose per tick as periodic snapshots plus gated deltas."""

    def __init__(self, config: HarnessConfig):
        self.config = config
        self.seq = 0
        self.base: DecodedSnapshot | None = None
        self.snapshot_requested = False
        self.skipped_empty = 0

    def on_ack(self, info: AckInfo) -> None:
        if info.wants_snapshot:
            self.snapshot_requested = True

    def tick(self, frame: int, now_ms: int, pose: PoseSample) -> list[WireMessage]:
        cadence = self.config.snapshot_every
        want_snapshot = (frame % cadence == 0) or self.snapshot_requested \
            or self.base is None
        self.seq += 1
        if want_snapshot:
            msg = encode_snapshot(pose, self.seq, now_ms)
            # Keep the decoded form so delta thresholds compare against
            # exactly what the receiver reconstructed.
            self.base = decode(msg)
            self.snapshot_requested = False
            return [msg]
        msg = encode_delta(self.base.pose, pose, self.config.delta_threshold,
                           self.base.sequence, self.seq, now_ms)
        nmask = (pose.bone_count + 7) // 8
        if len(msg.payload) == 4 + nmask and not self.config.send_empty_deltas:
            self.seq -= 1
            self.skipped_empty += 1
            return []
        return [msg]


class Receiver:
    """Rebuilds poses from the wire into a jitter buffer; asks for help."""

    def __init__(self, config: HarnessConfig):
        self.config = config
        self.buffer = JitterBuffer(delay_ms=config.effective_render_delay_ms)
        self.base: DecodedSnapshot | None = None
        self.seq = 0
        self.highest_seen = 0
        self.last_ack_ms = -1e18
        self.last_request_ms = -1e18
        self.stale_deltas = 0
        self.missing_base = 0

    def _ack(self, now_ms: float, flags: int) -> WireMessage:
        self.seq += 1
        return encode_ack(self.highest_seen, flags, self.seq, int(now_ms))

    def handle(self, msg: WireMessage, now_ms: float) -> list[WireMessage]:
        out: list[WireMessage] = []
        self.highest_seen = max(self.highest_seen, msg.sequence)
        if msg.kind == KIND_SNAPSHOT:
            snap = decode(msg)
            if self.base is None or snap.sequence > self.base.sequence:
                self.base = snap
            self.buffer.insert(snap.timestamp_ms, snap.pose)
            return out
        if msg.kind == KIND_DELTA:
            base_seq = struct.unpack_from("<I", msg.payload)[0]
            if self.base is not None and base_seq < self.base.sequence:
                self.stale_deltas += 1       # predates the snapshot we hold
                return out
            try:
                state = decode(msg, self.base)
            except BaseMissing:
                self.missing_base += 1
                if now_ms - self.last_request_ms >= self.config.request_min_gap_ms:
                    self.last_request_ms = now_ms
                    out.append(self._ack(now_ms, ACK_FLAG_REQUEST_SNAPSHOT))
                return out
            self.buffer.insert(state.timestamp_ms, state.pose)
            return out
        return out

    def tick(self, now_ms: float) -> list[WireMessage]:
        if now_ms - self.last_ack_ms >= self.config.ack_every_ms:
            self.last_ack_ms = now_ms
            return [self._ack(now_ms, 0)]
        return []

    def render(self, now_ms: float) -> PoseSample | None:
        try:
            return jitter_buffer_render(self.buffer, now_ms)
        except EmptyBuffer:
            return None


class _LinkStream:
    """One direction of the link, drawing drop/jitter per message in order."""

    def __init__(self, link: LinkConfig, seed: int):
        self.link = link
        self.rng = np.random.default_rng(seed)
        self.in_flight: list[tuple[float, int, WireMessage]] = []
        self.order = 0
        self.dropped = 0
        self.sent = 0
        self.sent_bytes = 0

    def send(self, send_ms: float, msg: WireMessage) -> None:
        self.sent += 1
        self.sent_bytes += msg.size
        drop = self.rng.random() < self.link.loss_probability
        jitter = self.rng.uniform(-self.link.jitter_ms, self.link.jitter_ms)
        if drop:
            self.dropped += 1
            return
        deliver = send_ms + max(0.0, self.link.latency_ms + jitter)
        self.in_flight.append((deliver, self.order, msg))
        self.order += 1

    def due(self, now_ms: float) -> list[WireMessage]:
        ready = sorted(m for m in self.in_flight if m[0] <= now_ms)
        self.in_flight = [m for m in self.in_flight if m[0] > now_ms]
        return [m[2] for m in ready]


def truth_pose(track, t_ms: float) -> PoseSample:
    """Track state at an arbitrary time, blending the bracketing frames."""
    f = t_ms * track.frame_rate / 1000.0
    f = min(max(f, 0.0), len(track.frames) - 1)
    k0 = int(np.floor(f))
    k1 = min(k0 + 1, len(track.frames) - 1)
    u = f - k0
    a, b = track.frames[k0], track.frames[k1]
    if u <= 0.0 or k0 == k1:
        return a
    return PoseSample([cga.interpolate_versor(a.motor(n), b.motor(n), u)
                       for n in range(a.bone_count)], check=False)


@dataclass
class MetricsRow:
    time_ms: int
    bytes_protocol: int
    bytes_baseline: int
    rendered_error: float
    dropped: int
    delivered: int


@dataclass
class SessionResult:
    config: HarnessConfig
    rows: list[MetricsRow]
    per_kind: dict[str, dict[str, int]]
    motor_payload_bytes: int
    baseline_bytes: int
    protocol_bytes: int
    frames_sent: int
    messages_sent: int
    messages_delivered: int
    messages_dropped: int
    skipped_empty: int
    rendered_errors: np.ndarray


def run_pose_session(track, model, config: HarnessConfig) -> SessionResult:
    """Drive sender and receiver over the simulated link on one clock.

    Per tick: deliver due ACKs to the sender, send this frame's state,
    deliver due forward messages, let the receiver speak, then render at
    (now - delay) and score skinned vertices against the track's ground
    truth at the same delayed time.
    """
    from .skinning import skin_model

    forward = _LinkStream(config.link, config.link.seed)
    reverse = _LinkStream(config.link, config.link.seed + 1)
    sender = Sender(config)
    receiver = Receiver(config)
    rows: list[MetricsRow] = []
    per_kind = {name: {"count": 0, "bytes": 0} for name in _KIND_NAMES.values()}
    motor_payload_bytes = 0
    baseline_bytes = 0
    frames_sent = 0
    errors: list[float] = []
    frames = min(config.frames, len(track.frames))
    per_bone = 64 * track.frames[0].bone_count

    for k in range(frames):
        now = int(round(k * 1000.0 / config.frame_rate))
        tick_bytes = 0
        tick_baseline = 0
        for msg in reverse.due(now):
            info = decode(msg)
            if isinstance(info, AckInfo):
                sender.on_ack(info)
        for msg in sender.tick(k, now, track.frames[k]):
            forward.send(now, msg)
            tick_bytes += msg.size
            kind = _KIND_NAMES[msg.kind]
            per_kind[kind]["count"] += 1
            per_kind[kind]["bytes"] += msg.size
            if msg.kind == KIND_SNAPSHOT:
                motor_payload_bytes += 16 * track.frames[k].bone_count
                baseline_bytes += per_bone
                tick_baseline = per_bone
                frames_sent += 1
            elif msg.kind == KIND_DELTA:
                nmask = (track.frames[k].bone_count + 7) // 8
                motor_payload_bytes += len(msg.payload) - 4 - nmask
                baseline_bytes += per_bone
                tick_baseline = per_bone
                frames_sent += 1
        delivered_now = 0
        for msg in forward.due(now):
            delivered_now += 1
            for reply in receiver.handle(msg, now):
                reverse.send(now, reply)
                tick_bytes += reply.size
                per_kind[_KIND_NAMES[reply.kind]]["count"] += 1
                per_kind[_KIND_NAMES[reply.kind]]["bytes"] += reply.size
        for reply in receiver.tick(now):
            reverse.send(now, reply)
            tick_bytes += reply.size
            per_kind[_KIND_NAMES[reply.kind]]["count"] += 1
            per_kind[_KIND_NAMES[reply.kind]]["bytes"] += reply.size
        rendered = receiver.render(now)
        err = float("nan")
        if rendered is not None:
            t_render = now - config.effective_render_delay_ms
            if t_render >= 0.0:
                truth = truth_pose(track, t_render)
                got = skin_model(model, rendered)
                want = skin_model(model, truth)
                err = float(np.max(np.linalg.norm(got - want, axis=1)))
                errors.append(err)
        rows.append(MetricsRow(
            time_ms=now, bytes_protocol=tick_bytes,
            bytes_baseline=tick_baseline, rendered_error=err,
            dropped=forward.dropped + reverse.dropped,
            delivered=delivered_now))
    return SessionResult(
        config=config, rows=rows, per_kind=per_kind,
        motor_payload_bytes=motor_payload_bytes,
        baseline_bytes=baseline_bytes,
        protocol_bytes=forward.sent_bytes + reverse.sent_bytes,
        frames_sent=frames_sent,
        messages_sent=forward.sent + reverse.sent,
        messages_delivered=(forward.sent - forward.dropped) +
                           (reverse.sent - reverse.dropped),
        messages_dropped=forward.dropped + reverse.dropped,
        skipped_empty=sender.skipped_empty,
        rendered_errors=np.array(errors))


def bandwidth_report(session: SessionResult) -> dict:
    """Honest byte accounting for a finished session.

    payload_ratio compares the float32-matrix baseline against quantized
    motor payload bytes alone (16 vs 64 per bone: exactly 4.0 for a
    snapshot-only stream); protocol_ratio charges every wire byte in both
    directions — headers, bitmasks, scale fields, and ACKs included —
    against the same baseline.  The baseline only counts frames the
    protocol actually shipped, so gating skipped frames never inflates it.
    An empty session reports zero bytes and zero ratios.
    """
    payload_ratio = 0.0
    protocol_ratio = 0.0
    if session.motor_payload_bytes:
        payload_ratio = session.baseline_bytes / session.motor_payload_bytes
    if session.protocol_bytes:
        protocol_ratio = session.baseline_bytes / session.protocol_bytes
    errs = session.rendered_errors
    return {
        "frames_sent": session.frames_sent,
        "messages_sent": session.messages_sent,
        "messages_delivered": session.messages_delivered,
        "messages_dropped": session.messages_dropped,
        "skipped_empty_deltas": session.skipped_empty,
        "bytes_baseline": session.baseline_bytes,
        "bytes_motor_payload": session.motor_payload_bytes,
        "bytes_protocol": session.protocol_bytes,
        "payload_ratio": payload_ratio,
        "protocol_ratio": protocol_ratio,
        "per_kind": session.per_kind,
        "rendered_error_max": float(np.max(errs)) if errs.size else 0.0,
        "rendered_error_mean": float(np.mean(errs)) if errs.size else 0.0,
        "rendered_error_p95": float(np.percentile(errs, 95)) if errs.size else 0.0,
    }


METRICS_COLUMNS = ("time_ms", "bytes_protocol", "bytes_baseline",
                   "rendered_error", "dropped", "delivered")


def write_metrics_csv(rows, path) -> None:
    """One CSV line per tick with the canonical six columns."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for r in rows:
            fh.write(f"{r.time_ms},{r.bytes_protocol},{r.bytes_baseline},"
                     f"{float(r.rendered_error)!r},{r.dropped},{r.delivered}\n")


def read_metrics_csv(path) -> list[MetricsRow]:
    from .errors import IoError
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header.split(",") != list(METRICS_COLUMNS):
                raise IoError(f"{path}: unrecognized metrics header {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                t, bp, bb, err, dr, dl = line.split(",")
                rows.append(MetricsRow(int(t), int(bp), int(bb),
                                       float(err), int(dr), int(dl)))
    except OSError as exc:
        raise IoError(f"cannot read metrics file {path}: {exc}") from exc
    except ValueError as exc:
        raise IoError(f"{path}: malformed metrics row: {exc}") from exc
    return rows


# ------------------------------------------------------------- config format

def parse_harness_config(text: str) -> HarnessConfig:
    """Parse the ``format harness 1`` structured-text session config.

    Keys (one ``key value`` pair per line, ``#`` comments allowed):
    rate, frames, snapshot_every, delta_threshold, latency_ms, jitter_ms,
    loss, seed, render_delay_ms, ack_every_ms, request_min_gap_ms,
    send_empty_deltas.  Unknown keys are rejected.
    """
    from .errors import IoError
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != "format harness 1":
        raise IoError("harness config must start with 'format harness 1'")
    cfg = HarnessConfig()
    link = dict(latency_ms=cfg.link.latency_ms, jitter_ms=cfg.link.jitter_ms,
                loss_probability=cfg.link.loss_probability, seed=cfg.link.seed)
    seen = set()
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise IoError(f"harness config line {ln!r} is not 'key value'")
        key, value = parts
        if key in seen:
            raise IoError(f"harness config repeats key {key!r}")
        seen.add(key)
        try:
            if key == "rate":
                cfg.frame_rate = float(value)
            elif key == "frames":
                cfg.frames = int(value)
            elif key == "snapshot_every":
                cfg.snapshot_every = int(value)
            elif key == "delta_threshold":
                cfg.delta_threshold = float(value)
            elif key == "latency_ms":
                link["latency_ms"] = float(value)
            elif key == "jitter_ms":
                link["jitter_ms"] = float(value)
            elif key == "loss":
                link["loss_probability"] = float(value)
            elif key == "seed":
                link["seed"] = int(value)
            elif key == "render_delay_ms":
                cfg.render_delay_ms = float(value)
            elif key == "ack_every_ms":
                cfg.ack_every_ms = float(value)
            elif key == "request_min_gap_ms":
                cfg.request_min_gap_ms = float(value)
            elif key == "send_empty_deltas":
                cfg.send_empty_deltas = bool(int(value))
            else:
                raise IoError(f"harness config has unknown key {key!r}")
        except ValueError as exc:
            raise IoError(f"harness config key {key!r}: {exc}") from exc
    try:
        cfg.link = LinkConfig(**link)
    except ValueError as exc:
        raise IoError(f"harness config link settings: {exc}") from exc
    if cfg.frame_rate <= 0 or cfg.frames < 0 or cfg.snapshot_every < 1:
        raise IoError("harness config: rate must be positive, frames >= 0, "
                      "snapshot_every >= 1")
    return cfg


def load_harness_config(path) -> HarnessConfig:
    from .errors import IoError
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_harness_config(fh.read())
    except OSError as exc:
        raise IoError(f"cannot read harness config {path}: {exc}") from exc
