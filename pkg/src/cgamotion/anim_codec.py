"""Keyframe reduction and reconstruction for bone-motor tracks.

Reduction is greedy coarse-to-fine per bone: start from the endpoint keys,
then repeatedly promote the source frame whose reconstruction deviates the
most until every frame is within epsilon.  The error metric is the maximum
positional deviation, at the vertices the bone influences, between the
bone's reconstructed and source rigid actions.  Because vertex weights sum
to one, a per-bone bound of epsilon implies the same bound on the fully
skinned model (triangle inequality), which the report re-verifies.

Insertion is deterministic (ties resolve to the lowest frame index) and
the key set for a smaller epsilon always contains the key set for a larger
one, so lowering epsilon never loses keys.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cga
from .cga import Multivector, interpolate_versor
from .errors import InvalidEpsilon, IoError, ModelMismatch, OutOfRange
from .skinning import (
    PoseSample,
    SkinnedModel,
    _bone_table,
    _format_coeffs,
    _parse_coeffs,
    skin_model,
)


@dataclass
class PoseTrack:
    """Time-ordered pose samples at a fixed frame rate."""

    frame_rate: float
    frames: list[PoseSample]

    def __post_init__(self):
        if not self.frames:
            raise ValueError("track needs at least one frame")
        bones = self.frames[0].bone_count
        if any(f.bone_count != bones for f in self.frames):
            raise ValueError("track bone count must be constant")

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def bone_count(self) -> int:
        return self.frames[0].bone_count

    def bone_coeffs(self, n: int) -> np.ndarray:
        """(frames, 32) coefficient array of one bone's motor over time."""
        return np.stack([f.coeffs[n] for f in self.frames])


@dataclass
class KeyframeTrack:
    """Per-bone sparse (frame index, motor) keys for a reduced track."""

    frame_rate: float
    frame_count: int
    bone_keys: list[list[tuple[int, Multivector]]]

    def __post_init__(self):
        for n, keys in enumerate(self.bone_keys):
            idxs = [k for k, _ in keys]
            if idxs != sorted(set(idxs)):
                raise ValueError(f"bone {n} key indices must strictly increase")
            if not keys or idxs[0] != 0 or idxs[-1] != self.frame_count - 1:
                raise ValueError(f"bone {n} must keep the first and last frame")

    @property
    def bone_count(self) -> int:
        return len(self.bone_keys)

    @property
    def total_keys(self) -> int:
        return sum(len(k) for k in self.bone_keys)


# ----------------------------------------------------------------- reduction

def _bone_positions(model: SkinnedModel, bone: int,
                    motors: np.ndarray) -> np.ndarray:
    """Positions of the bone's influenced vertices under each motor.

    motors: (F, 32) world motors for this bone; returns (F, V, 3).
    """
    idx, _ = _bone_table(model)[bone]
    if idx.size == 0:
        return np.zeros((len(motors), 0, 3))
    emb = cga.up_raw(model.rest_vertices[idx])
    offset = model.binding.bind_offsets[bone].coeffs
    out = np.empty((len(motors), idx.size, 3))
    for k in range(len(motors)):
        s = cga.sandwich_matrix_raw(cga._gp(motors[k], offset))
        out[k] = cga.down_raw(emb @ s.T)
    return out


def _segment_errors(model: SkinnedModel, bone: int, coeffs: np.ndarray,
                    src_pos: np.ndarray, a: int, b: int) -> np.ndarray:
    """Max vertex deviation for every interior frame of key segment [a, b]."""
    if b - a < 2 or src_pos.shape[1] == 0:
        return np.zeros(max(b - a - 1, 0))
    ma = Multivector._wrap(coeffs[a])
    mb = Multivector._wrap(coeffs[b])
    ts = np.arange(a + 1, b)
    motors = np.stack([interpolate_versor(ma, mb, (k - a) / (b - a)).coeffs
                       for k in ts])
    rec = _bone_positions(model, bone, motors)
    return np.max(np.linalg.norm(rec - src_pos[a + 1:b], axis=2), axis=1)


def reduce_keyframes(track: PoseTrack, model: SkinnedModel,
                     epsilon: float) -> KeyframeTrack:
    """Greedy per-bone key selection with a hard epsilon error bound."""
    epsilon = float(epsilon)
    if not np.isfinite(epsilon) or epsilon <= 0.0:
        raise InvalidEpsilon(f"epsilon must be positive, got {epsilon!r}")
    if track.bone_count != model.bone_count:
        raise ModelMismatch(
            f"track has {track.bone_count} bones, model has {model.bone_count}"
        )
    if track.frame_count < 2:
        raise ValueError("reduction needs at least 2 frames")
    frames = track.frame_count
    bone_keys = []
    for n in range(model.bone_count):
        coeffs = track.bone_coeffs(n)
        src = _bone_positions(model, n, coeffs)
        keys = [0, frames - 1]
        err = np.zeros(frames)
        err[1:-1] = _segment_errors(model, n, coeffs, src, 0, frames - 1)
        while True:
            worst = int(np.argmax(err))        # ties -> lowest frame index
            if err[worst] <= epsilon:
                break
            pos = int(np.searchsorted(keys, worst))
            a, b = keys[pos - 1], keys[pos]
            keys.insert(pos, worst)
            err[worst] = 0.0
            err[a + 1:worst] = _segment_errors(model, n, coeffs, src, a, worst)
            err[worst + 1:b] = _segment_errors(model, n, coeffs, src, worst, b)
        bone_keys.append([(k, Multivector._wrap(coeffs[k].copy()))
                          for k in keys])
    return KeyframeTrack(frame_rate=track.frame_rate, frame_count=frames,
                         bone_keys=bone_keys)


def reconstruct(keys: KeyframeTrack, k: int) -> PoseSample:
    """Pose at frame k from bracketing keys; exact at key frames."""
    if not 0 <= k < keys.frame_count:
        raise OutOfRange(f"frame {k} outside [0, {keys.frame_count})")
    motors = []
    for bone_keys in keys.bone_keys:
        idxs = [i for i, _ in bone_keys]
        pos = int(np.searchsorted(idxs, k))
        if pos < len(idxs) and idxs[pos] == k:
            motors.append(bone_keys[pos][1])
            continue
        a_idx, a_m = bone_keys[pos - 1]
        b_idx, b_m = bone_keys[pos]
        t = (k - a_idx) / (b_idx - a_idx)
        motors.append(interpolate_versor(a_m, b_m, t))
    return PoseSample(motors)


def codec_report(track: PoseTrack, keys: KeyframeTrack,
                 model: SkinnedModel | None = None) -> dict:
    """Key counts, compression ratio, and reconstruction error metrics."""
    if track.bone_count != keys.bone_count:
        raise ModelMismatch(
            f"track has {track.bone_count} bones, keys have {keys.bone_count}"
        )
    if track.frame_count != keys.frame_count:
        raise ModelMismatch("track and keys disagree on frame count")
    coeff_err = []
    vert_err = []
    for k in range(track.frame_count):
        rec = reconstruct(keys, k)
        coeff_err.append(float(np.max(np.abs(rec.coeffs - track.frames[k].coeffs))))
        if model is not None:
            d = skin_model(model, rec) - skin_model(model, track.frames[k])
            vert_err.append(float(np.max(np.linalg.norm(d, axis=1))))
    report = {
        "frames": track.frame_count,
        "bones": track.bone_count,
        "total_keys": keys.total_keys,
        "keys_per_bone": [len(b) for b in keys.bone_keys],
        "compression_ratio": track.frame_count * track.bone_count / keys.total_keys,
        "max_coeff_error": max(coeff_err),
        "mean_coeff_error": float(np.mean(coeff_err)),
    }
    if model is not None:
        report["max_vertex_error"] = max(vert_err)
        report["mean_vertex_error"] = float(np.mean(vert_err))
    return report


# ------------------------------------------------------------------- file io

def save_track(track: PoseTrack, path) -> None:
    lines = ["format track 1",
             f"rate {repr(float(track.frame_rate))}",
             f"bones {track.bone_count}",
             f"frames {track.frame_count}",
             "[frames]"]
    for frame in track.frames:
        for n in range(track.bone_count):
            lines.append(_format_coeffs(frame.coeffs[n]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_track(path) -> PoseTrack:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = [ln.strip() for ln in fh]
    except OSError as exc:
        raise IoError(f"cannot read track file {path}: {exc}") from exc
    lines = [ln for ln in raw if ln and not ln.startswith("#")]
    try:
        if lines[0] != "format track 1":
            raise IoError(f"{path}: not a track file")
        rate = float(lines[1].split()[1])
        bones = int(lines[2].split()[1])
        count = int(lines[3].split()[1])
        if lines[4] != "[frames]":
            raise IoError(f"{path}: missing [frames] section")
        body = lines[5:]
        if len(body) != bones * count:
            raise IoError(f"{path}: expected {bones * count} motor lines, "
                          f"got {len(body)}")
        frames = []
        for k in range(count):
            arr = np.stack([_parse_coeffs(body[k * bones + n].split())
                            for n in range(bones)])
            frames.append(PoseSample(arr))
    except (IndexError, ValueError) as exc:
        raise IoError(f"cannot parse track file {path}: {exc}") from exc
    return PoseTrack(frame_rate=rate, frames=frames)
