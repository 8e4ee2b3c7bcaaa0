"""Multivector-only linear blend skinning.

A vertex is embedded as a conformal point, every influencing bone
sandwiches it with (pose motor * bind offset), and the weighted sum of the
sandwiched points is projected back to Euclidean space by dividing by its
homogeneous weight.  For rigid bone motors each sandwiched point keeps
weight 1, so the conformal blend down-projects to exactly the classic
matrix-LBS position blend; bones carrying dilations reweight the blend by
the inverse of their scale factor (the homogeneous weight of a dilated
point), which is the one behavior that differs from matrix LBS.

Skeleton hierarchy is carried (parent indices) but motors are world-space;
nothing here accumulates local transforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cga
from .cga import Multivector
from .errors import (
    BoneCountMismatch,
    DegeneratePlane,
    IndexOutOfRange,
    IoError,
    NullWeightError,
)
from .tolerances import TOL_CLASSIFY, TOL_GEOMETRIC


class PoseSample:
    """World-space bone motors at one time index."""

    __slots__ = ("coeffs",)

    def __init__(self, motors, check: bool = True):
        if isinstance(motors, np.ndarray):
            arr = np.asarray(motors, dtype=float).copy()
        else:
            arr = np.stack([m.coeffs for m in motors])
        if arr.ndim != 2 or arr.shape[1] != cga.DIM:
            raise ValueError("pose needs shape (bones, 32)")
        self.coeffs = arr
        if check:
            for n in range(arr.shape[0]):
                nn = cga._gp(arr[n], cga._rev(arr[n]))
                if abs(nn[0] - 1.0) > TOL_GEOMETRIC or \
                        np.max(np.abs(nn[1:])) > TOL_GEOMETRIC:
                    raise ValueError(
                        f"bone {n} motor is not unit (m rev(m) scalar {nn[0]!r})"
                    )

    @property
    def bone_count(self) -> int:
        return self.coeffs.shape[0]

    def motor(self, n: int) -> Multivector:
        return Multivector._wrap(self.coeffs[n].copy())

    @property
    def motors(self) -> list[Multivector]:
        return [self.motor(n) for n in range(self.bone_count)]

    @classmethod
    def identity(cls, bone_count: int) -> "PoseSample":
        arr = np.zeros((bone_count, cga.DIM))
        arr[:, 0] = 1.0
        return cls(arr, check=False)


@dataclass
class SkinBinding:
    """Per-vertex influences/weights plus per-bone bind offset versors."""

    influences: list[np.ndarray]          # vertex -> bone indices
    weights: list[np.ndarray]             # vertex -> weights, sum to 1
    bind_offsets: list[Multivector]       # bone -> offset motor B

    def __post_init__(self):
        self.influences = [np.asarray(i, dtype=int) for i in self.influences]
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        bones = len(self.bind_offsets)
        for m, (idx, w) in enumerate(zip(self.influences, self.weights)):
            if idx.size == 0:
                raise ValueError(f"vertex {m} has no influences")
            if idx.size != w.size:
                raise ValueError(f"vertex {m}: influence/weight length mismatch")
            if np.any(w < 0.0):
                raise ValueError(f"vertex {m} has a negative weight")
            if abs(float(w.sum()) - 1.0) > TOL_CLASSIFY:
                raise ValueError(f"vertex {m} weights sum to {w.sum()!r}, not 1")
            if np.any(idx < 0) or np.any(idx >= bones):
                raise ValueError(f"vertex {m} references a bone out of range")
        for n, b in enumerate(self.bind_offsets):
            nn = (b * cga.reverse(b)).coeffs
            if abs(nn[0] - 1.0) > TOL_GEOMETRIC or np.max(np.abs(nn[1:])) > TOL_GEOMETRIC:
                raise ValueError(f"bind offset {n} is not a unit motor")

    def vertices_of_bone(self, n: int, vertex_count: int):
        """(indices, weights) of every vertex the bone influences."""
        idx, wts = [], []
        for m in range(vertex_count):
            hit = np.nonzero(self.influences[m] == n)[0]
            if hit.size and self.weights[m][hit[0]] > 0.0:
                idx.append(m)
                wts.append(float(self.weights[m][hit[0]]))
        return np.array(idx, dtype=int), np.array(wts)


@dataclass
class SkinnedModel:
    """Rest geometry, influence binding, and skeleton topology."""

    rest_vertices: np.ndarray             # (N, 3)
    binding: SkinBinding
    bone_count: int
    parents: np.ndarray                   # (bones,), -1 for roots
    bind_pose: PoseSample | None = None
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))

    def __post_init__(self):
        self.rest_vertices = np.asarray(self.rest_vertices, dtype=float).reshape(-1, 3)
        self.parents = np.asarray(self.parents, dtype=int)
        self.edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        if len(self.binding.influences) != len(self.rest_vertices):
            raise ValueError("binding does not cover every vertex")
        if len(self.binding.bind_offsets) != self.bone_count:
            raise ValueError("binding does not cover every bone")
        # parents must form a forest
        for n in range(self.bone_count):
            seen, p = set(), n
            while p != -1:
                if p in seen or not (-1 <= self.parents[p] < self.bone_count):
                    raise ValueError("parent indices contain a cycle or bad index")
                seen.add(p)
                p = int(self.parents[p])

    @property
    def vertex_count(self) -> int:
        return len(self.rest_vertices)


# ------------------------------------------------------------------ skinning

def _pose_matrices(model: SkinnedModel, pose: PoseSample) -> list[np.ndarray]:
    """One 32x32 sandwich matrix per bone for (pose motor * bind offset)."""
    if pose.bone_count != model.bone_count:
        raise BoneCountMismatch(
            f"pose has {pose.bone_count} bones, model has {model.bone_count}"
        )
    mats = []
    for n in range(model.bone_count):
        mb = cga._gp(pose.coeffs[n], model.binding.bind_offsets[n].coeffs)
        mats.append(cga.sandwich_matrix_raw(mb))
    return mats


def skin_vertex(model: SkinnedModel, pose: PoseSample, m: int) -> np.ndarray:
    """Skin one vertex: weighted conformal sandwich blend, down-projected."""
    if not 0 <= m < model.vertex_count:
        raise IndexOutOfRange(f"vertex {m} outside model of {model.vertex_count}")
    if pose.bone_count != model.bone_count:
        raise BoneCountMismatch(
            f"pose has {pose.bone_count} bones, model has {model.bone_count}"
        )
    emb = cga.up_raw(model.rest_vertices[m])[0]
    acc = np.zeros(cga.DIM)
    for n, w in zip(model.binding.influences[m], model.binding.weights[m]):
        mb = cga._gp(pose.coeffs[n], model.binding.bind_offsets[n].coeffs)
        acc += w * cga._gp(cga._gp(mb, emb), cga._rev(mb))
    try:
        return cga.down_raw(acc[None, :])[0]
    except NullWeightError as exc:
        raise NullWeightError(f"vertex {m}: {exc}") from exc


def skin_model(model: SkinnedModel, pose: PoseSample) -> np.ndarray:
    """Skin every vertex; returns (N, 3) positions in vertex order."""
    mats = _pose_matrices(model, pose)
    emb = cga.up_raw(model.rest_vertices)
    acc = np.zeros_like(emb)
    for n in range(model.bone_count):
        idx, wts = _bone_table(model)[n]
        if idx.size:
            acc[idx] += wts[:, None] * (emb[idx] @ mats[n].T)
    try:
        return cga.down_raw(acc)
    except NullWeightError as exc:
        raise NullWeightError(f"skin_model: {exc}") from exc


def _bone_table(model: SkinnedModel) -> list:
    """Lazily cached bone -> (vertex indices, weights) binding inversion."""
    table = getattr(model.binding, "_by_bone", None)
    if table is None:
        table = [model.binding.vertices_of_bone(n, model.vertex_count)
                 for n in range(model.bone_count)]
        model.binding._by_bone = table
    return table


def compute_bind_offsets(model: SkinnedModel, bind_pose: PoseSample) -> SkinBinding:
    """Offsets B = reverse(bind motor), so pose == bind implies M B = 1."""
    if bind_pose.bone_count != model.bone_count:
        raise BoneCountMismatch(
            f"bind pose has {bind_pose.bone_count} bones, model has {model.bone_count}"
        )
    offsets = [cga.reverse(bind_pose.motor(n)) for n in range(model.bone_count)]
    return SkinBinding(
        influences=[i.copy() for i in model.binding.influences],
        weights=[w.copy() for w in model.binding.weights],
        bind_offsets=offsets,
    )


# ------------------------------------------------------------------- cutting

def cut_plane(model: SkinnedModel, point, normal) -> SkinnedModel:
    """Sever every edge crossing the plane; geometry and binding are kept.

    Connectivity-only split: vertices keep their influence data (each side
    retains a full copy), no re-triangulation happens, and skinned
    positions are identical before and after the cut.
    """
    point = np.asarray(point, dtype=float).reshape(3)
    normal = np.asarray(normal, dtype=float).reshape(3)
    n = np.linalg.norm(normal)
    if n < 1e-12:
        raise DegeneratePlane("cut plane normal is near-zero")
    normal = normal / n
    side = (model.rest_vertices - point) @ normal >= 0.0
    if model.edges.size:
        keep = side[model.edges[:, 0]] == side[model.edges[:, 1]]
        edges = model.edges[keep]
    else:
        edges = model.edges
    return SkinnedModel(
        rest_vertices=model.rest_vertices.copy(),
        binding=SkinBinding(
            influences=[i.copy() for i in model.binding.influences],
            weights=[w.copy() for w in model.binding.weights],
            bind_offsets=list(model.binding.bind_offsets),
        ),
        bone_count=model.bone_count,
        parents=model.parents.copy(),
        bind_pose=model.bind_pose,
        edges=edges.copy(),
    )


def connected_parts(model: SkinnedModel) -> list[np.ndarray]:
    """Vertex index groups connected by edges (singletons for loose verts)."""
    parent = list(range(model.vertex_count))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in model.edges:
        parent[find(int(i))] = find(int(j))
    groups: dict[int, list[int]] = {}
    for v in range(model.vertex_count):
        groups.setdefault(find(v), []).append(v)
    return [np.array(sorted(g)) for g in
            sorted(groups.values(), key=lambda g: min(g))]


# ------------------------------------------------------------------- file io

def _format_coeffs(arr: np.ndarray) -> str:
    """Full-precision coefficient list with trailing zeros omitted."""
    last = int(np.max(np.nonzero(arr)[0])) if np.any(arr) else 0
    return " ".join(repr(float(v)) for v in arr[: last + 1])


def _parse_coeffs(tokens: list[str]) -> np.ndarray:
    arr = np.zeros(cga.DIM)
    if len(tokens) > cga.DIM:
        raise IoError(f"expected at most {cga.DIM} coefficients, got {len(tokens)}")
    arr[: len(tokens)] = [float(t) for t in tokens]
    return arr


def save_model(model: SkinnedModel, path) -> None:
    bind = model.bind_pose or PoseSample.identity(model.bone_count)
    lines = ["format model 1",
             f"bones {model.bone_count}",
             f"vertices {model.vertex_count}",
             "[bones]"]
    for n in range(model.bone_count):
        lines.append(f"{int(model.parents[n])} {_format_coeffs(bind.coeffs[n])}")
    lines.append("[vertices]")
    for v in model.rest_vertices:
        lines.append(" ".join(repr(float(x)) for x in v))
    lines.append("[weights]")
    for idx, wts in zip(model.binding.influences, model.binding.weights):
        lines.append(" ".join(f"{int(i)}:{repr(float(w))}"
                              for i, w in zip(idx, wts)))
    if model.edges.size:
        lines.append("[edges]")
        for i, j in model.edges:
            lines.append(f"{int(i)} {int(j)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> SkinnedModel:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = [ln.strip() for ln in fh]
    except OSError as exc:
        raise IoError(f"cannot read model file {path}: {exc}") from exc
    lines = [ln for ln in raw if ln and not ln.startswith("#")]
    try:
        if lines[0] != "format model 1":
            raise IoError(f"{path}: not a model file")
        bones = int(lines[1].split()[1])
        verts = int(lines[2].split()[1])
        sections: dict[str, list[str]] = {}
        current = None
        for ln in lines[3:]:
            if ln.startswith("["):
                current = ln.strip("[]")
                sections[current] = []
            else:
                sections[current].append(ln)
        parents, bind = [], []
        for ln in sections["bones"]:
            toks = ln.split()
            parents.append(int(toks[0]))
            bind.append(_parse_coeffs(toks[1:]))
        rest = np.array([[float(t) for t in ln.split()]
                         for ln in sections["vertices"]])
        infl, wts = [], []
        for ln in sections["weights"]:
            pairs = [tok.split(":") for tok in ln.split()]
            infl.append([int(b) for b, _ in pairs])
            wts.append([float(w) for _, w in pairs])
        edges = [[int(t) for t in ln.split()]
                 for ln in sections.get("edges", [])]
    except (KeyError, IndexError, ValueError) as exc:
        raise IoError(f"cannot parse model file {path}: {exc}") from exc
    if len(parents) != bones or len(rest) != verts or len(infl) != verts:
        raise IoError(f"{path}: section sizes disagree with header")
    bind_pose = PoseSample(np.array(bind))
    offsets = [cga.reverse(bind_pose.motor(n)) for n in range(bones)]
    binding = SkinBinding(influences=infl, weights=wts, bind_offsets=offsets)
    return SkinnedModel(rest_vertices=rest, binding=binding, bone_count=bones,
                        parents=np.array(parents, dtype=int), bind_pose=bind_pose,
                        edges=np.array(edges, dtype=int).reshape(-1, 2))
