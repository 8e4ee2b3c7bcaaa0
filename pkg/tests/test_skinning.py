"""Skinning tests: conformal blend vs matrix LBS, binding, cuts, file io."""

import numpy as np
import pytest

from cgamotion import cga, fixtures, skinning
from cgamotion.cga import apply_versor, down, reverse, rotor, translator, up
from cgamotion.errors import (
    BoneCountMismatch,
    DegeneratePlane,
    IndexOutOfRange,
    IoError,
)
from cgamotion.skinning import (
    PoseSample,
    SkinBinding,
    SkinnedModel,
    compute_bind_offsets,
    connected_parts,
    cut_plane,
    load_model,
    save_model,
    skin_model,
    skin_vertex,
)

import oracles


def matrix_lbs(model, bone_matrices):
    """Independent oracle: blend per-bone 4x4-transformed positions."""
    out = np.zeros_like(model.rest_vertices)
    for m in range(model.vertex_count):
        p = np.zeros(3)
        for n, w in zip(model.binding.influences[m], model.binding.weights[m]):
            p += w * oracles.apply_homogeneous(bone_matrices[n],
                                               model.rest_vertices[m])
        out[m] = p
    return out


def random_pose_with_matrices(rng, model):
    """Pose built from known (t, axis, angle) so the oracle is independent.

    Bone matrices compose the pose transform with the bind inverse the
    same way the skinning path composes motors.
    """
    motors, mats = [], []
    bind = model.bind_pose
    for n in range(model.bone_count):
        t = rng.uniform(-1.5, 1.5, 3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(-np.pi, np.pi)
        motors.append(translator(t) * rotor(axis, angle))
        bc = bind.coeffs[n]
        bind_t = down(apply_versor(bind.motor(n), up([0, 0, 0])))
        # recover the bind rotation by probing basis directions
        cols = [down(apply_versor(bind.motor(n), up(e))) - bind_t
                for e in np.eye(3)]
        bind_mat = np.eye(4)
        bind_mat[:3, :3] = np.array(cols).T
        bind_mat[:3, 3] = bind_t
        mats.append(oracles.homogeneous(t, axis, angle) @ np.linalg.inv(bind_mat))
        assert bc is not None
    return PoseSample(motors), mats


class TestPoseSample:
    def test_identity(self):
        pose = PoseSample.identity(4)
        assert pose.bone_count == 4
        assert np.array_equal(pose.motor(2).coeffs, cga.ONE.coeffs)

    def test_rejects_non_unit_motor(self):
        with pytest.raises(ValueError):
            PoseSample([cga.Multivector(2.0 * cga.ONE.coeffs)])


class TestBindingValidation:
    def test_rejects_bad_weight_sum(self):
        with pytest.raises(ValueError):
            SkinBinding(influences=[[0]], weights=[[0.5]],
                        bind_offsets=[cga.ONE])

    def test_rejects_negative_weight(self):
        with pytest.raises(ValueError):
            SkinBinding(influences=[[0, 0]], weights=[[1.5, -0.5]],
                        bind_offsets=[cga.ONE])

    def test_rejects_empty_influences(self):
        with pytest.raises(ValueError):
            SkinBinding(influences=[[]], weights=[[]], bind_offsets=[cga.ONE])

    def test_rejects_non_motor_offset(self):
        with pytest.raises(ValueError):
            SkinBinding(influences=[[0]], weights=[[1.0]],
                        bind_offsets=[cga.Multivector(2.0 * cga.ONE.coeffs)])


class TestSkinning:
    def test_identity_pose_is_rest(self):
        model = fixtures.arm_model()
        got = skin_model(model, model.bind_pose)
        assert np.max(np.abs(got - model.rest_vertices)) <= 1e-9

    def test_single_influence_translation(self):
        rng = np.random.default_rng(30)
        model = fixtures.random_model(rng, 5, 1, max_influences=1)
        pose = PoseSample([translator([0, 1, 0]) * model.bind_pose.motor(0)])
        got = skin_model(model, pose)
        assert np.max(np.abs(got - (model.rest_vertices + [0, 1, 0]))) <= 1e-9

    def test_matches_matrix_lbs(self):
        rng = np.random.default_rng(31)
        for _ in range(5):
            model = fixtures.random_model(rng, 40, 4)
            pose, mats = random_pose_with_matrices(rng, model)
            ours = skin_model(model, pose)
            ref = matrix_lbs(model, mats)
            assert np.max(np.abs(ours - ref)) <= 1e-6

    def test_skin_vertex_agrees_with_skin_model(self):
        rng = np.random.default_rng(32)
        model = fixtures.random_model(rng, 20, 3)
        pose = fixtures.random_pose(rng, 3)
        whole = skin_model(model, pose)
        for m in range(model.vertex_count):
            assert np.max(np.abs(skin_vertex(model, pose, m) - whole[m])) <= 1e-12

    def test_equivariance_under_global_motor(self):
        rng = np.random.default_rng(33)
        model = fixtures.random_model(rng, 30, 3)
        pose = fixtures.random_pose(rng, 3)
        V = fixtures.random_rigid_motor(rng)
        moved = PoseSample([V * pose.motor(n) for n in range(3)])
        base = skin_model(model, pose)
        got = skin_model(model, moved)
        want = np.array([down(apply_versor(V, up(p))) for p in base])
        assert np.max(np.abs(got - want)) <= 1e-9

    def test_bind_consistency_random_pose(self):
        rng = np.random.default_rng(34)
        model = fixtures.random_model(rng, 25, 4)
        got = skin_model(model, model.bind_pose)
        assert np.max(np.abs(got - model.rest_vertices)) <= 1e-9

    def test_bone_count_mismatch(self):
        model = fixtures.arm_model()
        with pytest.raises(BoneCountMismatch):
            skin_model(model, PoseSample.identity(5))

    def test_vertex_out_of_range(self):
        model = fixtures.arm_model()
        with pytest.raises(IndexOutOfRange):
            skin_vertex(model, model.bind_pose, model.vertex_count)

    def test_dilated_bone_scales_geometry(self):
        # a single-bone model with a dilation in the pose scales about origin
        rng = np.random.default_rng(35)
        model = fixtures.random_model(rng, 10, 1, max_influences=1)
        pose = PoseSample([cga.dilator(2.0) * model.bind_pose.motor(0)])
        got = skin_model(model, pose)
        assert np.max(np.abs(got - 2.0 * model.rest_vertices)) <= 1e-9


class TestBindOffsets:
    def test_identity_bind(self):
        model = fixtures.arm_model()
        binding = compute_bind_offsets(model, PoseSample.identity(3))
        for b in binding.bind_offsets:
            assert np.array_equal(b.coeffs, cga.ONE.coeffs)

    def test_translator_bind_inverts(self):
        model = fixtures.arm_model()
        bind = PoseSample([translator([1, 2, 3])] * 3)
        binding = compute_bind_offsets(model, bind)
        for b in binding.bind_offsets:
            assert np.max(np.abs(b.coeffs - translator([-1, -2, -3]).coeffs)) <= 1e-12

    def test_rebind_reproduces_rest(self):
        rng = np.random.default_rng(36)
        model = fixtures.random_model(rng, 20, 3)
        new_bind = fixtures.random_pose(rng, 3)
        model2 = SkinnedModel(
            rest_vertices=model.rest_vertices,
            binding=compute_bind_offsets(model, new_bind),
            bone_count=3, parents=model.parents, bind_pose=new_bind)
        got = skin_model(model2, new_bind)
        assert np.max(np.abs(got - model.rest_vertices)) <= 1e-9


class TestCutPlane:
    def test_far_plane_is_noop(self):
        model = fixtures.arm_model()
        cut = cut_plane(model, [100.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        assert len(connected_parts(cut)) == len(connected_parts(model)) == 1
        assert np.array_equal(cut.edges, model.edges)

    def test_bisected_segment_splits(self):
        binding = SkinBinding(influences=[[0], [0]], weights=[[1.0], [1.0]],
                              bind_offsets=[cga.ONE])
        model = SkinnedModel(rest_vertices=[[0, 0, 0], [1, 0, 0]],
                             binding=binding, bone_count=1, parents=[-1],
                             edges=[[0, 1]])
        cut = cut_plane(model, [0.5, 0, 0], [1, 0, 0])
        parts = connected_parts(cut)
        assert len(parts) == 2
        assert all(len(p) == 1 for p in parts)

    def test_cut_does_not_move_vertices(self):
        rng = np.random.default_rng(37)
        model = fixtures.arm_model()
        pose = fixtures.arm_wave_pose(0.9)
        cut = cut_plane(model, [1.5, 0, 0], [1, 0, 0])
        assert np.max(np.abs(skin_model(cut, pose) - skin_model(model, pose))) <= 1e-9
        assert len(connected_parts(cut)) == 2

    def test_degenerate_plane(self):
        with pytest.raises(DegeneratePlane):
            cut_plane(fixtures.arm_model(), [0, 0, 0], [0, 0, 0])


class TestModelFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(38)
        model = fixtures.random_model(rng, 15, 3)
        path = tmp_path / "m.model"
        save_model(model, path)
        loaded = load_model(path)
        pose = fixtures.random_pose(rng, 3)
        assert np.array_equal(loaded.rest_vertices, model.rest_vertices)
        assert np.max(np.abs(skin_model(loaded, pose) -
                             skin_model(model, pose))) <= 1e-12

    def test_arm_fixture_roundtrip(self, tmp_path):
        model = fixtures.arm_model()
        path = tmp_path / "arm.model"
        save_model(model, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.edges, model.edges)
        assert loaded.parents.tolist() == [-1, 0, 1]

    def test_bad_file(self, tmp_path):
        path = tmp_path / "bad.model"
        path.write_text("format nonsense\n")
        with pytest.raises(IoError):
            load_model(path)
        with pytest.raises(IoError):
            load_model(tmp_path / "missing.model")
