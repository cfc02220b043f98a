import numpy as np
import pytest
from scipy.signal import fftconvolve

from cathlab.dynamics import (
    DeformationField,
    HandleSet,
    PhaseClock,
    RigidTransform,
    SkinningWeights,
    compute_skinning_weights,
    deform_mesh,
    deform_vertices,
    interpolate_phase,
    interpolate_pose,
    load_field,
    model_phase_at,
    register_volumes,
    save_field,
)
from cathlab.errors import InsufficientDataError, ValidationError
from cathlab.volume import AttenuationVolume, TetMesh

from conftest import bar_tet_mesh


def textured_blob(n, cx, s=8.0):
    g = np.mgrid[0:n, 0:n, 0:n].astype(float)
    env = np.exp(-((g[0] - cx) ** 2 + (g[1] - n / 2) ** 2 + (g[2] - n / 2) ** 2) / (2 * s * s))
    ripple = (
        1.0
        + 0.4
        * np.cos(0.9 * (g[0] - cx))
        * np.cos(0.7 * (g[1] - n / 2))
        * np.cos(0.8 * (g[2] - n / 2))
    )
    return (env * ripple).astype(np.float32)


@pytest.fixture(scope="module")
def bar_weights():
    mesh = bar_tet_mesh(12, 4, 1.0)
    x = mesh.vertices[:, 0]
    handles = HandleSet((np.flatnonzero(x == 0.0), np.flatnonzero(x == 12.0)))
    return mesh, handles, compute_skinning_weights(mesh, handles)


class TestSkinning:
    def test_single_handle_weights_are_one(self):
        mesh = bar_tet_mesh(4, 2, 1.0)
        handles = HandleSet((np.arange(4),))
        w = compute_skinning_weights(mesh, handles)
        assert np.allclose(w.w, 1.0, atol=1e-12)

    def test_invariants(self, bar_weights):
        _, _, w = bar_weights
        assert w.w.min() >= -1e-9 and w.w.max() <= 1.0 + 1e-9
        assert np.max(np.abs(w.w.sum(axis=1) - 1.0)) <= 1e-6

    def test_handle_vertices_pinned(self, bar_weights):
        mesh, handles, w = bar_weights
        for b, group in enumerate(handles.vertex_groups):
            assert np.allclose(w.w[group, b], 1.0, atol=1e-9)

    def test_symmetric_bar_midplane(self, bar_weights):
        mesh, _, w = bar_weights
        mid = np.flatnonzero(mesh.vertices[:, 0] == 6.0)
        assert mid.size > 0
        assert np.allclose(w.w[mid, 0], 0.5, atol=1e-6)

    def test_mirror_symmetry(self, bar_weights):
        mesh, _, w = bar_weights
        pos = {tuple(np.round(v, 9)): i for i, v in enumerate(mesh.vertices)}
        for i, v in enumerate(mesh.vertices):
            j = pos[tuple(np.round([12.0 - v[0], v[1], v[2]], 9))]
            assert abs(w.w[i, 0] - w.w[j, 1]) < 1e-6

    def test_energy_beats_random_feasible_fields(self):
        mesh = bar_tet_mesh(6, 2, 1.0)  # under 200 vertices
        assert len(mesh.vertices) <= 200
        x = mesh.vertices[:, 0]
        handles = HandleSet((np.flatnonzero(x == 0.0), np.flatnonzero(x == 6.0)))
        w = compute_skinning_weights(mesh, handles)

        from cathlab.dynamics import tet_lumped_mass, tet_stiffness_matrix

        l = tet_stiffness_matrix(mesh)
        from scipy import sparse

        minv = sparse.diags(1.0 / tet_lumped_mass(mesh))
        q = (l @ minv @ l).tocsr()

        def energy(weights):
            return sum(weights[:, b] @ (q @ weights[:, b]) for b in range(2))

        mine = energy(w.w)
        rng = np.random.default_rng(0)
        n = len(mesh.vertices)
        for _ in range(100):
            raw = rng.random((n, 2))
            raw /= raw.sum(axis=1, keepdims=True)
            raw[handles.vertex_groups[0]] = (1.0, 0.0)
            raw[handles.vertex_groups[1]] = (0.0, 1.0)
            assert mine <= energy(raw) + 1e-12

    def test_rigidity_reproduction(self, bar_weights):
        mesh, _, w = bar_weights
        angle = 0.4
        r = np.array(
            [
                [np.cos(angle), -np.sin(angle), 0.0],
                [np.sin(angle), np.cos(angle), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        t = np.array([3.0, -1.0, 2.0])
        tr = RigidTransform(r, t)
        out = deform_vertices(mesh.vertices, w, [tr, tr])
        expect = mesh.vertices @ r.T + t
        assert np.max(np.abs(out - expect)) < 1e-9

    def test_component_without_handle_rejected(self):
        m1 = bar_tet_mesh(2, 1, 1.0)
        # second component far away, sharing no vertices
        verts = np.vstack([m1.vertices, m1.vertices + 100.0])
        tets = np.vstack([m1.tets, m1.tets + len(m1.vertices)])
        mesh = TetMesh(verts, tets)
        handles = HandleSet((np.array([0, 1]),))
        with pytest.raises(ValidationError):
            compute_skinning_weights(mesh, handles)

    def test_weight_matrix_validation(self):
        with pytest.raises(ValidationError):
            SkinningWeights(np.array([[0.5, 0.6], [0.2, 0.8]]))  # row sums != 1
        with pytest.raises(ValidationError):
            SkinningWeights(np.array([[1.2, -0.2], [0.5, 0.5]]))  # out of bounds


class TestPoseInterpolation:
    def _poses(self):
        r90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        p1 = [RigidTransform.identity()]
        p2 = [RigidTransform(r90, np.array([2.0, 0.0, 0.0]))]
        return p1, p2

    def test_endpoints_exact(self):
        p1, p2 = self._poses()
        assert interpolate_pose(p1, p2, 0.0)[0] is p1[0]
        assert interpolate_pose(p1, p2, 1.0)[0] is p2[0]

    def test_midpoint_translation(self):
        p1, p2 = self._poses()
        mid = interpolate_pose(p1, p2, 0.5)[0]
        assert np.allclose(mid.t, [1.0, 0.0, 0.0])

    def test_midpoint_rotation_is_half_angle(self):
        p1, p2 = self._poses()
        mid = interpolate_pose(p1, p2, 0.5)[0]
        c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
        assert np.allclose(mid.r, [[c, -s, 0], [s, c, 0], [0, 0, 1]], atol=1e-12)

    def test_rotation_stays_orthonormal(self):
        p1, p2 = self._poses()
        for t in np.linspace(0, 1, 11):
            r = interpolate_pose(p1, p2, float(t))[0].r
            assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-12

    def test_handle_count_mismatch(self):
        p1, _ = self._poses()
        with pytest.raises(ValidationError):
            interpolate_pose(p1, p1 + p1, 0.5)


class TestDeform:
    def test_identity_transforms(self):
        mesh = bar_tet_mesh(3, 2, 1.0)
        w = SkinningWeights(np.column_stack([np.full(len(mesh.vertices), 0.3),
                                             np.full(len(mesh.vertices), 0.7)]))
        out = deform_mesh(mesh, w, [RigidTransform.identity()] * 2)
        assert np.max(np.abs(out.vertices - mesh.vertices)) < 1e-12

    def test_single_handle_translation(self):
        mesh = bar_tet_mesh(3, 2, 1.0)
        w = SkinningWeights(np.ones((len(mesh.vertices), 1)))
        d = np.array([1.0, 2.0, 3.0])
        out = deform_mesh(mesh, w, [RigidTransform(np.eye(3), d)])
        assert np.allclose(out.vertices, mesh.vertices + d)

    def test_weighted_blend_hand_case(self):
        verts = np.array([[0.0, 0.0, 0.0]])
        w = SkinningWeights(np.array([[0.25, 0.75]]))
        t1 = RigidTransform(np.eye(3), np.array([4.0, 0.0, 0.0]))
        t2 = RigidTransform(np.eye(3), np.array([0.0, 8.0, 0.0]))
        out = deform_vertices(verts, w, [t1, t2])
        assert np.allclose(out[0], [1.0, 6.0, 0.0])


class TestRegistration:
    def test_identical_volumes_zero_field(self):
        a = textured_blob(32, 16.0)
        va = AttenuationVolume(a, (1, 1, 1), (0, 0, 0))
        fld, energies = register_volumes(va, va)
        assert np.abs(fld.u).max() == 0.0
        assert energies[-1] == pytest.approx(0.0, abs=1e-12)

    def test_known_shift_recovered(self):
        a = textured_blob(48, 22.0)
        b = textured_blob(48, 24.0)
        va = AttenuationVolume(a, (1, 1, 1), (0, 0, 0))
        vb = AttenuationVolume(b, (1, 1, 1), (0, 0, 0))
        fld, energies = register_volumes(va, vb)
        support = a > 0.3 * a.max()
        mean_u = fld.u[support].mean(axis=0)
        assert np.allclose(mean_u, [2.0, 0.0, 0.0], atol=0.3)
        assert all(energies[i + 1] <= energies[i] for i in range(len(energies) - 1))

    def test_grid_mismatch(self):
        va = AttenuationVolume(np.zeros((8, 8, 8), dtype=np.float32), (1, 1, 1), (0, 0, 0))
        vb = AttenuationVolume(np.zeros((8, 8, 9), dtype=np.float32), (1, 1, 1), (0, 0, 0))
        with pytest.raises(ValidationError):
            register_volumes(va, vb)


class TestPhaseInterpolation:
    def _shift_pair(self):
        a = textured_blob(48, 22.0)
        b = textured_blob(48, 24.0)
        va = AttenuationVolume(a, (1, 1, 1), (0, 0, 0))
        vb = AttenuationVolume(b, (1, 1, 1), (0, 0, 0))
        fld, _ = register_volumes(va, vb)
        return va, vb, fld

    def test_zero_fraction_is_bit_identical(self):
        va, _, fld = self._shift_pair()
        out = interpolate_phase(va, fld, 0.0)
        assert np.array_equal(out.data, va.data)

    def test_full_fraction_matches_target(self):
        va, vb, fld = self._shift_pair()
        out = interpolate_phase(va, fld, 1.0)
        mae = np.abs(out.data.astype(float) - vb.data).mean()
        assert mae < 0.05 * np.ptp(vb.data)

    def test_half_fraction_translates_half(self):
        va, _, fld = self._shift_pair()
        half = interpolate_phase(va, fld, 0.5)
        ref = textured_blob(48, 23.0)  # analytic half-shift
        c = fftconvolve(half.data.astype(float), ref[::-1, ::-1, ::-1], mode="same")
        peak = np.unravel_index(np.argmax(c), c.shape)
        assert peak == (24, 24, 24)  # aligned: no residual offset

    def test_continuity_in_fraction(self):
        va, _, fld = self._shift_pair()
        a1 = interpolate_phase(va, fld, 0.5).data.astype(float)
        a2 = interpolate_phase(va, fld, 0.5 + 1e-3).data.astype(float)
        l2 = np.sqrt(((a1 - a2) ** 2).mean())
        assert l2 < 1e-3 * np.ptp(va.data) * 10

    def test_pure_translation_field(self):
        a = textured_blob(48, 22.0)
        va = AttenuationVolume(a, (1, 1, 1), (0, 0, 0))
        u = np.zeros((48, 48, 48, 3))
        u[..., 0] = 2.0
        out = interpolate_phase(va, DeformationField(u), 0.5)
        ref = textured_blob(48, 23.0)
        assert np.abs(out.data - ref)[4:-4, 4:-4, 4:-4].max() < 0.05

    def test_field_io_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        fld = DeformationField(rng.normal(0, 1, (6, 5, 4, 3)).astype(np.float32))
        save_field(fld, str(tmp_path / "f.raw"))
        back = load_field(str(tmp_path / "f.raw"))
        assert np.array_equal(back.u, fld.u)

    def test_keypose_io_round_trip(self, tmp_path):
        from cathlab.dynamics import load_keyposes, save_keyposes

        handles = HandleSet((np.array([0, 1]), np.array([5, 6, 7])))
        r90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        keyposes = [
            [RigidTransform.identity(), RigidTransform(r90, np.array([1.0, 2.0, 3.0]))],
            [RigidTransform(r90, np.zeros(3)), RigidTransform.identity()],
        ]
        path = str(tmp_path / "poses.json")
        save_keyposes(path, handles, keyposes)
        back_handles, back_poses = load_keyposes(path)
        assert [g.tolist() for g in back_handles.vertex_groups] == [[0, 1], [5, 6, 7]]
        assert len(back_poses) == 2
        assert np.allclose(back_poses[0][1].r, r90)
        assert np.allclose(back_poses[0][1].t, [1.0, 2.0, 3.0])


class TestPhaseClock:
    def test_zero_phase_at_peak(self):
        clock = PhaseClock(np.array([1.0, 2.0, 3.0]))
        assert clock.beat_phase(2.0) == 0.0

    def test_mid_rr_maps_to_midspan(self):
        clock = PhaseClock(np.array([0.0, 1.0]))
        assert clock.beat_phase(0.5) == pytest.approx(0.5)
        assert clock.model_percent(0.5) == pytest.approx(0.5 * (106.0 - (-5.0)) + (-5.0))

    def test_wraps_at_next_peak(self):
        clock = PhaseClock(np.array([0.0, 1.0, 2.0]))
        assert clock.beat_phase(1.0 - 1e-9) == pytest.approx(1.0, abs=1e-8)
        assert clock.beat_phase(1.0) == 0.0

    def test_monotone_within_beat(self):
        clock = PhaseClock(np.array([0.0, 0.8, 1.7]))
        ts = np.linspace(0.0, 0.8, 100, endpoint=False)
        phases = [clock.beat_phase(float(t)) for t in ts]
        assert all(b > a for a, b in zip(phases, phases[1:]))

    def test_model_phase_index_fraction(self):
        clock = PhaseClock(np.array([0.0, 1.0]), n_phases=20)
        idx, frac = model_phase_at(clock, 0.5)
        assert idx == 9 and frac == pytest.approx(0.5)
        idx, frac = model_phase_at(clock, 0.0)
        assert idx == 0 and frac == 0.0

    def test_needs_two_peaks(self):
        with pytest.raises(InsufficientDataError):
            PhaseClock(np.array([1.0]))
