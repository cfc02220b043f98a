"""Acceptance suite: one test per release criterion.

Each test prints a single PASS/FAIL line (run with ``pytest -s`` to see them
all) and enforces its stated tolerance and runtime budget.
"""

import itertools
import json
import math
import threading
import time
import urllib.request

import numpy as np
import pytest
from scipy import ndimage

from cathlab.drr import Image2D, build_octree, integrate_rays, render_drr
from cathlab.dynamics import (
    HandleSet,
    RigidTransform,
    compute_skinning_weights,
    deform_vertices,
    interpolate_phase,
    register_volumes,
)
from cathlab.enhance import cnr, enhance_pipeline, fwhm
from cathlab.geometry import (
    CArmPose,
    angles_from_direction,
    direction_from_angles,
    project_points,
    projection_matrix,
    rotation_primary,
    rotation_secondary,
    source_position,
)
from cathlab.hemodynamics import (
    build_curve,
    detect_r_peaks,
    edv_esv,
    flow_rate,
    heart_rates,
    mesh_volume,
    peak_rates,
    stroke_cardiac_output,
    synthesize_ecg,
    valve_events,
)
from cathlab.metrics import (
    dice,
    max_error_pct,
    mean_trajectory_error,
    morphological_consistency,
    resample_polyline,
    wasserstein_trajectories,
)
from cathlab.phantom import PhantomSpec, beating_tube_phases, generate_vessel_phantom, straight_tube_spec
from cathlab.stereo import (
    StereoParams,
    camera_from_pose,
    camera_project,
    fit_bspline_ransac,
    match_curves_dp,
    reconstruct_guidewire,
    triangulate,
)
from cathlab.volume import AttenuationVolume, SurfaceMesh

from conftest import bar_tet_mesh, branched_tet_mesh, icosphere, tube_tet_mesh


def report(name: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def test_geometry_round_trip():
    with Timer() as t:
        alphas = np.linspace(-math.pi, math.pi, 52)[1:-1]
        betas = np.linspace(-1.4, 1.4, 50)
        worst_rt = 0.0
        worst_orth = 0.0
        for a in alphas[::1]:
            ra = rotation_primary(a)
            worst_orth = max(worst_orth, np.abs(ra.T @ ra - np.eye(3)).max(),
                             abs(np.linalg.det(ra) - 1.0))
            for b in betas:
                v = direction_from_angles(a, b)
                ra2, rb2 = angles_from_direction(v)
                worst_rt = max(worst_rt, abs(ra2 - a), abs(rb2 - b))
        for a in np.linspace(-3, 3, 25):
            for b in np.linspace(-1.4, 1.4, 25):
                rb = rotation_secondary(b, a)
                worst_orth = max(worst_orth, np.abs(rb.T @ rb - np.eye(3)).max(),
                                 abs(np.linalg.det(rb) - 1.0))
    ok = worst_rt <= 1e-9 and worst_orth <= 1e-12 and t.elapsed < 1.0
    report(
        "geometry round-trip",
        ok,
        f"round-trip max err {worst_rt:.2e} (<=1e-9), orthonormality {worst_orth:.2e} "
        f"(<=1e-12), {t.elapsed:.2f}s (<1s)",
    )


def test_drr_analytic_slab_and_linearity():
    with Timer() as t:
        n = 100
        data = np.full((n, n, n), 0.01, dtype=np.float32)
        origin = (-n / 2 + 0.5,) * 3
        cube = AttenuationVolume(data, (1.0, 1.0, 1.0), origin)
        pose = CArmPose(n_u=256, n_v=256)
        img = render_drr(cube, pose)
        central = img.pixels[pose.n_v // 2, pose.n_u // 2]
        slab_err = abs(central - 1.0)

        rng = np.random.default_rng(0)
        a = rng.random((64, 64, 64), dtype=np.float32)
        b = rng.random((64, 64, 64), dtype=np.float32)
        spacing, org = (1.0, 1.0, 1.0), (-32.0, -32.0, -32.0)
        src = np.array([0.0, -700.0, 3.0])
        ends = rng.uniform(-30, 30, size=(400, 3)) + np.array([0.0, 600.0, 0.0])
        ia = integrate_rays(AttenuationVolume(a, spacing, org), src, ends)
        ib = integrate_rays(AttenuationVolume(b, spacing, org), src, ends)
        iab = integrate_rays(AttenuationVolume(a + b, spacing, org), src, ends)
        i2a = integrate_rays(AttenuationVolume(2.0 * a, spacing, org), src, ends)
        superpos = np.abs(iab - (ia + ib)).max()
        linearity = np.abs(i2a - 2.0 * ia).max() / max(ia.max(), 1e-300)
    ok = slab_err <= 1e-6 and superpos <= 1e-6 and linearity <= 1e-9 and t.elapsed < 10.0
    report(
        "DRR analytic slab",
        ok,
        f"central-ray |err| {slab_err:.2e} (<=1e-6), superposition {superpos:.2e} (<=1e-6), "
        f"linearity {linearity:.2e} (<=1e-9), {t.elapsed:.1f}s (<10s)",
    )


def test_octree_equivalence_and_speed():
    with Timer() as t:
        spec = straight_tube_spec(
            length_mm=100.0, radius_mm=4.0, dims=(256, 256, 256), spacing_mm=0.5,
            vessel_attenuation=0.02,
        )
        vol, _, _ = generate_vessel_phantom(spec)
        empty_frac = float(np.mean(vol.data == 0.0))
        pose = CArmPose(n_u=512, n_v=512)
        t0 = time.perf_counter()
        naive = render_drr(vol, pose)
        t_naive = time.perf_counter() - t0
        tree = build_octree(vol)
        t0 = time.perf_counter()
        accel = render_drr(vol, pose, accel=tree)
        t_accel = time.perf_counter() - t0
        max_delta = np.abs(naive.pixels - accel.pixels).max()
        speedup = t_naive / t_accel
    ok = (
        empty_frac >= 0.6 and max_delta <= 1e-6 and speedup >= 1.5 and t.elapsed < 120.0
    )
    report(
        "octree equivalence + speed",
        ok,
        f"empty {empty_frac:.1%} (>=60%), max|delta| {max_delta:.2e} (<=1e-6), "
        f"speedup {speedup:.2f}x (>=1.5x), total {t.elapsed:.0f}s (<120s)",
    )


def test_hemodynamics_analytic_suite():
    with Timer() as t:
        period = 60.0 / 51.0
        ts = np.linspace(-0.05 * period, 1.06 * period, 20)
        curve = build_curve(ts, 100.0 + 50.0 * np.cos(2.0 * np.pi * ts / period))
        edv, esv, _, _ = edv_esv(curve)
        t_avo, t_avc = valve_events(curve)
        per, _, _, _ = peak_rates(curve, t_avo, t_avc)
        qt, q = flow_rate(curve, t_avo, t_avc, n=2000)
        integral = float(np.trapezoid(q, qt))
        drop = float(curve.value(t_avo) - curve.value(t_avc))
        sv, co, ef = stroke_cardiac_output(150.0, 55.0, 51.0)
    per_err = abs(abs(per) - 100.0 * math.pi / period) / (100.0 * math.pi / period)
    q_err = abs(integral - drop) / drop
    ok = (
        abs(edv - 150.0) <= 0.2
        and abs(esv - 50.0) <= 0.2
        and per_err <= 0.01
        and q_err <= 0.005
        and sv == 95.0
        and abs(ef - 63.33333333333333) <= 0.01
        and abs(co - 4.845) <= 0.001
        and t.elapsed < 5.0
    )
    report(
        "hemodynamics analytic suite",
        ok,
        f"EDV {edv:.3f} (150±0.2), ESV {esv:.3f} (50±0.2), |PER| rel err {per_err:.4f} "
        f"(<=1%), ∫Q consistency {q_err:.5f} (<=0.5%), SV {sv} (=95), EF {ef:.4f} "
        f"(63.33±0.01), CO {co:.4f} (4.845±0.001), {t.elapsed:.2f}s (<5s)",
    )


def test_mesh_volume_icosphere():
    with Timer() as t:
        mesh = icosphere(10.0, 4)
        vol_ml = mesh_volume(mesh)
        analytic_mm3 = 4.0 / 3.0 * math.pi * 1000.0
        rel = abs(vol_ml * 1000.0 - analytic_mm3) / analytic_mm3
        moved = mesh_volume(mesh.translated((100.0, -50.0, 3.0)))
        c, s = math.cos(0.7), math.sin(0.7)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        rotated = mesh_volume(SurfaceMesh(mesh.vertices @ r.T, mesh.triangles))
        inv = max(abs(moved - vol_ml), abs(rotated - vol_ml)) / vol_ml
    ok = len(mesh.triangles) == 5120 and rel <= 0.01 and inv <= 1e-9 and t.elapsed < 2.0
    report(
        "mesh volume",
        ok,
        f"icosphere volume {vol_ml * 1000.0:.2f} mm^3 vs {analytic_mm3:.2f} (rel {rel:.4f} "
        f"<=1%), invariance {inv:.2e} (<=1e-9), {t.elapsed:.2f}s (<2s)",
    )


def test_skinning_on_three_meshes():
    with Timer() as t:
        results = []
        cases = {
            "bar": bar_tet_mesh(12, 4, 1.0),
            "tube": tube_tet_mesh(12, 8, 1.0),
            "branched": branched_tet_mesh(1.0),
        }
        worst_unity = worst_bounds = worst_rigid = 0.0
        for name, mesh in cases.items():
            assert len(mesh.vertices) <= 5000
            x = mesh.vertices[:, 0]
            handles = HandleSet(
                (np.flatnonzero(x == x.min()), np.flatnonzero(x == x.max()))
            )
            w = compute_skinning_weights(mesh, handles)
            worst_unity = max(worst_unity, float(np.abs(w.w.sum(1) - 1.0).max()))
            worst_bounds = max(
                worst_bounds, float(max(-w.w.min(), w.w.max() - 1.0, 0.0))
            )
            angle = 0.3
            c, s = math.cos(angle), math.sin(angle)
            tr = RigidTransform(
                np.array([[c, 0, -s], [0, 1, 0], [s, 0, c]]), np.array([4.0, -2.0, 1.0])
            )
            out = deform_vertices(mesh.vertices, w, [tr, tr])
            expect = tr.apply(mesh.vertices)
            worst_rigid = max(worst_rigid, float(np.abs(out - expect).max()))
            results.append(name)
        bar = cases["bar"]
        xb = bar.vertices[:, 0]
        wb = compute_skinning_weights(
            bar, HandleSet((np.flatnonzero(xb == 0.0), np.flatnonzero(xb == 12.0)))
        )
        mid = np.flatnonzero(xb == 6.0)
        mid_dev = float(np.abs(wb.w[mid, 0] - 0.5).max())
    ok = (
        worst_unity <= 1e-6
        and worst_bounds <= 1e-9
        and worst_rigid <= 1e-9
        and mid_dev <= 1e-6
        and t.elapsed < 30.0
    )
    report(
        "skinning",
        ok,
        f"meshes {results}, unity dev {worst_unity:.2e} (<=1e-6), bounds excess "
        f"{worst_bounds:.2e} (<=1e-9), rigidity {worst_rigid:.2e} (<=1e-9), midplane "
        f"dev {mid_dev:.2e} (<=1e-6), {t.elapsed:.1f}s (<30s)",
    )


def _textured_blob(n, cx, s=7.0):
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


def test_registration_and_phase_interpolation():
    with Timer() as t:
        a = _textured_blob(64, 30.0)
        b = _textured_blob(64, 32.0)
        va = AttenuationVolume(a, (1, 1, 1), (0, 0, 0))
        vb = AttenuationVolume(b, (1, 1, 1), (0, 0, 0))
        fld, energies = register_volumes(va, vb)
        support = a > 0.3 * a.max()
        mean_u = fld.u[support].mean(axis=0)
        shift_err = float(np.abs(mean_u - np.array([2.0, 0.0, 0.0])).max())
        monotone = all(energies[i + 1] <= energies[i] for i in range(len(energies) - 1))
        identical = np.array_equal(interpolate_phase(va, fld, 0.0).data, va.data)
    ok = shift_err <= 0.3 and monotone and identical and t.elapsed < 60.0
    report(
        "registration/interpolation",
        ok,
        f"mean displacement {np.round(mean_u, 3)} (err {shift_err:.3f} <=0.3 vox), "
        f"energy monotone {monotone}, a=0 bit-identical {identical}, "
        f"{t.elapsed:.0f}s (<60s @64^3)",
    )


PRESETS = [(34.3, 29.7), (-30.2, 0.2), (-32.4, -0.3), (-32.4, -32.1)]


def _wire_spec():
    s = np.linspace(0.0, 1.0, 14)
    pts = np.column_stack(
        [
            7.0 * np.sin(2.0 * np.pi * s) * (1.0 - 0.3 * s),
            6.0 * np.cos(1.6 * np.pi * s) - 2.0,
            46.0 * (s - 0.5),
        ]
    )
    return PhantomSpec(
        pts, 0.7, dims=(128, 128, 128), spacing_mm=(0.45,) * 3, vessel_attenuation=0.05
    )


def _rasterize_curve(uv, shape, width_px=2):
    mask = np.zeros(shape, bool)
    uvr = np.round(uv - 0.5).astype(int)
    ok = (
        (uvr[:, 0] >= 0) & (uvr[:, 0] < shape[1]) & (uvr[:, 1] >= 0) & (uvr[:, 1] < shape[0])
    )
    mask[uvr[ok, 1], uvr[ok, 0]] = True
    return ndimage.binary_dilation(mask, iterations=width_px)


def test_stereo_end_to_end():
    with Timer() as t:
        phases = beating_tube_phases(_wire_spec(), 4, amplitude_mm=3.0, direction=(0.6, 0.8, 0.0))
        pose1 = CArmPose(alpha=math.radians(-45.0), n_u=384, n_v=384, fd_mm=220.0)
        pose2 = CArmPose(alpha=math.radians(45.0), n_u=384, n_v=384, fd_mm=220.0)
        cam1, cam2 = camera_from_pose(pose1), camera_from_pose(pose2)
        params = StereoParams(sigmas=(1.5, 2.5, 3.5))
        mtes = []
        rec0 = gt0 = None
        for k, (vol, gt, _) in enumerate(phases):
            tree = build_octree(vol)
            i1 = render_drr(vol, pose1, accel=tree)
            i2 = render_drr(vol, pose2, accel=tree)
            f1 = Image2D(i1.pixels.max() - i1.pixels)
            f2 = Image2D(i2.pixels.max() - i2.pixels)
            curve, diag = reconstruct_guidewire(f1, f2, cam1, cam2, params)
            rec = curve.sample(200)
            gt_r = resample_polyline(gt, 200)
            mte = min(mean_trajectory_error(rec, gt_r), mean_trajectory_error(rec[::-1], gt_r))
            mtes.append(mte)
            if k == 0:
                rec0, gt0 = curve.sample(400), resample_polyline(gt, 400)

        dscs = []
        for a_deg, b_deg in PRESETS:
            pose = CArmPose(
                alpha=math.radians(a_deg), beta=math.radians(b_deg),
                n_u=384, n_v=384, fd_mm=220.0,
            )
            pm = projection_matrix(pose)
            m_gt = _rasterize_curve(project_points(pm, gt0), (384, 384))
            m_rec = _rasterize_curve(project_points(pm, rec0), (384, 384))
            dscs.append(dice(m_gt, m_rec))

        # noise-free synthetic loop: project -> match -> triangulate -> fit
        sweep = np.linspace(0.0, 4.0 * np.pi, 150)
        helix = np.column_stack(
            [8 * np.cos(sweep), 8 * np.sin(sweep), 30 * sweep / (2 * np.pi) - 30.0]
        )
        cam1s = camera_from_pose(CArmPose(alpha=math.radians(-45.0), n_u=256, n_v=256, fd_mm=280.0))
        cam2s = camera_from_pose(CArmPose(alpha=math.radians(45.0), n_u=256, n_v=256, fd_mm=280.0))
        uv1 = np.array([camera_project(cam1s, x) for x in helix])
        uv2 = np.array([camera_project(cam2s, x) for x in helix])

        def features(uv):
            d1 = np.gradient(uv, axis=0)
            d2 = np.gradient(d1, axis=0)
            speed2 = (d1**2).sum(1)
            kap = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / np.maximum(speed2, 1e-12) ** 1.5
            tan = d1 / np.linalg.norm(d1, axis=1, keepdims=True)
            from cathlab.stereo import Centerline2D

            return Centerline2D(uv, tan, kap, (256, 256))

        ms = match_curves_dp(features(uv1), features(uv2), cam1s, cam2s)
        pts3d = np.array(
            [triangulate(cam1s, cam2s, p, q) for p, q in zip(ms.points1, ms.points2)]
        )
        loop_curve, _ = fit_bspline_ransac(pts3d, n_ctrl=20)
        loop_dev = float(loop_curve.distances_to(helix).max())
    ok = (
        max(mtes) < 1.0
        and sum(d >= 0.75 for d in dscs) >= 3
        and loop_dev < 0.1
        and t.elapsed < 180.0
    )
    report(
        "stereo end-to-end",
        ok,
        f"per-phase MTE {np.round(mtes, 3)} mm (<1.0 each), preset DSC {np.round(dscs, 3)} "
        f"(>=0.75 in >=3/4), noise-free loop max dev {loop_dev:.4f} mm (<0.1), "
        f"{t.elapsed:.0f}s (<180s)",
    )


def test_metrics_oracles():
    with Timer() as t:
        rng = np.random.default_rng(7)
        p = rng.random((8, 2)) * 10.0
        q = rng.random((8, 2)) * 10.0
        cost = np.linalg.norm(p[:, None, :] - q[None, :, :], axis=2)
        brute = min(
            sum(cost[i, perm[i]] for i in range(8))
            for perm in itertools.permutations(range(8))
        )
        w = wasserstein_trajectories(p, q)
        w_err = abs(w - brute / 8.0)

        a = np.zeros(200, dtype=bool)
        b = np.zeros(200, dtype=bool)
        a[:100] = True
        b[50:150] = True
        dice_ok = dice(a, b) == 0.5

        line = np.zeros((10, 3))
        line[:, 0] = np.linspace(0.0, 50.0, 10)
        offset = line + np.array([3.0, 4.0, 0.0])
        mte_ok = abs(mean_trajectory_error(line, offset) - 5.0) < 1e-9
        me_ok = abs(max_error_pct(line, offset, 100.0) - 5.0) < 1e-9

        pts = np.zeros((20, 3))
        pts[:, 0] = np.linspace(0.0, 90.0, 20)
        from cathlab.metrics import VesselDescriptor

        v = VesselDescriptor(pts, np.full(20, 3.0), 45.0)
        pts_r = np.zeros((20, 3))
        pts_r[:, 0] = np.linspace(0.0, 100.0, 20)
        r = VesselDescriptor(pts_r, np.full(20, 3.0), 45.0)
        out = morphological_consistency(v, r)
        expect = 0.3 * out["C_L"] + 0.3 * out["C_D"] + 0.2 * out["C_T"] + 0.2 * out["C_theta"]
        weights_err = abs(out["C_overall"] - expect)
    ok = (
        w_err <= 1e-12
        and dice_ok
        and mte_ok
        and me_ok
        and weights_err <= 1e-12
        and t.elapsed < 30.0
    )
    report(
        "metrics oracles",
        ok,
        f"W1 vs 8! brute force |err| {w_err:.2e} (exact), Dice/MTE/ME hand cases "
        f"{dice_ok}/{mte_ok}/{me_ok}, overall-weights |err| {weights_err:.2e} (<=1e-12), "
        f"{t.elapsed:.1f}s (<30s)",
    )


def test_enhancement_properties(enhancement_scene):
    s = enhancement_scene
    with Timer() as t:
        wins = 0
        ratios = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            noisy = Image2D(
                s["clean"].pixels + rng.normal(0.0, s["noise_sigma"], s["clean"].pixels.shape)
            )
            out, _ = enhance_pipeline(noisy)
            ratio = cnr(out, s["fg"], s["bg"]) / cnr(noisy, s["fg"], s["bg"])
            ratios.append(ratio)
            wins += ratio >= 1.2

        rng = np.random.default_rng(0)
        step = np.zeros((96, 96))
        step[:, 48:] = 1.0
        step = ndimage.gaussian_filter(step, 3.0)
        img = Image2D(step + rng.normal(0.0, 0.01, step.shape))
        out, _ = enhance_pipeline(img)
        row_b = ndimage.gaussian_filter1d(img.pixels[48], 1.0)
        row_a = ndimage.gaussian_filter1d(out.pixels[48], 1.0)
        fwhm_before = fwhm(np.abs(np.gradient(row_b)))
        fwhm_after = fwhm(np.abs(np.gradient(row_a)))
    ok = wins >= 9 and fwhm_after <= fwhm_before and t.elapsed < 60.0
    report(
        "enhancement properties",
        ok,
        f"CNR ratio >=1.2 in {wins}/10 seeds (min {min(ratios):.2f}, median "
        f"{np.median(ratios):.2f}), step FWHM {fwhm_before:.2f} -> {fwhm_after:.2f} px "
        f"(non-increasing), {t.elapsed:.0f}s (<60s)",
    )


def test_ecg_detection_band():
    with Timer() as t:
        total = found = fp = 0
        hr_errs = []
        for hr in (45.0, 60.0, 75.0, 90.0, 120.0):
            x, truth = synthesize_ecg(20.0, hr, 500.0, snr_db=10.0, seed=int(hr))
            det = detect_r_peaks(x, 500.0)
            matched = sum(1 for tp in truth if np.min(np.abs(det - tp)) < 0.05)
            total += len(truth)
            found += matched
            fp += len(det) - matched
            _, mean_hr = heart_rates(det)
            hr_errs.append(abs(mean_hr - hr))
        _, hand = heart_rates([0.0, 1.0, 2.2])
        hand_err = abs(hand - 60.0 * 2.0 / 2.2)
    ok = (
        found == total
        and fp == 0
        and max(hr_errs) < 0.5
        and hand_err < 1e-12
        and t.elapsed < 10.0
    )
    report(
        "ECG detection",
        ok,
        f"sensitivity {found}/{total}, false positives {fp}, max mean-HR error "
        f"{max(hr_errs):.3f} bpm (<0.5), RRI hand case |err| {hand_err:.2e} (exact), "
        f"{t.elapsed:.1f}s (<10s)",
    )


def test_service_determinism(tmp_path):
    from cathlab.service.cli import main
    from cathlab.service.scene import Scene, generate_scene
    from cathlab.service.server import make_server

    with Timer() as t:
        scene_dir = str(tmp_path / "scene")
        generate_scene(
            {
                "preset": "straight_tube",
                "length_mm": 40.0,
                "radius_mm": 2.0,
                "dims": [48, 48, 48],
                "spacing_mm": 1.0,
                "n_phases": 1,
                "hr_bpm": 51.0,
                "ecg_duration_s": 8.0,
            },
            scene_dir,
        )
        scene = Scene(scene_dir)
        srv = make_server(scene, host="127.0.0.1", port=0)
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        base = f"http://127.0.0.1:{srv.server_address[1]}"
        try:
            url = base + "/api/render?alpha_deg=15&beta_deg=-10&phase=0&w=96&h=96"
            with urllib.request.urlopen(url, timeout=30) as r:
                png1 = r.read()
            with urllib.request.urlopen(url, timeout=30) as r:
                png2 = r.read()
            raw_url = base + "/api/render?alpha_deg=15&beta_deg=-10&phase=0&w=96&h=96&format=raw"
            with urllib.request.urlopen(raw_url, timeout=30) as r:
                api_raw = r.read()
        finally:
            srv.shutdown()
            srv.server_close()
        raw_path = str(tmp_path / "cli.raw")
        rc = main([
            "render", "--scene", scene_dir, "--alpha", "15", "--beta", "-10",
            "--phase", "0", "--w", "96", "--h", "96",
            "--out", str(tmp_path / "cli.pgm"), "--raw", raw_path,
        ])
        with open(raw_path, "rb") as f:
            cli_raw = f.read()
    ok = png1 == png2 and api_raw == cli_raw and rc == 0
    report(
        "service determinism",
        ok,
        f"repeat API render byte-identical {png1 == png2}, CLI raw == API raw "
        f"{api_raw == cli_raw} ({len(api_raw)} bytes), {t.elapsed:.1f}s",
    )
