"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also repeated in the terminal summary of any run that includes this file.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from labelsynth.augment import AugmentConfig, read_manifest, run_augment
from labelsynth.camera import (
    IDENTITY_POSE,
    Pose,
    project_point,
    project_rim_circle,
    render_reference,
    rim_circle_points,
    silhouette_lines,
    target_region,
)
from labelsynth.conic import Ellipse, common_external_tangents, cross_ratio, fit_ellipse, solve_fourth_point
from labelsynth.errors import LabelSynthError
from labelsynth.imaging import load_image, psnr, resize, save_png
from labelsynth.retrieval import Embedding, TripletBatch, batch_all_triplet_loss, rank_top_k
from labelsynth.rims import detect_label_region
from labelsynth.synthesis import extract_line_samples, front_view, reproject, synthesize_view

from _support import DEFAULTS, arc_rms, cached_render, central_region, random_pose, smooth_texture

CYL, CAM = DEFAULTS
DETECTION_POSES = [random_pose(np.random.default_rng(1000 + i)) for i in range(50)]


# -- 1. cross-ratio -------------------------------------------------------------------


def test_criterion_1_cross_ratio(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_map = worst_solve = 0.0
    for _ in range(1000):
        # four spread-out points and a 1D projective map with its pole far from them
        pts = np.sort(rng.uniform(-10, 10, 4))
        while np.min(np.diff(pts)) < 0.5:
            pts = np.sort(rng.uniform(-10, 10, 4))
        a, b, c, d = pts
        p, q, s = rng.uniform(-3, 3, 3)
        pole = rng.choice([-1.0, 1.0]) * rng.uniform(20, 40)
        f = lambda x: (p * x + q) / (x - pole) + s
        if abs(p * pole + q) < 1e-3:
            continue
        k = cross_ratio(a, b, c, d)
        k2 = cross_ratio(f(a), f(b), f(c), f(d))
        worst_map = max(worst_map, abs(k2 - k) / max(1.0, abs(k)))
        worst_solve = max(worst_solve, abs(solve_fourth_point(a, c, d, k) - b))
    elapsed = time.perf_counter() - start
    ok = worst_map <= 1e-9 and worst_solve <= 1e-9 and elapsed < 1.0
    criterion(1, ok, f"map error {worst_map:.1e}, round trip {worst_solve:.1e}, {elapsed:.2f} s")
    assert ok


# -- 2. common tangents -----------------------------------------------------------------


def support(e: Ellipse, theta):
    """Support function ``h(n) = n.c + sqrt(n^T M n)``, vectorised over angles."""
    theta = np.asarray(theta, dtype=float)
    n = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    M = e.rotation @ np.diag([e.a**2, e.b**2]) @ e.rotation.T
    return n @ e.center + np.sqrt(np.einsum("...i,ij,...j->...", n, M, n))


def oracle_tangent_angles(e1, e2, samples=3600):
    """Normal angles where the two support functions agree: a dense sweep
    for sign changes, each polished by Brent's method."""
    g = lambda t: float(support(e1, t) - support(e2, t))
    ts = np.linspace(0.0, 2 * math.pi, samples + 1)
    vals = support(e1, ts) - support(e2, ts)
    roots = [brentq(g, ts[i], ts[i + 1], xtol=1e-15) for i in np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))]
    return np.array(roots)


def angle_gap(t1, t2):
    d = (t1 - t2) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def test_criterion_2_common_tangents(criterion):
    rng = np.random.default_rng(2)
    elapsed = 0.0  # implementation time only; the oracle is timed separately
    oracle_start = time.perf_counter()
    worst_angle = worst_res = 0.0
    for _ in range(200):
        e1 = Ellipse(*rng.uniform(-50, 50, 2), *sorted(rng.uniform(2, 40, 2), reverse=True), rng.uniform(0, math.pi))
        a2, b2 = sorted(rng.uniform(2, 40, 2), reverse=True)
        direction = rng.uniform(0, 2 * math.pi)
        gap = e1.a + a2 + rng.uniform(1, 60)
        e2 = Ellipse(e1.cx + gap * math.cos(direction), e1.cy + gap * math.sin(direction), a2, b2, rng.uniform(0, math.pi))
        tick = time.perf_counter()
        lines = common_external_tangents(e1, e2)[:2]
        elapsed += time.perf_counter() - tick
        oracle = oracle_tangent_angles(e1, e2)
        assert len(oracle) == 2
        for line in lines:
            # normal of the line, oriented so both ellipses lie on its negative side
            n = np.array([line.l1, line.l2])
            n = n / np.linalg.norm(n)
            if line.signed_distance([e1.center])[0] > 0:
                n = -n
            t = math.atan2(n[1], n[0])
            worst_angle = max(worst_angle, min(angle_gap(t, o) for o in oracle))
            worst_res = max(worst_res, abs(e1.tangency_residual(line)), abs(e2.tangency_residual(line)))
    total = time.perf_counter() - oracle_start

    l1, l2, vp = common_external_tangents(Ellipse(0, 0, 1, 1, 0), Ellipse(4, 0, 1, 1, 0))
    parallel = vp.is_infinite and np.allclose(sorted(-l.l3 / l.l2 for l in (l1, l2)), [-1, 1], atol=1e-12)
    _, _, vp = common_external_tangents(Ellipse(0, 0, 1, 1, 0), Ellipse(6, 0, 2, 2, 0))
    homothety = np.allclose(vp.xy(), (-6, 0), atol=1e-9)
    l1, l2, vp = common_external_tangents(Ellipse(0, 0, 5, 1, 0), Ellipse(0, 10, 5, 1, 0))
    translated = vp.is_infinite and np.allclose(sorted(-l.l3 / l.l1 for l in (l1, l2)), [-5, 5], atol=1e-12)

    ok = worst_angle <= 1e-4 and worst_res <= 1e-6 and elapsed < 10.0 and parallel and homothety and translated
    criterion(
        2, ok,
        f"angle error {worst_angle:.1e} rad, residual {worst_res:.1e}, {elapsed:.1f} s "
        f"({total:.1f} s with oracle), "
        f"examples {parallel}/{homothety}/{translated}",
    )
    assert ok


# -- 3. projection consistency ---------------------------------------------------------------


def test_criterion_3_projection(criterion):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst_fit = worst_tan = 0.0
    for _ in range(1000):
        pose = random_pose(rng)
        left, right, _ = silhouette_lines(pose, CYL, CAM)
        for h in (CYL.label_top_mm, CYL.label_bottom_mm):
            analytic = project_rim_circle(pose, h, CYL, CAM)
            fitted = fit_ellipse(project_point(rim_circle_points(pose, h, CYL, 500), CAM))
            diff = np.array([analytic.cx - fitted.cx, analytic.cy - fitted.cy, analytic.a - fitted.a,
                             analytic.b - fitted.b, angle_gap(2 * analytic.theta, 2 * fitted.theta) / 2])
            worst_fit = max(worst_fit, float(np.abs(diff).max()))
            worst_tan = max(worst_tan, abs(analytic.tangency_residual(left)), abs(analytic.tangency_residual(right)))
    elapsed = time.perf_counter() - start
    left, right, _ = silhouette_lines(IDENTITY_POSE, CYL, CAM)
    half = (right.x_at(240.0) - left.x_at(240.0)) / 2
    ok = worst_fit <= 1e-6 and worst_tan <= 1e-6 and abs(half - 237.4) <= 0.1 and elapsed < 30.0
    criterion(3, ok, f"fit gap {worst_fit:.1e}, tangency {worst_tan:.1e}, half-width {half:.3f} px, {elapsed:.1f} s")
    assert ok


# -- 4. detection fidelity ------------------------------------------------------------------------


def test_criterion_4_detection(criterion):
    good, worst, failures = 0, 0.0, []
    for i, pose in enumerate(DETECTION_POSES):
        img, _ = cached_render(pose, i)
        truth = target_region(pose, CYL, CAM)
        try:
            reg = detect_label_region(img)
        except LabelSynthError as exc:
            failures.append(f"{i}: {exc}")
            continue
        rms = max(arc_rms(reg.upper, truth.upper_arc), arc_rms(reg.lower, truth.lower_arc))
        worst = max(worst, rms)
        if rms <= 2.0:
            good += 1
        else:
            failures.append(f"{i}: {rms:.2f} px")
    ok = good >= 45
    criterion(4, ok, f"{good}/50 within 2 px RMS (worst success {worst:.2f} px){'; ' if failures else ''}{', '.join(failures)}")
    assert ok


# -- 5. synthesis round trip --------------------------------------------------------------------------


def test_criterion_5_round_trip(criterion):
    values = []
    for i, pose in enumerate(DETECTION_POSES[:20]):
        src, _ = cached_render(IDENTITY_POSE, i)
        ref, ref_mask = cached_render(pose, i)
        out, _ = synthesize_view(src, detect_label_region(src), pose, CYL, CAM)
        values.append(psnr(out, ref, central_region(ref_mask, 0.6)))
    src, src_mask = cached_render(IDENTITY_POSE, 0)
    out, mask = synthesize_view(src, detect_label_region(src), IDENTITY_POSE, CYL, CAM)
    both = mask & src_mask
    identity = float(np.abs(out.astype(float) - src)[both].mean())
    ok = min(values) >= 20.0 and identity <= 2.0
    criterion(
        5, ok,
        f"PSNR min {min(values):.2f} / median {np.median(values):.2f} / max {max(values):.2f} dB over 20 poses, "
        f"identity mean abs diff {identity:.3f} gray levels",
    )
    assert ok


# -- 6. per-pixel cross-ratio -------------------------------------------------------------------------


def test_criterion_6_per_pixel_cross_ratio(criterion):
    src_pose, dst_pose = DETECTION_POSES[20], DETECTION_POSES[21]
    img, _ = cached_render(src_pose, 20)
    samples = extract_line_samples(img, detect_label_region(img))
    target = target_region(dst_pose, CYL, CAM)
    _, mask, info = reproject(samples, target, trace=True)

    # destination quadruple from image points: A', the pixel position used, C', D'
    a_dst, c_dst = info["anchor_dst"], info["end_dst"]
    e = (c_dst - a_dst) / np.linalg.norm(c_dst - a_dst, axis=1, keepdims=True)
    b_pt = a_dst + info["b_dst"][:, None] * e
    vp = target.vp
    if vp.is_infinite:
        d_dst = np.full(len(e), np.inf)
    else:
        d_dst = np.sum((vp.xy() - a_dst) * e, axis=1)
    k_dst = cross_ratio(0.0, np.sum((b_pt - a_dst) * e, axis=1), np.sum((c_dst - a_dst) * e, axis=1), d_dst)

    worst = 0.0
    src_vp = samples.region.vp
    for j in range(2):
        k = info["k0"] + j
        A, C, d = samples.anchors[k], samples.ends[k], samples.directions[k]
        B = A + info["b_src"][:, j, None] * d
        d_src = np.full(len(k), np.inf) if src_vp.is_infinite else np.sum((src_vp.xy() - A) * d, axis=1)
        k_src = cross_ratio(0.0, np.sum((B - A) * d, axis=1), np.sum((C - A) * d, axis=1), d_src)
        err = np.abs(k_src - k_dst) / np.maximum(1.0, np.abs(k_dst))
        worst = max(worst, float(err.max()))
    ok = worst <= 1e-6 and mask.sum() == len(k_dst)
    criterion(6, ok, f"{len(k_dst)} written pixels, worst relative cross-ratio gap {worst:.1e}")
    assert ok


# -- 7. triplet loss --------------------------------------------------------------------------------------


def five_loop_loss(x, m):
    x = x / np.linalg.norm(x, axis=2, keepdims=True)
    P, K, _ = x.shape
    total = 0.0
    for i in range(P):
        for a in range(K):
            for p in range(K):
                if p == a:
                    continue
                for j in range(P):
                    if j == i:
                        continue
                    for n in range(K):
                        d = (1 - x[i, a] @ x[i, p]) - (1 - x[i, a] @ x[j, n])
                        total += max(0.0, m + d)
    return total


def test_criterion_7_triplet_loss(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        P, K, D = rng.integers(2, 5), rng.integers(2, 5), rng.integers(1, 9)
        m = rng.uniform(0, 1)
        x = rng.normal(size=(P, K, D))
        got = batch_all_triplet_loss(TripletBatch(x, tuple(range(P)), m)).loss
        worst = max(worst, abs(got - five_loop_loss(x, m)))
    examples = [
        ([[(1, 0), (1, 0)], [(0, 1), (0, 1)]], 0.0),
        ([[(1, 0), (1, 0)], [(1, 0), (1, 0)]], 4.0),
        ([[(1, 0), (0, 1)], [(-1, 0), (0, -1)]], 2.0),
    ]
    exact = [batch_all_triplet_loss(TripletBatch(np.array(v, float), (0, 1), 0.5)).loss == want for v, want in examples]
    ok = worst <= 1e-9 and all(exact)
    criterion(7, ok, f"brute-force gap {worst:.1e} over 100 batches, worked examples {exact}")
    assert ok


# -- 8. augmentation pipeline ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_8_pipeline(criterion, tmp_path):
    in_dir = tmp_path / "in"
    in_dir.mkdir()
    img, _ = cached_render(IDENTITY_POSE, 30)
    save_png(in_dir / "label.png", img)
    bg_dir = tmp_path / "bg"
    bg_dir.mkdir()
    rng = np.random.default_rng(8)
    for i in range(3):
        save_png(bg_dir / f"bg{i}.png", rng.integers(40, 256, size=(360 + 100 * i, 520, 3)).astype(np.uint8))

    cfg = AugmentConfig()
    run_augment(in_dir, cfg, tmp_path / "run1")
    run_augment(in_dir, cfg, tmp_path / "run2")
    records = read_manifest(tmp_path / "run1" / "manifest.tsv")
    outputs = sorted(p.name for p in (tmp_path / "run1").glob("*.png"))
    sizes_ok = all(load_image(tmp_path / "run1" / name).shape == (224, 224, 3) for name in outputs)
    b = cfg.pose.bounds()
    poses = np.array([r.pose.as_tuple() for r in records])
    in_range = bool(np.all(poses >= b[:, 0]) and np.all(poses <= b[:, 1]))
    files = lambda d: {p.name: p.read_bytes() for p in sorted(d.iterdir())}
    identical = files(tmp_path / "run1") == files(tmp_path / "run2")

    bg_cfg = AugmentConfig(count=40, backgrounds=bg_dir)
    summary = run_augment(in_dir, bg_cfg, tmp_path / "bg_run")
    black = sum(int(np.all(load_image(tmp_path / "bg_run" / r.output) == 0, axis=-1).sum()) for r in summary.records)

    ok = len(outputs) == 320 and len(records) == 320 and sizes_ok and in_range and identical and black == 0
    criterion(
        8, ok,
        f"{len(outputs)} images / {len(records)} records at 224x224={sizes_ok}, poses in range={in_range}, "
        f"byte-identical rerun={identical}, pure-black pixels with backgrounds={black}",
    )
    assert ok


# -- 9. end-to-end retrieval smoke test -------------------------------------------------------------------------


def embed(image, class_id):
    small = resize(image, (64, 48)).astype(float)
    return Embedding(small.ravel(), class_id)


@pytest.mark.slow
def test_criterion_9_end_to_end(criterion):
    rng = np.random.default_rng(9)
    gallery, queries = [], []
    for c in range(10):
        tex = smooth_texture(100 + c)
        front, _ = render_reference(IDENTITY_POSE, tex)
        gallery.append(embed(front_view(front)[0], c))
        query, _ = render_reference(random_pose(rng), tex)
        queries.append(embed(front_view(query)[0], c))
    hits = sum(rank_top_k(q, gallery, k=5)[0][0] == q.class_id for q in queries)
    ok = hits >= 8
    criterion(9, ok, f"{hits}/10 queries ranked their own label first")
    assert ok
