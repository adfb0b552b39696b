"""Boundary evaluation: NMS, matching vs brute force, ODS/OIS, report I/O."""

import numpy as np
import pytest

from rcfnet import evaluation as E

from oracles import max_matching_bruteforce


def test_match_params_validation():
    with pytest.raises(ValueError):
        E.MatchParams(max_dist_frac=0.0)
    with pytest.raises(ValueError):
        E.MatchParams(thresholds=0)


def test_threshold_sweep_open_interval():
    t = E.threshold_sweep(99)
    assert t.size == 99
    assert 0.0 < t[0] and t[-1] < 1.0
    assert np.allclose(np.diff(t), t[0])


def test_nms_thin_ridge_unchanged():
    p = np.zeros((9, 9))
    p[4, :] = 0.9
    out = E.nms_thin(p)
    assert np.array_equal(out[4], p[4])
    assert not out[[3, 5]].any()


def test_nms_thin_ramp_keeps_center():
    p = np.zeros((9, 9))
    p[3, :] = 0.1
    p[4, :] = 0.9
    p[5, :] = 0.1
    out = E.nms_thin(p)
    assert np.all(out[4] == 0.9)
    assert not out[3].any() and not out[5].any()


def test_nms_never_increases_or_creates(rng):
    from scipy.ndimage import gaussian_filter
    p = np.clip(gaussian_filter(rng.random((16, 16)), 1.5) * 2, 0, 1)
    out = E.nms_thin(p)
    assert np.all(out <= p + 1e-15)
    assert not out[p == 0].any()


def test_nms_survivors_are_local_maxima(rng):
    """Audit: every survivor beats its two neighbors along the quantized
    normal (with the same interpolation), independently rechecked."""
    from scipy.ndimage import gaussian_filter
    p = np.clip(gaussian_filter(rng.random((20, 20)), 2.0) * 3, 0, 1)
    out = E.nms_thin(p)
    theta = E._edge_orientations(p)
    ys, xs = np.nonzero(out)
    for y, x in zip(ys, xs):
        dy, dx = np.sin(theta[y, x]), np.cos(theta[y, x])
        n1 = E._bilinear_at(p, np.array([y + dy]), np.array([x + dx]))[0]
        n2 = E._bilinear_at(p, np.array([y - dy]), np.array([x - dx]))[0]
        assert p[y, x] * 1.01 >= n1 and p[y, x] * 1.01 >= n2


def test_match_boundaries_trivial():
    pred = np.zeros((12, 12))
    gt = np.zeros((12, 12))
    pred[5, 5] = 1
    gt[5, 6] = 1
    assert E.match_boundaries(pred, gt, 2.0) == (1, 1)
    gt2 = np.zeros((12, 12))
    gt2[10, 10] = 1
    pred2 = np.zeros((12, 12))
    pred2[0, 0] = 1
    assert E.match_boundaries(pred2, gt2, 2.0) == (0, 0)


def test_match_boundaries_against_bruteforce():
    """>= 100 random 12x12 instances vs exhaustive optimal matching."""
    rng = np.random.default_rng(42)
    for trial in range(120):
        pred = (rng.random((12, 12)) < 0.05).astype(float)
        gt = (rng.random((12, 12)) < 0.05).astype(float)
        radius = float(rng.uniform(1.0, 3.0))
        mp, mg = E.match_boundaries(pred, gt, radius)
        assert mp == mg
        pred_pix = np.argwhere(pred > 0)
        gt_pix = np.argwhere(gt > 0)
        adj = []
        for py, px in pred_pix:
            adj.append([j for j, (gy, gx) in enumerate(gt_pix)
                        if (py - gy) ** 2 + (px - gx) ** 2 <= radius ** 2])
        want = max_matching_bruteforce(adj, len(pred_pix))
        assert mp == want, f"trial {trial}: got {mp}, want {want}"


def test_match_boundaries_symmetric(rng):
    pred = (rng.random((12, 12)) < 0.08).astype(float)
    gt = (rng.random((12, 12)) < 0.08).astype(float)
    a, _ = E.match_boundaries(pred, gt, 2.0)
    b, _ = E.match_boundaries(gt, pred, 2.0)
    assert a == b


def test_match_boundaries_radius_monotone(rng):
    pred = (rng.random((14, 14)) < 0.08).astype(float)
    gt = (rng.random((14, 14)) < 0.08).astype(float)
    prev = -1
    for radius in (0.5, 1.0, 2.0, 4.0, 8.0):
        m, _ = E.match_boundaries(pred, gt, radius)
        assert m >= prev
        prev = m


def test_evaluate_image_perfect_prediction():
    gt = np.zeros((16, 16))
    gt[8, 3:13] = 1.0
    counts = E.evaluate_image(gt, [gt], E.MatchParams(thresholds=9))
    report = E.ods_ois([counts])
    # prediction == gt at value 1.0: precision = recall = 1 at every t
    assert np.all(report.precision == 1.0)
    assert np.all(report.recall == 1.0)
    assert report.ods_f == 1.0 and report.ois_f == 1.0


def test_evaluate_image_empty_prediction():
    gt = np.zeros((16, 16))
    gt[8, 3:13] = 1.0
    counts = E.evaluate_image(np.zeros((16, 16)), [gt],
                              E.MatchParams(thresholds=5))
    report = E.ods_ois([counts])
    assert np.all(report.precision == 0.0)
    assert np.all(report.recall == 0.0)
    assert report.ods_f == 0.0


def test_evaluate_image_count_bounds(rng):
    pred = np.clip(rng.random((16, 16)), 0, 1) * (rng.random((16, 16)) < 0.2)
    gts = [(rng.random((16, 16)) < 0.1).astype(float) for _ in range(2)]
    counts = E.evaluate_image(pred, gts, E.MatchParams(thresholds=10))
    assert np.all(counts.tp_pred <= counts.n_pred)
    assert np.all(counts.tp_gt <= counts.n_gt)
    assert counts.n_gt == int(sum(g.sum() for g in gts))
    # lowering the threshold can only add predicted pixels
    assert np.all(np.diff(counts.n_pred) <= 0)


def test_evaluate_image_constructed_two_annotator_case():
    """20x20 case with isolated pixels and a sub-pixel radius so every
    matching is forced; counts must equal the hand-computed oracle."""
    pred = np.zeros((20, 20))
    spots = [((2, 2), 0.9), ((2, 10), 0.7), ((10, 2), 0.5),
             ((10, 10), 0.3), ((17, 17), 0.1)]
    for (y, x), v in spots:
        pred[y, x] = v
    g1 = np.zeros((20, 20))
    g1[2, 3] = 1    # matches spot 1 (distance 1)
    g1[10, 3] = 1   # matches spot 3
    g1[5, 5] = 1    # matches nothing
    g2 = np.zeros((20, 20))
    g2[3, 10] = 1   # matches spot 2
    g2[10, 10] = 1  # matches spot 4 exactly
    params = E.MatchParams(max_dist_frac=1.4 / np.hypot(20, 20), thresholds=9)
    counts = E.evaluate_image(pred, [g1, g2], params)
    # oracle, per threshold t in {0.1..0.9}: pred pixels surviving NMS are
    # isolated, so all remain; a pixel is TP if its value >= t and a gt
    # pixel lies within radius 1.4 in either annotator map
    for ti, t in enumerate(counts.thresholds):
        vis = [(yx, v) for yx, v in spots if v >= t - 1e-12]
        n_pred = len(vis)
        tp_pred = sum(1 for (y, x), v in vis
                      if (y, x) in [(2, 2), (2, 10), (10, 2), (10, 10)])
        tp_gt = 0
        for g in ([(2, 3), (10, 3), (5, 5)], [(3, 10), (10, 10)]):
            for gy, gx in g:
                tp_gt += any((gy - y) ** 2 + (gx - x) ** 2 <= 1.4 ** 2
                             for (y, x), v in vis)
        assert counts.n_pred[ti] == n_pred
        assert counts.tp_pred[ti] == tp_pred
        assert counts.tp_gt[ti] == tp_gt
    assert counts.n_gt == 5


def _random_dataset_counts(seed, images=4):
    rng = np.random.default_rng(seed)
    counts = []
    for _ in range(images):
        pred = np.clip(rng.random((16, 16)) * (rng.random((16, 16)) < 0.25),
                       0, 1)
        gts = [(rng.random((16, 16)) < 0.08).astype(float) for _ in range(2)]
        if not any(g.any() for g in gts):
            gts[0][8, 8] = 1.0
        counts.append(E.evaluate_image(pred, gts, E.MatchParams(thresholds=15)))
    return counts


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_ois_at_least_ods(seed):
    report = E.ods_ois(_random_dataset_counts(seed))
    assert report.ois_f >= report.ods_f - 1e-12


def test_single_image_ods_equals_ois():
    counts = _random_dataset_counts(9, images=1)
    report = E.ods_ois(counts)
    assert abs(report.ods_f - report.ois_f) < 1e-12


def test_f_measure_worked_example():
    f = E._f_measure(np.array(0.8), np.array(0.5))
    assert abs(float(f) - 2 * 0.8 * 0.5 / 1.3) < 1e-12


def test_report_text_roundtrip():
    report = E.ods_ois(_random_dataset_counts(5))
    text = E.report_text(report)
    back = E.parse_report_text(text)
    assert np.allclose(back.thresholds, report.thresholds)
    assert np.allclose(back.precision, report.precision, atol=1e-6)
    assert abs(back.ods_f - report.ods_f) < 1e-6
    assert abs(back.ois_f - report.ois_f) < 1e-6
    assert abs(back.ods_threshold - report.ods_threshold) < 1e-6


def test_render_pr_curve(tmp_path):
    report = E.ods_ois(_random_dataset_counts(5))
    out = tmp_path / "pr.png"
    E.render_pr_curve(report, out)
    assert out.exists() and out.stat().st_size > 0
