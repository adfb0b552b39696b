"""Boundary evaluation: NMS thinning, tolerance-radius correspondence
matching, threshold sweep and ODS/OIS F-measures.

Matching is maximum-cardinality bipartite matching (Hopcroft-Karp) on
the graph linking predicted to ground-truth pixels within the radius.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .tensor import ShapeError


@dataclass
class MatchParams:
    max_dist_frac: float = 0.0075
    thresholds: int = 99

    def __post_init__(self):
        if not 0.0 < self.max_dist_frac < 1.0:
            raise ValueError(f"max_dist_frac must be in (0, 1), got {self.max_dist_frac}")
        if self.thresholds < 1:
            raise ValueError(f"thresholds must be >= 1, got {self.thresholds}")


@dataclass
class ImageCounts:
    """Per-threshold aggregate counts for one image."""
    thresholds: np.ndarray
    tp_pred: np.ndarray
    n_pred: np.ndarray
    tp_gt: np.ndarray
    n_gt: int


@dataclass
class EvalReport:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f_measure: np.ndarray
    ods_f: float
    ods_threshold: float
    ois_f: float


def threshold_sweep(count):
    """`count` evenly spaced thresholds in the open interval (0, 1)."""
    return np.arange(1, count + 1) / (count + 1)


# -- NMS -------------------------------------------------------------------

def _edge_orientations(prob, sigma=2.0):
    """Edge-normal direction per pixel from smoothed second moments."""
    sm = gaussian_filter(prob, sigma, mode="nearest")
    gy, gx = np.gradient(sm)
    jxx = gaussian_filter(gx * gx, sigma, mode="nearest")
    jyy = gaussian_filter(gy * gy, sigma, mode="nearest")
    jxy = gaussian_filter(gx * gy, sigma, mode="nearest")
    # dominant gradient direction of the structure tensor
    return 0.5 * np.arctan2(2 * jxy, jxx - jyy)


def _bilinear_at(arr, ys, xs):
    h, w = arr.shape
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    return (arr[y0, x0] * (1 - fy) * (1 - fx) + arr[y0, x1] * (1 - fy) * fx
            + arr[y1, x0] * fy * (1 - fx) + arr[y1, x1] * fy * fx)


def nms_thin(prob, sigma=2.0, slack=1.01):
    """Suppress pixels that are not local maxima along the edge normal.

    Each pixel is compared against bilinear-interpolated neighbors one
    pixel away on both sides along the estimated normal; survivors keep
    their original value, everything else drops to zero.
    """
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"probability map must be 2-D, got {p.shape}")
    theta = _edge_orientations(p, sigma)
    h, w = p.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy = np.sin(theta)
    dx = np.cos(theta)
    n1 = _bilinear_at(p, yy + dy, xx + dx)
    n2 = _bilinear_at(p, yy - dy, xx - dx)
    keep = (p * slack >= n1) & (p * slack >= n2)
    return np.where(keep, p, 0.0)


# -- matching --------------------------------------------------------------

def _hopcroft_karp(adj, n_left, n_right):
    """Maximum-cardinality matching; adj[i] lists right neighbors of i."""
    INF = float("inf")
    match_l = [-1] * n_left
    match_r = [-1] * n_right
    size = 0
    while True:
        dist = [INF] * n_left
        queue = deque()
        for u in range(n_left):
            if match_l[u] == -1:
                dist[u] = 0
                queue.append(u)
        found = False
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                w = match_r[v]
                if w == -1:
                    found = True
                elif dist[w] == INF:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        if not found:
            return size, match_l, match_r

        def dfs(u):
            for v in adj[u]:
                w = match_r[v]
                if w == -1 or (dist[w] == dist[u] + 1 and dfs(w)):
                    match_l[u] = v
                    match_r[v] = u
                    return True
            dist[u] = INF
            return False

        for u in range(n_left):
            if match_l[u] == -1 and dfs(u):
                size += 1


def _match_masks(pred_pix, gt_pix, radius):
    """Match pixel coordinate arrays; returns (pred_matched, gt_matched)."""
    np_, ng = len(pred_pix), len(gt_pix)
    pred_matched = np.zeros(np_, dtype=bool)
    gt_matched = np.zeros(ng, dtype=bool)
    if np_ == 0 or ng == 0:
        return pred_matched, gt_matched
    tree = cKDTree(gt_pix)
    adj = tree.query_ball_point(pred_pix, radius)
    adj = [sorted(a) for a in adj]
    _, match_l, match_r = _hopcroft_karp(adj, np_, ng)
    for i, v in enumerate(match_l):
        if v != -1:
            pred_matched[i] = True
    for j, u in enumerate(match_r):
        if u != -1:
            gt_matched[j] = True
    return pred_matched, gt_matched


def match_boundaries(pred, gt, radius):
    """Matched pixel counts between two binary boundary maps.

    Counts are equal (one matching), returned separately for the
    multi-annotator aggregation in evaluate_image.
    """
    p = np.asarray(pred)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise ShapeError(f"pred shape {p.shape} != gt shape {g.shape}")
    pred_pix = np.argwhere(p > 0)
    gt_pix = np.argwhere(g > 0)
    pm, gm = _match_masks(pred_pix, gt_pix, radius)
    return int(pm.sum()), int(gm.sum())


def evaluate_image(pred_prob, gt_maps, params=None):
    """Per-threshold counts of one prediction against annotator maps.

    The prediction is NMS-thinned once, binarized at each threshold, and
    matched against every annotator map; a predicted pixel counts as a
    true positive if matched in at least one annotator's matching, while
    recall credits accumulate per annotator.
    """
    if params is None:
        params = MatchParams()
    pred = np.asarray(pred_prob, dtype=np.float64)
    if pred.min() < 0 or pred.max() > 1:
        raise ValueError("prediction values must be in [0, 1]")
    for g in gt_maps:
        if np.asarray(g).shape != pred.shape:
            raise ShapeError(
                f"gt map shape {np.asarray(g).shape} != prediction {pred.shape}")
    h, w = pred.shape
    radius = params.max_dist_frac * float(np.hypot(h, w))
    thresholds = threshold_sweep(params.thresholds)
    thinned = nms_thin(pred)
    gt_pix = [np.argwhere(np.asarray(g) > 0) for g in gt_maps]
    n_gt = int(sum(len(g) for g in gt_pix))

    tp_pred = np.zeros(len(thresholds), dtype=np.int64)
    n_pred = np.zeros(len(thresholds), dtype=np.int64)
    tp_gt = np.zeros(len(thresholds), dtype=np.int64)
    for ti, t in enumerate(thresholds):
        pred_pix = np.argwhere(thinned >= t)
        n_pred[ti] = len(pred_pix)
        any_matched = np.zeros(len(pred_pix), dtype=bool)
        for gp in gt_pix:
            pm, gm = _match_masks(pred_pix, gp, radius)
            any_matched |= pm
            tp_gt[ti] += int(gm.sum())
        tp_pred[ti] = int(any_matched.sum())
    return ImageCounts(thresholds=thresholds, tp_pred=tp_pred, n_pred=n_pred,
                       tp_gt=tp_gt, n_gt=n_gt)


def _f_measure(p, r):
    return np.where(p + r > 0, 2 * p * r / np.where(p + r > 0, p + r, 1.0), 0.0)


def _pr(tp_pred, n_pred, tp_gt, n_gt):
    precision = np.where(n_pred > 0, tp_pred / np.maximum(n_pred, 1), 0.0)
    recall = np.where(n_gt > 0, tp_gt / max(n_gt, 1), 0.0)
    return precision, recall


def ods_ois(image_counts):
    """Dataset-level report: fixed best threshold (ODS) and per-image
    best threshold (OIS) F-measures."""
    if not image_counts:
        raise ValueError("ods_ois needs at least one image")
    thresholds = image_counts[0].thresholds
    tp_pred = np.sum([c.tp_pred for c in image_counts], axis=0)
    n_pred = np.sum([c.n_pred for c in image_counts], axis=0)
    tp_gt = np.sum([c.tp_gt for c in image_counts], axis=0)
    n_gt = int(sum(c.n_gt for c in image_counts))

    precision, recall = _pr(tp_pred, n_pred, tp_gt, n_gt)
    f = _f_measure(precision, recall)
    ods_idx = int(np.argmax(f))

    ois_tp_pred = ois_n_pred = ois_tp_gt = 0
    for c in image_counts:
        p, r = _pr(c.tp_pred, c.n_pred, c.tp_gt, c.n_gt)
        best = int(np.argmax(_f_measure(p, r)))
        ois_tp_pred += int(c.tp_pred[best])
        ois_n_pred += int(c.n_pred[best])
        ois_tp_gt += int(c.tp_gt[best])
    ois_p = ois_tp_pred / ois_n_pred if ois_n_pred > 0 else 0.0
    ois_r = ois_tp_gt / n_gt if n_gt > 0 else 0.0
    ois_f = float(_f_measure(np.array(ois_p), np.array(ois_r)))

    return EvalReport(thresholds=thresholds, precision=precision, recall=recall,
                      f_measure=f, ods_f=float(f[ods_idx]),
                      ods_threshold=float(thresholds[ods_idx]), ois_f=ois_f)


def report_text(report):
    """UTF-8 report: one 't precision recall f' line per threshold, then
    the ODS/OIS summary lines."""
    lines = []
    for t, p, r, f in zip(report.thresholds, report.precision,
                          report.recall, report.f_measure):
        lines.append(f"{t:.6f} {p:.6f} {r:.6f} {f:.6f}")
    lines.append(f"ODS {report.ods_f:.6f} @ {report.ods_threshold:.6f}")
    lines.append(f"OIS {report.ois_f:.6f}")
    return "\n".join(lines) + "\n"


def parse_report_text(text):
    """Inverse of report_text, for the PR-curve renderer."""
    ts, ps, rs, fs = [], [], [], []
    ods = ois = ods_t = None
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "ODS":
            ods, ods_t = float(parts[1]), float(parts[3])
        elif parts[0] == "OIS":
            ois = float(parts[1])
        else:
            t, p, r, f = (float(v) for v in parts)
            ts.append(t); ps.append(p); rs.append(r); fs.append(f)
    return EvalReport(thresholds=np.array(ts), precision=np.array(ps),
                      recall=np.array(rs), f_measure=np.array(fs),
                      ods_f=ods, ods_threshold=ods_t, ois_f=ois)


def render_pr_curve(report, path):
    """Write a PR-curve image for a report."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    order = np.argsort(report.recall)
    ax.plot(report.recall[order], report.precision[order], "-o", markersize=2)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_title(f"ODS {report.ods_f:.3f}  OIS {report.ois_f:.3f}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
