"""Pixel metrics, model complexity accounting and lane post-processing."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .model import ModelSpec, decoder_channels, encoder_channels, param_shapes


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: list[str] = field(default_factory=list)
    params: int | None = None
    macs: int | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    for name, arr in (("prediction", pred), ("truth", truth)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} map must be binary")
    p, t = pred.astype(bool), truth.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, int(p.size - tp - fp - fn))


def metrics(c: ConfusionCounts) -> MetricsReport:
    """Accuracy, precision, recall and F1; a zero denominator yields 0 and is named in ``degenerate``."""
    if c.total <= 0:
        raise ValueError("no pixels evaluated")
    flags = []
    accuracy = (c.tp + c.tn) / c.total
    if c.tp + c.fp:
        precision = c.tp / (c.tp + c.fp)
    else:
        precision = 0.0
        flags.append("precision")
    if c.tp + c.fn:
        recall = c.tp / (c.tp + c.fn)
    else:
        recall = 0.0
        flags.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        flags.append("f1")
    return MetricsReport(accuracy, precision, recall, f1, flags)


def binarize(logits: np.ndarray) -> np.ndarray:
    """Channel argmax of ``... x 2 x H x W`` logits (ties go to background)."""
    return (logits[..., 1, :, :] > logits[..., 0, :, :]).astype(np.uint8)


# ---------------------------------------------------------------------------
# complexity


def _conv_macs(cin: int, cout: int, k: int, h: int, w: int) -> int:
    return cout * h * w * cin * k * k


def layer_costs(spec: ModelSpec) -> list[tuple[str, int, int]]:
    """(layer, params, MACs for one forward pass over S frames) for every layer."""
    shapes = param_shapes(spec)
    H, W, S = spec.input_height, spec.input_width, spec.sequence_length

    def n(name):
        return int(np.prod(shapes[name]))

    rows = []
    h, w = H, W
    for i, (ci, co) in enumerate(encoder_channels(spec)):
        if i:
            h, w = h // 2, w // 2
        rows.append((f"enc.{i}.conv1", n(f"enc.{i}.conv1.weight") + co, S * _conv_macs(ci, co, 3, h, w)))
        rows.append((f"enc.{i}.conv2", n(f"enc.{i}.conv2.weight") + co, S * _conv_macs(co, co, 3, h, w)))
    cb, hid = spec.bottleneck_channels, spec.convlstm_hidden
    if spec.has_scnn:
        for d in ("down", "up", "right", "left"):
            k = spec.scnn_kernel_len
            rows.append((f"scnn.{d}", n(f"scnn.{d}.weight"), S * cb * h * w * k))
    if spec.uses_attention:
        rows.append(("attn.score", n("attn.score.weight") + 1, S * cb * h * w))
        for layer in range(spec.convlstm_layers):
            cin = cb if layer == 0 else hid
            rows.append((f"attn.lstm.{layer}", n(f"attn.lstm.{layer}.weight") + 4 * hid, S * 4 * hid * (cin + hid)))
        rows.append(("attn.gate", n("attn.gate.weight") + cb, hid * cb))
    else:
        k = spec.convlstm_kernel
        for layer in range(spec.convlstm_layers):
            cin = cb if layer == 0 else hid
            rows.append((
                f"convlstm.{layer}",
                n(f"convlstm.{layer}.weight") + 4 * hid,
                S * _conv_macs(cin + hid, 4 * hid, k, h, w),
            ))
    for i, (cu, cs, co) in enumerate(decoder_channels(spec)):
        rows.append((f"dec.{i}.up", n(f"dec.{i}.up.weight") + cu, cu * cu * 4 * h * w))
        h, w = 2 * h, 2 * w
        rows.append((f"dec.{i}.conv1", n(f"dec.{i}.conv1.weight") + co, _conv_macs(cu + cs, co, 3, h, w)))
        rows.append((f"dec.{i}.conv2", n(f"dec.{i}.conv2.weight") + co, _conv_macs(co, co, 3, h, w)))
    rows.append(("head", n("head.weight") + spec.head_channels, _conv_macs(spec.base_channels, spec.head_channels, 1, h, w)))
    return rows


def count_params_macs(spec: ModelSpec) -> tuple[int, int]:
    rows = layer_costs(spec)
    return sum(r[1] for r in rows), sum(r[2] for r in rows)


# ---------------------------------------------------------------------------
# post-processing

NOISE = -1


def dbscan(points, eps: float = 4.0, min_pts: int = 8) -> np.ndarray:
    """Density-based clustering of 2-D points.

    A point is core when at least ``min_pts`` points (itself included) lie
    within Euclidean distance ``eps``.  Clusters are grown from unvisited core
    points in input order and numbered 0, 1, ...; points reached by no
    cluster are labelled ``NOISE`` (-1).
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    neighbors = cKDTree(pts).query_ball_point(pts, r=eps)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        frontier = [i]
        while frontier:
            j = frontier.pop()
            for k in neighbors[j]:
                if labels[k] == NOISE:
                    labels[k] = cluster
                    if core[k]:
                        frontier.append(k)
        cluster += 1
    return labels


@dataclass
class CurveFit:
    coeffs: np.ndarray  # highest power first, padded to length 4 (x = c0 y^3 + c1 y^2 + c2 y + c3)
    degree: int
    rms: float


def fit_curve(pixels, max_degree: int = 3) -> CurveFit:
    """Least-squares ``x = f(y)`` through ``(row, col)`` pixels; the degree drops with too few distinct rows."""
    pix = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(pix) == 0:
        raise ValueError("no pixels to fit")
    y, x = pix[:, 0], pix[:, 1]
    degree = min(max_degree, len(np.unique(y)) - 1)
    while True:
        vander = np.vander(y, degree + 1)
        scale = np.linalg.norm(vander, axis=0)
        scale[scale == 0] = 1.0
        sol, _, rank, _ = np.linalg.lstsq(vander / scale, x, rcond=None)
        if rank == degree + 1 or degree == 0:
            break
        degree -= 1
    coeffs = sol / scale
    rms = float(np.sqrt(np.mean((vander @ coeffs - x) ** 2)))
    return CurveFit(np.concatenate([np.zeros(3 - degree), coeffs]), degree, rms)


@dataclass
class LaneInstance:
    cluster: int
    pixels: np.ndarray  # K x 2 (row, col)
    fit: CurveFit | None
    color: int


def perspective_coords(pts: np.ndarray, height: int, horizon_margin: int = 3) -> np.ndarray:
    """Map (row, col) pixels to (row, lateral offset at the bottom row).

    Lanes converge towards a vanishing point just above the topmost lane
    pixel, so near the top neighbouring lanes sit a pixel or two apart. Scaling
    the offset from the vanishing column by ``span / (row - horizon)`` undoes
    the convergence and keeps lanes a roughly constant distance apart.
    """
    pts = np.asarray(pts, dtype=np.float64)
    top = pts[:, 0].min()
    horizon = top - horizon_margin
    vanish_col = pts[pts[:, 0] <= top + 1, 1].mean()
    span = height - 1 - horizon
    return np.column_stack([pts[:, 0], (pts[:, 1] - vanish_col) * span / (pts[:, 0] - horizon)])


def cluster_lanes(mask: np.ndarray, eps: float = 4.0, min_pts: int = 8, perspective: bool = True) -> list[LaneInstance]:
    """Split a binary lane mask into DBSCAN instances with a fitted centre curve each.

    With ``perspective`` the clustering runs on :func:`perspective_coords`;
    turn it off for masks whose lanes do not converge.
    """
    mask = np.asarray(mask)
    pts = np.argwhere(mask > 0)
    feats = perspective_coords(pts, mask.shape[0]) if perspective and len(pts) else pts
    labels = dbscan(feats, eps, min_pts)
    out = []
    for cid in range(labels.max() + 1 if len(labels) else 0):
        member = pts[labels == cid]
        fit = fit_curve(member) if len(member) else None
        out.append(LaneInstance(cid, member, fit, cid))
    return out


def render_curves(shape: tuple[int, int], instances: list[LaneInstance], half_width: float = 1.0) -> np.ndarray:
    """Rasterise the fitted curves back to an instance-id map (-1 = background)."""
    h, w = shape
    out = np.full((h, w), -1, dtype=np.int64)
    cols = np.arange(w)[None, :]
    for inst in instances:
        if inst.fit is None:
            continue
        rows = np.arange(inst.pixels[:, 0].min(), inst.pixels[:, 0].max() + 1)
        xs = np.polyval(inst.fit.coeffs, rows)
        hit = np.abs(cols - xs[:, None]) <= half_width
        rr, cc = np.nonzero(hit)
        out[rows[rr], cc] = inst.color
    return out


PALETTE = np.array([
    [1.0, 0.15, 0.15], [0.15, 1.0, 0.15], [0.2, 0.4, 1.0], [1.0, 0.9, 0.1],
    [1.0, 0.2, 1.0], [0.1, 1.0, 1.0], [1.0, 0.55, 0.1], [0.6, 0.3, 1.0],
])


def render_overlay(frame: np.ndarray, labels: np.ndarray, alpha: float = 0.6, color=None) -> np.ndarray:
    """Alpha-blend lane colours onto an ``H x W x 3`` frame.

    ``labels`` is either a binary mask (tinted with ``color``, default red) or
    an instance-id map where -1 is background.
    """
    frame = np.asarray(frame, dtype=np.float64)
    labels = np.asarray(labels)
    if frame.shape[:2] != labels.shape or frame.ndim != 3:
        raise ValueError(f"frame {frame.shape} and mask {labels.shape} differ in size")
    out = frame.copy()
    if labels.dtype == bool or (labels.min(initial=0) >= 0 and labels.max(initial=0) <= 1):
        tint = np.asarray(PALETTE[0] if color is None else color, dtype=np.float64)
        sel = labels.astype(bool)
        out[sel] = (1 - alpha) * frame[sel] + alpha * tint
        return out
    for cid in np.unique(labels[labels >= 0]):
        sel = labels == cid
        out[sel] = (1 - alpha) * frame[sel] + alpha * PALETTE[int(cid) % len(PALETTE)]
    return out
