"""Synthetic lane sequences, tvtLANE-style index files, augmentation and PNM codecs."""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

RESOLUTIONS = {"full": (128, 256), "desk": (64, 128)}
SCENE_PRESETS = ("normal", "occlude", "shadow", "bright", "blur", "curve", "dirty")
_LANE_COLORS = {"white": (0.95, 0.95, 0.92), "yellow": (0.93, 0.8, 0.25)}


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Lane:
    coeffs: tuple[float, float, float]  # x = a*y^2 + b*y + c
    color: str = "white"
    dash_period: float = 0.0  # road units; 0 means solid
    dash_duty: float = 1.0


@dataclass(frozen=True)
class SceneConfig:
    height: int
    width: int
    lanes: tuple[Lane, ...]
    horizon: int
    lane_top: int  # first row carrying lane paint
    thickness: float = 3.0  # lane width in px at the bottom row
    sequence_length: int = 5
    lateral: tuple[float, ...] = (0.0,) * 5  # px shift at the bottom row, per frame
    longitudinal: tuple[float, ...] = (0.0,) * 5  # road-unit advance, per frame
    brightness: float = 1.0
    shadows: tuple[tuple[tuple[float, float], ...], ...] = ()
    occlusions: tuple[tuple[int, int, int, int], ...] = ()  # (row0, col0, row1, col1)
    blur: bool = False
    dirt: float = 0.0  # fraction of paint randomly worn away
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not 2 <= len(self.lanes) <= 5:
            raise DataError(f"lane_count must be 2..5, got {len(self.lanes)}")
        if len(self.lateral) != self.sequence_length or len(self.longitudinal) != self.sequence_length:
            raise DataError("ego-motion lists must have one entry per frame")
        if not 0 <= self.horizon < self.lane_top < self.height:
            raise DataError("need 0 <= horizon < lane_top < height")


@dataclass
class Sample:
    frames: np.ndarray  # S x 3 x H x W, float32 in [0, 1]
    label: np.ndarray | None  # H x W uint8 in {0, 1}, for the last frame
    source: str = ""

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise DataError(f"frames must be S x 3 x H x W, got {self.frames.shape}")
        if self.label is not None:
            if self.label.shape != self.frames.shape[2:]:
                raise DataError(f"label {self.label.shape} does not match frames {self.frames.shape[2:]}")
            if not np.isin(self.label, (0, 1)).all():
                raise DataError("label must be binary")


# ---------------------------------------------------------------------------
# rendering


def _depth(cfg: SceneConfig, rows: np.ndarray) -> np.ndarray:
    """0 at the horizon, 1 at the bottom row."""
    return (rows - cfg.horizon) / (cfg.height - 1 - cfg.horizon)


def lane_centers(cfg: SceneConfig, frame: int) -> np.ndarray:
    """Lane centre x per row (lanes x rows) for one frame, including lateral ego-motion."""
    y = np.arange(cfg.height, dtype=np.float64)
    t = _depth(cfg, y)
    xs = np.array([a * y * y + b * y + c for a, b, c in (ln.coeffs for ln in cfg.lanes)])
    return xs + cfg.lateral[frame] * t


def _check_geometry(cfg: SceneConfig) -> None:
    rows = np.arange(cfg.lane_top, cfg.height)
    for f in range(cfg.sequence_length):
        xs = lane_centers(cfg, f)[:, rows]
        gaps = np.diff(xs, axis=0)
        if np.any(gaps <= 1.0):
            raise DataError("lanes cross or touch inside the image")


def _lane_masks(cfg: SceneConfig, frame: int, dashed: bool) -> np.ndarray:
    """Boolean lanes x H x W raster; ``dashed`` applies the paint pattern."""
    h, w = cfg.height, cfg.width
    y = np.arange(h, dtype=np.float64)
    t = np.clip(_depth(cfg, y), 1e-3, None)
    half = cfg.thickness * (0.35 + 0.65 * t) / 2.0
    cols = np.arange(w, dtype=np.float64)[None, :]
    xs = lane_centers(cfg, frame)
    road_dist = 10.0 / t + cfg.longitudinal[frame]
    visible_rows = y >= cfg.lane_top
    masks = np.zeros((len(cfg.lanes), h, w), dtype=bool)
    for k, lane in enumerate(cfg.lanes):
        rows_on = visible_rows.copy()
        if dashed and lane.dash_period > 0:
            phase = np.mod(road_dist / lane.dash_period, 1.0)
            rows_on &= phase < lane.dash_duty
        # widen horizontally so the width is measured across the lane
        slope = np.gradient(xs[k])
        reach = half * np.sqrt(1.0 + slope * slope)
        m = np.abs(cols - xs[k][:, None]) <= reach[:, None]
        masks[k] = m & rows_on[:, None]
    return masks


def _polygon_mask(h: int, w: int, poly: Sequence[tuple[float, float]]) -> np.ndarray:
    """Even-odd fill of a (row, col) polygon."""
    yy, xx = np.mgrid[0:h, 0:w]
    inside = np.zeros((h, w), dtype=bool)
    pts = list(poly)
    for (y0, x0), (y1, x1) in zip(pts, pts[1:] + pts[:1]):
        cond = (y0 > yy) != (y1 > yy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (x1 - x0) * (yy - y0) / (y1 - y0) + x0
        inside ^= cond & (xx < xint)
    return inside


def generate_sequence(cfg: SceneConfig) -> Sample:
    """Render ``cfg`` into S frames plus the last frame's continuous lane mask.

    A pure function of the config: the texture noise is drawn from ``cfg.seed``.
    """
    _check_geometry(cfg)
    h, w, s = cfg.height, cfg.width, cfg.sequence_length
    rng = np.random.default_rng(cfg.seed)
    y = np.arange(h, dtype=np.float64)[:, None]

    base = np.empty((3, h, w))
    sky = np.clip(0.55 + 0.35 * (1 - y / max(cfg.horizon, 1)), 0, 1)
    base[0] = 0.45 * sky
    base[1] = 0.6 * sky
    base[2] = 0.85 * sky
    road_rows = (y >= cfg.horizon).repeat(w, axis=1)
    texture = ndimage.uniform_filter(rng.standard_normal((h, w)), size=3) * 0.05
    road = 0.35 + 0.08 * (y / h) + texture
    for ch in range(3):
        base[ch][road_rows] = np.broadcast_to(road, (h, w))[road_rows]
    wear = rng.random((h, w)) < cfg.dirt

    shade = np.ones((h, w))
    for poly in cfg.shadows:
        shade[_polygon_mask(h, w, poly)] *= 0.45

    frames = np.empty((s, 3, h, w))
    for f in range(s):
        img = base.copy()
        masks = _lane_masks(cfg, f, dashed=True)
        for k, lane in enumerate(cfg.lanes):
            paint = masks[k] & ~wear
            for ch in range(3):
                img[ch][paint] = _LANE_COLORS[lane.color][ch]
        img *= shade[None]
        for r0, c0, r1, c1 in cfg.occlusions:
            img[:, r0:r1, c0:c1] = np.array([0.12, 0.12, 0.15])[:, None, None]
        img *= cfg.brightness
        if cfg.blur:
            img = ndimage.uniform_filter(img, size=(1, 3, 3), mode="nearest")
        if cfg.noise:
            img += cfg.noise * np.random.default_rng(cfg.seed * 7919 + 1).standard_normal((3, h, w))
        frames[f] = np.clip(img, 0.0, 1.0)
    label = _lane_masks(cfg, s - 1, dashed=False).any(axis=0).astype(np.uint8)
    return Sample(frames.astype(np.float32), label, f"synthetic:{cfg.seed}")


def random_scene(
    seed: int, preset: str = "normal", height: int = 64, width: int = 128, sequence_length: int = 5
) -> SceneConfig:
    """Draw a valid scene for a challenge preset; resamples until the lane fraction is in [0.01, 0.08]."""
    if preset not in SCENE_PRESETS:
        raise DataError(f"unknown scene preset {preset!r}; expected one of {SCENE_PRESETS}")
    rng = np.random.default_rng([seed, SCENE_PRESETS.index(preset)])
    scale = height / 64.0
    for _ in range(100):
        cfg = _draw_scene(rng, seed, preset, height, width, sequence_length, scale)
        try:
            _check_geometry(cfg)
        except DataError:
            continue
        frac = _lane_masks(cfg, sequence_length - 1, dashed=False).any(axis=0).mean()
        if 0.01 <= frac <= 0.08:
            return cfg
    raise DataError(f"could not draw a valid scene for seed {seed}")


def _draw_scene(rng, seed, preset, h, w, s, scale) -> SceneConfig:
    horizon = int(h * rng.uniform(0.3, 0.4))
    lane_top = horizon + max(2, int(round(h * 0.08)))
    n = int(rng.integers(2, 6))
    vx = w / 2 + rng.uniform(-0.1, 0.1) * w
    spacing = rng.uniform(0.32, 0.45) * w
    bottoms = vx + (np.arange(n) - (n - 1) / 2) * spacing + rng.uniform(-0.15, 0.15) * spacing
    curve = rng.uniform(-0.25, 0.25) * w
    if preset == "curve":
        curve = rng.choice([-1, 1]) * rng.uniform(0.35, 0.6) * w
    span = h - 1 - horizon
    lanes = []
    for k, xb in enumerate(bottoms):
        # x(t) = vx + (xb - vx) t + curve (1 - t)^2 with t = (y - horizon) / span
        a1 = (xb - vx) / span
        c2 = curve / span**2
        a = c2
        b = a1 - 2 * c2 * (span + horizon)
        c = vx - a1 * horizon + c2 * (span + horizon) ** 2
        dashed = rng.random() < 0.6
        lanes.append(Lane(
            (float(a), float(b), float(c)),
            "yellow" if (k == 0 and rng.random() < 0.3) else "white",
            float(rng.uniform(4.0, 8.0)) if dashed else 0.0,
            float(rng.uniform(0.6, 0.8)) if dashed else 1.0,
        ))
    lateral = tuple(np.cumsum(rng.normal(0, 0.8 * scale, s)) - 0.0)
    lateral = tuple(float(v - lateral[-1]) for v in lateral)
    speed = float(rng.uniform(0.8, 2.0))
    longitudinal = tuple(float(speed * f) for f in range(s))
    cfg = dict(
        height=h, width=w, lanes=tuple(lanes), horizon=horizon, lane_top=lane_top,
        thickness=float(rng.uniform(2.5, 3.5) * scale), sequence_length=s,
        lateral=lateral, longitudinal=longitudinal,
        brightness=float(rng.uniform(0.85, 1.1)), noise=0.02, seed=int(seed),
    )
    if preset == "occlude":
        cfg["occlusions"] = tuple(_random_box(rng, h, w, horizon) for _ in range(rng.integers(1, 3)))
    elif preset == "shadow":
        cfg["shadows"] = tuple(_random_poly(rng, h, w, horizon) for _ in range(rng.integers(1, 3)))
    elif preset == "bright":
        cfg["brightness"] = float(rng.uniform(1.3, 1.6))
    elif preset == "blur":
        cfg["blur"] = True
    elif preset == "dirty":
        cfg["dirt"] = float(rng.uniform(0.3, 0.5))
        cfg["occlusions"] = (_random_box(rng, h, w, horizon),)
    return SceneConfig(**cfg)


def _random_box(rng, h, w, horizon) -> tuple[int, int, int, int]:
    bh, bw = int(rng.uniform(0.12, 0.25) * h), int(rng.uniform(0.1, 0.2) * w)
    r0 = int(rng.integers(horizon, h - bh))
    c0 = int(rng.integers(0, w - bw))
    return (r0, c0, r0 + bh, c0 + bw)


def _random_poly(rng, h, w, horizon) -> tuple[tuple[float, float], ...]:
    cy, cx = rng.uniform(horizon, h), rng.uniform(0, w)
    ang = np.sort(rng.uniform(0, 2 * np.pi, 5))
    rad = rng.uniform(0.15, 0.35) * h
    return tuple((float(cy + rad * np.sin(a)), float(cx + 2 * rad * np.cos(a))) for a in ang)


def synthetic_dataset(
    n: int, seed: int, preset: str = "normal", resolution: str = "desk", sequence_length: int = 5
) -> tuple[np.ndarray, np.ndarray]:
    """``n`` samples stacked as (N x S x 3 x H x W float32, N x H x W uint8).

    Sample ``i`` is drawn from seed ``seed * 100003 + i`` so datasets with
    different ``n`` share their prefix.  Generation fans out over
    ``LANEFORGE_THREADS`` workers; order is fixed, so output does not depend on it.
    """
    h, w = RESOLUTIONS[resolution]

    def one(i: int) -> Sample:
        return generate_sequence(random_scene(seed * 100003 + i, preset, h, w, sequence_length))

    workers = max(1, int(os.environ.get("LANEFORGE_THREADS", "1")))
    if workers == 1:
        samples = [one(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            samples = list(pool.map(one, range(n)))
    frames = np.stack([s.frames for s in samples]) if samples else np.zeros((0, sequence_length, 3, h, w), np.float32)
    labels = np.stack([s.label for s in samples]) if samples else np.zeros((0, h, w), np.uint8)
    return frames, labels


# ---------------------------------------------------------------------------
# tvtLANE-style sampling and index files

SAMPLING_PLAN = {
    "train": [(13, 3), (13, 2), (13, 1), (20, 3), (20, 2), (20, 1)],
    "test_normal": [(13, 1), (20, 1)],
}


def sample_frames(labeled_at: int, stride: int, count: int = 5) -> tuple[int, ...]:
    """1-based frame numbers ending at the labeled frame, ``stride`` apart."""
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    first = labeled_at - (count - 1) * stride
    if first < 1:
        raise DataError(f"stride {stride} too large for labeled frame {labeled_at}")
    return tuple(range(first, labeled_at + 1, stride))


def sliding_windows(segment_length: int = 20, count: int = 5) -> list[tuple[int, ...]]:
    """Challenging-set windows 1..5, 2..6, ... until the segment is exhausted."""
    return [tuple(range(s, s + count)) for s in range(1, segment_length - count + 2)]


@dataclass
class IndexRecord:
    inputs: tuple[str, ...]
    label: str


@dataclass
class DatasetIndex:
    records: list[IndexRecord]
    split: str = ""
    stride: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)


def write_index(index: DatasetIndex, path) -> None:
    lines = [" ".join(list(r.inputs) + [r.label]) for r in index.records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_index(path, check_files: bool = True, split: str = "") -> DatasetIndex:
    """Parse one record per line: five input frame paths then the label path.

    Relative paths resolve against the index file's directory.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"index file not found: {path}")
    records, missing = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 paths, found {len(parts)}")
        rec = IndexRecord(tuple(parts[:5]), parts[5])
        if check_files:
            for p in parts:
                full = Path(p) if Path(p).is_absolute() else path.parent / p
                if not full.exists():
                    missing.append(f"line {lineno}: {p}")
        records.append(rec)
    if missing:
        raise DataError(f"{path}: unresolvable paths:\n  " + "\n  ".join(missing))
    return DatasetIndex(records, split)


def load_record(index_path, record: IndexRecord) -> Sample:
    base = Path(index_path).parent

    def resolve(p):
        return Path(p) if Path(p).is_absolute() else base / p

    frames = np.stack([read_image(resolve(p)).transpose(2, 0, 1) for p in record.inputs])
    label = (read_image(resolve(record.label)) >= 0.5).astype(np.uint8)
    return Sample(frames.astype(np.float32), label, str(record.label))


# ---------------------------------------------------------------------------
# augmentation


def _warp(img: np.ndarray, coords: np.ndarray, order: int) -> np.ndarray:
    return ndimage.map_coordinates(img, coords, order=order, mode="constant", cval=0.0)


def augment(sample: Sample, op: str, angle: float = 0.0, box: tuple[int, int, int, int] | None = None) -> Sample:
    """Apply one geometric transform identically to every frame and the label.

    ``op`` is ``hflip``, ``rotate`` (``angle`` in degrees, within +/-5) or
    ``crop-resize`` (``box`` = row0, col0, row1, col1, resized back to full size).
    """
    frames, label = sample.frames, sample.label
    s, c, h, w = frames.shape
    if op == "hflip":
        out_f = frames[..., ::-1].copy()
        out_l = None if label is None else label[:, ::-1].copy()
        return Sample(out_f, out_l, sample.source)
    if op == "rotate":
        if not -5.0 <= angle <= 5.0:
            raise DataError(f"rotation angle {angle} outside [-5, 5] degrees")
        th = np.deg2rad(angle)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        cy, cx = (h - 1) / 2, (w - 1) / 2
        src_y = cy + np.cos(th) * (yy - cy) - np.sin(th) * (xx - cx)
        src_x = cx + np.sin(th) * (yy - cy) + np.cos(th) * (xx - cx)
    elif op == "crop-resize":
        if box is None:
            raise DataError("crop-resize needs a box")
        r0, c0, r1, c1 = box
        if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
            raise DataError(f"crop box {box} outside {h}x{w}")
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        src_y = r0 + yy * (r1 - r0 - 1) / max(h - 1, 1)
        src_x = c0 + xx * (c1 - c0 - 1) / max(w - 1, 1)
    else:
        raise DataError(f"unknown augmentation {op!r}")
    coords = np.stack([src_y, src_x])
    out_f = np.empty_like(frames)
    for i in range(s):
        for ch in range(c):
            out_f[i, ch] = _warp(frames[i, ch].astype(np.float64), coords, 1)
    out_l = None
    if label is not None:
        out_l = (_warp(label.astype(np.float64), coords, 1) >= 0.5).astype(np.uint8)
    return Sample(np.clip(out_f, 0, 1).astype(frames.dtype), out_l, sample.source)


# ---------------------------------------------------------------------------
# binary PNM rasters


class ImageFormatError(ValueError):
    pass


def write_image(path, img: np.ndarray) -> None:
    """Write an H x W (P5) or H x W x 3 (P6) image with values in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot write image of shape {img.shape}")
    if img.min() < 0 or img.max() > 1:
        raise ImageFormatError("image values must lie in [0, 1]")
    h, w = img.shape[:2]
    payload = np.round(img * 255).astype(np.uint8).tobytes()
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + payload)


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_image(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: bad magic {buf[:2]!r}")
    tokens, off = _header_tokens(buf, 4)
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed header") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    channels = 3 if tokens[0] == b"P6" else 1
    n = w * h * channels
    if len(buf) - off < n:
        raise ImageFormatError(f"{path}: truncated payload ({len(buf) - off} of {n} bytes)")
    arr = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off).astype(np.float64) / 255.0
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def save_sample(sample: Sample, directory, stem: str) -> IndexRecord:
    """Write a sample's frames and label as rasters; returns its index record (relative paths)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    inputs = []
    for i, fr in enumerate(sample.frames):
        name = f"{stem}_{i + 1}.ppm"
        write_image(directory / name, fr.transpose(1, 2, 0))
        inputs.append(name)
    write_image(directory / f"{stem}_label.pgm", sample.label.astype(np.float64))
    return IndexRecord(tuple(inputs), f"{stem}_label.pgm")


def scene_summary(cfg: SceneConfig) -> dict:
    return dataclasses.asdict(cfg)
