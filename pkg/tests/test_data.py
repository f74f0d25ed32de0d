import dataclasses

import numpy as np
import pytest

from laneforge.data import (
    SCENE_PRESETS,
    SAMPLING_PLAN,
    DataError,
    DatasetIndex,
    ImageFormatError,
    IndexRecord,
    Lane,
    SceneConfig,
    augment,
    generate_sequence,
    load_index,
    load_record,
    random_scene,
    read_image,
    sample_frames,
    save_sample,
    sliding_windows,
    synthetic_dataset,
    write_image,
    write_index,
)

SAMPLING_EXPECTED = {
    (13, 3): (1, 4, 7, 10, 13),
    (13, 2): (5, 7, 9, 11, 13),
    (13, 1): (9, 10, 11, 12, 13),
    (20, 3): (8, 11, 14, 17, 20),
    (20, 2): (12, 14, 16, 18, 20),
    (20, 1): (16, 17, 18, 19, 20),
}


def test_sampling_plan():
    for labeled, stride in SAMPLING_PLAN["train"] + SAMPLING_PLAN["test_normal"]:
        assert sample_frames(labeled, stride) == SAMPLING_EXPECTED[(labeled, stride)]
    with pytest.raises(DataError):
        sample_frames(13, 4)


@pytest.mark.parametrize("labeled", [13, 20])
@pytest.mark.parametrize("stride", [1, 2, 3])
def test_sample_frames_progression(labeled, stride):
    idx = sample_frames(labeled, stride)
    assert idx[-1] == labeled and np.all(np.diff(idx) == stride)


def test_sliding_windows_cover_segment():
    wins = sliding_windows(20)
    assert wins[0] == (1, 2, 3, 4, 5) and wins[1] == (2, 3, 4, 5, 6)
    assert wins[-1] == (16, 17, 18, 19, 20) and len(wins) == 16


def test_generation_is_deterministic():
    a = generate_sequence(random_scene(12, "shadow"))
    b = generate_sequence(random_scene(12, "shadow"))
    assert a.frames.tobytes() == b.frames.tobytes()
    assert a.label.tobytes() == b.label.tobytes()


def test_zero_ego_motion_gives_identical_frames():
    cfg = random_scene(3)
    still = dataclasses.replace(cfg, lateral=(0.0,) * 5, longitudinal=(0.0,) * 5)
    frames = generate_sequence(still).frames
    for f in frames[1:]:
        assert np.array_equal(f, frames[0])
    assert not np.array_equal(generate_sequence(cfg).frames[0], generate_sequence(cfg).frames[-1])


@pytest.mark.parametrize("preset", SCENE_PRESETS)
def test_label_fraction_in_range(preset):
    for seed in range(100 if preset == "normal" else 15):
        sample = generate_sequence(random_scene(seed, preset))
        assert 0.01 <= sample.label.mean() <= 0.08
        assert sample.frames.shape == (5, 3, 64, 128) and sample.frames.dtype == np.float32
        assert 0 <= sample.frames.min() and sample.frames.max() <= 1


def test_crossing_lanes_rejected():
    cfg = random_scene(0)
    crossing = (Lane((0.0, 1.0, 0.0)), Lane((0.0, -1.0, 127.0)))
    with pytest.raises(DataError):
        generate_sequence(dataclasses.replace(cfg, lanes=crossing))
    with pytest.raises(DataError):
        SceneConfig(64, 128, (Lane((0, 0, 10)),), 20, 25)


def test_synthetic_dataset_prefix_and_threads(monkeypatch):
    f5, l5 = synthetic_dataset(5, 4)
    f3, l3 = synthetic_dataset(3, 4)
    assert np.array_equal(f5[:3], f3) and np.array_equal(l5[:3], l3)
    monkeypatch.setenv("LANEFORGE_THREADS", "3")
    ft, lt = synthetic_dataset(5, 4)
    assert np.array_equal(ft, f5) and np.array_equal(lt, l5)


# -- index files --------------------------------------------------------------

def _write_dataset(tmp_path, n=3):
    records = []
    for i in range(n):
        records.append(save_sample(generate_sequence(random_scene(i)), tmp_path, f"clip{i}"))
    write_index(DatasetIndex(records), tmp_path / "train.txt")
    return records


def test_index_round_trip(tmp_path):
    records = _write_dataset(tmp_path)
    idx = load_index(tmp_path / "train.txt")
    assert len(idx) == 3 and idx.records == records
    sample = load_record(tmp_path / "train.txt", idx.records[0])
    ref = generate_sequence(random_scene(0))
    assert np.abs(sample.frames - ref.frames).max() <= 1 / 255 + 1e-6
    assert np.array_equal(sample.label, ref.label)


def test_index_errors(tmp_path):
    _write_dataset(tmp_path, 2)
    lines = (tmp_path / "train.txt").read_text().splitlines()
    (tmp_path / "bad.txt").write_text(lines[0] + "\n" + " ".join(lines[1].split()[:5]) + "\n")
    with pytest.raises(DataError, match="bad.txt:2"):
        load_index(tmp_path / "bad.txt")
    (tmp_path / "missing.txt").write_text(lines[0].replace("clip0_3.ppm", "nope.ppm") + "\n")
    with pytest.raises(DataError, match="line 1: nope.ppm"):
        load_index(tmp_path / "missing.txt")
    assert len(load_index(tmp_path / "missing.txt", check_files=False)) == 1


# -- augmentation ----------------------------------------------------------------

def test_augment_examples():
    s = generate_sequence(random_scene(5, "curve"))
    twice = augment(augment(s, "hflip"), "hflip")
    assert twice.frames.tobytes() == s.frames.tobytes() and twice.label.tobytes() == s.label.tobytes()
    assert augment(s, "hflip").label.sum() == s.label.sum()
    same = augment(s, "rotate", angle=0.0)
    np.testing.assert_allclose(same.frames, s.frames, atol=1e-6)
    assert np.array_equal(same.label, s.label)


@pytest.mark.parametrize("op,kw", [("rotate", {"angle": 4.0}), ("rotate", {"angle": -3.0}),
                                   ("crop-resize", {"box": (5, 10, 60, 120)})])
def test_augment_preserves_invariants(op, kw):
    s = generate_sequence(random_scene(2))
    out = augment(s, op, **kw)
    assert out.frames.shape == s.frames.shape and out.label.shape == s.label.shape
    assert set(np.unique(out.label)) <= {0, 1}


def test_augment_errors():
    s = generate_sequence(random_scene(2))
    with pytest.raises(DataError):
        augment(s, "rotate", angle=10.0)
    with pytest.raises(DataError):
        augment(s, "shear")


# -- rasters -----------------------------------------------------------------

def test_image_round_trip(tmp_path):
    img = np.random.default_rng(0).random((16, 24, 3))
    write_image(tmp_path / "a.ppm", img)
    assert np.abs(read_image(tmp_path / "a.ppm") - img).max() <= 1 / 255
    gray = np.random.default_rng(1).random((16, 24))
    write_image(tmp_path / "a.pgm", gray)
    assert np.abs(read_image(tmp_path / "a.pgm") - gray).max() <= 1 / 255


def test_p6_header(tmp_path):
    write_image(tmp_path / "h.ppm", np.zeros((128, 256, 3)))
    raw = (tmp_path / "h.ppm").read_bytes()
    header = b"P6\n256 128\n255\n"
    assert raw.startswith(header) and len(raw) == len(header) + 3 * 256 * 128


def test_image_errors(tmp_path):
    write_image(tmp_path / "t.ppm", np.zeros((8, 8, 3)))
    raw = (tmp_path / "t.ppm").read_bytes()
    (tmp_path / "trunc.ppm").write_bytes(raw[:-10])
    with pytest.raises(ImageFormatError, match="truncated"):
        read_image(tmp_path / "trunc.ppm")
    (tmp_path / "magic.ppm").write_bytes(b"P3" + raw[2:])
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "magic.ppm")


def test_index_record_shape():
    rec = IndexRecord(tuple(f"{i}.ppm" for i in range(5)), "l.pgm")
    assert len(rec.inputs) == 5
