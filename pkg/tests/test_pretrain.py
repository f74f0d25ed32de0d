import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from laneforge import tensor as T
from laneforge.data import synthetic_dataset
from laneforge.model import Checkpoint, ModelSpec
from laneforge.optim import Optimizer, OptimState
from laneforge.pretrain import (
    apply_mask,
    mask_batch,
    pretrain_epoch,
    reconstruction_loss,
    sample_mask,
)


def test_full_size_mask_count():
    m = sample_mask(128, 256, 0.5, seed=3)
    assert (m.grid_rows, m.grid_cols) == (8, 16)
    assert len(m.masked) == 64 and len(set(m.masked)) == 64
    assert all(0 <= i < 128 for i in m.masked)
    assert m.pixel_mask().sum() == 64 * 256


def test_mask_extremes_and_errors():
    assert sample_mask(64, 128, 0.0).masked == ()
    assert len(sample_mask(64, 128, 1.0).masked) == 32
    with pytest.raises(ValueError):
        sample_mask(60, 128, 0.5)
    with pytest.raises(ValueError):
        sample_mask(64, 128, 1.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**32))
def test_mask_count_and_determinism(ratio, seed):
    a, b = sample_mask(64, 128, ratio, seed), sample_mask(64, 128, ratio, seed)
    assert a == b
    assert len(a.masked) == int(np.floor(ratio * 32 + 0.5))


def test_apply_mask_examples():
    rng = np.random.default_rng(0)
    frame = rng.random((3, 64, 128)) + 0.1
    assert np.array_equal(apply_mask(frame, sample_mask(64, 128, 0.0)), frame)
    assert not apply_mask(frame, sample_mask(64, 128, 1.0)).any()
    one = sample_mask(64, 128, 1 / 32, seed=1)
    out = apply_mask(frame, one)
    assert np.count_nonzero(out != frame) == 16 * 16 * 3
    assert np.array_equal(apply_mask(out, one), out)  # idempotent
    with pytest.raises(ValueError):
        apply_mask(frame, sample_mask(128, 256, 0.5))


def test_reconstruction_loss_examples():
    a = np.zeros((3, 128, 256))
    assert reconstruction_loss(a, a).item() == 0.0
    b = a.copy()
    b[1, 40, 70] = 2.0
    assert reconstruction_loss(b, a).item() == pytest.approx(4.069e-5, abs=5e-9)
    assert reconstruction_loss(b, a).item() == pytest.approx(4 / (128 * 256) / 3, rel=1e-14)


def test_reconstruction_loss_matches_loops():
    rng = np.random.default_rng(4)
    m, p = rng.random((3, 16, 20)), rng.random((3, 16, 20))
    per_channel = []
    for c in range(3):
        acc = 0.0
        for i in range(16):
            for j in range(20):
                acc += (m[c, i, j] - p[c, i, j]) ** 2
        per_channel.append(acc / (16 * 20))
    got = reconstruction_loss(m, p).item()
    assert abs(got - sum(per_channel) / 3) < 1e-10
    assert got == reconstruction_loss(p, m).item()
    with pytest.raises(T.ShapeError):
        reconstruction_loss(m, p[:, :8])


def test_mask_batch_is_independent_per_frame():
    frames = np.ones((2, 5, 3, 64, 128))
    out = mask_batch(frames, 0.5, np.random.default_rng(0))
    patterns = {out[i, j, 0].tobytes() for i in range(2) for j in range(5)}
    assert len(patterns) == 10
    assert np.array_equal(frames, np.ones_like(frames))  # input untouched


def small_setup(lr=1e-3, n=4):
    spec = ModelSpec("SCNN_UNet_ConvLSTM", 32, 64, 3, 4, 3, 3, 1, 32)
    frames, _ = synthetic_dataset(n, 9, resolution="desk")
    frames = frames[:, :3, :, :32, :64]
    ck = Checkpoint.initialize(spec, 0)
    return ck, frames, Optimizer(ck.params, OptimState("radam", lr=lr))


def test_zero_lr_leaves_params_unchanged():
    ck, frames, opt = small_setup(lr=0.0)
    before = {k: v.data.copy() for k, v in ck.params.items()}
    stats = pretrain_epoch(ck, frames, opt, 0.5, seed=1, epoch=1, batch_size=2)
    assert stats["loss"] > 0 and stats["batches"] == 2
    for k, v in ck.params.items():
        assert np.array_equal(v.data, before[k])


def test_target_is_the_unmasked_last_frame(monkeypatch):
    import laneforge.pretrain as P

    seen = []
    real = P.reconstruction_loss

    def spy(recon, original):
        seen.append(np.array(original))
        return real(recon, original)

    monkeypatch.setattr(P, "reconstruction_loss", spy)
    ck, frames, opt = small_setup()
    pretrain_epoch(ck, frames, opt, 0.75, seed=2, epoch=1, batch_size=4)
    order = P.epoch_order(4, 2, 1)
    assert np.array_equal(seen[0], frames[order][:, -1])


def test_pretrain_is_deterministic():
    runs = []
    for _ in range(2):
        ck, frames, opt = small_setup()
        stats = [pretrain_epoch(ck, frames, opt, 0.5, seed=5, epoch=e, batch_size=2)["loss"] for e in (1, 2)]
        runs.append((stats, ck.params["head.weight"].data.tobytes()))
    assert runs[0] == runs[1]


def test_phase_mismatch():
    ck, frames, opt = small_setup()
    ck.phase = "finetune"
    with pytest.raises(ValueError):
        pretrain_epoch(ck, frames, opt)


@pytest.mark.slow
def test_tiny_dataset_overfits():
    with T.precision(32):
        spec = ModelSpec("SCNN_UNet_ConvLSTM", 64, 128, 5, 8, 3, 5, 2, 64)
        frames, _ = synthetic_dataset(4, 21)
        ck = Checkpoint.initialize(spec, 0)
        opt = Optimizer(ck.params, OptimState("radam", lr=1e-3, decay=1.0))
        losses = [pretrain_epoch(ck, frames, opt, 0.5, seed=0, epoch=e, batch_size=4)["loss"] for e in range(1, 201)]
    assert losses[-1] < 0.25 * losses[0]
