"""
Masked pretraining, weight transfer and fine-tuning
===================================================

A few epochs on a small synthetic set at desk resolution: reconstruct
masked sequences, move the weights into a two-class model, then compare
PolyLoss fine-tuning of the transferred weights with weighted
cross-entropy from scratch. Takes a few minutes on one core.

At this size both models are still in the early phase where nearly every
pixel is called background, so F1 stays low. The separation between the
two arms shows after about 7 fine-tuning epochs on 200 sequences; the
acceptance suite runs that comparison.
"""

import time

from laneforge import tensor as T
from laneforge.data import synthetic_dataset
from laneforge.losses import LossConfig, class_weights
from laneforge.model import Checkpoint, desk_spec, transfer_weights
from laneforge.optim import Optimizer, OptimState, lr_decay
from laneforge.pretrain import pretrain_epoch
from laneforge.train import evaluate, finetune_epoch

N_TRAIN, N_VAL, PRE_EPOCHS, FT_EPOCHS, BATCH = 60, 20, 3, 4, 4

with T.precision(32):
    frames, labels = synthetic_dataset(N_TRAIN, 1)
    vframes, vlabels = synthetic_dataset(N_VAL, 2)
    t0 = time.time()

    # phase 1: reconstruct the last frame from five half-masked frames
    pre = Checkpoint.initialize(desk_spec(head_channels=3), 0)
    opt = Optimizer(pre.params, OptimState("radam", lr=1e-3, decay=0.95))
    for epoch in range(1, PRE_EPOCHS + 1):
        stats = pretrain_epoch(pre, frames, opt, 0.5, seed=0, epoch=epoch, batch_size=BATCH)
        lr_decay(opt.state, epoch)
        print(f"pretrain epoch {epoch}: mse {stats['loss']:.4f}  ({time.time() - t0:.0f}s)")

    # phase 2: everything except the output layer carries over
    w1, w0 = class_weights(labels)
    arms = {
        "pretrained + PolyLoss": (transfer_weights(pre, desk_spec()), "pl", LossConfig()),
        "scratch + weighted CE": (Checkpoint.initialize(desk_spec(), 1000), "ce", LossConfig(omega1=w1, omega0=w0)),
    }
    for name, (ck, kind, cfg) in arms.items():
        opt = Optimizer(ck.params, OptimState("radam", lr=1e-3, decay=0.95))
        for epoch in range(1, FT_EPOCHS + 1):
            stats = finetune_epoch(ck, frames, labels, opt, kind, cfg, seed=0, epoch=epoch, batch_size=BATCH)
            lr_decay(opt.state, epoch)
            rep, _ = evaluate(ck, vframes, vlabels)
            print(f"{name} epoch {epoch}: loss {stats['loss']:.4f}  val F1 {rep.f1:.3f}  precision {rep.precision:.3f}")
