"""Command-line entry point: ``python -m laneforge <subcommand> [flags]``.

Every run resolves defaults < ``--config`` file < explicit flags into one flat
key/value config, writes it to ``<out>/manifest.txt`` and puts all artifacts
under ``<out>``.  ``--config <out>/manifest.txt`` relaunches the same run.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import (
    RESOLUTIONS,
    SCENE_PRESETS,
    DataError,
    ImageFormatError,
    load_index,
    load_record,
    synthetic_dataset,
    write_image,
)
from .evaluation import cluster_lanes, confusion, count_params_macs, metrics, render_curves, render_overlay
from .losses import POLY_GRID, LossConfig, class_weights
from .model import (
    PRESETS,
    VARIANTS,
    Checkpoint,
    CheckpointFormatError,
    SpecError,
    forward,
    load_checkpoint,
    save_checkpoint,
    transfer_weights,
)
from .optim import KINDS, Optimizer, OptimState, lr_decay
from .pretrain import apply_mask, pretrain_epoch, reconstruction_eval, sample_mask
from .train import evaluate, finetune_epoch, predict

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

SUBCOMMANDS = ("pretrain", "finetune", "eval", "ablate-mask", "count", "demo-reconstruct", "grid-search")
ABLATION_RATIOS = (0.25, 0.5, 0.75)

# Reference complexity figures (params in M, MACs in G) for the full preset.
REFERENCE_COMPLEXITY = {
    "UNet_ConvLSTM": (51.1, 69.0),
    "SCNN_UNet_ConvLSTM": (51.3, 93.0),
    "SCNN_UNet_Attention": (13.7, 68.9),
}

DEFAULTS = {
    "variant": "SCNN_UNet_ConvLSTM",
    "preset": "desk",
    "mask_ratio": 0.5,
    "patch_size": 16,
    "loss": "pl",
    "alpha": 1.0,
    "gamma": 1.0,
    "epsilon": 1.0,
    "omega1": 0.0,  # 0 = derive from training label frequencies
    "omega0": 0.0,
    "optimizer": "radam",
    "lr": 1e-3,
    "lr_decay": 0.95,
    "epochs": 30,
    "batch": 8,
    "seed": 0,
    "data_seed": 1,
    "scene_preset": "normal",
    "index": "",
    "val_index": "",
    "n_train": 200,
    "n_val": 50,
    "pretrained": "",
    "from_scratch": False,
    "checkpoint": "",
    "overlays": 0,
    "images": 4,
    "precision": 32,
    "out": "runs/latest",
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw):
    ref = DEFAULTS[key]
    if isinstance(raw, str) and not isinstance(ref, str):
        try:
            if isinstance(ref, bool):
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(raw)
                return raw.lower() in ("true", "1")
            return type(ref)(raw) if not isinstance(ref, int) else int(raw)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r} as {type(ref).__name__}") from None
    return raw


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} not found")
    out = {}
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "subcommand":
            out[key] = value
            continue
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def write_manifest(cfg: dict, path) -> None:
    lines = [f"subcommand = {cfg['subcommand']}"]
    lines += [f"{k} = {cfg[k]!r}" if isinstance(cfg[k], float) else f"{k} = {cfg[k]}" for k in DEFAULTS]
    Path(path).write_text("\n".join(lines) + "\n")


def validate(cfg: dict) -> None:
    if cfg["variant"] not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg['variant']!r}; expected one of {VARIANTS}")
    if cfg["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {cfg['preset']!r}")
    if cfg["loss"] not in ("ce", "pl"):
        raise ConfigError(f"unknown loss {cfg['loss']!r}")
    if cfg["optimizer"] not in KINDS:
        raise ConfigError(f"unknown optimizer {cfg['optimizer']!r}")
    if cfg["scene_preset"] not in SCENE_PRESETS + ("all",):
        raise ConfigError(f"unknown scene preset {cfg['scene_preset']!r}")
    if not 0.0 < cfg["mask_ratio"] < 1.0:
        raise ConfigError("mask ratio must lie in (0, 1)")
    h, w = RESOLUTIONS[cfg["preset"]]
    if cfg["patch_size"] < 1 or h % cfg["patch_size"] or w % cfg["patch_size"]:
        raise ConfigError(f"patch size {cfg['patch_size']} does not tile {h}x{w}")
    for key in ("epochs", "batch", "n_train", "n_val"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    if cfg["precision"] not in (32, 64):
        raise ConfigError("precision must be 32 or 64")
    if cfg["pretrained"] and cfg["from_scratch"]:
        raise ConfigError("--pretrained and --from-scratch are mutually exclusive")
    LossConfig(cfg["alpha"], cfg["gamma"], cfg["epsilon"], cfg["omega1"] or 1.0, cfg["omega0"] or 1.0)
    OptimState(cfg["optimizer"], cfg["lr"], decay=cfg["lr_decay"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="laneforge", description="Masked-autoencoder pretraining and lane segmentation.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="key = value file (e.g. a previous run's manifest.txt)")
    for key, ref in DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(ref, bool):
            ap.add_argument(flag, dest=key, action="store_const", const=True, default=None)
        else:
            ap.add_argument(flag, dest=key, type=type(ref), default=None)
    return ap


def resolve(argv) -> dict:
    ns = build_parser().parse_args(argv)
    cfg = dict(DEFAULTS)
    if ns.config:
        from_file = read_config(ns.config)
        if from_file.pop("subcommand", ns.subcommand) != ns.subcommand:
            raise ConfigError(f"{ns.config} was written for a different subcommand")
        cfg.update(from_file)
    for key in DEFAULTS:
        value = getattr(ns, key)
        if value is not None:
            cfg[key] = value
    cfg["subcommand"] = ns.subcommand
    validate(cfg)
    return cfg


# ---------------------------------------------------------------------------
# helpers


def _spec(cfg, head):
    return PRESETS[cfg["preset"]](cfg["variant"], head_channels=head)


def _optimizer(cfg, params) -> Optimizer:
    return Optimizer(params, OptimState(cfg["optimizer"], cfg["lr"], decay=cfg["lr_decay"]))


def _load_index_arrays(path, resolution):
    index = load_index(path)
    samples = [load_record(path, r) for r in index.records]
    frames = np.stack([s.frames for s in samples]).astype(np.float32)
    if frames.shape[-2:] != RESOLUTIONS[resolution]:
        raise DataError(f"{path}: frames are {frames.shape[-2:]}, preset expects {RESOLUTIONS[resolution]}")
    return frames, np.stack([s.label for s in samples])


def _scenes(cfg):
    return SCENE_PRESETS if cfg["scene_preset"] == "all" else (cfg["scene_preset"],)


def training_data(cfg):
    if cfg["index"]:
        return _load_index_arrays(cfg["index"], cfg["preset"])
    return synthetic_dataset(cfg["n_train"], cfg["data_seed"], cfg["scene_preset"] if cfg["scene_preset"] != "all" else "normal", cfg["preset"])


def validation_data(cfg, scene=None):
    if cfg["val_index"]:
        return _load_index_arrays(cfg["val_index"], cfg["preset"])
    scene = scene or (cfg["scene_preset"] if cfg["scene_preset"] != "all" else "normal")
    return synthetic_dataset(cfg["n_val"], cfg["data_seed"] + 7919, scene, cfg["preset"])


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load(path, phase) -> Checkpoint:
    if not path:
        raise ConfigError(f"a {phase} checkpoint path is required (--checkpoint/--pretrained)")
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint {path} not found")
    ck = load_checkpoint(path)
    if ck.phase != phase:
        raise ConfigError(f"{path} is a {ck.phase} checkpoint, expected {phase}")
    return ck


def _loss_config(cfg, labels) -> LossConfig:
    w1, w0 = cfg["omega1"], cfg["omega0"]
    if cfg["loss"] == "ce" and not (w1 and w0):
        w1, w0 = class_weights(labels)
    return LossConfig(cfg["alpha"], cfg["gamma"], cfg["epsilon"], w1 or 1.0, w0 or 1.0)


# ---------------------------------------------------------------------------
# subcommands


def run_pretrain(cfg, out: Path, ratio=None, val=None) -> tuple[Checkpoint, list]:
    ratio = cfg["mask_ratio"] if ratio is None else ratio
    frames, _ = training_data(cfg)
    ck = Checkpoint.initialize(_spec(cfg, 3), cfg["seed"], "pretrain")
    opt = _optimizer(cfg, ck.params)
    rows = []
    for epoch in range(1, cfg["epochs"] + 1):
        stats = pretrain_epoch(ck, frames, opt, ratio, cfg["seed"], epoch, cfg["batch"], cfg["patch_size"])
        lr_decay(opt.state, epoch)
        row = [epoch, stats["loss"]]
        if val is not None:
            row.append(reconstruction_eval(ck, val, ratio, cfg["seed"], patch=cfg["patch_size"]))
        rows.append(row)
    return ck, rows


def cmd_pretrain(cfg, out: Path) -> None:
    ck, rows = run_pretrain(cfg, out)
    ck.extra = {"mask_ratio": cfg["mask_ratio"]}
    save_checkpoint(ck, out / "pretrain.lfck")
    _write_csv(out / "pretrain_loss.csv", ["epoch", "loss"], rows)


def run_finetune(cfg, data=None, val=None) -> tuple[Checkpoint, list]:
    frames, labels = data if data is not None else training_data(cfg)
    vframes, vlabels = val if val is not None else validation_data(cfg)
    spec = _spec(cfg, 2)
    if cfg["pretrained"]:
        ck = transfer_weights(_load(cfg["pretrained"], "pretrain"), spec, cfg["seed"])
    else:
        ck = Checkpoint.initialize(spec, cfg["seed"], "finetune")
    loss_cfg = _loss_config(cfg, labels)
    opt = _optimizer(cfg, ck.params)
    rows = []
    for epoch in range(1, cfg["epochs"] + 1):
        stats = finetune_epoch(ck, frames, labels, opt, cfg["loss"], loss_cfg, cfg["seed"], epoch, cfg["batch"])
        lr_decay(opt.state, epoch)
        rep, _ = evaluate(ck, vframes, vlabels)
        rows.append([epoch, stats["loss"], rep.accuracy, rep.precision, rep.recall, rep.f1])
    ck.extra = {"loss": cfg["loss"], "omega1": loss_cfg.omega1, "omega0": loss_cfg.omega0,
                "init": "pretrained" if cfg["pretrained"] else "scratch"}
    return ck, rows


CURVE_HEADER = ["epoch", "loss", "val_accuracy", "val_precision", "val_recall", "val_f1"]


def cmd_finetune(cfg, out: Path) -> None:
    ck, rows = run_finetune(cfg)
    save_checkpoint(ck, out / "finetune.lfck")
    _write_csv(out / "finetune_curve.csv", CURVE_HEADER, rows)


def cmd_eval(cfg, out: Path) -> None:
    ck = _load(cfg["checkpoint"], "finetune")
    if (ck.spec.input_height, ck.spec.input_width) != RESOLUTIONS[cfg["preset"]]:
        raise ConfigError("checkpoint resolution does not match --preset")
    scenes = ["index"] if cfg["val_index"] else list(_scenes(cfg))
    header = ["scene", "accuracy", "precision", "recall", "f1", "tp", "fp", "fn", "tn"]
    rows, total, report = [], None, {}
    for scene in scenes:
        frames, labels = validation_data(cfg, None if scene == "index" else scene)
        rep, counts = evaluate(ck, frames, labels)
        total = counts if total is None else total + counts
        rows.append([scene, rep.accuracy, rep.precision, rep.recall, rep.f1, counts.tp, counts.fp, counts.fn, counts.tn])
        report[scene] = rep.as_dict()
        if cfg["overlays"]:
            _write_overlays(ck, frames, out / "overlays", scene, cfg["overlays"])
    overall = metrics(total)
    params, macs = count_params_macs(ck.spec)
    overall.params, overall.macs = params, macs
    rows.append(["overall", overall.accuracy, overall.precision, overall.recall, overall.f1,
                 total.tp, total.fp, total.fn, total.tn])
    report["overall"] = overall.as_dict()
    _write_csv(out / "metrics.csv", header, rows)
    (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _write_overlays(ck, frames, directory: Path, scene: str, count: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    pred = predict(ck, frames[:count])
    for i, (seq, mask) in enumerate(zip(frames[:count], pred)):
        frame = seq[-1].transpose(1, 2, 0)
        raw = render_overlay(frame, mask)
        fitted = render_overlay(frame, render_curves(mask.shape, cluster_lanes(mask)))
        write_image(directory / f"{scene}_{i:03d}.ppm", np.concatenate([raw, fitted], axis=1))


def cmd_ablate_mask(cfg, out: Path) -> None:
    val, _ = validation_data(cfg)
    summary, curves = [], []
    for ratio in ABLATION_RATIOS:
        _, rows = run_pretrain(cfg, out, ratio, val)
        curves += [[ratio] + r for r in rows]
        summary.append([ratio, cfg["epochs"], rows[-1][1], rows[-1][2]])
    _write_csv(out / "ablation.csv", ["mask_ratio", "epochs", "train_loss", "val_loss"], summary)
    _write_csv(out / "loss_curves.csv", ["mask_ratio", "epoch", "train_loss", "val_loss"], curves)


def cmd_count(cfg, out: Path) -> None:
    rows = []
    for variant in VARIANTS:
        spec = PRESETS[cfg["preset"]](variant)
        params, macs = count_params_macs(spec)
        ref_p, ref_m = REFERENCE_COMPLEXITY[variant] if cfg["preset"] == "full" else ("", "")
        rows.append([variant, cfg["preset"], params, macs, ref_p, ref_m])
    _write_csv(out / "complexity.csv", ["variant", "preset", "params", "macs", "reference_params_M", "reference_macs_G"], rows)
    for r in rows:
        print(f"{r[0]:<22} params {r[2] / 1e6:8.3f} M   MACs {r[3] / 1e9:8.3f} G")


def cmd_demo_reconstruct(cfg, out: Path) -> None:
    ck = _load(cfg["checkpoint"], "pretrain")
    frames, _ = validation_data(cfg)
    frames = frames[: cfg["images"]]
    h, w = frames.shape[-2:]
    rng = np.random.default_rng([cfg["seed"], 53])
    masked = np.empty_like(frames)
    for i in range(len(frames)):
        for j in range(frames.shape[1]):
            masked[i, j] = apply_mask(frames[i, j], sample_mask(h, w, cfg["mask_ratio"], int(rng.integers(2**62)), cfg["patch_size"]))
    with T.no_grad():
        recon = np.clip(forward(ck.params, ck.spec, masked).data, 0.0, 1.0)
    directory = out / "reconstructions"
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(len(frames)):
        panels = [masked[i, -1], recon[i], frames[i, -1]]
        write_image(directory / f"triptych_{i:03d}.ppm", np.concatenate([p.transpose(1, 2, 0) for p in panels], axis=1))


def cmd_grid_search(cfg, out: Path) -> None:
    data, val = training_data(cfg), validation_data(cfg)
    rows = []
    for alpha, gamma, epsilon in POLY_GRID:
        run = dict(cfg, loss="pl", alpha=alpha, gamma=gamma, epsilon=epsilon)
        _, curve = run_finetune(run, data, val)
        last = curve[-1]
        rows.append([alpha, gamma, epsilon, last[5], last[3], last[2]])
    _write_csv(out / "grid_search.csv", ["alpha", "gamma", "epsilon", "val_f1", "val_precision", "val_accuracy"], rows)


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "ablate-mask": cmd_ablate_mask,
    "count": cmd_count,
    "demo-reconstruct": cmd_demo_reconstruct,
    "grid-search": cmd_grid_search,
}


def main(argv=None) -> int:
    try:
        cfg = resolve(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    except (ConfigError, SpecError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(cfg, out / "manifest.txt")
    try:
        with T.precision(cfg["precision"]):
            COMMANDS[cfg["subcommand"]](cfg, out)
    except T.NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ImageFormatError, CheckpointFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
