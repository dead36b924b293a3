"""Synthetic ablations: correlation module, temporal encoder, audio branch.

Each seed generates its own dataset, trains the staged models with equal
step budgets and reports macro F1 on the held-out video for:

* ``spatial_wo_cm``  spatial model trained and evaluated without the correlation encoder
* ``spatial``        spatial model with the correlation encoder
* ``spatial_temporal`` frozen spatial model + T-Former
* ``joint``          aural-visual model fine-tuned from the three stage checkpoints
* ``joint_wo_audio`` the same joint fine-tuning with the audio input withheld
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aucorr.config import Config, SynthConfig, TrainConfig, VisualConfig
from aucorr.data import ClipDataset
from aucorr.synth import gen_synthetic_dataset
from aucorr.train import evaluate, load_model, run_stage

log = logging.getLogger(__name__)


def ablation_config():
    cfg = Config()
    cfg.visual = VisualConfig(input_size=32, channels=(8, 16, 16, 32, 32), clip_length=4,
                              dilation=3, dim=32, heads=2, ffn_dim=64)
    cfg.audio.base_channels = 4
    cfg.audio.full_stem = True
    cfg.train = TrainConfig(lr=3e-3, batch_size=32, steps_spatial=800, steps_temporal=300,
                            steps_audio=300, steps_joint=150, brightness=0.1)
    cfg.synth = SynthConfig(frames=6000, videos=4, val_videos=1)
    return cfg


@dataclass
class AblationRun:
    seed: int
    scores: dict
    seconds: float
    reports: dict = field(default_factory=dict)


def run_seed(cfg, seed, workdir):
    start = time.time()
    workdir = Path(workdir)
    manifest = gen_synthetic_dataset(cfg.synth, workdir / "data", seed)
    train = ClipDataset(manifest, cfg.visual, cfg.audio, split="train")
    val = ClipDataset(manifest, cfg.visual, cfg.audio, split="val")
    names = cfg.head.au_names
    reports = {}

    out_nocm = workdir / "wo_cm"
    run_stage("spatial", cfg, train, out_nocm, seed, use_correlation=False)
    model, _ = load_model(cfg, out_nocm, "spatial", seed)
    reports["spatial_wo_cm"] = evaluate(model, val, "frame", cfg.train.threshold, False, names)

    out = workdir / "cm"
    run_stage("spatial", cfg, train, out, seed, use_correlation=True)
    model, _ = load_model(cfg, out, "spatial", seed)
    reports["spatial"] = evaluate(model, val, "frame", cfg.train.threshold, True, names)

    run_stage("temporal", cfg, train, out, seed, use_correlation=True)
    model, _ = load_model(cfg, out, "temporal", seed)
    reports["spatial_temporal"] = evaluate(model, val, "clip", cfg.train.threshold, True, names)

    run_stage("audio", cfg, train, out, seed, use_correlation=True)
    run_stage("joint", cfg, train, out, seed, use_correlation=True)
    model, _ = load_model(cfg, out, "joint", seed)
    reports["joint"] = evaluate(model, val, "joint", cfg.train.threshold, True, names)

    out_na = workdir / "wo_audio"
    for stage in ("spatial", "temporal", "audio"):
        src = out / "checkpoints" / stage
        dst = out_na / "checkpoints" / stage
        dst.parent.mkdir(parents=True, exist_ok=True)
        if not dst.exists():
            dst.symlink_to(src.resolve(), target_is_directory=True)
    run_stage("joint", cfg, train, out_na, seed, use_correlation=True, use_audio=False)
    model, _ = load_model(cfg, out_na, "joint", seed)
    reports["joint_wo_audio"] = evaluate(model, val, "clip", cfg.train.threshold, True, names)

    scores = {k: r.macro_f1 for k, r in reports.items()}
    return AblationRun(seed=seed, scores=scores, seconds=time.time() - start, reports=reports)


def summarize(runs):
    keys = runs[0].scores.keys()
    mean = {k: float(np.mean([r.scores[k] for r in runs])) for k in keys}
    deltas = {
        "correlation": mean["spatial"] - mean["spatial_wo_cm"],
        "temporal": mean["spatial_temporal"] - mean["spatial"],
        "audio": mean["joint"] - mean["joint_wo_audio"],
    }
    return mean, deltas
