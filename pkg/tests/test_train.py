import copy

import numpy as np
import pytest

from aucorr import functional as F
from aucorr.data import ClipDataset
from aucorr.gradcheck import check
from aucorr.nn import ConfigError
from aucorr.tensor import Tensor
from aucorr.train import (
    Adam,
    EvalReport,
    TrainingError,
    f1_report,
    load_checkpoint,
    load_model,
    param_hash,
    run_stage,
    weighted_bce,
)


def bce(p, t, w):
    return weighted_bce(Tensor(np.asarray(p, dtype=float)), np.asarray(t), np.asarray(w, dtype=float)).item()


def test_bce_hand_values():
    assert bce([[0.5]], [[1]], [1.0]) == pytest.approx(0.693147, abs=1e-6)
    assert bce([[0.8, 0.2]], [[1, 0]], [2.0, 5.0]) == pytest.approx(0.66943, abs=1e-5)


def test_bce_unit_weights_equal_plain_bce(rng):
    p = rng.uniform(0.01, 0.99, (6, 12))
    t = rng.integers(0, 2, (6, 12))
    plain = -np.mean(np.sum(t * np.log(p) + (1 - t) * np.log(1 - p), axis=1))
    assert abs(bce(p, t, np.ones(12)) - plain) < 1e-12


def test_bce_masked_entries_are_inert(rng):
    p = rng.uniform(0.01, 0.99, (1, 5))
    t = np.array([[1, 0, -1, 1, 0]])
    kept = [0, 1, 3, 4]
    w = rng.uniform(0.5, 3.0, 5)
    assert bce(p, t, w) == bce(p[:, kept], t[:, kept], w[kept])
    pt = Tensor(p, requires_grad=True)
    weighted_bce(pt, t, w).backward()
    assert pt.grad[0, 2] == 0.0


def test_bce_linear_in_positive_weight(rng):
    p = rng.uniform(0.05, 0.95, (4, 3))
    t = rng.integers(0, 2, (4, 3))
    w1, w2 = rng.uniform(0, 3, 3), rng.uniform(0, 3, 3)
    lhs = bce(p, t, 2 * w1 + 3 * w2)
    rhs = 2 * bce(p, t, w1) + 3 * bce(p, t, w2) - 4 * bce(p, t, np.zeros(3))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_bce_clamps_extremes():
    assert np.isfinite(bce([[0.0, 1.0]], [[1, 0]], [1.0, 1.0]))


def test_bce_grad(rng):
    p = Tensor(rng.uniform(0.1, 0.9, (3, 4)), requires_grad=True)
    t = rng.integers(-1, 2, (3, 4))
    assert check(lambda: weighted_bce(p, t, np.full(4, 2.0)), [p]) < 1e-6


def test_adam_first_step_is_lr():
    x = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"x": x}, lr=5e-4)
    x.grad = np.array([0.1])
    opt.step()
    assert x.data[0] - 1.0 == pytest.approx(-5e-4, rel=1e-6)


def test_adam_zero_grad_leaves_params():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"x": x})
    for _ in range(10):
        x.grad = np.zeros(2)
        opt.step()
    assert x.data.tolist() == [1.0, -2.0]


def test_adam_minimises_quadratic():
    x = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam({"x": x}, lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        F.sum((x - 3.0) * (x - 3.0)).backward()
        opt.step()
    assert abs(x.data[0] - 3.0) < 0.1


def test_adam_rejects_non_finite():
    x = Tensor(np.array([0.0]), requires_grad=True)
    x.grad = np.array([np.inf])
    with pytest.raises(TrainingError, match="non-finite"):
        Adam({"x": x}).step()


def brute_force_f1(pred, labels):
    k = labels.shape[1]
    out = []
    for j in range(k):
        tp = fp = fn = 0
        for i in range(labels.shape[0]):
            if labels[i, j] == -1:
                continue
            if pred[i, j] and labels[i, j] == 1:
                tp += 1
            elif pred[i, j]:
                fp += 1
            elif labels[i, j] == 1:
                fn += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return out


def test_f1_examples():
    labels = np.array([[1], [1], [1], [0], [0]])
    probs = np.array([[0.9], [0.8], [0.1], [0.7], [0.2]])
    rep = f1_report(probs, labels)
    assert (rep.tp, rep.fp, rep.fn) == ([2], [1], [1])
    assert rep.precision[0] == rep.recall[0] == rep.f1[0] == pytest.approx(2 / 3)
    assert f1_report(labels.astype(float), labels).macro_f1 == 1.0


def test_f1_matches_brute_force(rng):
    labels = rng.integers(-1, 2, (200, 12))
    probs = rng.random((200, 12))
    rep = f1_report(probs, labels, 0.5)
    assert rep.f1 == brute_force_f1(probs >= 0.5, labels)


def test_f1_undefined_au_is_zero():
    rep = f1_report(np.zeros((3, 1)), np.zeros((3, 1), dtype=int), au_names=["AU1"])
    assert rep.f1 == [0.0] and rep.undefined == ["AU1"]


def test_threshold_monotone(rng):
    labels = rng.integers(0, 2, (100, 4))
    probs = rng.random((100, 4))
    counts = [sum(f1_report(probs, labels, th).tp) + sum(f1_report(probs, labels, th).fp)
              for th in (0.1, 0.3, 0.5, 0.7, 0.9, 1.0)]
    assert counts == sorted(counts, reverse=True) and counts[-1] == 0


def test_report_round_trip(rng):
    rep = f1_report(rng.random((20, 3)), rng.integers(-1, 2, (20, 3)), au_names=["a", "b", "c"])
    assert EvalReport.from_text(rep.to_text()) == rep
    assert "macro F1" in rep.table()


def test_stage_dependency_error(tiny_data, tmp_path):
    manifest, cfg = tiny_data
    ds = ClipDataset(manifest, cfg.visual, cfg.audio, split="train")
    with pytest.raises(ConfigError, match="requires checkpoint: spatial"):
        run_stage("temporal", cfg, ds, tmp_path, seed=0)


def test_temporal_stage_freezes_spatial(tiny_data, tmp_path):
    manifest, cfg = tiny_data
    ds = ClipDataset(manifest, cfg.visual, cfg.audio, split="train")
    run_stage("spatial", cfg, ds, tmp_path, seed=1)
    res = run_stage("temporal", cfg, ds, tmp_path, seed=1)
    spatial, _ = load_checkpoint(tmp_path, "spatial")
    temporal, _ = load_checkpoint(tmp_path, "temporal")
    frozen = {n: a for n, a in spatial.items() if n.startswith("spatial.")}
    assert param_hash(frozen) == param_hash({n: temporal[n] for n in frozen})
    assert res.frozen_hash is not None
    # the head keeps training in the temporal stage
    assert not np.array_equal(spatial["head.pred_w"], temporal["head.pred_w"])


def test_stage_is_deterministic(tiny_data, tmp_path):
    manifest, cfg = tiny_data
    ds = ClipDataset(manifest, cfg.visual, cfg.audio, split="train")
    a = run_stage("audio", cfg, ds, tmp_path / "a", seed=4)
    b = run_stage("audio", cfg, ds, tmp_path / "b", seed=4)
    c = run_stage("audio", cfg, ds, tmp_path / "c", seed=5)
    assert a.losses == b.losses and a.losses != c.losses


def test_load_model_checks_au_count(tiny_data, tmp_path):
    manifest, cfg = tiny_data
    ds = ClipDataset(manifest, cfg.visual, cfg.audio, split="train")
    run_stage("spatial", cfg, ds, tmp_path, seed=0, steps=1)
    cfg = copy.deepcopy(cfg)
    cfg.head.num_aus = 6
    cfg.head.au_names = cfg.head.au_names[:6]
    with pytest.raises(ConfigError, match="predicts 12 AUs"):
        load_model(cfg, tmp_path, "spatial")
