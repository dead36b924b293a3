"""Position-weighted BCE, Adam, the four-stage schedule and F1 evaluation."""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from aucorr import aut1
from aucorr import functional as F
from aucorr.data import compute_pos_weights
from aucorr.model import STAGE_MODULES, AUDetector
from aucorr.nn import ConfigError
from aucorr.tensor import DimensionError, no_grad

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
STAGES = ("spatial", "temporal", "audio", "joint")
REQUIRES = {"spatial": (), "temporal": ("spatial",), "audio": (), "joint": ("spatial", "temporal", "audio")}
# parameter groups written into each stage checkpoint
SAVES = {
    "spatial": ("spatial", "head"),
    "temporal": ("spatial", "temporal", "head"),
    "audio": ("audio", "audio_head"),
    "joint": ("spatial", "temporal", "audio", "head"),
}


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------- loss

def weighted_bce(p, targets, weights):
    """Mean over the batch of the per-sample sum of position-weighted BCE terms.

    ``targets`` holds 0, 1 or -1; -1 entries are masked out. ``p`` is clamped
    to [1e-7, 1 - 1e-7] before taking logs.
    """
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=np.float64)
    if p.shape != targets.shape or weights.shape != p.shape[-1:]:
        raise DimensionError(f"weighted_bce: p {p.shape}, targets {targets.shape}, "
                             f"weights {weights.shape}")
    mask = (targets != -1).astype(np.float64)
    t = np.where(targets == 1, 1.0, 0.0)
    pc = F.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = F.log(pc) * (weights * t * mask)
    neg = F.log(1.0 - pc) * ((1.0 - t) * mask)
    per_sample = F.sum(-(pos + neg), axis=-1)
    return F.mean(per_sample)


# ---------------------------------------------------------------- optimiser

class Adam:
    """Bias-corrected Adam over a name -> Tensor mapping."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.step_count = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient for {name} at step {self.step_count}")
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self):
        out = {f"adam.m.{n}": a for n, a in self.m.items()}
        out.update({f"adam.v.{n}": a for n, a in self.v.items()})
        return out


# ---------------------------------------------------------------- checkpoints

def param_hash(arrays):
    """SHA-256 over the raw bytes of ``arrays`` (name -> array) in name order."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    return h.hexdigest()


def checkpoint_dir(out_dir, stage):
    return Path(out_dir) / "checkpoints" / stage


def save_checkpoint(out_dir, stage, model, optimizer, meta):
    state = model.group_state(SAVES[stage])
    if optimizer is not None:
        state.update(optimizer.state())
    aut1.save_bundle(checkpoint_dir(out_dir, stage), state, meta)
    return checkpoint_dir(out_dir, stage)


def load_checkpoint(out_dir, stage):
    path = checkpoint_dir(out_dir, stage)
    if not (path / "manifest.json").exists():
        raise ConfigError(f"requires checkpoint: {stage} (not found under {path})")
    tensors, meta = aut1.load_bundle(path)
    params = {n: a for n, a in tensors.items() if not n.startswith("adam.")}
    return params, meta


def restore(model, params, prefixes):
    prefixes = tuple(p + "." for p in prefixes)
    model.load_state_dict({n: a for n, a in params.items() if n.startswith(prefixes)},
                          strict=False)


def load_model(cfg, out_dir, stage, seed=0):
    """Detector with the weights of ``stage``'s checkpoint loaded."""
    params, meta = load_checkpoint(out_dir, stage)
    k = params["head.pred_b"].shape[0] if "head.pred_b" in params else params["audio_head.pred_b"].shape[0]
    if k != cfg.head.num_aus:
        raise ConfigError(f"checkpoint {stage} predicts {k} AUs, config has {cfg.head.num_aus}")
    model = AUDetector(cfg, seed)
    restore(model, params, SAVES[stage])
    return model, meta


# ---------------------------------------------------------------- stages

@dataclass
class StageResult:
    stage: str
    losses: list
    checkpoint: Path
    frozen_hash: str = None
    meta: dict = field(default_factory=dict)


def stage_kind(stage, use_audio=True):
    if stage == "spatial":
        return "frame"
    if stage == "temporal":
        return "clip"
    if stage == "audio":
        return "audio"
    return "joint" if use_audio else "clip"


def forward_loss(model, stage, frames, spec, labels, weights, use_correlation, use_audio=True):
    if stage == "spatial":
        logits = model.frame_logits(frames, use_correlation)
    elif stage == "temporal":
        with no_grad():
            feats = model.frame_features(frames)
        logits = model.clip_logits(features=feats.data, use_correlation=use_correlation)
    elif stage == "audio":
        logits = model.audio_logits(spec, use_correlation)
    else:
        logits = model.clip_logits(frames, spec if use_audio else None, use_correlation)
    return weighted_bce(F.sigmoid(logits), labels, weights)


def set_modes(model, stage):
    model.eval()
    for name in STAGE_MODULES[stage]:
        getattr(model, name).train()


def batches(n_items, batch_size, rng):
    """Endless stream of index batches; reshuffles after each pass."""
    while True:
        order = rng.permutation(n_items)
        for i in range(0, n_items - batch_size + 1, batch_size):
            yield order[i:i + batch_size]
        if n_items < batch_size:
            yield order


def run_stage(stage, cfg, dataset, out_dir, seed, steps=None, use_correlation=None,
              use_audio=True, metrics_path=None, items=None):
    """Train one stage and write its checkpoint under ``out_dir``.

    Parameters outside the stage's trainable set are not handed to the
    optimiser and their modules run in eval mode, so they stay bit-identical.
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    if use_correlation is None:
        use_correlation = cfg.head.use_correlation
    for dep in REQUIRES[stage]:
        if not (checkpoint_dir(out_dir, dep) / "manifest.json").exists():
            raise ConfigError(f"requires checkpoint: {dep}")
    if stage in ("audio", "joint") and use_audio and not dataset.has_audio:
        raise ConfigError(f"stage {stage} needs audio but the dataset has none")

    model = AUDetector(cfg, seed)
    if stage == "temporal":
        params, _ = load_checkpoint(out_dir, "spatial")
        restore(model, params, ("spatial", "head"))
    elif stage == "joint":
        restore(model, load_checkpoint(out_dir, "spatial")[0], ("spatial",))
        restore(model, load_checkpoint(out_dir, "temporal")[0], ("temporal", "head"))
        restore(model, load_checkpoint(out_dir, "audio")[0], ("audio",))
    frozen_groups = [g for g in SAVES[stage] if g not in STAGE_MODULES[stage]]
    frozen_before = param_hash(model.group_state(frozen_groups)) if frozen_groups else None

    tcfg = cfg.train
    steps = steps if steps is not None else getattr(tcfg, f"steps_{stage}")
    labels_all = dataset.all_labels()
    weights = (compute_pos_weights(labels_all, tcfg.pos_weight_cap) if tcfg.use_pos_weights
               else np.ones(labels_all.shape[1]))
    opt = Adam(model.stage_parameters(stage), lr=tcfg.lr)
    rng = np.random.default_rng([seed, STAGES.index(stage)])
    items = items if items is not None else dataset.items
    stream = batches(len(items), min(tcfg.batch_size, len(items)), rng)
    kind = stage_kind(stage, use_audio)
    set_modes(model, stage)

    losses = []
    for step in range(1, steps + 1):
        batch_items = [items[i] for i in next(stream)]
        frames, spec, labels = dataset.batch(batch_items, kind, rng, tcfg.brightness)
        opt.zero_grad()
        loss = forward_loss(model, stage, frames, spec, labels, weights, use_correlation, use_audio)
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if step % max(tcfg.log_every, 1) == 0:
            log.debug("%s step %d loss %.6f", stage, step, loss.item())

    frozen_after = param_hash(model.group_state(frozen_groups)) if frozen_groups else None
    if frozen_before != frozen_after:
        raise TrainingError(f"{stage}: frozen parameters changed during training")
    meta = {"stage": stage, "step": steps, "seed": seed, "use_correlation": bool(use_correlation),
            "use_audio": bool(use_audio), "pos_weights": weights.tolist(),
            "rng_state": rng.bit_generator.state, "config": cfg.to_dict()}
    path = save_checkpoint(out_dir, stage, model, opt, meta)
    if metrics_path is not None:
        with open(metrics_path, "a", encoding="utf-8", newline="\n") as fh:
            for i, value in enumerate(losses, start=1):
                fh.write(f"{i},{stage},{value!r}\n")
    return StageResult(stage=stage, losses=losses, checkpoint=path, frozen_hash=frozen_after,
                       meta=meta)


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    au_names: list
    threshold: float
    tp: list
    fp: list
    fn: list
    tn: list
    precision: list
    recall: list
    f1: list
    macro_f1: float
    undefined: list

    def to_text(self):
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_text(cls, text):
        return cls(**json.loads(text))

    def table(self):
        lines = [f"{'AU':>6} {'P':>7} {'R':>7} {'F1':>7}   TP   FP   FN"]
        for i, name in enumerate(self.au_names):
            flag = " *" if name in self.undefined else ""
            lines.append(f"{name:>6} {self.precision[i]:7.4f} {self.recall[i]:7.4f} "
                         f"{self.f1[i]:7.4f} {self.tp[i]:4d} {self.fp[i]:4d} {self.fn[i]:4d}{flag}")
        lines.append(f"macro F1 = {self.macro_f1:.4f} (threshold {self.threshold})")
        return "\n".join(lines)


def f1_report(probs, labels, threshold=0.5, au_names=None):
    """Per-AU and macro F1; -1 labels are excluded from all counts.

    An AU with no positives and no predictions has F1 0 and is listed in ``undefined``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    k = labels.shape[1]
    au_names = list(au_names) if au_names is not None else [f"au{i + 1}" for i in range(k)]
    # a threshold of 1.0 is exclusive: nothing is predicted positive
    pred = (probs >= threshold) & (threshold < 1.0)
    ann = labels != -1
    pos, neg = labels == 1, labels == 0
    tp = (pred & pos).sum(axis=0)
    fp = (pred & neg).sum(axis=0)
    fn = (~pred & pos).sum(axis=0)
    tn = (~pred & neg & ann).sum(axis=0)
    precision, recall, f1, undefined = [], [], [], []
    for i in range(k):
        p = tp[i] / (tp[i] + fp[i]) if tp[i] + fp[i] > 0 else 0.0
        r = tp[i] / (tp[i] + fn[i]) if tp[i] + fn[i] > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        if tp[i] + fn[i] == 0 and tp[i] + fp[i] == 0:
            undefined.append(au_names[i])
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(f))
    return EvalReport(au_names=au_names, threshold=float(threshold), tp=tp.tolist(),
                      fp=fp.tolist(), fn=fn.tolist(), tn=tn.tolist(), precision=precision,
                      recall=recall, f1=f1, macro_f1=float(np.mean(f1)), undefined=undefined)


def predict_probs(model, dataset, kind, use_correlation=None, batch_size=64, items=None):
    """Probabilities for every item of ``dataset`` in eval mode, in item order."""
    items = items if items is not None else dataset.items
    model.eval()
    out = []
    with no_grad():
        for i in range(0, len(items), batch_size):
            chunk = items[i:i + batch_size]
            frames, spec, _ = dataset.batch(chunk, kind)
            if kind == "frame":
                logits = model.frame_logits(frames, use_correlation)
            elif kind == "audio":
                logits = model.audio_logits(spec, use_correlation)
            else:
                logits = model.clip_logits(frames, spec, use_correlation)
            out.append(F.sigmoid(logits).data)
    return np.concatenate(out)


def evaluate(model, dataset, kind, threshold=0.5, use_correlation=None, au_names=None):
    if not dataset.items:
        raise ConfigError("evaluate() needs a non-empty dataset")
    probs = predict_probs(model, dataset, kind, use_correlation)
    labels = np.stack([dataset.labels[vi][t] for vi, t in dataset.items])
    return f1_report(probs, labels, threshold, au_names)


def train_all(cfg, dataset, out_dir, seed, metrics_path=None, use_correlation=None):
    return [run_stage(stage, cfg, dataset, out_dir, seed, use_correlation=use_correlation,
                      metrics_path=metrics_path) for stage in STAGES]

