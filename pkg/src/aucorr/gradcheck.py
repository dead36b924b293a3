"""Central finite-difference checks for every op and composite model path."""
import time
from dataclasses import dataclass

import numpy as np

from aucorr import functional as F
from aucorr.tensor import Tensor


def rel_error(analytic, numeric, floor=1e-8):
    """Largest elementwise |a - b| / max(|a|, |b|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den))


def numeric_grad(fn, tensor, h=1e-5, coords=None):
    """Central differences of scalar ``fn()`` w.r.t. ``tensor.data`` (perturbed in place).

    ``coords`` restricts the probe to a subset of flat indices.
    """
    flat = tensor.data.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(len(coords))
    for i, c in enumerate(coords):
        orig = flat[c]
        flat[c] = orig + h
        up = fn().item()
        flat[c] = orig - h
        down = fn().item()
        flat[c] = orig
        out[i] = (up - down) / (2 * h)
    return out


def analytic_grads(fn, tensors):
    for t in tensors:
        t.grad = None
    fn().backward()
    return [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def check(fn, tensors, h=1e-5, max_coords=None, rng=None, floor=1e-8):
    """Max relative error between backward() and finite differences over ``tensors``."""
    grads = analytic_grads(fn, tensors)
    worst = 0.0
    for t, g in zip(tensors, grads):
        n = t.data.size
        if max_coords is not None and n > max_coords:
            coords = np.sort((rng or np.random.default_rng(0)).choice(n, max_coords, replace=False))
        else:
            coords = np.arange(n)
        num = numeric_grad(fn, t, h, coords)
        worst = max(worst, rel_error(g.reshape(-1)[coords], num, floor))
    return worst


def projected(out_fn, shape, rng):
    """Scalar ``sum(out * R)`` for a fixed random R; avoids the degenerate all-ones cotangent."""
    weights = rng.standard_normal(shape)
    return lambda: F.sum(F.mul(out_fn(), weights))


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self):
        return bool(self.error < self.tol)


def _leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def op_cases(rng):
    """(name, fn, tensors) for every differentiable primitive at toy shapes."""
    cases = []

    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    cases.append(("matmul", projected(lambda: F.matmul(a, b), (3, 2), rng), [a, b]))

    ba, bb = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    cases.append(("matmul_batched", projected(lambda: F.matmul(ba, bb), (2, 3, 5), rng), [ba, bb]))

    x, w = _leaf(rng, 2, 3, 6, 6), _leaf(rng, 4, 3, 3, 3)
    cases.append(("conv2d", projected(lambda: F.conv2d(x, w, 1, 1), (2, 4, 6, 6), rng), [x, w]))

    x2, w2 = _leaf(rng, 3, 7, 7), _leaf(rng, 2, 3, 3, 3)
    cases.append(("conv2d_stride2", projected(lambda: F.conv2d(x2, w2, 2, 1), (2, 4, 4), rng),
                  [x2, w2]))

    s = _leaf(rng, 2, 5)
    cases.append(("softmax", projected(lambda: F.softmax(s, -1), (2, 5), rng), [s]))

    u = _leaf(rng, 3, 4)
    cases.append(("sigmoid", projected(lambda: F.sigmoid(u), (3, 4), rng), [u]))
    r = Tensor(np.sign(rng.standard_normal((3, 4))) * (0.1 + rng.random((3, 4))), requires_grad=True)
    cases.append(("relu", projected(lambda: F.relu(r), (3, 4), rng), [r]))

    ln_x, ln_g, ln_b = _leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6)
    cases.append(("layer_norm", projected(lambda: F.layer_norm(ln_x, ln_g, ln_b), (3, 6), rng),
                  [ln_x, ln_g, ln_b]))

    bn_x, gm, bt = _leaf(rng, 4, 3, 3, 3), _leaf(rng, 3), _leaf(rng, 3)
    rm, rv = np.zeros(3), np.ones(3)
    cases.append(("batch_norm2d", projected(
        lambda: F.batch_norm2d(bn_x, gm, bt, rm, rv, True), (4, 3, 3, 3), rng), [bn_x, gm, bt]))
    cases.append(("batch_norm2d_eval", projected(
        lambda: F.batch_norm2d(bn_x, gm, bt, np.full(3, 0.2), np.full(3, 1.5), False),
        (4, 3, 3, 3), rng), [bn_x, gm, bt]))

    p, q = _leaf(rng, 3, 4), _leaf(rng, 4)
    cases.append(("add_broadcast", projected(lambda: F.add(p, q), (3, 4), rng), [p, q]))
    cases.append(("mul_broadcast", projected(lambda: F.mul(p, q), (3, 4), rng), [p, q]))
    cases.append(("mean", projected(lambda: F.mean(p, axis=0), (4,), rng), [p]))

    mp = Tensor(rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.1, requires_grad=True)
    cases.append(("max_pool2d", projected(lambda: F.max_pool2d(mp, 2), (2, 2, 3, 3), rng), [mp]))

    lx, lw, lb = _leaf(rng, 2, 3, 5), _leaf(rng, 5, 4), _leaf(rng, 4)
    cases.append(("linear", projected(lambda: F.linear(lx, lw, lb), (2, 3, 4), rng), [lx, lw, lb]))

    c1, c2 = _leaf(rng, 2, 3), _leaf(rng, 2, 2)
    cases.append(("concat", projected(lambda: F.concat([c1, c2], axis=1), (2, 5), rng), [c1, c2]))

    rt = _leaf(rng, 2, 3, 4)
    cases.append(("reshape_transpose", projected(
        lambda: F.transpose(rt.reshape(4, 6), (1, 0)), (6, 4), rng), [rt]))

    gi = _leaf(rng, 4, 3)
    cases.append(("getitem", projected(lambda: gi[[0, 2, 2], 1:], (3, 2), rng), [gi]))

    pos = Tensor(0.5 + rng.random((3, 3)), requires_grad=True)
    cases.append(("log_exp", projected(lambda: F.exp(F.log(pos)) * F.log(pos), (3, 3), rng), [pos]))
    return cases


def model_cases(rng):
    """Composite paths at toy scale: CS-Former, T-Former, ResNet-18, AU head, loss."""
    from aucorr.audio import ResNet18
    from aucorr.config import AudioConfig, HeadConfig, VisualConfig
    from aucorr.head import AUHead
    from aucorr.train import weighted_bce
    from aucorr.visual import CSFormer, TFormer

    cases = []
    vcfg = VisualConfig(input_size=16, channels=(2, 4, 4, 4, 4), strides=(1, 2, 2, 1, 1),
                        dim=8, heads=2, ffn_dim=16, clip_length=3)
    cs = CSFormer(vcfg, rng)
    frames = _leaf(rng, 2, 3, 16, 16, scale=0.5)
    cs_params = [p for _, p in cs.named_parameters()]
    cases.append(("csformer", projected(lambda: cs(frames), (2, 8), rng),
                  [frames, cs_params[0], cs_params[-3]]))

    tf = TFormer(vcfg, rng)
    seq = _leaf(rng, 2, 3, 8)
    tf_params = [p for _, p in tf.named_parameters()]
    cases.append(("tformer", projected(lambda: tf(seq).pooled, (2, 8), rng),
                  [seq, tf_params[0], tf_params[-2]]))

    clip = _leaf(rng, 1, 3, 3, 16, 16, scale=0.5)

    def visual_path():
        feats = cs(clip.reshape(3, 3, 16, 16)).reshape(1, 3, 8)
        return tf(feats).pooled

    cases.append(("visual_path", projected(visual_path, (1, 8), rng), [clip]))

    acfg = AudioConfig(n_mels=8, sub_width=8, base_channels=2, dim=8)
    rn = ResNet18(acfg, rng)
    spec = _leaf(rng, 2, 1, 8, 8)
    rn_params = [p for _, p in rn.named_parameters()]
    cases.append(("resnet18", projected(lambda: rn(spec), (2, 8), rng),
                  [spec, rn_params[0], rn_params[-2]]))

    hcfg = HeadConfig(num_aus=4, fused_dim=8, branch_dim=4, corr_heads=2, corr_ffn=8,
                      au_names=("a", "b", "c", "d"))
    head = AUHead(hcfg, 8, 8, rng)
    vis, aud = _leaf(rng, 2, 8), _leaf(rng, 2, 8)
    cases.append(("au_head", projected(lambda: head(vis, aud).values, (2, 4), rng),
                  [vis, aud, head.branch_w, head.pred_w]))

    probs = Tensor(0.05 + 0.9 * rng.random((3, 4)), requires_grad=True)
    targets = rng.integers(-1, 2, size=(3, 4))
    weights = 0.5 + rng.random(4)
    cases.append(("weighted_bce", lambda: weighted_bce(probs, targets, weights), [probs]))
    return cases


def run_suite(tol=1e-4, h=1e-5, max_coords=24, seed=0, include_models=True):
    rng = np.random.default_rng(seed)
    cases = op_cases(rng)
    if include_models:
        cases += model_cases(rng)
    results = []
    for name, fn, tensors in cases:
        t0 = time.time()
        err = check(fn, tensors, h=h, max_coords=max_coords, rng=rng)
        results.append(CheckResult(name, err, tol, time.time() - t0))
    return results


def format_table(results):
    lines = [f"{'check':<20} {'rel err':>10}  status"]
    for r in results:
        lines.append(f"{r.name:<20} {r.error:10.2e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
