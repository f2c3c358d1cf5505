"""Central finite-difference checks of every layer and of the full network."""
from dataclasses import dataclass

import numpy as np

from .clipper import PROPOSAL_ACTION, PROPOSAL_BACKGROUND, ClipLabel
from .net3d import layers as L
from .net3d.model import ArchConfig, forward, init_params
from .trainer import multitask_loss

STEP = 1e-5
TOLERANCE = 1e-4
# denominators below this are treated as this, so that entries whose true
# gradient is ~0 are judged on absolute error
FLOOR = 1e-6


@dataclass
class CheckResult:
    op: str
    checked: int
    max_rel_error: float
    tolerance: float = TOLERANCE
    skipped: int = 0  # coordinates redrawn because they sat on a kink

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance)


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_gradient(f, x, step=STEP, index=None):
    """Central differences of scalar ``f()`` w.r.t. ``x`` (perturbed in place).

    ``index`` optionally restricts to a list of flat positions.
    """
    flat = x.reshape(-1)
    positions = range(flat.size) if index is None else index
    out = np.zeros(len(positions))
    for k, i in enumerate(positions):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        out[k] = (hi - lo) / (2 * step)
    return out


def _check(op, f, pairs, step):
    """``pairs`` lists ``(tensor, analytic_grad)``; returns a CheckResult."""
    worst, count = 0.0, 0
    for x, g in pairs:
        num = numeric_gradient(f, x, step)
        worst = max(worst, relative_error(np.asarray(g).reshape(-1), num))
        count += x.size
    return CheckResult(op, count, worst)


def _distinct(rng, shape, spacing=0.01):
    # values pairwise >= spacing apart, so a step cannot flip a max
    n = int(np.prod(shape))
    return (rng.permutation(n).astype(float) * spacing - n * spacing / 2).reshape(shape)


def check_conv3d(rng, step=STEP):
    x = rng.standard_normal((2, 3, 4, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3, 3)) * 0.3
    b = rng.standard_normal(4)
    r = rng.standard_normal((2, 4, 4, 5, 5))
    out, cache = L.conv3d_forward(x, w, b)
    dx, dw, db = L.conv3d_backward(r, cache)

    def f():
        return float(np.sum(r * L.conv3d_forward(x, w, b)[0]))
    return _check("conv3d", f, [(x, dx), (w, dw), (b, db)], step)


def check_maxpool(rng, extent, step=STEP):
    x = _distinct(rng, (2, 2, 4, 6, 6))
    out, cache = L.maxpool3d_forward(x, extent)
    r = rng.standard_normal(out.shape)
    dx = L.maxpool3d_backward(r, cache)

    def f():
        return float(np.sum(r * L.maxpool3d_forward(x, extent)[0]))
    name = "maxpool3d_" + "x".join(str(v) for v in extent)
    return _check(name, f, [(x, dx)], step)


def check_relu(rng, step=STEP):
    x = rng.standard_normal((3, 7))
    x += np.sign(x) * 0.01  # keep away from the kink
    r = rng.standard_normal(x.shape)
    _, mask = L.relu_forward(x)
    dx = L.relu_backward(r, mask)

    def f():
        return float(np.sum(r * L.relu_forward(x)[0]))
    return _check("relu", f, [(x, dx)], step)


def check_linear(rng, step=STEP):
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((4, 5))
    b = rng.standard_normal(4)
    r = rng.standard_normal((3, 4))
    _, cache = L.linear_forward(x, w, b)
    dx, dw, db = L.linear_backward(r, cache)

    def f():
        return float(np.sum(r * L.linear_forward(x, w, b)[0]))
    return _check("linear", f, [(x, dx), (w, dw), (b, db)], step)


def check_dropout(rng, step=STEP, ratio=0.5):
    x = rng.standard_normal((4, 6))
    r = rng.standard_normal(x.shape)
    seed = int(rng.integers(2**31))
    _, mask = L.dropout_forward(x, ratio, "train", np.random.default_rng(seed))
    dx = L.dropout_backward(r, mask)

    def f():
        out, _ = L.dropout_forward(x, ratio, "train", np.random.default_rng(seed))
        return float(np.sum(r * out))
    return _check("dropout", f, [(x, dx)], step)


def check_sigmoid(rng, step=STEP):
    z = rng.standard_normal(6) * 3
    r = rng.standard_normal(6)
    s = L.sigmoid(z)
    dz = r * s * (1 - s)

    def f():
        return float(np.sum(r * L.sigmoid(z)))
    return _check("sigmoid", f, [(z, dz)], step)


def check_global_avg_pool(rng, step=STEP):
    x = rng.standard_normal((2, 3, 2, 3, 3))
    r = rng.standard_normal((2, 3))
    spatial = x.shape[2] * x.shape[3] * x.shape[4]
    dx = np.broadcast_to((r / spatial)[:, :, None, None, None], x.shape)

    def f():
        return float(np.sum(r * x.mean(axis=(2, 3, 4))))
    return _check("global_avg_pool", f, [(x, dx)], step)


def check_softmax_ce(rng, step=STEP):
    logits = rng.standard_normal(5)
    _, g = L.softmax_cross_entropy(logits, 2, class_weight=0.7)

    def f():
        return L.softmax_cross_entropy(logits, 2, class_weight=0.7)[0]
    return _check("softmax_cross_entropy", f, [(logits, g)], step)


def check_squared_error(rng, step=STEP):
    pred = rng.random(5)
    target = rng.random(5)
    _, g = L.squared_error_loss(pred, target)

    def f():
        return float(np.sum(L.squared_error_loss(pred, target)[0]))
    return _check("squared_error", f, [(pred, g)], step)


def tiny_arch():
    """Small architecture used for the full-network check."""
    return ArchConfig(num_classes=2, input_shape=(16, 3, 32, 32),
                      conv_channels=(2, 3, 3, 3, 3, 3, 3, 3), fc_widths=(6, 5), preset="custom")


def _activation_pattern(params, clips, seed, dropout, micro_batch):
    """ReLU masks and pool argmaxes of a train-mode pass, as one bool/int blob."""
    rng = np.random.default_rng(seed)
    parts = []
    for lo in range(0, len(clips), micro_batch):
        _, cache = forward(params, clips[lo:lo + micro_batch], mode="train", rng=rng,
                           dropout=dropout)
        for key, value in cache.layers.items():
            if key.endswith(".relu"):
                parts.append(np.asarray(value).reshape(-1).astype(np.int64))
            elif key.endswith(".pool"):
                parts.append(value[0].reshape(-1))
    return np.concatenate(parts)


def check_network(rng, step=STEP, samples_per_tensor=3, loss_weights=(1.0, 1.0, 0.5, 0.5, 1.0),
                  max_tries=20):
    """Five-loss fused objective (train-mode dropout with a fixed mask)
    against finite differences on sampled coordinates of every tensor.

    Coordinates whose perturbation flips a ReLU or a pooling argmax sit on a
    nondifferentiable point and are redrawn.
    """
    arch = tiny_arch()
    params = init_params(arch, rng)
    # zero-initialised biases put dead units exactly on the ReLU kink
    for name, p in params.items():
        if name.endswith(".b"):
            p += rng.uniform(-0.1, 0.1, size=p.shape)
    clips = rng.uniform(-1, 1, size=(3,) + arch.input_shape)
    labels = [ClipLabel(PROPOSAL_ACTION, 1, 0.8), ClipLabel(PROPOSAL_BACKGROUND, 0, 0.1),
              ClipLabel(PROPOSAL_ACTION, 2, 0.5)]
    prop_w = (1.2, 0.8)
    dropout, micro = 0.3, 2
    seed = int(rng.integers(2**31))

    def loss():
        params.touch()
        return multitask_loss(params, clips, labels, loss_weights, prop_w, dropout=dropout,
                              rng=np.random.default_rng(seed), micro_batch=micro)

    def pattern():
        params.touch()
        return _activation_pattern(params, clips, seed, dropout, micro)

    _, _, grads = loss()
    base = pattern()
    worst, count, skipped = 0.0, 0, 0
    for name, p in params.items():
        flat = p.reshape(-1)
        want = min(samples_per_tensor, p.size)
        done = 0
        for i in rng.permutation(p.size)[:max(want, max_tries)]:
            if done == want:
                break
            orig = flat[i]
            smooth = True
            for delta in (step, -step):
                flat[i] = orig + delta
                smooth = smooth and np.array_equal(pattern(), base)
            flat[i] = orig
            if not smooth:
                skipped += 1
                continue
            num = numeric_gradient(lambda: loss()[1], p, step, [int(i)])
            worst = max(worst, relative_error(grads[name].reshape(-1)[[int(i)]], num))
            done += 1
        count += done
    params.touch()
    return CheckResult("network_five_loss", count, worst, skipped=skipped)


def run_gradcheck(seed=0, step=STEP):
    """Run every check; returns a list of :class:`CheckResult`."""
    rng = np.random.default_rng(seed)
    return [
        check_conv3d(rng, step),
        check_maxpool(rng, (2, 2, 2), step),
        check_maxpool(rng, (1, 2, 2), step),
        check_relu(rng, step),
        check_linear(rng, step),
        check_dropout(rng, step),
        check_global_avg_pool(rng, step),
        check_sigmoid(rng, step),
        check_softmax_ce(rng, step),
        check_squared_error(rng, step),
        check_network(rng, step),
    ]


def format_table(results):
    lines = [f"{'op':<24}{'checked':>9}{'skipped':>9}{'max_rel_err':>14}  status"]
    for r in results:
        lines.append(f"{r.op:<24}{r.checked:>9}{r.skipped:>9}{r.max_rel_error:>14.3e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
