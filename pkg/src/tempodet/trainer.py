"""Class-balanced sampling and the five-loss SGD training loop."""
import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import make_clip
from .clipper import WindowSpec, label_video
from .evalmap import evaluate, EvalConfig
from .inference import detect
from .net3d import layers as L
from .net3d.model import (LOSS_KEYS, PROPOSAL_ACTION, PROPOSAL_BACKGROUND, NonFiniteError,
                          backward, forward, init_params)
from .postproc import PostprocConfig

log = logging.getLogger(__name__)

BALANCE_MODES = ("categorization", "proposal")
LOG_COLUMNS = ("iter", "lr_multiplier", "l_prop", "l_cls", "l_aux5", "l_aux6", "l_reg", "fused",
               "probe_mAP")


class NumericError(RuntimeError):
    """A loss or gradient became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 30
    momentum: float = 0.9
    base_lr: float = 1e-4
    head_cls_lr: float = 1e-2
    lr_decay_factor: float = 0.1
    schedule: tuple = ((600, 1.0), (600, 0.1), (300, 0.01))
    stop_lr: float = 1e-6
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    proposal_class_weights: tuple = None
    dropout: float = 0.5
    balance_mode: str = "categorization"
    clip_norm: float = 10.0
    pos_threshold: float = 0.5
    micro_batch: int = 8
    log_every: int = 10
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        schedule = tuple((int(n), float(m)) for n, m in self.schedule)
        object.__setattr__(self, "schedule", schedule)
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if self.proposal_class_weights is not None:
            object.__setattr__(self, "proposal_class_weights",
                               tuple(float(w) for w in self.proposal_class_weights))
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size: must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum: must be in [0, 1)")
        for name in ("base_lr", "head_cls_lr", "stop_lr", "lr_decay_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name}: must be > 0")
        if any(n < 0 or m <= 0 for n, m in self.schedule):
            raise ValueError("schedule: iterations must be >= 0 and multipliers > 0")
        if len(self.loss_weights) != 5 or min(self.loss_weights) < 0:
            raise ValueError("loss_weights: need 5 non-negative weights")
        if self.proposal_class_weights is not None and (
                len(self.proposal_class_weights) != 2 or min(self.proposal_class_weights) <= 0):
            raise ValueError("proposal_class_weights: need 2 positive weights")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout: must be in [0, 1)")
        if self.balance_mode not in BALANCE_MODES:
            raise ValueError(f"balance_mode: must be one of {BALANCE_MODES}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm: must be > 0 or null")
        if not 0.0 < self.pos_threshold <= 1.0:
            raise ValueError("pos_threshold: must be in (0, 1]")
        if self.micro_batch < 1 or self.log_every < 1:
            raise ValueError("micro_batch/log_every: must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction: must be in [0, 1)")

    @classmethod
    def paper(cls, **overrides):
        cfg = dict(schedule=((15000, 1.0), (15000, 0.1), (10000, 0.01)))
        cfg.update(overrides)
        return cls(**cfg)

    @property
    def total_iterations(self):
        return sum(n for n, _ in self.schedule)

    def to_dict(self):
        d = asdict(self)
        d["schedule"] = [list(s) for s in self.schedule]
        d["loss_weights"] = list(self.loss_weights)
        if self.proposal_class_weights is not None:
            d["proposal_class_weights"] = list(self.proposal_class_weights)
        return d


# ---------------------------------------------------------------------------
# sampling


@dataclass
class ClipRef:
    video: int
    window: object
    label: object


@dataclass
class LabeledPool:
    num_classes: int
    clips: list = field(default_factory=list)
    by_category: list = None

    def __post_init__(self):
        self.by_category = [[] for _ in range(self.num_classes + 1)]
        for i, ref in enumerate(self.clips):
            self.by_category[ref.label.category].append(i)

    @property
    def counts(self):
        return [len(c) for c in self.by_category]

    @classmethod
    def from_videos(cls, records, num_classes, window_spec=None, pos_threshold=0.5):
        clips = []
        for v, record in enumerate(records):
            for window, label in label_video(record, num_classes, window_spec, pos_threshold):
                clips.append(ClipRef(v, window, label))
        return cls(num_classes, clips)


def _draw(rng, members, k):
    if k == 0:
        return []
    replace = len(members) < k
    picks = rng.choice(len(members), size=k, replace=replace)
    return [members[i] for i in picks]


def category_quota(batch_size, num_categories):
    """floor(B / K) each, remainder handed out by ascending category id."""
    base, extra = divmod(batch_size, num_categories)
    return [base + (1 if c < extra else 0) for c in range(num_categories)]


def build_balanced_batch(pool, batch_size, rng, mode="categorization"):
    """Indices into ``pool.clips`` for one training batch."""
    if not pool.clips:
        raise ValueError("cannot sample a batch from an empty pool")
    if mode == "categorization":
        quota = category_quota(batch_size, pool.num_classes + 1)
        nonempty = [c for c, members in enumerate(pool.by_category) if members]
        batch = []
        spill = 0
        for c, k in enumerate(quota):
            if pool.by_category[c]:
                batch.extend(_draw(rng, pool.by_category[c], k))
            else:
                spill += k
        for j in range(spill):
            c = nonempty[j % len(nonempty)]
            batch.extend(_draw(rng, pool.by_category[c], 1))
        return batch
    if mode == "proposal":
        background = pool.by_category[pool.num_classes]
        action = [i for members in pool.by_category[:-1] for i in members]
        if not background or not action:
            raise ValueError("proposal balancing needs both action and background clips")
        n_bg = batch_size // 2
        return _draw(rng, action, batch_size - n_bg) + _draw(rng, background, n_bg)
    raise ValueError(f"unknown balance mode {mode!r}")


def proposal_class_weights(pool, mode="categorization"):
    """Inverse-frequency (action, background) weights for the proposal loss,
    under the batch distribution the balancing mode induces; mean 1."""
    counts = pool.counts
    if sum(counts[:-1]) == 0 or counts[-1] == 0:
        raise ValueError("proposal weights need both action and background clips")
    n = pool.num_classes
    if mode == "categorization":
        mass = np.array([n / (n + 1), 1 / (n + 1)])
    else:
        mass = np.array([0.5, 0.5])
    w = mass.sum() / (2 * mass)
    return tuple(float(v) for v in w / w.mean())


# ---------------------------------------------------------------------------
# losses and optimizer


def fuse_losses(l_prop, l_cls, l_aux5, l_aux6, l_reg, loss_weights=(1, 1, 1, 1, 1)):
    values = (l_prop, l_cls, l_aux5, l_aux6, l_reg)
    if not all(math.isfinite(v) for v in values):
        raise NumericError(f"non-finite loss term in {values}")
    return float(sum(w * v for w, v in zip(loss_weights, values)))


def _proposal_target(label):
    return PROPOSAL_ACTION if label.is_action else PROPOSAL_BACKGROUND


def multitask_loss(params, clips, labels, loss_weights, prop_weights, dropout=0.5, rng=None,
                   mode="train", micro_batch=8):
    """Batch-averaged loss terms, fused loss, and parameter gradients.

    Returns ``(terms, fused, grads)`` where ``terms`` maps the five loss
    names to their batch means.
    """
    n = len(labels)
    weights = dict(zip(LOSS_KEYS, loss_weights))
    sums = dict.fromkeys(LOSS_KEYS, 0.0)
    grads = params.zeros_like()
    for lo in range(0, n, micro_batch):
        hi = min(n, lo + micro_batch)
        out, cache = forward(params, clips[lo:hi], mode=mode, rng=rng, dropout=dropout)
        up = {"prop": np.zeros_like(out.prop_logits), "cls": np.zeros_like(out.cls_logits),
              "aux5": np.zeros_like(out.aux5_logits), "aux6": np.zeros_like(out.aux6_logits),
              "reg": np.zeros_like(out.actionness)}
        for i, label in enumerate(labels[lo:hi]):
            t = _proposal_target(label)
            loss, g = L.softmax_cross_entropy(out.prop_logits[i], t, prop_weights[t])
            sums["prop"] += loss
            up["prop"][i] = g
            for key, logits in (("cls", out.cls_logits), ("aux5", out.aux5_logits),
                                ("aux6", out.aux6_logits)):
                loss, g = L.softmax_cross_entropy(logits[i], label.category)
                sums[key] += loss
                up[key][i] = g
            loss, g = L.squared_error_loss(out.actionness[i], label.actionness)
            sums["reg"] += loss
            up["reg"][i] = g
        for key in LOSS_KEYS:
            up[key] *= weights[key] / n
        part = backward(params, cache, up)
        for name in grads:
            grads[name] += part[name]
    terms = {k: float(v / n) for k, v in sums.items()}
    fused = fuse_losses(*(terms[k] for k in LOSS_KEYS), loss_weights)
    return terms, fused, grads


def single_loss_gradients(params, clips, labels, dropout=0.5, rng=None, mode="train"):
    """Loss and gradients of a network trained only on the fc8 softmax loss."""
    n = len(labels)
    out, cache = forward(params, clips, mode=mode, rng=rng, dropout=dropout)
    total = 0.0
    g_cls = np.zeros_like(out.cls_logits)
    for i, label in enumerate(labels):
        loss, g = L.softmax_cross_entropy(out.cls_logits[i], label.category)
        total += loss
        g_cls[i] = g / n
    return total / n, backward(params, cache, {"cls": g_cls})


def clip_gradients(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def layer_learning_rates(params, cfg, multiplier=1.0):
    return {name: (cfg.head_cls_lr if name.startswith("head_cls.") else cfg.base_lr) * multiplier
            for name in params}


def sgd_momentum_step(params, grads, velocity, lrs, momentum):
    """``v <- momentum * v - lr * g``; ``p <- p + v`` (in place)."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        v = velocity[name]
        v *= momentum
        v -= lrs[name] * g
        p += v
    if hasattr(params, "touch"):
        params.touch()


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainingResult:
    params: object
    log: list
    iterations: int
    probe_videos: list = field(default_factory=list)


def split_validation(num_videos, fraction):
    """Indices ``(train, held_out)``; the last videos are held out."""
    k = int(round(num_videos * fraction))
    if fraction > 0 and num_videos >= 2:
        k = max(1, k)
    k = min(k, num_videos - 1) if num_videos > 0 else 0
    return list(range(num_videos - k)), list(range(num_videos - k, num_videos))


def _stages(cfg):
    for n, mult in cfg.schedule:
        if cfg.base_lr * mult < cfg.stop_lr * (1 - 1e-9):
            log.info("stopping: base lr %.3g would fall below stop_lr %.3g",
                     cfg.base_lr * mult, cfg.stop_lr)
            return
        yield n, mult


def train(records, volumes, window_spec, augment_cfg, arch, cfg, postproc_cfg=None,
          callback=None):
    """Train the multi-task network; returns a :class:`TrainingResult`."""
    if not records:
        raise ValueError("training needs at least one video")
    window_spec = window_spec or WindowSpec()
    postproc_cfg = postproc_cfg or PostprocConfig()
    root = np.random.SeedSequence(cfg.seed)
    init_seq, batch_seq, aug_seq, drop_seq = root.spawn(4)
    params = init_params(arch, np.random.default_rng(init_seq))
    batch_rng = np.random.default_rng(batch_seq)
    if augment_cfg.seed:
        # a non-zero augment seed picks a sibling stream under the same train seed
        aug_seq = np.random.SeedSequence(
            cfg.seed, spawn_key=aug_seq.spawn_key + (augment_cfg.seed,))
    aug_rng = np.random.default_rng(aug_seq)
    drop_rng = np.random.default_rng(drop_seq)

    train_idx, probe_idx = split_validation(len(records), cfg.validation_fraction)
    pool = LabeledPool.from_videos([records[i] for i in train_idx], arch.num_classes,
                                   window_spec, cfg.pos_threshold)
    prop_w = cfg.proposal_class_weights or proposal_class_weights(pool, cfg.balance_mode)
    velocity = params.zeros_like()

    rows = []
    running = dict.fromkeys(LOSS_KEYS + ("fused",), 0.0)
    n_running = 0
    it = 0

    def probe():
        if not probe_idx:
            return ""
        dets = detect(params, [records[i] for i in probe_idx], [volumes[i] for i in probe_idx],
                      window_spec, augment_cfg, postproc_cfg)
        report = evaluate(dets, [records[i] for i in probe_idx], EvalConfig((0.5,)))
        return report.map[0.5]

    def emit(mult, probe_map=""):
        nonlocal n_running
        row = {"iter": it, "lr_multiplier": mult}
        for key, col in zip(LOSS_KEYS + ("fused",), LOG_COLUMNS[2:8]):
            row[col] = running[key] / n_running
            running[key] = 0.0
        row["probe_mAP"] = probe_map
        n_running = 0
        rows.append(row)
        if callback is not None:
            callback(row)

    stages = list(_stages(cfg))
    for stage, (n_iter, mult) in enumerate(stages):
        lrs = layer_learning_rates(params, cfg, mult)
        for step in range(n_iter):
            picks = build_balanced_batch(pool, cfg.batch_size, batch_rng, cfg.balance_mode)
            refs = [pool.clips[i] for i in picks]
            clips = np.stack([make_clip(volumes[train_idx[r.video]], r.window, augment_cfg,
                                        aug_rng).pixels for r in refs])
            labels = [r.label for r in refs]
            try:
                terms, fused, grads = multitask_loss(
                    params, clips, labels, cfg.loss_weights, prop_w, cfg.dropout, drop_rng,
                    micro_batch=cfg.micro_batch)
            except (NumericError, NonFiniteError) as exc:
                raise NumericError(f"iteration {it}: {exc}") from exc
            gnorm = clip_gradients(grads, cfg.clip_norm)
            if not math.isfinite(gnorm):
                raise NumericError(f"iteration {it}: non-finite gradient norm; losses {terms}")
            sgd_momentum_step(params, grads, velocity, lrs, cfg.momentum)
            bad = [k for k, v in params.items() if not np.all(np.isfinite(v))]
            if bad:
                raise NumericError(f"iteration {it}: non-finite parameters in {bad}")
            for key in LOSS_KEYS:
                running[key] += terms[key]
            running["fused"] += fused
            n_running += 1
            last_in_stage = step == n_iter - 1
            if it == 0 or (it + 1) % cfg.log_every == 0 or last_in_stage:
                emit(mult, probe() if last_in_stage else "")
            it += 1
    return TrainingResult(params, rows, it, [records[i].id for i in probe_idx])


def write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([row["iter"], f"{row['lr_multiplier']:g}"]
                       + [f"{row[c]:.6f}" for c in LOG_COLUMNS[2:8]]
                       + ["" if row["probe_mAP"] == "" else f"{row['probe_mAP']:.6f}"])
