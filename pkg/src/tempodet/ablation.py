"""Ablation variants: config rewrites plus a train/detect/evaluate harness."""
import csv
import dataclasses
import logging
import statistics

from .config import ConfigError
from .evalmap import EvalConfig, evaluate
from .inference import detect
from .postproc import DurationPrior
from .trainer import train

log = logging.getLogger(__name__)

ABLATION_TIOU = (0.2, 0.5)
BRANCH_VARIANTS = ("full", "no-proposal", "no-regression", "fc8-only", "balance:proposal")


def _replace(section, **changes):
    try:
        return dataclasses.replace(section, **changes)
    except ValueError as exc:
        raise ConfigError("variant", str(exc)) from exc


def variant_config(run, variant):
    """A copy of ``run`` rewritten for ``variant``.

    Branch ablations zero the branch's loss weight and remove its influence
    at detection time: no-proposal forces uniform video weights (alpha 0),
    no-regression replaces actionness by 1.
    """
    weights = list(run.train.loss_weights)
    train_cfg, postproc, augment = run.train, run.postproc, run.augment
    if variant == "full":
        pass
    elif variant == "no-proposal":
        weights[0] = 0.0
        postproc = _replace(postproc, alpha=0.0)
    elif variant == "no-regression":
        weights[4] = 0.0
        postproc = _replace(postproc, use_actionness=False)
    elif variant == "fc8-only":
        weights = [0.0, 1.0, 0.0, 0.0, 0.0]
        postproc = _replace(postproc, alpha=0.0, use_actionness=False)
    elif variant == "balance:proposal":
        train_cfg = _replace(train_cfg, balance_mode="proposal")
    elif variant.startswith("shear:"):
        try:
            deg = float(variant.split(":", 1)[1])
        except ValueError:
            raise ConfigError("variant", f"bad shear angle in {variant!r}") from None
        augment = _replace(augment, shear_max_deg=deg)
    else:
        raise ConfigError("variant", f"unknown variant {variant!r}")
    train_cfg = _replace(train_cfg, loss_weights=tuple(weights))
    return dataclasses.replace(run, train=train_cfg, postproc=postproc, augment=augment)


def run_variant(run, train_data, test_data, seed):
    """Train with ``seed`` and return ``{alpha: mAP}`` on the test videos."""
    return train_and_score(run, train_data, test_data, seed)[0]


def train_and_score(run, train_data, test_data, seed):
    """Like :func:`run_variant` but also returns the training result."""
    records, volumes = train_data
    test_records, test_volumes = test_data
    cfg = _replace(run.train, seed=seed)
    result = train(records, volumes, run.windows, run.augment, run.arch, cfg, run.postproc)
    prior = DurationPrior.from_instances(records, run.arch.num_classes, run.windows.lengths,
                                         run.postproc.prior_smoothing)
    dets = detect(result.params, test_records, test_volumes, run.windows, run.augment,
                  run.postproc, prior)
    report = evaluate(dets, test_records, EvalConfig(ABLATION_TIOU), run.arch.num_classes)
    return report.map, result


def run_ablation(run, variants, seeds, load_data):
    """Rows ``{variant, seed, mAP@0.2, mAP@0.5}`` per variant and seed.

    ``load_data(seed)`` returns ``(train_data, test_data)``, each a
    ``(records, volumes)`` pair.
    """
    configs = {v: variant_config(run, v) for v in variants}  # fail fast on bad names
    rows = []
    for seed in seeds:
        train_data, test_data = load_data(seed)
        for variant in variants:
            maps = run_variant(configs[variant], train_data, test_data, seed)
            log.info("variant %s seed %s: %s", variant, seed, maps)
            rows.append({"variant": variant, "seed": seed,
                         **{f"mAP@{a:g}": maps[a] for a in ABLATION_TIOU}})
    return rows


def summarize(rows):
    """Per-seed rows followed by one median row per variant."""
    out = sorted(rows, key=lambda r: (r["variant"], r["seed"]))
    variants = list(dict.fromkeys(r["variant"] for r in rows))
    for v in variants:
        mine = [r for r in rows if r["variant"] == v]
        out.append({"variant": v, "seed": "median",
                    **{f"mAP@{a:g}": statistics.median(r[f"mAP@{a:g}"] for r in mine)
                       for a in ABLATION_TIOU}})
    return out


def write_ablation_csv(path, rows):
    cols = ["variant", "seed"] + [f"mAP@{a:g}" for a in ABLATION_TIOU]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in summarize(rows):
            w.writerow([r["variant"], r["seed"]] + [f"{r[c]:.6f}" for c in cols[2:]])
