"""``tempodet`` command line: gen, train, detect, eval, ablate, gradcheck.

Exit codes: 0 success, 2 configuration, 3 numeric failure, 4 model or
architecture mismatch, 5 data or label out of range, 6 verification failure.
"""
import argparse
import functools
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import ablation, gradcheck
from .config import ConfigError, load_run_config
from .evalmap import EvalConfig, evaluate
from .inference import detect
from .net3d import ContractError, ModelFormatError, load_model, save_model
from .postproc import DurationPrior, read_detections, write_detections
from .synthvid import FormatError, generate_dataset, load_dataset, read_manifest, write_dataset
from .trainer import NumericError, train, write_log
from .validation import DataError, check_instances

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MODEL, EXIT_DATA, EXIT_VERIFY = 0, 2, 3, 4, 5, 6

log = logging.getLogger("tempodet")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load_data(path):
    try:
        manifest = read_manifest(path)
        records, volumes = load_dataset(path)
    except (FormatError, OSError) as exc:
        raise CliError(EXIT_DATA, f"cannot load dataset {path}: {exc}") from exc
    spec = manifest.get("spec") or {}
    return records, volumes, spec.get("num_classes")


def _num_classes(records, declared):
    if declared is not None:
        return int(declared)
    labels = [a.label for r in records for a in r.instances]
    return max(labels) + 1 if labels else None


def _check_labels(records, num_classes):
    for r in records:
        try:
            check_instances(r.instances, r.num_frames, num_classes, r.id)
        except DataError as exc:
            raise CliError(EXIT_DATA, str(exc)) from exc


def _prior_path(model_path):
    return Path(str(model_path) + ".prior.json")


def _write_prior(path, prior):
    data = {"lengths": list(prior.lengths), "smoothing": prior.smoothing,
            "counts": {str(c): {str(k): v for k, v in sorted(row.items())}
                       for c, row in sorted(prior.counts.items())}}
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _read_prior(path):
    try:
        data = json.loads(Path(path).read_text())
        counts = {int(c): {int(k): int(v) for k, v in row.items()}
                  for c, row in data["counts"].items()}
        return DurationPrior(tuple(data["lengths"]), counts, float(data["smoothing"]))
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read duration prior {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    run = load_run_config(args.config)
    if run.dataset is None:
        raise ConfigError("dataset", "missing required section")
    spec = run.dataset
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    records, volumes = generate_dataset(spec)
    try:
        write_dataset(args.out, spec, records, volumes)
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot write dataset: {exc}") from exc
    print(f"wrote {len(records)} videos to {args.out}")


def cmd_train(args):
    records, volumes, declared = _load_data(args.data)
    n = _num_classes(records, declared)
    run = load_run_config(args.config, num_classes=n)
    if n is not None and n != run.arch.num_classes:
        raise ConfigError("arch.num_classes", f"dataset has {n} classes")
    _check_labels(records, run.arch.num_classes)
    cfg = run.train
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    def progress(row):
        log.info("iter %s  lr x%s  fused %.4f  probe %s", row["iter"], row["lr_multiplier"],
                 row["fused"], row["probe_mAP"])

    t0 = time.perf_counter()
    try:
        result = train(records, volumes, run.windows, run.augment, run.arch, cfg, run.postproc,
                       callback=progress)
    except (NumericError, ContractError) as exc:
        raise CliError(EXIT_NUMERIC, f"training diverged: {exc}") from exc
    save_model(result.params, args.out_model)
    write_log(args.log, result.log)
    prior = DurationPrior.from_instances(records, run.arch.num_classes, run.windows.lengths,
                                         run.postproc.prior_smoothing)
    _write_prior(_prior_path(args.out_model), prior)
    log.info("trained %d iterations in %.1fs", result.iterations, time.perf_counter() - t0)
    print(f"wrote {args.out_model} ({result.iterations} iterations)")


def cmd_detect(args):
    try:
        params = load_model(args.model)
    except ModelFormatError as exc:
        raise CliError(EXIT_MODEL, f"{args.model}: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_MODEL, f"cannot read model: {exc}") from exc
    arch = params.arch
    records, volumes, declared = _load_data(args.data)
    run = load_run_config(args.config, num_classes=arch.num_classes)
    if run.arch != arch and args.config is not None and _has_section(args.config, "arch"):
        raise CliError(EXIT_MODEL, "model architecture does not match the config arch section")
    crop = (run.augment.crop_h, run.augment.crop_w)
    if crop != tuple(arch.input_shape[2:]):
        raise CliError(EXIT_MODEL, f"model input {arch.input_shape[2:]} does not match clip "
                                   f"crop {crop}")
    if declared is not None and int(declared) != arch.num_classes:
        raise CliError(EXIT_MODEL, f"model has {arch.num_classes} classes, dataset declares "
                                   f"{declared}")
    prior = None
    if run.postproc.duration_prior_enabled:
        path = args.prior or _prior_path(args.model)
        if not Path(path).exists():
            raise ConfigError("postproc.duration_prior_enabled",
                              f"prior file {path} not found (pass --prior)")
        prior = _read_prior(path)
    try:
        dets = detect(params, records, volumes, run.windows, run.augment, run.postproc, prior)
    except ContractError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from exc
    write_detections(args.out, dets)
    print(f"wrote {len(dets)} detections to {args.out}")


def _has_section(config_path, name):
    try:
        return name in json.loads(Path(config_path).read_text())
    except (OSError, ValueError):
        return False


def _parse_tiou(text):
    try:
        return EvalConfig(tuple(float(v) for v in text.split(",") if v.strip()))
    except ValueError as exc:
        raise ConfigError("--tiou", str(exc)) from exc


def cmd_eval(args):
    records, _, declared = _load_data(args.data)
    try:
        dets = read_detections(args.det)
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"cannot read detections: {exc}") from exc
    if args.tiou is not None:
        cfg = _parse_tiou(args.tiou)
    else:
        cfg = load_run_config(args.config).eval if args.config else EvalConfig()
    n = _num_classes(records, declared)
    _check_labels(records, n)
    ids = {r.id: r for r in records}
    for i, d in enumerate(dets):
        if d.video_id not in ids:
            raise CliError(EXIT_DATA, f"detection {i}: unknown video {d.video_id!r}")
        if n is None or not 0 <= d.label < n:
            raise CliError(EXIT_DATA, f"detection {i}: label {d.label} out of range")
        if not 0 <= d.start_frame < d.end_frame <= ids[d.video_id].num_frames:
            raise CliError(EXIT_DATA, f"detection {i}: segment outside its video")
    report = evaluate(dets, records, cfg, n)
    report.write(args.out)
    print(" ".join(f"mAP@{a:g}={report.map[a]:.4f}" for a in cfg.tiou_thresholds))


def cmd_ablate(args):
    for v in args.variant:
        ablation.variant_config(load_run_config(None), v)  # reject unknown names early
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("--seeds", "expected comma-separated integers") from None

    @functools.lru_cache(maxsize=1)
    def load_data(seed):
        out = []
        for pattern in (args.train_data, args.test_data):
            records, volumes, _ = _load_data(pattern.format(seed=seed))
            out.append((records, volumes))
        return tuple(out)

    first_train = load_data(seeds[0])[0][0] if seeds else []
    run = load_run_config(args.config, num_classes=_num_classes(first_train, None))
    try:
        rows = ablation.run_ablation(run, args.variant, seeds, load_data)
    except (NumericError, ContractError) as exc:
        raise CliError(EXIT_NUMERIC, f"training diverged: {exc}") from exc
    ablation.write_ablation_csv(args.out, rows)
    for r in ablation.summarize(rows):
        if r["seed"] == "median":
            print(f"{r['variant']:<18} median mAP@0.2={r['mAP@0.2']:.4f} "
                  f"mAP@0.5={r['mAP@0.5']:.4f}")


def cmd_gradcheck(args):
    t0 = time.perf_counter()
    results = gradcheck.run_gradcheck(seed=args.seed)
    print(gradcheck.format_table(results))
    ok = all(r.passed for r in results)
    print(f"{'all checks passed' if ok else 'GRADIENT CHECK FAILED'} "
          f"({time.perf_counter() - t0:.1f}s)")
    if not ok:
        raise CliError(EXIT_VERIFY, "gradient check failed")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(prog="tempodet", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS worker threads (default: $TEMPODET_THREADS or library default)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen", help="generate a synthetic dataset directory")
    g.add_argument("--config", required=True, help="run config JSON with a dataset section")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--seed", type=int, default=None, help="override dataset.seed")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True, help="training dataset directory")
    t.add_argument("--config", default=None, help="run config JSON (desk defaults if omitted)")
    t.add_argument("--out-model", required=True, help="output TDMDL001 model file")
    t.add_argument("--log", required=True, help="output training log CSV")
    t.add_argument("--seed", type=int, default=None, help="override train.seed")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="run a trained model over a dataset directory")
    d.add_argument("--data", required=True, help="dataset directory to scan")
    d.add_argument("--model", required=True, help="TDMDL001 model file")
    d.add_argument("--out", required=True, help="output detections JSON")
    d.add_argument("--config", default=None, help="run config JSON (windows, augment, postproc)")
    d.add_argument("--prior", default=None,
                   help="duration prior JSON (default: <model>.prior.json written by train)")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="score detections against ground truth")
    e.add_argument("--data", required=True, help="dataset directory holding ground truth")
    e.add_argument("--det", required=True, help="detections JSON")
    e.add_argument("--tiou", default=None,
                   help="comma-separated tIoU thresholds (default 0.1,0.2,0.3,0.4,0.5)")
    e.add_argument("--config", default=None, help="run config JSON (eval section)")
    e.add_argument("--out", required=True, help="report prefix; writes PREFIX.csv and PREFIX.json")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate ablation variants")
    a.add_argument("--variant", action="append", required=True,
                   help="full, no-proposal, no-regression, fc8-only, shear:<deg> or "
                        "balance:proposal; repeat for several")
    a.add_argument("--train-data", required=True,
                   help="training dataset directory; '{seed}' is replaced per seed")
    a.add_argument("--test-data", required=True,
                   help="test dataset directory; '{seed}' is replaced per seed")
    a.add_argument("--config", default=None, help="base run config JSON")
    a.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    a.add_argument("--out", required=True, help="output CSV")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every layer and the network")
    c.add_argument("--seed", type=int, default=0, help="seed for the random test tensors")
    c.set_defaults(func=cmd_gradcheck)
    return p


def _thread_cap(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("TEMPODET_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError("TEMPODET_THREADS", f"expected an integer, got {env!r}") from None
    return None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        threads = _thread_cap(args)
        if threads is not None and threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        if threads is None:
            args.func(args)
        else:
            with threadpool_limits(limits=threads):
                args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
