"""Run configuration: one JSON document with a section per pipeline stage."""
import dataclasses
import json
from dataclasses import dataclass, field

from .augment import AugmentConfig
from .clipper import WindowSpec
from .evalmap import EvalConfig
from .net3d.model import ArchConfig
from .postproc import PostprocConfig
from .synthvid import DatasetSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


def _coerce(path, value, annotation, default):
    if value is None and default is None:
        return None
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true/false")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    if annotation is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, "expected a list")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def build_section(cls, data, section, base=None):
    """Instantiate dataclass ``cls`` from a JSON object.

    Unknown keys are rejected; fields missing from ``data`` come from
    ``base`` (an instance) or the class defaults.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(section, "expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise ConfigError(f"{section}.{key}", "unknown key")
    kwargs = {}
    for name, f in fields.items():
        has_default = (f.default is not dataclasses.MISSING
                       or f.default_factory is not dataclasses.MISSING)
        default = f.default if f.default is not dataclasses.MISSING else None
        if name in data:
            kwargs[name] = _coerce(f"{section}.{name}", data[name], f.type, default)
        elif base is not None:
            kwargs[name] = getattr(base, name)
        elif not has_default:
            raise ConfigError(f"{section}.{name}", "missing required field")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        msg = str(exc)
        field_name, sep, rest = msg.partition(": ")
        if sep and field_name.split("/")[0] in fields:
            raise ConfigError(f"{section}.{field_name}", rest) from exc
        raise ConfigError(section, msg) from exc
    except TypeError as exc:
        raise ConfigError(section, str(exc)) from exc


def desk_train_config(**overrides):
    """Training defaults for the CPU-scale preset trained from scratch."""
    cfg = dict(batch_size=4, base_lr=0.01, head_cls_lr=0.01, stop_lr=1e-6)
    cfg.update(overrides)
    return TrainConfig(**cfg)


@dataclass
class RunConfig:
    dataset: DatasetSpec = None
    windows: WindowSpec = field(default_factory=WindowSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig.desk)
    arch: ArchConfig = field(default_factory=ArchConfig.desk)
    train: TrainConfig = field(default_factory=desk_train_config)
    postproc: PostprocConfig = field(default_factory=PostprocConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, data, num_classes=None):
        """Parse a run config; ``num_classes`` fills the arch when neither the
        arch nor the dataset section sets it."""
        if not isinstance(data, dict):
            raise ConfigError("<root>", "expected a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown section")
        dataset = (build_section(DatasetSpec, data["dataset"], "dataset")
                   if "dataset" in data else None)

        arch_data = dict(data.get("arch") or {})
        preset = arch_data.get("preset", "desk")
        if preset not in ("desk", "paper", "custom"):
            raise ConfigError("arch.preset", f"unknown preset {preset!r}")
        n = arch_data.get("num_classes")
        if n is None:
            n = dataset.num_classes if dataset is not None else (num_classes or 3)
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise ConfigError("arch.num_classes", "expected a positive integer")
        base_arch = ArchConfig.paper(n) if preset == "paper" else ArchConfig.desk(n)
        arch = build_section(ArchConfig, arch_data, "arch", base=base_arch)

        aug_base = AugmentConfig() if preset == "paper" else AugmentConfig.desk()
        train_base = TrainConfig.paper() if preset == "paper" else desk_train_config()
        run = cls(
            dataset=dataset,
            windows=build_section(WindowSpec, data.get("windows"), "windows"),
            augment=build_section(AugmentConfig, data.get("augment"), "augment", base=aug_base),
            arch=arch,
            train=build_section(TrainConfig, data.get("train"), "train", base=train_base),
            postproc=build_section(PostprocConfig, data.get("postproc"), "postproc"),
            eval=build_section(EvalConfig, data.get("eval"), "eval"),
        )
        run.check_consistency()
        return run

    def check_consistency(self):
        t, c, h, w = self.arch.input_shape
        if (self.augment.crop_h, self.augment.crop_w) != (h, w):
            raise ConfigError("augment.crop_h", f"crop {self.augment.crop_h}x{self.augment.crop_w}"
                              f" must equal the network input {h}x{w}")
        if c != 3:
            raise ConfigError("arch.input_shape", "videos are RGB, input channels must be 3")
        if t != 16:
            raise ConfigError("arch.input_shape", "clips are 16 frames long")
        if (self.dataset is not None
                and self.dataset.num_classes != self.arch.num_classes):
            raise ConfigError("arch.num_classes", "does not match dataset.num_classes")

    def to_dict(self):
        out = {}
        for name in ("dataset", "windows", "augment", "arch", "train", "postproc", "eval"):
            section = getattr(self, name)
            if section is not None:
                out[name] = section.to_dict()
        return out


def load_run_config(path, num_classes=None):
    if path is None:
        return RunConfig.from_dict({}, num_classes=num_classes)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at byte offset {exc.pos}: {exc.msg}") from exc
    return RunConfig.from_dict(data, num_classes=num_classes)
