"""Synthetic untrimmed videos with temporal action annotations, and the
TDVID container format.

Each action class is a procedural motion pattern drawn over a drifting
noisy background: translating square, rotating bar, pulsing disc. Classes
beyond the third reuse these motions in a different colour.
"""
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TDVID\x00\x00\x01"
MIN_INSTANCE_LEN = 16

_SHAPE_COLORS = (
    (250, 250, 250),
    (250, 250, 10),
    (10, 250, 250),
    (250, 10, 250),
)


class FormatError(ValueError):
    """Raised for malformed TDVID files."""


@dataclass
class DatasetSpec:
    num_videos: int
    frames_per_video: int
    height: int
    width: int
    num_classes: int
    instance_len_range: tuple = (32, 96)
    min_gap: int = 16
    max_instances_per_video: int = 3
    noise_level: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.instance_len_range = tuple(int(v) for v in self.instance_len_range)
        self.validate()

    def validate(self):
        def fail(name, why):
            raise ValueError(f"{name}: {why}")

        if self.num_videos < 0:
            fail("num_videos", "must be >= 0")
        if self.height < 1 or self.width < 1:
            fail("height" if self.height < 1 else "width", "must be >= 1")
        if self.num_classes < 1:
            fail("num_classes", "must be >= 1")
        if len(self.instance_len_range) != 2:
            fail("instance_len_range", "must be [min, max]")
        lo, hi = self.instance_len_range
        if lo < MIN_INSTANCE_LEN:
            fail("instance_len_range", f"minimum instance length must be >= {MIN_INSTANCE_LEN}")
        if hi < lo:
            fail("instance_len_range", "max must be >= min")
        if self.min_gap < 1:
            fail("min_gap", "must be >= 1")
        if self.max_instances_per_video < 1:
            fail("max_instances_per_video", "must be >= 1")
        if self.frames_per_video < hi:
            fail("frames_per_video", "must be >= the maximum instance length")
        if not 0.0 <= self.noise_level <= 1.0:
            fail("noise_level", "must be in [0, 1]")
        if not 0 <= self.seed < 2 ** 64:
            fail("seed", "must be a 64-bit unsigned integer")

    def to_dict(self):
        d = asdict(self)
        d["instance_len_range"] = list(self.instance_len_range)
        return d


@dataclass(frozen=True)
class ActionInstance:
    label: int
    start_frame: int
    end_frame: int

    @property
    def length(self):
        return self.end_frame - self.start_frame


@dataclass
class VideoRecord:
    id: str
    num_frames: int
    height: int
    width: int
    instances: list = field(default_factory=list)

    def header(self):
        return {
            "id": self.id,
            "num_frames": self.num_frames,
            "height": self.height,
            "width": self.width,
            "instances": [
                {"label": a.label, "start_frame": a.start_frame, "end_frame": a.end_frame}
                for a in self.instances
            ],
        }

    @classmethod
    def from_header(cls, header):
        return cls(
            id=str(header["id"]),
            num_frames=int(header["num_frames"]),
            height=int(header["height"]),
            width=int(header["width"]),
            instances=[
                ActionInstance(int(a["label"]), int(a["start_frame"]), int(a["end_frame"]))
                for a in header["instances"]
            ],
        )


# ---------------------------------------------------------------------------
# generation


def _place_instances(spec, rng):
    lo, hi = spec.instance_len_range
    count = int(rng.integers(1, spec.max_instances_per_video + 1))
    lengths = rng.integers(lo, hi + 1, size=count)
    # drop instances until they fit with the mandatory gaps
    while count > 1 and lengths[:count].sum() + (count - 1) * spec.min_gap > spec.frames_per_video:
        count -= 1
    lengths = lengths[:count]
    slack = spec.frames_per_video - int(lengths.sum()) - (count - 1) * spec.min_gap
    # random composition of the slack into count + 1 non-negative parts
    cuts = np.sort(rng.integers(0, slack + 1, size=count))
    extra = np.diff(np.concatenate([[0], cuts]))
    labels = rng.integers(0, spec.num_classes, size=count)
    instances = []
    pos = 0
    for i in range(count):
        pos += int(extra[i])
        start = pos
        end = start + int(lengths[i])
        instances.append(ActionInstance(int(labels[i]), start, end))
        pos = end + spec.min_gap
    return instances


def _background(spec, rng):
    t, h, w = spec.frames_per_video, spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w]
    base = np.empty((h, w, 3))
    for ch in range(3):
        gy, gx = rng.uniform(-1, 1, size=2)
        base[..., ch] = rng.uniform(50, 110) + 25 * (gy * yy / max(h - 1, 1) + gx * xx / max(w - 1, 1))
    # slow global drift: brightness wave and a sub-pixel-free horizontal roll
    period = rng.uniform(150, 400)
    phase = rng.uniform(0, 2 * np.pi)
    times = np.arange(t)
    brightness = 12 * np.sin(2 * np.pi * times / period + phase)
    frames = base[None] + brightness[:, None, None, None]
    roll_speed = rng.uniform(-0.05, 0.05)
    shifts = np.round(times * roll_speed).astype(int)
    for i, s in enumerate(shifts):
        if s:
            frames[i] = np.roll(frames[i], s, axis=1)
    frames += rng.normal(0, 40 * spec.noise_level, size=frames.shape)
    return frames


def _square_mask(i, yy, xx, h, w, p):
    side = p["size"]
    cy = p["y0"] + p["vy"] * i
    cx = p["x0"] + p["vx"] * i
    # bounce inside the frame
    span_y, span_x = max(h - side, 1), max(w - side, 1)
    cy = span_y - abs(cy % (2 * span_y) - span_y)
    cx = span_x - abs(cx % (2 * span_x) - span_x)
    return (yy >= cy) & (yy < cy + side) & (xx >= cx) & (xx < cx + side)


def _bar_mask(i, yy, xx, h, w, p):
    angle = p["phase"] + p["omega"] * i
    dy, dx = yy - p["cy"], xx - p["cx"]
    along = dx * np.cos(angle) + dy * np.sin(angle)
    across = -dx * np.sin(angle) + dy * np.cos(angle)
    return (np.abs(along) <= p["half_len"]) & (np.abs(across) <= p["half_width"])


def _disc_mask(i, yy, xx, h, w, p):
    r = p["r_mid"] + p["r_amp"] * np.sin(p["phase"] + p["omega"] * i)
    return (yy - p["cy"]) ** 2 + (xx - p["cx"]) ** 2 <= r * r


_PATTERNS = (_square_mask, _bar_mask, _disc_mask)


def _pattern_params(label, spec, rng):
    h, w = spec.height, spec.width
    small = min(h, w)
    kind = label % 3
    # once the palette is exhausted, later cycles also move faster
    tempo = 1.0 + 0.5 * (label // (3 * len(_SHAPE_COLORS)))
    if kind == 0:
        speed = tempo * rng.uniform(0.4, 0.8) * small / 32
        heading = rng.uniform(0, 2 * np.pi)
        size = max(2, int(round(0.4 * small)))
        return {"size": size, "y0": rng.uniform(0, h - size), "x0": rng.uniform(0, w - size),
                "vy": speed * np.sin(heading), "vx": speed * np.cos(heading)}
    if kind == 1:
        return {"cy": rng.uniform(0.4, 0.6) * (h - 1), "cx": rng.uniform(0.4, 0.6) * (w - 1),
                "half_len": 0.42 * small, "half_width": max(1.0, 0.12 * small),
                "phase": rng.uniform(0, np.pi),
                "omega": tempo * rng.choice([-1, 1]) * rng.uniform(0.08, 0.14)}
    return {"cy": rng.uniform(0.35, 0.65) * (h - 1), "cx": rng.uniform(0.35, 0.65) * (w - 1),
            "r_mid": 0.31 * small, "r_amp": 0.08 * small,
            "phase": rng.uniform(0, 2 * np.pi), "omega": tempo * rng.uniform(0.25, 0.4)}


def generate_video(spec, index, render_actions=True):
    """Generate video ``index`` of the dataset described by ``spec``.

    With ``render_actions=False`` the same video is returned without any
    action pattern drawn, which gives the pure-background reference.
    Returns ``(VideoRecord, frames)`` with ``frames`` a ``uint8`` array of
    shape ``(T, H, W, 3)``.
    """
    video_seq = np.random.SeedSequence(spec.seed).spawn(index + 1)[index]
    layout_seq, bg_seq, pattern_seq = video_seq.spawn(3)
    instances = _place_instances(spec, np.random.default_rng(layout_seq))
    frames = _background(spec, np.random.default_rng(bg_seq))
    if render_actions:
        pattern_rng = np.random.default_rng(pattern_seq)
        yy, xx = np.mgrid[0:spec.height, 0:spec.width]
        for inst in instances:
            draw = _PATTERNS[inst.label % 3]
            params = _pattern_params(inst.label, spec, pattern_rng)
            color = np.array(_SHAPE_COLORS[(inst.label // 3) % len(_SHAPE_COLORS)], dtype=float)
            for i, t in enumerate(range(inst.start_frame, inst.end_frame)):
                mask = draw(i, yy, xx, spec.height, spec.width, params)
                frames[t][mask] = color
    record = VideoRecord(
        id=f"video_{index:04d}",
        num_frames=spec.frames_per_video,
        height=spec.height,
        width=spec.width,
        instances=instances,
    )
    pixels = np.clip(np.rint(frames), 0, 255).astype(np.uint8)
    return record, pixels


def generate_dataset(spec):
    """Generate ``spec.num_videos`` annotated videos.

    Every video is derived from its own child seed, so the result does not
    depend on generation order.
    """
    spec.validate()
    records, volumes = [], []
    for index in range(spec.num_videos):
        record, frames = generate_video(spec, index)
        records.append(record)
        volumes.append(frames)
    return records, volumes


# ---------------------------------------------------------------------------
# TDVID container


def _check_dims(record, frames):
    expected = (record.num_frames, record.height, record.width, 3)
    if frames.shape != expected or frames.dtype != np.uint8:
        raise ValueError(
            f"frame volume {frames.shape}/{frames.dtype} does not match record dims {expected}/uint8")


def encode_video_bytes(record, frames):
    frames = np.asarray(frames)
    _check_dims(record, frames)
    header = json.dumps(record.header(), separators=(",", ":"), sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + np.ascontiguousarray(frames).tobytes()


def encode_video_file(record, frames, path):
    """Write ``record`` and ``frames`` to ``path``; returns bytes written."""
    blob = encode_video_bytes(record, frames)
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise OSError(f"cannot write video file {path}: {exc}") from exc
    return len(blob)


def decode_video_bytes(blob):
    if len(blob) < 12 or blob[:8] != MAGIC:
        raise FormatError("unrecognized format: bad TDVID magic")
    (header_len,) = struct.unpack("<I", blob[8:12])
    if 12 + header_len > len(blob):
        raise FormatError("payload length mismatch: header runs past end of file")
    raw = blob[12:12 + header_len]
    try:
        header = json.loads(raw.decode("utf-8"))
        record = VideoRecord.from_header(header)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed header JSON at byte offset {12 + exc.pos}: {exc.msg}") from exc
    except (UnicodeDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed header at byte offset 12: {exc}") from exc
    payload = blob[12 + header_len:]
    expected = record.num_frames * record.height * record.width * 3
    if len(payload) != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, found {len(payload)}")
    frames = np.frombuffer(payload, dtype=np.uint8).reshape(
        record.num_frames, record.height, record.width, 3).copy()
    return record, frames


def decode_video_file(path):
    return decode_video_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# dataset directories


def write_dataset(out_dir, spec, records, volumes):
    """Write TDVID files plus ``manifest.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for record, frames in zip(records, volumes):
        name = f"{record.id}.tdvid"
        encode_video_file(record, frames, out_dir / name)
        names.append(name)
    manifest = {"spec": spec.to_dict() if spec is not None else None, "videos": names}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir


def read_manifest(data_dir):
    data_dir = Path(data_dir)
    try:
        manifest = json.loads((data_dir / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest in {data_dir}: {exc}") from exc
    if not isinstance(manifest, dict) or not isinstance(manifest.get("videos"), list):
        raise FormatError(f"{data_dir}/manifest.json: missing 'videos' list")
    return manifest


def load_dataset(data_dir):
    """Load every video listed in ``data_dir/manifest.json``."""
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    records, volumes = [], []
    for name in manifest["videos"]:
        record, frames = decode_video_file(data_dir / name)
        records.append(record)
        volumes.append(frames)
    return records, volumes
