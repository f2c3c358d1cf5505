"""Three-headed 3D ConvNet: shared conv trunk, fc6/fc7, proposal /
classification / actionness heads, plus auxiliary classifiers on conv5 and
fc6."""
from dataclasses import dataclass, field

import numpy as np

from . import layers as L

CONV_LAYERS = ("conv1a", "conv2a", "conv3a", "conv3b", "conv4a", "conv4b", "conv5a", "conv5b")
# pooling stage that follows each conv layer (None = no pool)
POOL_AFTER = {
    "conv1a": (1, 2, 2),
    "conv2a": (2, 2, 2),
    "conv3b": (2, 2, 2),
    "conv4b": (2, 2, 2),
    "conv5b": (2, 2, 2),
}
HEADS = ("head_prop", "head_cls", "head_reg", "aux_conv5", "aux_fc6")
LOSS_KEYS = ("prop", "cls", "aux5", "aux6", "reg")

# proposal head logit order
PROPOSAL_ACTION = 0
PROPOSAL_BACKGROUND = 1


class ContractError(RuntimeError):
    """Raised when the network produces non-finite values or is misused."""


class NonFiniteError(ContractError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    num_classes: int = 3
    input_shape: tuple = (16, 3, 32, 32)
    conv_channels: tuple = (16, 32, 64, 64, 64, 64, 64, 64)
    fc_widths: tuple = (256, 256)
    preset: str = "desk"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        object.__setattr__(self, "fc_widths", tuple(int(v) for v in self.fc_widths))
        self.validate()

    @classmethod
    def desk(cls, num_classes=3):
        return cls(num_classes=num_classes)

    @classmethod
    def paper(cls, num_classes=20):
        return cls(
            num_classes=num_classes,
            input_shape=(16, 3, 112, 112),
            conv_channels=(64, 128, 256, 256, 512, 512, 512, 512),
            fc_widths=(4096, 4096),
            preset="paper",
        )

    @classmethod
    def from_preset(cls, preset, num_classes):
        if preset == "desk":
            return cls.desk(num_classes)
        if preset == "paper":
            return cls.paper(num_classes)
        raise ValueError(f"preset: unknown preset {preset!r}")

    def validate(self):
        if self.num_classes < 1:
            raise ValueError("num_classes: must be >= 1")
        if len(self.input_shape) != 4 or self.input_shape[0] < 1:
            raise ValueError("input_shape: must be (T, C, H, W)")
        if len(self.conv_channels) != len(CONV_LAYERS):
            raise ValueError(f"conv_channels: need {len(CONV_LAYERS)} entries")
        if len(self.fc_widths) != 2:
            raise ValueError("fc_widths: need 2 entries (fc6, fc7)")
        if min(self.conv_channels + self.fc_widths) < 1:
            raise ValueError("conv_channels/fc_widths: widths must be >= 1")
        if self.preset not in ("desk", "paper", "custom"):
            raise ValueError(f"preset: unknown preset {self.preset!r}")
        t, _, h, w = self.input_shape
        for extent in POOL_AFTER.values():
            if extent[0] > t or extent[1] > h or extent[2] > w:
                raise ValueError(f"input_shape: {self.input_shape} too small for five pooling stages")
            t, h, w = t // extent[0], h // extent[1], w // extent[2]

    @property
    def conv5_channels(self):
        return self.conv_channels[-1]

    def pooled_shape(self):
        """(C, T, H, W) of the pool5 output."""
        t, _, h, w = self.input_shape
        for extent in POOL_AFTER.values():
            t, h, w = t // extent[0], h // extent[1], w // extent[2]
        return (self.conv5_channels, t, h, w)

    def param_shapes(self):
        """Ordered ``name -> shape`` for every parameter tensor."""
        shapes = {}
        c_in = self.input_shape[1]
        for name, c_out in zip(CONV_LAYERS, self.conv_channels):
            shapes[f"{name}.w"] = (c_out, c_in, 3, 3, 3)
            shapes[f"{name}.b"] = (c_out,)
            c_in = c_out
        d_in = int(np.prod(self.pooled_shape()))
        fc6, fc7 = self.fc_widths
        k = self.num_classes + 1
        for name, d_out, d in (("fc6", fc6, d_in), ("fc7", fc7, fc6), ("head_prop", 2, fc7),
                               ("head_cls", k, fc7), ("head_reg", 1, fc7),
                               ("aux_conv5", k, self.conv5_channels), ("aux_fc6", k, fc6)):
            shapes[f"{name}.w"] = (d_out, d)
            shapes[f"{name}.b"] = (d_out,)
        return shapes

    def num_parameters(self):
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "conv_channels": list(self.conv_channels),
            "fc_widths": list(self.fc_widths),
            "preset": self.preset,
        }


class NetParams(dict):
    """Ordered ``name -> float64 array`` mapping tied to an :class:`ArchConfig`.

    ``version`` is bumped by every optimizer step so that a forward cache
    computed before the step is rejected by :func:`backward`.
    """

    def __init__(self, arch, tensors=None):
        super().__init__()
        self.arch = arch
        self.version = 0
        shapes = arch.param_shapes()
        tensors = tensors or {}
        for name, shape in shapes.items():
            value = tensors.get(name)
            self[name] = (np.zeros(shape) if value is None
                          else np.array(value, dtype=np.float64).reshape(shape))

    def touch(self):
        self.version += 1

    def copy(self):
        return NetParams(self.arch, {k: v.copy() for k, v in self.items()})

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.items()}


def init_params(arch, rng):
    """Fan-in scaled uniform weights, zero biases."""
    params = NetParams(arch)
    for name, shape in arch.param_shapes().items():
        if name.endswith(".b"):
            continue
        fan_in = int(np.prod(shape[1:]))
        layer = name.split(".")[0]
        gain = 1.0 if layer in HEADS else 6.0
        limit = np.sqrt(gain / fan_in)
        params[name] = rng.uniform(-limit, limit, size=shape)
    return params


@dataclass
class NetOutputs:
    prop_logits: np.ndarray
    cls_logits: np.ndarray
    aux5_logits: np.ndarray
    aux6_logits: np.ndarray
    actionness: np.ndarray

    def probabilities(self):
        """Softmax probabilities ``(proposal, category)``."""
        return L.softmax(self.prop_logits), L.softmax(self.cls_logits)


@dataclass
class ForwardCache:
    params_id: int
    params_version: int
    batch: int
    squeezed: bool
    layers: dict = field(default_factory=dict)
    consumed: bool = False


def _as_clip_batch(clips, arch):
    clips = np.asarray(clips, dtype=np.float64)
    squeezed = clips.ndim == 4
    if squeezed:
        clips = clips[None]
    if clips.ndim != 5 or clips.shape[1:] != arch.input_shape:
        raise L.ShapeError(
            f"clip shape {clips.shape[-4:]} does not match architecture input {arch.input_shape}")
    # (N, T, C, H, W) -> (N, C, T, H, W)
    return np.ascontiguousarray(clips.transpose(0, 2, 1, 3, 4)), squeezed


def forward(params, clips, mode="eval", rng=None, dropout=0.5):
    """Run the network on ``(T, C, H, W)`` or ``(N, T, C, H, W)`` clips.

    Returns ``(NetOutputs, ForwardCache)``. Train mode needs ``rng`` for
    dropout; eval mode is deterministic.
    """
    arch = params.arch
    x, squeezed = _as_clip_batch(clips, arch)
    cache = ForwardCache(id(params), params.version, x.shape[0], squeezed)
    c = cache.layers
    for name in CONV_LAYERS:
        x, c[name] = L.conv3d_forward(x, params[f"{name}.w"], params[f"{name}.b"])
        x, c[name + ".relu"] = L.relu_forward(x)
        if name == "conv5b":
            conv5 = x
        if name in POOL_AFTER:
            x, c[name + ".pool"] = L.maxpool3d_forward(x, POOL_AFTER[name])

    gap = conv5.mean(axis=(2, 3, 4))
    c["gap_shape"] = conv5.shape
    aux5, c["aux_conv5"] = L.linear_forward(gap, params["aux_conv5.w"], params["aux_conv5.b"])

    c["flat_shape"] = x.shape
    h = x.reshape(x.shape[0], -1)
    h, c["fc6"] = L.linear_forward(h, params["fc6.w"], params["fc6.b"])
    h, c["fc6.relu"] = L.relu_forward(h)
    aux6, c["aux_fc6"] = L.linear_forward(h, params["aux_fc6.w"], params["aux_fc6.b"])
    h, c["fc6.drop"] = L.dropout_forward(h, dropout, mode, rng)
    h, c["fc7"] = L.linear_forward(h, params["fc7.w"], params["fc7.b"])
    h, c["fc7.relu"] = L.relu_forward(h)
    h, c["fc7.drop"] = L.dropout_forward(h, dropout, mode, rng)

    prop, c["head_prop"] = L.linear_forward(h, params["head_prop.w"], params["head_prop.b"])
    cls, c["head_cls"] = L.linear_forward(h, params["head_cls.w"], params["head_cls.b"])
    reg, c["head_reg"] = L.linear_forward(h, params["head_reg.w"], params["head_reg.b"])
    actionness = L.sigmoid(reg[:, 0])
    c["actionness"] = actionness

    out = NetOutputs(prop, cls, aux5, aux6, actionness)
    for key, value in vars(out).items():
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite values in network output {key!r}")
    if squeezed:
        out = NetOutputs(*(v[0] for v in vars(out).values()))
    return out, cache


def backward(params, cache, loss_grads):
    """Parameter gradients given upstream gradients of the five outputs.

    ``loss_grads`` maps ``prop``, ``cls``, ``aux5``, ``aux6`` (logit
    gradients) and ``reg`` (gradient w.r.t. the sigmoid actionness output)
    to arrays shaped like the corresponding outputs; missing keys count as
    zero.
    """
    if cache.consumed:
        raise ContractError("forward cache already consumed by a backward pass")
    if cache.params_id != id(params) or cache.params_version != params.version:
        raise ContractError("stale forward cache: parameters changed since forward")
    cache.consumed = True
    arch = params.arch
    n = cache.batch
    k = arch.num_classes + 1
    c = cache.layers

    def upstream(key, width):
        g = loss_grads.get(key)
        if g is None:
            return np.zeros((n, width))
        g = np.asarray(g, dtype=np.float64)
        return g.reshape(n, width)

    grads = {}

    def store(layer, dw, db):
        grads[f"{layer}.w"] = dw
        grads[f"{layer}.b"] = db

    a = c["actionness"]
    d_reg = upstream("reg", 1)[:, 0] * a * (1.0 - a)
    dh7 = np.zeros((n, arch.fc_widths[1]))
    for layer, g in (("head_prop", upstream("prop", 2)), ("head_cls", upstream("cls", k)),
                     ("head_reg", d_reg[:, None])):
        dx, dw, db = L.linear_backward(g, c[layer])
        dh7 += dx
        store(layer, dw, db)

    dh = L.dropout_backward(dh7, c["fc7.drop"])
    dh = L.relu_backward(dh, c["fc7.relu"])
    dh, dw, db = L.linear_backward(dh, c["fc7"])
    store("fc7", dw, db)
    dh = L.dropout_backward(dh, c["fc6.drop"])
    dx, dw, db = L.linear_backward(upstream("aux6", k), c["aux_fc6"])
    store("aux_fc6", dw, db)
    dh = dh + dx
    dh = L.relu_backward(dh, c["fc6.relu"])
    dh, dw, db = L.linear_backward(dh, c["fc6"])
    store("fc6", dw, db)
    dx = dh.reshape(c["flat_shape"])

    dgap, dw, db = L.linear_backward(upstream("aux5", k), c["aux_conv5"])
    store("aux_conv5", dw, db)
    gap_shape = c["gap_shape"]
    spatial = gap_shape[2] * gap_shape[3] * gap_shape[4]
    dconv5 = np.broadcast_to((dgap / spatial)[:, :, None, None, None], gap_shape)

    for name in reversed(CONV_LAYERS):
        if name in POOL_AFTER:
            dx = L.maxpool3d_backward(dx, c[name + ".pool"])
        if name == "conv5b":
            dx = dx + dconv5
        dx = L.relu_backward(dx, c[name + ".relu"])
        dx, dw, db = L.conv3d_backward(dx, c[name], need_dx=name != CONV_LAYERS[0])
        store(name, dw, db)

    return {name: grads[name] for name in params}
