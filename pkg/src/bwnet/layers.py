"""Network description and forward passes.

A network is an ordered list of :class:`LayerSpec` (the frontend up to and
including the embedding projection) plus a full-precision classifier head.
Binarized convolutions live inside residual blocks; the stem, projection
shortcuts, embedding projection and classifier stay full precision.

Two forward modes exist: ``train_fullprec`` runs every layer on dense
shadow weights (the training-time forward), ``binary`` runs binarized
layers through the addition-only packed-sign path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_ops as T
from .binarize import BinaryFilterBank
from .errors import ConfigError, ShapeError
from .opcount import record_ops

MODE_TRAIN_FULLPREC = "train_fullprec"
MODE_BINARY = "binary"
MODES = (MODE_TRAIN_FULLPREC, MODE_BINARY)

LAYER_KINDS = (
    "float_conv2d",
    "binary_conv2d",
    "linear",
    "relu",
    "prelu",
    "residual_block",
    "pool",
    "flatten",
)
ACTIVATIONS = ("relu", "prelu")
POOL_KINDS = ("global_average", "max")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network; unused fields stay at their defaults."""

    kind: str
    name: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    slope: float = 0.25
    pool_kind: str = ""
    pool_size: int = 0
    in_features: int = 0
    out_features: int = 0
    with_bias: bool = False
    activation: str = ""
    with_projection: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind '{self.kind}'")
        if not self.name:
            raise ConfigError("every layer needs a name")

    @property
    def binarized(self) -> bool:
        return self.kind == "binary_conv2d" or self.kind == "residual_block"


def conv_layer(name: str, in_channels: int, out_channels: int, kernel: int,
               stride: int = 1, padding: int = 0, binarized: bool = False) -> LayerSpec:
    if min(in_channels, out_channels, kernel) < 1:
        raise ConfigError(f"conv layer '{name}' needs positive channels and kernel")
    return LayerSpec(
        kind="binary_conv2d" if binarized else "float_conv2d",
        name=name,
        in_channels=in_channels,
        out_channels=out_channels,
        kernel=kernel,
        stride=stride,
        padding=padding,
    )


def linear_layer(name: str, in_features: int, out_features: int,
                 bias: bool = False) -> LayerSpec:
    if min(in_features, out_features) < 1:
        raise ConfigError(f"linear layer '{name}' needs positive feature counts")
    return LayerSpec(
        kind="linear",
        name=name,
        in_features=in_features,
        out_features=out_features,
        with_bias=bias,
    )


def activation_layer(kind: str, name: str, slope: float = 0.25) -> LayerSpec:
    if kind not in ACTIVATIONS:
        raise ConfigError(f"unknown activation '{kind}'")
    return LayerSpec(kind=kind, name=name, slope=slope)


def residual_block(name: str, in_channels: int, out_channels: int, kernel: int = 3,
                   stride: int | None = None, activation: str = "relu") -> LayerSpec:
    """Two binarized convs with an identity shortcut.

    When the channel count changes the block downsamples (stride 2) and the
    shortcut becomes a full-precision 1x1 projection.  No activation follows
    the shortcut addition, so a block whose conv filters are all zero is the
    identity map.
    """
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation '{activation}'")
    if stride is None:
        stride = 2 if in_channels != out_channels else 1
    return LayerSpec(
        kind="residual_block",
        name=name,
        in_channels=in_channels,
        out_channels=out_channels,
        kernel=kernel,
        stride=stride,
        padding=kernel // 2,
        activation=activation,
        with_projection=(in_channels != out_channels or stride != 1),
    )


def pool_layer(name: str, kind: str = "global_average", size: int = 0) -> LayerSpec:
    if kind not in POOL_KINDS:
        raise ConfigError(f"unknown pool kind '{kind}'")
    if kind == "max" and size < 1:
        raise ConfigError(f"max pool layer '{name}' needs a positive size")
    return LayerSpec(kind="pool", name=name, pool_kind=kind, pool_size=size)


def flatten_layer(name: str = "flatten") -> LayerSpec:
    return LayerSpec(kind="flatten", name=name)


def residual_sublayers(spec: LayerSpec) -> tuple[LayerSpec, LayerSpec, LayerSpec, LayerSpec | None]:
    """Expand a residual block into (conv1, activation, conv2, projection)."""
    if spec.kind != "residual_block":
        raise ConfigError(f"layer '{spec.name}' is not a residual block")
    conv1 = conv_layer(
        f"{spec.name}.conv1", spec.in_channels, spec.out_channels, spec.kernel,
        stride=spec.stride, padding=spec.padding, binarized=True,
    )
    act = activation_layer(spec.activation, f"{spec.name}.act", slope=spec.slope)
    conv2 = conv_layer(
        f"{spec.name}.conv2", spec.out_channels, spec.out_channels, spec.kernel,
        stride=1, padding=spec.padding, binarized=True,
    )
    proj = None
    if spec.with_projection:
        proj = conv_layer(
            f"{spec.name}.proj", spec.in_channels, spec.out_channels, 1,
            stride=spec.stride, padding=0, binarized=False,
        )
    return conv1, act, conv2, proj


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered frontend layers plus an optional classifier head.

    The frontend must end in a [N, embedding_dim] map; forward passes
    L2-normalize that output into the embedding before the classifier.
    A spec without a classifier supports storage/packing tooling but not
    :func:`forward_network`.
    """

    layers: tuple[LayerSpec, ...]
    classifier: LayerSpec | None
    embedding_dim: int
    num_classes: int
    input_channels: int

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        object.__setattr__(self, "layers", tuple(self.layers))
        self._check_chain()

    def _check_chain(self) -> None:
        channels = self.input_channels
        flat_features = None  # known width once the map is flattened
        for layer in self.layers:
            if layer.kind in ("float_conv2d", "binary_conv2d", "residual_block"):
                if layer.in_channels != channels:
                    raise ShapeError(
                        f"layer '{layer.name}' expects {layer.in_channels} input "
                        f"channels but receives {channels}"
                    )
                channels = layer.out_channels
                flat_features = None
            elif layer.kind == "pool":
                if layer.pool_kind == "global_average":
                    flat_features = channels
            elif layer.kind == "flatten":
                if flat_features is None:
                    flat_features = -1  # spatial extents unknown until forward
            elif layer.kind == "linear":
                if flat_features is not None and flat_features >= 0 \
                        and layer.in_features != flat_features:
                    raise ShapeError(
                        f"linear layer '{layer.name}' expects {layer.in_features} "
                        f"features but receives {flat_features}"
                    )
                flat_features = layer.out_features
        if self.classifier is not None:
            if self.classifier.kind != "linear":
                raise ConfigError("the classifier head must be a linear layer")
            if self.classifier.in_features != self.embedding_dim:
                raise ShapeError(
                    f"classifier expects {self.classifier.in_features} inputs but the "
                    f"embedding has {self.embedding_dim}"
                )
            if self.classifier.out_features != self.num_classes:
                raise ShapeError(
                    f"classifier produces {self.classifier.out_features} logits for "
                    f"{self.num_classes} classes"
                )


def iter_param_layers(spec: NetworkSpec):
    """Yield every parameterized leaf layer in deterministic walk order."""
    for layer in spec.layers:
        if layer.kind == "residual_block":
            conv1, act, conv2, proj = residual_sublayers(layer)
            yield conv1
            if act.kind == "prelu":
                yield act
            yield conv2
            if proj is not None:
                yield proj
        elif layer.kind in ("float_conv2d", "binary_conv2d", "linear", "prelu"):
            yield layer
    if spec.classifier is not None:
        yield spec.classifier


def init_params(spec: NetworkSpec, seed: int) -> dict[str, np.ndarray]:
    """Uniform(-b, b) float32 init with b = sqrt(1/fan_in) per layer.

    That bound keeps initial weights inside the straight-through clip
    region, which the binary backward rule needs for gradient flow.
    """
    rng = np.random.default_rng(int(seed))
    params: dict[str, np.ndarray] = {}
    for layer in iter_param_layers(spec):
        if layer.kind in ("float_conv2d", "binary_conv2d"):
            fan_in = layer.in_channels * layer.kernel * layer.kernel
            bound = float(np.sqrt(1.0 / fan_in))
            shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            params[f"{layer.name}.weight"] = rng.uniform(-bound, bound, shape).astype(np.float32)
        elif layer.kind == "linear":
            bound = float(np.sqrt(1.0 / layer.in_features))
            shape = (layer.out_features, layer.in_features)
            params[f"{layer.name}.weight"] = rng.uniform(-bound, bound, shape).astype(np.float32)
            if layer.with_bias:
                params[f"{layer.name}.bias"] = np.zeros(layer.out_features, dtype=np.float32)
        elif layer.kind == "prelu":
            params[f"{layer.name}.slope"] = np.full(1, layer.slope, dtype=np.float32)
    return params


def binarize_network(spec: NetworkSpec, params: dict) -> dict[str, BinaryFilterBank]:
    """Binarize every binary-conv weight tensor into a packed filter bank."""
    banks: dict[str, BinaryFilterBank] = {}
    for layer in iter_param_layers(spec):
        if layer.kind != "binary_conv2d":
            continue
        name = f"{layer.name}.weight"
        value = params[name]
        banks[name] = value if isinstance(value, BinaryFilterBank) \
            else BinaryFilterBank.from_weights(value)
    return banks


def expand(bank: BinaryFilterBank) -> np.ndarray:
    """Materialize a bank's dense scale*sign weight tensor [F, *filter_shape]."""
    dense = bank.signs() * bank.scales[:, None]
    return dense.reshape((bank.num_filters, *bank.filter_shape))


def binary_conv2d_forward(x: np.ndarray, bank: BinaryFilterBank, stride: int = 1,
                          padding: int = 0) -> np.ndarray:
    """Convolution against packed sign filters without inner multiplications.

    For each filter the window accumulation adds the inputs whose sign bit
    is 1 and subtracts the rest; the single per-filter scale is then applied
    as exactly one multiplication per output element.  Equals
    conv2d_reference(x, expand(bank), ...) up to float reassociation.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"conv input must be 4-d NCHW, got shape {tuple(x.shape)}")
    if len(bank.filter_shape) != 3:
        raise ShapeError(
            f"expected (C, kh, kw) filters in the bank, got shape {bank.filter_shape}"
        )
    c, kh, kw = bank.filter_shape
    if x.shape[1] != c:
        raise ShapeError(
            f"input channels {x.shape[1]} do not match bank filter channels {c}"
        )
    cols, (ho, wo) = T.im2col(x, kh, kw, stride, padding)
    mask = bank.bitmask()
    n = bank.bits_per_filter
    rows = cols.shape[0]
    out = np.empty((rows, bank.num_filters), dtype=x.dtype)
    for f_idx in range(bank.num_filters):
        m = mask[f_idx]
        acc = cols[:, m].sum(axis=1) - cols[:, ~m].sum(axis=1)
        out[:, f_idx] = acc * bank.scales[f_idx]
    record_ops(
        inner_additions=rows * bank.num_filters * n,
        scale_multiplies=rows * bank.num_filters,
    )
    return np.ascontiguousarray(
        out.reshape(x.shape[0], ho, wo, bank.num_filters).transpose(0, 3, 1, 2)
    )


@dataclass
class ForwardCache:
    """Intermediate values captured by a training-mode forward pass."""

    layer_caches: list
    pre_embedding: np.ndarray | None = None
    embedding: np.ndarray | None = None


@dataclass
class ForwardResult:
    embedding: np.ndarray
    logits: np.ndarray | None
    cache: ForwardCache | None


def _dense_weight(name: str, params: dict):
    try:
        value = params[name]
    except KeyError:
        raise ConfigError(f"missing parameter '{name}'") from None
    if isinstance(value, BinaryFilterBank):
        raise ConfigError(
            f"parameter '{name}' is a packed filter bank; the full-precision "
            "forward needs dense shadow weights"
        )
    return value


def _bank_for(name: str, params: dict, banks: dict | None) -> BinaryFilterBank:
    if banks is not None and name in banks:
        return banks[name]
    try:
        value = params[name]
    except KeyError:
        raise ConfigError(f"missing parameter '{name}'") from None
    if isinstance(value, BinaryFilterBank):
        return value
    return BinaryFilterBank.from_weights(value)


def _forward_conv(layer: LayerSpec, params: dict, x: np.ndarray, mode: str,
                  banks: dict | None, collect: bool):
    name = f"{layer.name}.weight"
    if mode == MODE_BINARY and layer.kind == "binary_conv2d":
        bank = _bank_for(name, params, banks)
        return binary_conv2d_forward(x, bank, layer.stride, layer.padding), None
    w = _dense_weight(name, params)
    y, cols, _ = T.conv2d_with_cols(x, w, layer.stride, layer.padding)
    cache = {"cols": cols, "x_shape": x.shape} if collect else None
    return y, cache


def _forward_layer(layer: LayerSpec, params: dict, x: np.ndarray, mode: str,
                   banks: dict | None, collect: bool):
    kind = layer.kind
    if kind in ("float_conv2d", "binary_conv2d"):
        return _forward_conv(layer, params, x, mode, banks, collect)
    if kind == "relu":
        return T.relu(x), ({"x": x} if collect else None)
    if kind == "prelu":
        slope = params[f"{layer.name}.slope"]
        y = T.prelu(x, slope.astype(x.dtype)[0])
        return y, ({"x": x} if collect else None)
    if kind == "residual_block":
        return _forward_residual(layer, params, x, mode, banks, collect)
    if kind == "pool":
        if layer.pool_kind == "global_average":
            y = T.global_average_pool(x)
        else:
            y = T.max_pool(x, layer.pool_size)
        return y, ({"x": x} if collect else None)
    if kind == "flatten":
        y = x.reshape(x.shape[0], -1)
        return y, ({"x_shape": x.shape} if collect else None)
    if kind == "linear":
        w = _dense_weight(f"{layer.name}.weight", params)
        b = params.get(f"{layer.name}.bias") if layer.with_bias else None
        y = T.linear_reference(x, w, b)
        return y, ({"x": x} if collect else None)
    raise ConfigError(f"unknown layer kind '{kind}'")


def _forward_residual(layer: LayerSpec, params: dict, x: np.ndarray, mode: str,
                      banks: dict | None, collect: bool):
    conv1, act, conv2, proj = residual_sublayers(layer)
    h1, c1 = _forward_layer(conv1, params, x, mode, banks, collect)
    a1, ca = _forward_layer(act, params, h1, mode, banks, collect)
    h2, c2 = _forward_layer(conv2, params, a1, mode, banks, collect)
    if proj is not None:
        shortcut, cp = _forward_layer(proj, params, x, mode, banks, collect)
    else:
        shortcut, cp = x, None
    y = T.add(h2, shortcut)
    cache = None
    if collect:
        cache = {"conv1": c1, "act": ca, "conv2": c2, "proj": cp}
    return y, cache


def run_layers(layers, params: dict, x: np.ndarray, mode: str,
               banks: dict | None = None, collect_cache: bool = False):
    """Run an ordered layer list; returns (output, per-layer cache list)."""
    if mode not in MODES:
        raise ConfigError(f"unknown forward mode '{mode}'")
    if collect_cache and mode != MODE_TRAIN_FULLPREC:
        raise ConfigError("backward caches are only produced by the full-precision forward")
    caches = []
    for layer in layers:
        x, cache = _forward_layer(layer, params, x, mode, banks, collect_cache)
        caches.append(cache)
    return x, caches


def forward_network(spec: NetworkSpec, params: dict, x: np.ndarray, mode: str,
                    banks: dict | None = None, collect_cache: bool = False) -> ForwardResult:
    """Full pass: frontend -> L2-normalized embedding -> classifier logits."""
    if spec.classifier is None:
        raise ConfigError("forward_network needs a spec with a classifier head")
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"network input must be 4-d NCHW, got shape {tuple(x.shape)}")
    if x.shape[1] != spec.input_channels:
        raise ShapeError(
            f"network expects {spec.input_channels} input channels, got {x.shape[1]}"
        )
    h, layer_caches = run_layers(spec.layers, params, x, mode, banks, collect_cache)
    if h.ndim != 2 or h.shape[1] != spec.embedding_dim:
        raise ShapeError(
            f"frontend output has shape {tuple(h.shape)}, expected "
            f"[batch, {spec.embedding_dim}]"
        )
    emb = T.l2_normalize_rows(h)
    w = _dense_weight(f"{spec.classifier.name}.weight", params)
    b = params.get(f"{spec.classifier.name}.bias") if spec.classifier.with_bias else None
    logits = T.linear_reference(emb, w, b)
    cache = None
    if collect_cache:
        cache = ForwardCache(layer_caches=layer_caches, pre_embedding=h, embedding=emb)
    return ForwardResult(embedding=emb, logits=logits, cache=cache)


def build_micro_resnet(depth_blocks: int, channels, *, num_classes: int,
                       embedding_dim: int = 128, activation: str = "relu",
                       input_channels: int = 1) -> NetworkSpec:
    """Small residual network: full-precision 3x3 stem, ``depth_blocks``
    residual blocks with binarized convs (downsampling whenever the channel
    count changes), global average pooling, a bias-free embedding
    projection, and a full-precision classifier."""
    channels = tuple(int(c) for c in channels)
    if depth_blocks < 1:
        raise ConfigError(f"depth_blocks must be >= 1, got {depth_blocks}")
    if len(channels) != depth_blocks:
        raise ConfigError(
            f"channel list {channels} does not match depth_blocks={depth_blocks}"
        )
    if min(channels) < 1:
        raise ConfigError(f"channel counts must be positive, got {channels}")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation '{activation}'")
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")

    layers = [
        conv_layer("stem", input_channels, channels[0], 3, stride=1, padding=1),
        activation_layer(activation, "stem.act"),
    ]
    prev = channels[0]
    for i, c in enumerate(channels, start=1):
        layers.append(residual_block(f"block{i}", prev, c, activation=activation))
        prev = c
    layers += [
        pool_layer("pool", "global_average"),
        flatten_layer("flatten"),
        linear_layer("embed", prev, embedding_dim, bias=False),
    ]
    classifier = linear_layer("classifier", embedding_dim, num_classes, bias=True)
    return NetworkSpec(
        layers=tuple(layers),
        classifier=classifier,
        embedding_dim=embedding_dim,
        num_classes=num_classes,
        input_channels=input_channels,
    )


_LINE_FIELDS = {
    "float_conv2d": ("in_channels", "out_channels", "kernel", "stride", "padding"),
    "binary_conv2d": ("in_channels", "out_channels", "kernel", "stride", "padding"),
    "linear": ("in_features", "out_features", "with_bias"),
    "relu": (),
    "prelu": ("slope",),
    "residual_block": ("in_channels", "out_channels", "kernel", "stride", "padding",
                       "activation", "with_projection"),
    "pool": ("pool_kind", "pool_size"),
    "flatten": (),
}


def layer_to_line(layer: LayerSpec) -> str:
    parts = [layer.kind, f"name={layer.name}"]
    for fname in _LINE_FIELDS[layer.kind]:
        value = getattr(layer, fname)
        if isinstance(value, bool):
            value = int(value)
        elif isinstance(value, float):
            value = repr(value)
        parts.append(f"{fname}={value}")
    return " ".join(parts)


def layer_from_line(line: str) -> LayerSpec:
    tokens = line.split()
    if not tokens or tokens[0] not in LAYER_KINDS:
        raise ConfigError(f"unparseable layer line: '{line}'")
    kind = tokens[0]
    fields: dict = {"kind": kind}
    for token in tokens[1:]:
        if "=" not in token:
            raise ConfigError(f"malformed layer field '{token}' in '{line}'")
        key, value = token.split("=", 1)
        if key == "name":
            fields[key] = value
        elif key in ("slope",):
            fields[key] = float(value)
        elif key in ("pool_kind", "activation"):
            fields[key] = value
        elif key in ("with_bias", "with_projection"):
            fields[key] = bool(int(value))
        else:
            fields[key] = int(value)
    if "name" not in fields:
        raise ConfigError(f"layer line missing a name: '{line}'")
    return LayerSpec(**fields)


def spec_to_text(spec: NetworkSpec) -> str:
    lines = [
        f"input_channels = {spec.input_channels}",
        f"embedding_dim = {spec.embedding_dim}",
        f"num_classes = {spec.num_classes}",
        "classifier = " + (layer_to_line(spec.classifier) if spec.classifier else "none"),
    ]
    lines += [f"layer = {layer_to_line(layer)}" for layer in spec.layers]
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> NetworkSpec:
    header: dict[str, int] = {}
    classifier: LayerSpec | None = None
    layers: list[LayerSpec] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"unparseable network line: '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in ("input_channels", "embedding_dim", "num_classes"):
            header[key] = int(value)
        elif key == "classifier":
            classifier = None if value == "none" else layer_from_line(value)
        elif key == "layer":
            layers.append(layer_from_line(value))
        else:
            raise ConfigError(f"unknown network field '{key}'")
    missing = {"input_channels", "embedding_dim", "num_classes"} - set(header)
    if missing:
        raise ConfigError(f"network description missing fields: {sorted(missing)}")
    return NetworkSpec(
        layers=tuple(layers),
        classifier=classifier,
        embedding_dim=header["embedding_dim"],
        num_classes=header["num_classes"],
        input_channels=header["input_channels"],
    )
