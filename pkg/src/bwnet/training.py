"""Training loop for binary-weight networks.

Each step runs (1) a full-precision forward on the shadow weights, (2)
per-filter binarization of every binary conv, (3) a backward pass whose
weight-dependent terms use the binarized weights, (4) a full-precision
SGD-with-momentum update of the shadows.  The learning rate decays by 90%
every ten epochs.

The shadow gradient of a binary conv applies, per filter with scale ``a``
over ``n`` weights, the factor (1/n + clip_indicator * a) to the gradient
taken against the binarized weights, where clip_indicator is 1 inside
[-threshold, threshold] and 0 outside (the straight-through estimator).
``backward_rule`` selects that composed rule ("scaled"), the plain clipped
pass-through ("passthrough"), or no correction at all ("none", the raw
binarized-weight gradient, useful for finite-difference checks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_ops as T
from .errors import ConfigError, DomainError, NumericsError, ShapeError
from .layers import (
    MODE_TRAIN_FULLPREC,
    BinaryFilterBank,
    ForwardCache,
    LayerSpec,
    NetworkSpec,
    binarize_network,
    expand,
    forward_network,
    init_params,
    residual_sublayers,
)
from .seeding import derive_seed, stream_rng

BACKWARD_RULES = ("scaled", "passthrough", "none")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; lr0 = 0 is permitted for frozen-weight runs."""

    epochs: int = 30
    batch_size: int = 32
    lr0: float = 0.01
    momentum: float = 0.95
    clip_threshold: float = 1.0
    backward_rule: str = "scaled"
    clip_shadow_weights: bool = False
    loss: str = "cross_entropy"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr0 < 0:
            raise ConfigError(f"lr0 must be >= 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.clip_threshold <= 0:
            raise ConfigError(f"clip_threshold must be > 0, got {self.clip_threshold}")
        if self.backward_rule not in BACKWARD_RULES:
            raise ConfigError(f"unknown backward_rule '{self.backward_rule}'")
        if self.loss != "cross_entropy":
            raise ConfigError(f"unsupported loss '{self.loss}'")


@dataclass
class TrainState:
    """Shadow weights plus optimizer state; mutated only by the trainer."""

    params: dict[str, np.ndarray]
    momentum_buffers: dict[str, np.ndarray]
    learning_rate: float
    epoch: int = 0
    step: int = 0
    rng_seed: int = 0


def init_train_state(spec: NetworkSpec, config: TrainConfig) -> TrainState:
    params = init_params(spec, derive_seed(config.seed, "init"))
    buffers = {name: np.zeros_like(value) for name, value in params.items()}
    return TrainState(
        params=params,
        momentum_buffers=buffers,
        learning_rate=lr_schedule(0, config.lr0),
        rng_seed=config.seed,
    )


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its logit gradient (softmax - onehot)/N."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"expected [N,K] logits with [N] labels, got {tuple(logits.shape)} "
            f"and {tuple(labels.shape)}"
        )
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DomainError(f"labels must lie in [0, {k}), got range "
                          f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


def ste_gradient(upstream: np.ndarray, preimage: np.ndarray,
                 threshold: float = 1.0) -> np.ndarray:
    """Straight-through estimator: pass the gradient where |preimage| <= threshold."""
    upstream = np.asarray(upstream)
    preimage = np.asarray(preimage)
    if upstream.shape != preimage.shape:
        raise ShapeError(
            f"upstream shape {tuple(upstream.shape)} does not match preimage "
            f"shape {tuple(preimage.shape)}"
        )
    return upstream * (np.abs(preimage) <= threshold)


def shadow_weight_gradient(grad_binarized: np.ndarray, shadow: np.ndarray,
                           scales: np.ndarray, rule: str,
                           threshold: float = 1.0) -> np.ndarray:
    """Turn the binarized-weight gradient into the shadow-weight gradient."""
    if rule not in BACKWARD_RULES:
        raise ConfigError(f"unknown backward_rule '{rule}'")
    if grad_binarized.shape != shadow.shape:
        raise ShapeError(
            f"gradient shape {tuple(grad_binarized.shape)} does not match shadow "
            f"shape {tuple(shadow.shape)}"
        )
    if rule == "none":
        return grad_binarized.copy()
    indicator = np.abs(shadow) <= threshold
    if rule == "passthrough":
        return grad_binarized * indicator
    n = int(np.prod(shadow.shape[1:]))
    dtype = grad_binarized.dtype
    per_filter = np.asarray(scales, dtype=dtype).reshape(
        (shadow.shape[0],) + (1,) * (shadow.ndim - 1)
    )
    factor = indicator * per_filter + dtype.type(1.0 / n)
    return grad_binarized * factor


def backward_binary_layer(layer: LayerSpec, bank: BinaryFilterBank, cache: dict | None,
                          upstream: np.ndarray, shadow_weights: np.ndarray,
                          config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Backward through one binary conv: gradients taken against the
    binarized weights, then mapped onto the full-precision shadows."""
    if cache is None or "cols" not in cache:
        raise ConfigError(
            f"layer '{layer.name}' has no forward cache; run the full-precision "
            "forward with cache collection first"
        )
    grad_binarized = T.conv2d_weight_grad(upstream, cache["cols"], shadow_weights.shape)
    grad_shadow = shadow_weight_gradient(
        grad_binarized, shadow_weights, bank.scales, config.backward_rule,
        config.clip_threshold,
    )
    binarized = expand(bank).astype(upstream.dtype, copy=False)
    grad_input = T.conv2d_input_grad(
        upstream, binarized, cache["x_shape"], layer.stride, layer.padding
    )
    return grad_input, grad_shadow


def _backward_layer(layer: LayerSpec, params: dict, banks: dict, cache,
                    grad: np.ndarray, grads: dict, config: TrainConfig) -> np.ndarray:
    kind = layer.kind
    if kind == "binary_conv2d":
        name = f"{layer.name}.weight"
        grad_input, grad_shadow = backward_binary_layer(
            layer, banks[name], cache, grad, params[name], config
        )
        grads[name] = grad_shadow
        return grad_input
    if kind == "float_conv2d":
        name = f"{layer.name}.weight"
        w = params[name]
        grads[name] = T.conv2d_weight_grad(grad, cache["cols"], w.shape)
        return T.conv2d_input_grad(grad, w, cache["x_shape"], layer.stride, layer.padding)
    if kind == "relu":
        return grad * (cache["x"] > 0)
    if kind == "prelu":
        x = cache["x"]
        slope = params[f"{layer.name}.slope"]
        negative = x < 0
        grads[f"{layer.name}.slope"] = np.array(
            [(grad * x * negative).sum()], dtype=slope.dtype
        )
        return grad * np.where(negative, slope.astype(grad.dtype)[0], grad.dtype.type(1.0))
    if kind == "residual_block":
        return _backward_residual(layer, params, banks, cache, grad, grads, config)
    if kind == "pool":
        if layer.pool_kind == "global_average":
            x = cache["x"]
            per_cell = grad / (x.shape[2] * x.shape[3])
            return np.broadcast_to(per_cell[:, :, None, None], x.shape).astype(
                grad.dtype, copy=True
            )
        return _max_pool_backward(cache["x"], grad, layer.pool_size)
    if kind == "flatten":
        return grad.reshape(cache["x_shape"])
    if kind == "linear":
        name = f"{layer.name}.weight"
        w = params[name]
        x = cache["x"]
        grads[name] = grad.T @ x
        if layer.with_bias:
            grads[f"{layer.name}.bias"] = grad.sum(axis=0)
        return grad @ w
    raise ConfigError(f"unknown layer kind '{kind}'")


def _backward_residual(layer, params, banks, cache, grad, grads, config):
    conv1, act, conv2, proj = residual_sublayers(layer)
    g = _backward_layer(conv2, params, banks, cache["conv2"], grad, grads, config)
    g = _backward_layer(act, params, banks, cache["act"], g, grads, config)
    g_in = _backward_layer(conv1, params, banks, cache["conv1"], g, grads, config)
    if proj is not None:
        g_in = g_in + _backward_layer(proj, params, banks, cache["proj"], grad, grads, config)
    else:
        g_in = g_in + grad
    return g_in


def _max_pool_backward(x: np.ndarray, grad: np.ndarray, k: int) -> np.ndarray:
    n, c, h, w = x.shape
    ho, wo = grad.shape[2], grad.shape[3]
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::k, ::k]
    flat = win.reshape(n, c, ho, wo, k * k)
    winners = flat.argmax(axis=-1)
    grad_x = np.zeros_like(x)
    for pos in range(k * k):
        i, j = divmod(pos, k)
        mask = winners == pos
        grad_x[:, :, i:i + k * ho:k, j:j + k * wo:k] += grad * mask
    return grad_x


def backward_network(spec: NetworkSpec, params: dict, banks: dict,
                     cache: ForwardCache, grad_logits: np.ndarray,
                     config: TrainConfig) -> dict[str, np.ndarray]:
    """Gradients for every trainable parameter from the cached forward."""
    if cache is None or cache.pre_embedding is None:
        raise ConfigError("backward_network needs the cache of a full-precision forward")
    grads: dict[str, np.ndarray] = {}
    cls = spec.classifier
    emb = cache.embedding
    w = params[f"{cls.name}.weight"]
    grads[f"{cls.name}.weight"] = grad_logits.T @ emb
    if cls.with_bias:
        grads[f"{cls.name}.bias"] = grad_logits.sum(axis=0)
    g_emb = grad_logits @ w

    # through the row-wise L2 normalization emb = h / ||h||
    h = cache.pre_embedding
    norms = np.sqrt((h * h).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, np.asarray(1e-12, dtype=h.dtype))
    g = (g_emb - emb * (g_emb * emb).sum(axis=1, keepdims=True)) / norms

    for layer, layer_cache in zip(reversed(spec.layers), reversed(cache.layer_caches)):
        g = _backward_layer(layer, params, banks, layer_cache, g, grads, config)
    return grads


def sgd_momentum_step(state: TrainState, grads: dict[str, np.ndarray],
                      momentum: float) -> TrainState:
    """v <- momentum*v + g; w <- w - lr*v, applied to the shadow weights."""
    for name, grad in grads.items():
        if name not in state.params:
            raise ShapeError(f"gradient for unknown parameter '{name}'")
        w = state.params[name]
        if grad.shape != w.shape:
            raise ShapeError(
                f"gradient shape {tuple(grad.shape)} does not match parameter "
                f"'{name}' shape {tuple(w.shape)}"
            )
        v = state.momentum_buffers[name]
        v *= momentum
        v += grad.astype(v.dtype, copy=False)
        w -= state.learning_rate * v
    state.step += 1
    return state


def lr_schedule(epoch: int, lr0: float) -> float:
    """lr0 decayed by 90% every 10 epochs: lr0 / 10^(epoch // 10)."""
    if epoch < 0:
        raise DomainError(f"epoch must be >= 0, got {epoch}")
    return lr0 / (10.0 ** (epoch // 10))


def train_epoch(state: TrainState, spec: NetworkSpec, dataset, config: TrainConfig) -> dict:
    """One pass over the dataset; returns epoch-mean loss and accuracy.

    Batch order is a deterministic function of (seed, epoch).  The loss
    forward always runs on the full-precision shadow weights; binarization
    happens afterwards, feeding only the backward pass.
    """
    features, labels = dataset
    if len(features) == 0:
        raise DomainError("cannot train on an empty dataset")
    if len(features) != len(labels):
        raise ShapeError(
            f"{len(features)} feature rows but {len(labels)} labels"
        )
    rng = stream_rng(state.rng_seed, "shuffle", state.epoch)
    order = rng.permutation(len(features))
    total_loss = 0.0
    correct = 0
    for start in range(0, len(order), config.batch_size):
        batch = order[start:start + config.batch_size]
        xb = features[batch]
        yb = labels[batch]
        result = forward_network(spec, state.params, xb, MODE_TRAIN_FULLPREC,
                                 collect_cache=True)
        loss, grad_logits = cross_entropy_loss(result.logits, yb)
        if not np.isfinite(loss):
            raise NumericsError(
                f"training diverged (loss={loss}) at epoch {state.epoch}, step {state.step}"
            )
        total_loss += loss * len(batch)
        correct += int((result.logits.argmax(axis=1) == yb).sum())
        banks = binarize_network(spec, state.params)
        grads = backward_network(spec, state.params, banks, result.cache,
                                 grad_logits, config)
        sgd_momentum_step(state, grads, config.momentum)
        if config.clip_shadow_weights:
            for w in state.params.values():
                np.clip(w, -config.clip_threshold, config.clip_threshold, out=w)
    state.epoch += 1
    return {"loss": total_loss / len(order), "accuracy": correct / len(order)}


def train_network(spec: NetworkSpec, dataset, config: TrainConfig,
                  log_fn=None) -> tuple[TrainState, list[dict]]:
    """Run the full schedule; ``log_fn`` (if given) receives one record per epoch."""
    state = init_train_state(spec, config)
    history: list[dict] = []
    for epoch in range(config.epochs):
        state.learning_rate = lr_schedule(epoch, config.lr0)
        metrics = train_epoch(state, spec, dataset, config)
        record = {"epoch": epoch, "lr": state.learning_rate, **metrics}
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    return state, history
