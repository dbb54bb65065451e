"""Partially personalized multilayer perceptron with exact analytic gradients.

Parameters live in two flat float64 vectors: `u` packs the shared layers
(feature body), `v` packs the personal layers (classifier head). Layer l maps
dims[l] -> dims[l+1] with weights stored (in, out) followed by the bias; the
activation is applied after every layer except the last. An empty personal
part (split at the last layer) is allowed so full-model baselines can reuse
the same machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EvaluationError

RELU = "relu"
TANH = "tanh"
CROSS_ENTROPY = "cross_entropy"
SQUARED_ERROR = "squared_error"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture plus the shared/personal split point.

    layer_dims: [d_in, hidden..., n_classes]. Layers with index < split_layer
    are shared; the rest are personal. split_layer == n_layers yields an
    empty personal part (fully shared model).
    """

    layer_dims: tuple[int, ...]
    activation: str = RELU
    split_layer: int = 1
    weight_decay: float = 0.0
    loss: str = CROSS_ENTROPY

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2:
            raise ConfigurationError("need at least one layer (input and output dims)")
        if any(d < 1 for d in self.layer_dims):
            raise ConfigurationError("layer dims must be positive")
        if self.activation not in (RELU, TANH):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.loss not in (CROSS_ENTROPY, SQUARED_ERROR):
            raise ConfigurationError(f"unknown loss {self.loss!r}")
        if not 1 <= self.split_layer <= self.n_layers:
            raise ConfigurationError(
                f"split_layer must be in [1, {self.n_layers}], got {self.split_layer}"
            )
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be nonnegative")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def fully_shared(self) -> "ModelSpec":
        """Same architecture with every layer in the shared part."""
        return ModelSpec(
            layer_dims=self.layer_dims,
            activation=self.activation,
            split_layer=self.n_layers,
            weight_decay=self.weight_decay,
            loss=self.loss,
        )

    def _layer_sizes(self) -> list[int]:
        dims = self.layer_dims
        return [dims[l] * dims[l + 1] + dims[l + 1] for l in range(self.n_layers)]

    @property
    def shared_dim(self) -> int:
        return sum(self._layer_sizes()[: self.split_layer])

    @property
    def personal_dim(self) -> int:
        return sum(self._layer_sizes()[self.split_layer:])


@dataclass(frozen=True)
class Batch:
    """A labeled minibatch: features (n, d_in) and integer labels in [0, C)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise EvaluationError("batch features must be a nonempty (n, d) array")
        if self.labels.shape != (self.features.shape[0],):
            raise EvaluationError("labels must align with feature rows")
        if not np.all(np.isfinite(self.features)):
            raise EvaluationError("non-finite feature values")

    @property
    def n(self) -> int:
        return self.features.shape[0]


def _unpack(spec: ModelSpec, u: np.ndarray, v: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Flat vectors -> per-layer (W, b) views, shared layers first."""
    if u.shape != (spec.shared_dim,):
        raise ValueError(f"shared vector has length {u.shape}, expected ({spec.shared_dim},)")
    if v.shape != (spec.personal_dim,):
        raise ValueError(f"personal vector has length {v.shape}, expected ({spec.personal_dim},)")
    dims = spec.layer_dims
    layers = []
    offset, source = 0, u
    for l in range(spec.n_layers):
        if l == spec.split_layer:
            offset, source = 0, v
        n_in, n_out = dims[l], dims[l + 1]
        w = source[offset: offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = source[offset: offset + n_out]
        offset += n_out
        layers.append((w, b))
    return layers


def init_params(spec: ModelSpec, seed) -> tuple[np.ndarray, np.ndarray]:
    """Glorot-uniform weights, zero biases; same seed gives the same network
    regardless of where the shared/personal split falls."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    flat: list[np.ndarray] = []
    for l in range(spec.n_layers):
        n_in, n_out = dims[l], dims[l + 1]
        bound = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-bound, bound, size=(n_in, n_out))
        flat.append(w.ravel())
        flat.append(np.zeros(n_out))
    packed = np.concatenate(flat)
    return packed[: spec.shared_dim].copy(), packed[spec.shared_dim:].copy()


def _activate(spec: ModelSpec, s: np.ndarray) -> np.ndarray:
    return np.maximum(s, 0.0) if spec.activation == RELU else np.tanh(s)


def forward(spec: ModelSpec, u: np.ndarray, v: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Logits (n, C) for a feature matrix (n, d_in)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.layer_dims[0]:
        raise ValueError(
            f"features shape {features.shape} incompatible with input dim {spec.layer_dims[0]}"
        )
    a = features
    layers = _unpack(spec, u, v)
    for l, (w, b) in enumerate(layers):
        s = a @ w + b
        a = _activate(spec, s) if l < spec.n_layers - 1 else s
    return a


def _loss_from_logits(spec: ModelSpec, logits: np.ndarray, labels: np.ndarray):
    """(data_loss, dlogits) for the configured loss, averaged over the batch."""
    n, c = logits.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    if spec.loss == CROSS_ENTROPY:
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_p = shifted - log_z
        loss = float(-log_p[np.arange(n), labels].mean())
        dlogits = (np.exp(log_p) - onehot) / n
    else:
        resid = logits - onehot
        loss = float(0.5 * np.sum(resid * resid) / n)
        dlogits = resid / n
    return loss, dlogits


def loss_and_grads(
    spec: ModelSpec, u: np.ndarray, v: np.ndarray, batch: Batch
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean batch loss plus its exact gradients with respect to u and v.

    loss = data_loss + weight_decay/2 * (|u|^2 + |v|^2). Inputs are never
    mutated.
    """
    labels = batch.labels
    if labels.min() < 0 or labels.max() >= spec.n_classes:
        raise ValueError("labels outside [0, n_classes)")
    layers = _unpack(spec, u, v)

    # Forward pass, keeping activations for the backward sweep.
    acts = [batch.features]
    pre: list[np.ndarray] = []
    a = batch.features
    for l, (w, b) in enumerate(layers):
        s = a @ w + b
        pre.append(s)
        a = _activate(spec, s) if l < spec.n_layers - 1 else s
        acts.append(a)

    data_loss, delta = _loss_from_logits(spec, acts[-1], labels)
    loss = data_loss
    if spec.weight_decay:
        loss += 0.5 * spec.weight_decay * (float(u @ u) + float(v @ v))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss from non-finite inputs")

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * spec.n_layers  # type: ignore
    for l in range(spec.n_layers - 1, -1, -1):
        grads[l] = (acts[l].T @ delta, delta.sum(axis=0))
        if l > 0:
            w, _ = layers[l]
            delta = delta @ w.T
            if spec.activation == RELU:
                delta = delta * (pre[l - 1] > 0)
            else:
                t = np.tanh(pre[l - 1])
                delta = delta * (1.0 - t * t)

    g_u = np.concatenate(
        [np.concatenate([gw.ravel(), gb]) for gw, gb in grads[: spec.split_layer]]
    ) if spec.split_layer > 0 else np.zeros(0)
    g_v = np.concatenate(
        [np.concatenate([gw.ravel(), gb]) for gw, gb in grads[spec.split_layer:]]
    ) if spec.split_layer < spec.n_layers else np.zeros(0)
    if spec.weight_decay:
        g_u = g_u + spec.weight_decay * u
        g_v = g_v + spec.weight_decay * v
    return loss, g_u, g_v


def finite_diff_grads(
    spec: ModelSpec, u: np.ndarray, v: np.ndarray, batch: Batch, step: float = 1e-5
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient estimate of the same loss, coordinate-wise."""
    if step <= 0:
        raise ValueError("step must be positive")

    def loss_at(uu: np.ndarray, vv: np.ndarray) -> float:
        return loss_and_grads(spec, uu, vv, batch)[0]

    def sweep(vec: np.ndarray, other: np.ndarray, vec_is_u: bool) -> np.ndarray:
        g = np.zeros_like(vec)
        for k in range(vec.size):
            hi = vec.copy()
            lo = vec.copy()
            hi[k] += step
            lo[k] -= step
            if vec_is_u:
                g[k] = (loss_at(hi, other) - loss_at(lo, other)) / (2 * step)
            else:
                g[k] = (loss_at(other, hi) - loss_at(other, lo)) / (2 * step)
        return g

    return sweep(u, v, True), sweep(v, u, False)


def evaluate(spec: ModelSpec, u: np.ndarray, v: np.ndarray, shard: Batch) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) of argmax predictions on a shard."""
    if shard.n < 1:
        raise EvaluationError("cannot evaluate an empty shard")
    logits = forward(spec, u, v, shard.features)
    predictions = logits.argmax(axis=1)
    accuracy = float((predictions == shard.labels).mean())
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    mean_loss = float(-log_p[np.arange(shard.n), shard.labels].mean())
    return accuracy, mean_loss
