"""Dense autoencoder trained from scratch with backpropagation and Adam.

Hidden layers use leaky ReLU, the output layer a sigmoid, and training
minimises mean binary cross-entropy over mini-batches. Everything runs in
float64 so analytic gradients can be checked tightly against finite
differences.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, NumericalError

HIDDEN_ACTIVATION = "leaky_relu"
OUTPUT_ACTIVATION = "sigmoid"
CHECKPOINT_FORMAT = "ledgerlens-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """Symmetric encoder/decoder layer sizes, e.g. ``(81, 8, 4, 3, 4, 8, 81)``."""

    layer_sizes: tuple[int, ...]
    slope: float = 0.4

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ConfigError(f"need at least one hidden layer, got {sizes}")
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"layer sizes must be positive: {sizes}")
        if sizes != sizes[::-1]:
            raise ConfigError(f"layer sizes are not mirror-symmetric: {sizes}")
        if len(sizes) % 2 == 0:
            raise ConfigError(f"no central bottleneck layer in {sizes}")
        if min(sizes[1:-1]) >= sizes[0] or sizes[len(sizes) // 2] != min(sizes):
            raise ConfigError(f"bottleneck must be the smallest layer and below the input size: {sizes}")
        if not 0.0 < self.slope < 1.0:
            raise ConfigError(f"leaky ReLU slope must lie in (0, 1), got {self.slope}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_layers(self) -> int:
        """Number of weight layers."""
        return len(self.layer_sizes) - 1

    @property
    def bottleneck_layer(self) -> int:
        """Index of the weight layer whose output is the latent code."""
        return self.n_layers // 2 - 1

    @property
    def bottleneck(self) -> int:
        return self.layer_sizes[len(self.layer_sizes) // 2]

    @classmethod
    def from_name(cls, name: str, input_dim: int, slope: float = 0.4) -> "LayerSpec":
        """Resolve ``AE1`` .. ``AE9`` for a given input dimensionality.

        AE1 is ``D-3-D``; each further level prepends a layer of twice the
        previous width (4, 8, ..., 512) on both sides.
        """
        m = re.fullmatch(r"\s*AE\s*([1-9])\s*", name, flags=re.IGNORECASE)
        if not m:
            raise ConfigError(f"unknown architecture {name!r}; expected AE1..AE9")
        level = int(m.group(1))
        encoder = [2 ** p for p in range(level, 1, -1)] + [3]
        return cls((input_dim, *encoder, *encoder[-2::-1], input_dim), slope)

    @classmethod
    def parse(cls, text: str, input_dim: int, slope: float = 0.4) -> "LayerSpec":
        """Accept an ``AEn`` name or an explicit dash-separated size list."""
        if re.fullmatch(r"\s*AE\s*\d+\s*", text, flags=re.IGNORECASE):
            return cls.from_name(text, input_dim, slope)
        try:
            sizes = tuple(int(s) for s in text.replace(",", "-").split("-"))
        except ValueError:
            raise ConfigError(f"cannot parse architecture {text!r}") from None
        spec = cls(sizes, slope)
        if spec.input_dim != input_dim:
            raise ConfigError(f"architecture input {spec.input_dim} != dataset dimension {input_dim}")
        return spec


@dataclass
class NetworkParams:
    """Weights ``W[l]`` of shape (n_in, n_out) and biases ``b[l]`` of shape (n_out,).

    The first half of the layers form the encoder, the second half the decoder.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def check(self, spec: LayerSpec) -> None:
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise DataError(f"expected {spec.n_layers} layers, got {len(self.weights)}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = spec.layer_sizes[l], spec.layer_sizes[l + 1]
            if w.shape != shape or b.shape != (shape[1],):
                raise DataError(f"layer {l}: weight {w.shape}/bias {b.shape}, expected {shape}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericalError(f"layer {l}: non-finite parameters")

    @property
    def encoder(self) -> list[tuple[np.ndarray, np.ndarray]]:
        half = len(self.weights) // 2
        return list(zip(self.weights[:half], self.biases[:half]))

    @property
    def decoder(self) -> list[tuple[np.ndarray, np.ndarray]]:
        half = len(self.weights) // 2
        return list(zip(self.weights[half:], self.biases[half:]))

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams([np.zeros_like(w) for w in self.weights],
                             [np.zeros_like(b) for b in self.biases])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patience: int = 25
    min_rel_improvement: float = 1e-5
    log_eps: float = 1e-7

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")
        if not 0.0 < self.log_eps < 0.5:
            raise ConfigError("log_eps must lie in (0, 0.5)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be a non-negative 64-bit integer")


@dataclass
class TrainTrace:
    epoch_loss: list[float] = field(default_factory=list)
    attribute_loss: list[list[float]] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list, compare=False)
    stopped_epoch: int = 0

    @property
    def n_epochs(self) -> int:
        return len(self.epoch_loss)


@dataclass
class ForwardCache:
    """Per-layer pre-activations ``z`` and activations ``a`` (``a[0]`` is the input)."""

    pre: list[np.ndarray]
    act: list[np.ndarray]
    spec: LayerSpec

    @property
    def latent(self) -> np.ndarray:
        return self.act[self.spec.bottleneck_layer + 1]


def leaky_relu(v: np.ndarray, slope: float) -> np.ndarray:
    # equals v for v >= 0 and slope * v otherwise, given 0 < slope < 1
    return np.maximum(v, slope * v)


def leaky_relu_grad(v: np.ndarray, slope: float) -> np.ndarray:
    # derivative at exactly 0 is taken as 1
    return np.where(v >= 0, 1.0, slope)


def glorot_init(spec: LayerSpec, seed: int) -> NetworkParams:
    """Uniform Glorot weights in +-sqrt(6 / (n_in + n_out)); zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return NetworkParams(weights, biases)


def _as_batch(batch, dim: int) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise DataError(f"batch has shape {np.shape(batch)}, expected (n, {dim})")
    return x


def forward(params: NetworkParams, spec: LayerSpec, batch) -> tuple[np.ndarray, ForwardCache]:
    a = _as_batch(batch, spec.input_dim)
    last = spec.n_layers - 1
    pre, act = [], [a]
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        a = expit(z) if l == last else leaky_relu(z, spec.slope)
        pre.append(z)
        act.append(a)
    return a, ForwardCache(pre, act, spec)


def encode(params: NetworkParams, spec: LayerSpec, batch) -> np.ndarray:
    """Latent (bottleneck) activations for each row."""
    return forward(params, spec, batch)[1].latent


def _check_binary(x: np.ndarray) -> None:
    if not ((x == 0) | (x == 1)).all():
        raise DataError("targets must be binary (0 or 1)")


def bce_terms(x: np.ndarray, x_hat: np.ndarray, log_eps: float = 1e-7) -> np.ndarray:
    """Element-wise negative Bernoulli log-likelihood with clamped predictions."""
    p = np.clip(x_hat, log_eps, 1.0 - log_eps)
    return -(x * np.log(p) + (1.0 - x) * np.log1p(-p))


def bce_loss(x, x_hat, log_eps: float = 1e-7) -> float:
    """Binary cross-entropy summed over dimensions, averaged over rows.

    A single row gives its summed loss; a batch gives the mean of row sums.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DataError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    _check_binary(x)
    terms = bce_terms(x, x_hat, log_eps)
    if terms.ndim == 1:
        return float(terms.sum())
    return float(terms.sum(axis=1).mean())


def backward(params: NetworkParams, spec: LayerSpec, batch, cache: ForwardCache) -> NetworkParams:
    """Gradients of the mean BCE loss, shaped like ``params``.

    For sigmoid outputs under BCE the output-layer delta is ``(x_hat - x) / n``.
    """
    x = _as_batch(batch, spec.input_dim)
    if cache.spec != spec or len(cache.act) != spec.n_layers + 1:
        raise DataError("activation cache was produced for a different architecture")
    if cache.act[0].shape != x.shape or not (cache.act[0] is x or np.array_equal(cache.act[0], x)):
        raise DataError("activation cache does not belong to this batch")
    n = x.shape[0]
    delta = (cache.act[-1] - x) / n
    grad_w = [None] * spec.n_layers
    grad_b = [None] * spec.n_layers
    for l in range(spec.n_layers - 1, -1, -1):
        grad_w[l] = cache.act[l].T @ delta
        grad_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l].T) * leaky_relu_grad(cache.pre[l - 1], spec.slope)
    return NetworkParams(grad_w, grad_b)


@dataclass
class AdamState:
    m: NetworkParams
    v: NetworkParams

    @classmethod
    def zeros(cls, params: NetworkParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())


def _check_grads(grads: NetworkParams, epoch: int | None) -> None:
    for l, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            where = f"epoch {epoch}, " if epoch is not None else ""
            raise NumericalError(f"non-finite gradient at {where}layer {l}")


def _adam_inplace(params: NetworkParams, grads: NetworkParams, state: AdamState,
                  config: TrainConfig, t: int) -> None:
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)


def adam_step(params: NetworkParams, grads: NetworkParams, state: AdamState,
              config: TrainConfig, t: int, epoch: int | None = None) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update at step ``t`` (1-based); inputs are left untouched."""
    if t < 1:
        raise ConfigError("Adam step counter starts at 1")
    _check_grads(grads, epoch)
    params = params.copy()
    state = AdamState(state.m.copy(), state.v.copy())
    _adam_inplace(params, grads, state, config, t)
    return params, state


EpochCallback = Callable[[int, NetworkParams], None]


def train(dataset, spec: LayerSpec, config: TrainConfig,
          blocks: Sequence[slice] | None = None,
          callback: EpochCallback | None = None) -> tuple[NetworkParams, TrainTrace]:
    """Mini-batch Adam training on a binary matrix (or an ``EncodedMatrix``).

    Each epoch visits a fresh seeded permutation of the rows; the last partial
    batch is kept. Training stops after ``max_epochs`` or once the relative
    improvement of the epoch loss stays below ``min_rel_improvement`` for
    ``patience`` consecutive epochs. ``callback(epoch, params)`` runs after
    every epoch.
    """
    if hasattr(dataset, "vocab"):
        if blocks is None:
            blocks = dataset.vocab.blocks
        dataset = dataset.x
    x_all = np.asarray(dataset, dtype=np.float64)
    if x_all.ndim != 2 or x_all.shape[0] == 0:
        raise DataError("training data must be a non-empty 2-D matrix")
    if x_all.shape[1] != spec.input_dim:
        raise ConfigError(f"dataset dimension {x_all.shape[1]} != architecture input {spec.input_dim}")
    _check_binary(x_all)
    blocks = list(blocks) if blocks is not None else []

    n = x_all.shape[0]
    params = glorot_init(spec, config.seed)
    state = AdamState.zeros(params)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    trace = TrainTrace()
    t = 0
    stall = 0
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(n)
        col_loss = np.zeros(spec.input_dim)
        for start in range(0, n, config.batch_size):
            xb = x_all[order[start:start + config.batch_size]]
            x_hat, cache = forward(params, spec, xb)
            col_loss += bce_terms(xb, x_hat, config.log_eps).sum(axis=0)
            grads = backward(params, spec, xb, cache)
            _check_grads(grads, epoch)
            t += 1
            _adam_inplace(params, grads, state, config, t)
        loss = float(col_loss.sum() / n)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        trace.epoch_loss.append(loss)
        trace.attribute_loss.append([float(col_loss[blk].sum() / (n * (blk.stop - blk.start)))
                                     for blk in blocks])
        trace.wall_time.append(time.perf_counter() - started)
        trace.stopped_epoch = epoch
        if callback is not None:
            callback(epoch, params)
        if epoch > 1:
            prev = trace.epoch_loss[-2]
            rel = (prev - loss) / prev if prev > 0 else 0.0
            stall = stall + 1 if rel < config.min_rel_improvement else 0
            if stall >= config.patience:
                break
    return params, trace


def reconstruct(params: NetworkParams, spec: LayerSpec, x) -> np.ndarray:
    return forward(params, spec, x)[0]


def reconstruction_error(params: NetworkParams, spec: LayerSpec, x, chunk: int = 4096):
    """Mean squared difference between rows and their reconstructions.

    Averages over the D encoded dimensions. A 1-D input returns a float, a
    matrix returns one error per row.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = _as_batch(arr, spec.input_dim)
    out = np.empty(arr.shape[0])
    for start in range(0, arr.shape[0], chunk):
        xb = arr[start:start + chunk]
        out[start:start + chunk] = np.mean((xb - reconstruct(params, spec, xb)) ** 2, axis=1)
    return float(out[0]) if single else out


def squared_error(x, x_hat) -> float:
    """Reconstruction error of a row against a given reconstruction."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DataError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


@dataclass
class Checkpoint:
    spec: LayerSpec
    params: NetworkParams
    config: TrainConfig
    final_epoch: int
    vocabulary: dict | None = None


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_spec": {
            "layer_sizes": list(ckpt.spec.layer_sizes),
            "hidden_activation": HIDDEN_ACTIVATION,
            "output_activation": OUTPUT_ACTIVATION,
            "slope": ckpt.spec.slope,
        },
        "train_config": asdict(ckpt.config),
        "seed": ckpt.config.seed,
        "final_epoch": ckpt.final_epoch,
        "weights": [w.tolist() for w in ckpt.params.weights],
        "biases": [b.tolist() for b in ckpt.params.biases],
    }
    if ckpt.vocabulary is not None:
        doc["vocabulary"] = ckpt.vocabulary
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(doc, ensure_ascii=False) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read checkpoint: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: not a version-{CHECKPOINT_VERSION} ledgerlens checkpoint")
    ls = doc["layer_spec"]
    spec = LayerSpec(tuple(ls["layer_sizes"]), ls["slope"])
    params = NetworkParams([np.array(w, dtype=np.float64).reshape(spec.layer_sizes[l], spec.layer_sizes[l + 1])
                            for l, w in enumerate(doc["weights"])],
                           [np.array(b, dtype=np.float64) for b in doc["biases"]])
    params.check(spec)
    return Checkpoint(spec, params, TrainConfig(**doc["train_config"]), int(doc["final_epoch"]),
                      doc.get("vocabulary"))
