"""Dense multilayer perceptrons in numpy: forward, backprop, dropout, training, files.

Weights are stored ``[out x in]`` so a layer computes ``x @ W.T + b`` on a
batch of row vectors. The head is applied after the last layer: ``softmax``
(paired with cross-entropy) or ``linear`` (paired with squared error).
"""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, StateError, TrainingError

CE_CLAMP = 1e-12
ACTIVATIONS = ("relu", "identity")
HEADS = ("softmax", "linear")
LOSSES = ("cross_entropy", "mse")

_ids = itertools.count()


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "relu"
    dropout_rate: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ParameterError(f"inconsistent layer shapes {self.weights.shape} / {self.biases.shape}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


class MlpModel:
    def __init__(self, layers: list[DenseLayer], head: str, input_width: int):
        if head not in HEADS:
            raise ParameterError(f"unknown head {head!r}")
        width = input_width
        for i, layer in enumerate(layers):
            if layer.n_in != width:
                raise ParameterError(f"layer {i} expects width {layer.n_in}, previous width is {width}")
            width = layer.n_out
        if head == "softmax" and width < 2:
            raise ParameterError("softmax head needs output_width >= 2")
        self.layers = list(layers)
        self.head = head
        self.input_width = int(input_width)
        self._id = next(_ids)
        self.version = 0

    @property
    def output_width(self) -> int:
        return self.layers[-1].n_out if self.layers else self.input_width

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in (layer.weights, layer.biases)]

    def touch(self) -> None:
        """Mark parameters as modified; outstanding forward caches become stale."""
        self.version += 1

    def copy(self) -> "MlpModel":
        return MlpModel([copy.deepcopy(l) for l in self.layers], self.head, self.input_width)

    def architecture(self) -> dict:
        return {
            "input_width": self.input_width,
            "head": self.head,
            "layers": [
                {"in": l.n_in, "out": l.n_out, "activation": l.activation, "dropout": l.dropout_rate}
                for l in self.layers
            ],
        }

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)[0]


def build_mlp(input_width: int, hidden: list[int], output_width: int, head: str,
              dropout: float = 0.0, seed: int = 0) -> MlpModel:
    """ReLU hidden layers (He-uniform) and an identity output layer (Glorot-uniform)."""
    rng = np.random.default_rng(seed)
    layers = []
    width = input_width
    for h in hidden:
        limit = math.sqrt(6.0 / width)
        layers.append(DenseLayer(rng.uniform(-limit, limit, (h, width)), np.zeros(h), "relu", dropout))
        width = h
    limit = math.sqrt(6.0 / (width + output_width))
    layers.append(DenseLayer(rng.uniform(-limit, limit, (output_width, width)), np.zeros(output_width),
                             "identity", 0.0))
    return MlpModel(layers, head, input_width)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    model_id: int
    version: int
    mode: str
    squeeze: bool
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)
    output: np.ndarray | None = None


def forward(model: MlpModel, x, mode: str = "infer", rng: np.random.Generator | None = None):
    """Run the network on one vector or a batch of rows.

    In ``train`` mode each layer with a dropout rate zeroes activations with that
    probability and rescales survivors by ``1/(1-rate)``; ``infer`` mode is the
    plain affine stack.
    """
    if mode not in ("train", "infer"):
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    a = np.asarray(x, dtype=np.float64)
    squeeze = a.ndim == 1
    a = np.atleast_2d(a)
    if a.ndim != 2 or a.shape[1] != model.input_width:
        raise ParameterError(f"input width {a.shape[-1]} does not match model input_width {model.input_width}")
    if not np.isfinite(a).all():
        raise ParameterError("non-finite input")
    if mode == "train" and rng is None:
        rng = np.random.default_rng(0)
    cache = ForwardCache(model._id, model.version, mode, squeeze)
    for layer in model.layers:
        cache.inputs.append(a)
        z = a @ layer.weights.T + layer.biases
        cache.pre.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        mask = None
        if mode == "train" and layer.dropout_rate > 0:
            keep = 1.0 - layer.dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        cache.masks.append(mask)
    out = softmax(a) if model.head == "softmax" else a
    cache.output = out
    return (out[0] if squeeze else out), cache


def _check_target(kind: str, predicted, target):
    if kind not in LOSSES:
        raise ParameterError(f"unknown loss {kind!r}")
    p = np.atleast_2d(np.asarray(predicted, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if p.shape != t.shape:
        raise ParameterError(f"predicted shape {p.shape} does not match target shape {t.shape}")
    if kind == "cross_entropy":
        if (t < 0).any() or (np.abs(t.sum(axis=1) - 1.0) > 1e-6).any():
            raise ParameterError("cross-entropy target rows must be probability distributions")
    return p, t


def loss(kind: str, predicted, target) -> float:
    """Batch-mean cross-entropy (clamped log) or mean squared Euclidean error."""
    p, t = _check_target(kind, predicted, target)
    if kind == "cross_entropy":
        return float(-(t * np.log(np.maximum(p, CE_CLAMP))).sum(axis=1).mean())
    return float(((p - t) ** 2).sum(axis=1).mean())


def loss_grad(kind: str, predicted, target) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the head's input.

    For cross-entropy this is the fused softmax gradient ``(q - p) / batch``.
    """
    p, t = _check_target(kind, predicted, target)
    n = p.shape[0]
    g = (p - t) / n if kind == "cross_entropy" else 2.0 * (p - t) / n
    return g[0] if np.ndim(predicted) == 1 else g


def backward(model: MlpModel, cache: ForwardCache, grad):
    """Parameter gradients ``[(dW, db), ...]`` and the gradient at the input."""
    if cache.model_id != model._id or cache.version != model.version or len(cache.pre) != len(model.layers):
        raise StateError("forward cache does not belong to this model state")
    g = np.atleast_2d(np.asarray(grad, dtype=np.float64))
    if g.shape != cache.output.shape:
        raise ParameterError(f"gradient shape {g.shape} does not match output shape {cache.output.shape}")
    grads = [None] * len(model.layers)
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        if layer.activation == "relu":
            g = g * (cache.pre[i] > 0)
        grads[i] = (g.T @ cache.inputs[i], g.sum(axis=0))
        g = g @ layer.weights
    return grads, (g[0] if cache.squeeze else g)


# --- training --------------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ParameterError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.patience < 1:
            raise ParameterError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ParameterError("max_epochs must be >= 0")
        if self.optimizer not in ("sgd", "sgd_momentum", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_config(cls, cfg, prefix: str, base: "TrainConfig | None" = None, seed: int | None = None):
        base = base or cls()
        out = cls(
            learning_rate=cfg.get_float(prefix + "learning_rate", base.learning_rate),
            batch_size=cfg.get_int(prefix + "batch_size", base.batch_size),
            max_epochs=cfg.get_int(prefix + "max_epochs", base.max_epochs),
            patience=cfg.get_int(prefix + "patience", base.patience),
            seed=cfg.get_int(prefix + "seed", base.seed if seed is None else seed),
            optimizer=cfg.get_str(prefix + "optimizer", base.optimizer),
            momentum=cfg.get_float(prefix + "momentum", base.momentum),
            beta1=cfg.get_float(prefix + "beta1", base.beta1),
            beta2=cfg.get_float(prefix + "beta2", base.beta2),
        )
        return out


class _Optimizer:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if cfg.optimizer == "sgd":
                p -= cfg.learning_rate * g
            elif cfg.optimizer == "sgd_momentum":
                m *= cfg.momentum
                m += g
                p -= cfg.learning_rate * m
            else:
                m *= cfg.beta1
                m += (1 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1 - cfg.beta2) * g * g
                m_hat = m / (1 - cfg.beta1 ** self.t)
                v_hat = v / (1 - cfg.beta2 ** self.t)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    best_val_loss: float


def evaluate_loss(model: MlpModel, x, y, kind: str, batch: int = 4096) -> float:
    total = 0.0
    n = len(x)
    for start in range(0, n, batch):
        out, _ = forward(model, x[start:start + batch])
        total += loss(kind, out, y[start:start + batch]) * len(out)
    return total / n


def _check_pairing(model: MlpModel, kind: str):
    if kind not in LOSSES:
        raise ParameterError(f"unknown loss {kind!r}")
    if (kind == "cross_entropy") != (model.head == "softmax"):
        raise ParameterError(f"loss {kind} cannot be used with a {model.head} head")


def train(model: MlpModel, train_set, val_set, kind: str, config: TrainConfig):
    """Minibatch descent with early stopping on validation loss.

    Works on a private copy; returns the weights with the lowest validation loss
    seen (the untrained weights count as epoch 0) and the per-epoch history.
    """
    # Overflow surfaces as TrainingError below, not as numpy warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(model, train_set, val_set, kind, config)


def _train(model, train_set, val_set, kind, config):
    _check_pairing(model, kind)
    x_tr, y_tr = (np.asarray(a, dtype=np.float64) for a in train_set)
    x_va, y_va = (np.asarray(a, dtype=np.float64) for a in val_set)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ParameterError("training and validation sets must be nonempty")
    if x_tr.shape[1] != model.input_width or y_tr.shape[1] != model.output_width:
        raise ParameterError("training data widths do not match the model")

    work = model.copy()
    rng = np.random.default_rng(config.seed)
    opt = _Optimizer(work.parameters(), config)
    best_val = evaluate_loss(work, x_va, y_va, kind)
    if not math.isfinite(best_val):
        raise TrainingError("non-finite validation loss before training", 0)
    best = work.copy()
    history = [EpochRecord(0, evaluate_loss(work, x_tr, y_tr, kind), best_val, best_val)]
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(x_tr))
        total = 0.0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            out, cache = forward(work, x_tr[idx], "train", rng)
            batch_loss = loss(kind, out, y_tr[idx])
            if not math.isfinite(batch_loss):
                raise TrainingError(f"non-finite training loss in epoch {epoch}", epoch - 1)
            grads, _ = backward(work, cache, loss_grad(kind, out, y_tr[idx]))
            opt.step([g for pair in grads for g in pair])
            work.touch()
            total += batch_loss * len(idx)
        val = evaluate_loss(work, x_va, y_va, kind)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss in epoch {epoch}", epoch - 1)
        if val < best_val:
            best_val, best, wait = val, work.copy(), 0
        else:
            wait += 1
        history.append(EpochRecord(epoch, total / len(x_tr), val, best_val))
        if wait >= config.patience:
            break
    return best, history


def write_history(history: list[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for rec in history:
            w.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss)])


def one_hot(labels, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n))
    out[np.arange(len(labels)), labels] = 1.0
    return out


# --- model container files --------------------------------------------------------
#
#   0  8s  magic b"CSIMLPC\0"
#   8  I   version
#   12 I   descriptor length L
#   16 L   UTF-8 JSON: architecture, metadata, array directory [name, shape]
#   .. float64 little-endian arrays in directory order: layer weights/biases, then extras
#   .. 32s sha256 of everything before it

MODEL_MAGIC = b"CSIMLPC\x00"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<8sII")


def model_bytes(model: MlpModel, metadata: dict | None = None, arrays: dict | None = None) -> bytes:
    named = []
    for i, layer in enumerate(model.layers):
        named += [(f"layer{i}.weights", layer.weights), (f"layer{i}.biases", layer.biases)]
    named += [(k, np.asarray(v, dtype=np.float64)) for k, v in (arrays or {}).items()]
    descriptor = {
        "architecture": model.architecture(),
        "metadata": metadata or {},
        "arrays": [[name, list(arr.shape)] for name, arr in named],
    }
    desc = json.dumps(descriptor, sort_keys=True).encode()
    blob = _MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, len(desc)) + desc
    blob += b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in named)
    return blob + hashlib.sha256(blob).digest()


def save_model(model: MlpModel, path, metadata: dict | None = None, arrays: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(model_bytes(model, metadata, arrays))
    tmp.replace(path)


def parse_model(blob: bytes, expected_input_width: int | None = None):
    """Decode a container into ``(model, metadata, extra_arrays)``."""
    if len(blob) < _MODEL_HEADER.size + 32:
        raise FormatError(f"truncated model file: {len(blob)} bytes", len(blob))
    magic, version, desc_len = _MODEL_HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", 0)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}, expected {MODEL_VERSION}", 8)
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise FormatError("model digest mismatch", len(blob) - 32)
    end = _MODEL_HEADER.size + desc_len
    try:
        descriptor = json.loads(blob[_MODEL_HEADER.size:end])
        arch = descriptor["architecture"]
        directory = descriptor["arrays"]
    except (ValueError, KeyError) as exc:
        raise FormatError(f"malformed descriptor: {exc}", _MODEL_HEADER.size) from exc
    offset = end
    arrays = {}
    for name, shape in directory:
        count = int(np.prod(shape)) if shape else 1
        if offset + 8 * count > len(blob) - 32:
            raise FormatError(f"array {name} runs past end of file", offset)
        arrays[name] = np.frombuffer(blob, "<f8", count, offset).astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(blob) - 32:
        raise FormatError(f"{len(blob) - 32 - offset} unexpected trailing bytes", offset)
    if expected_input_width is not None and arch["input_width"] != expected_input_width:
        raise FormatError(
            f"model input_width {arch['input_width']} does not match expected {expected_input_width}",
            _MODEL_HEADER.size)
    layers = []
    try:
        for i, entry in enumerate(arch["layers"]):
            w = arrays.pop(f"layer{i}.weights")
            b = arrays.pop(f"layer{i}.biases")
            if w.shape != (entry["out"], entry["in"]):
                raise FormatError(f"layer {i} weights have shape {w.shape}, descriptor says "
                                  f"{(entry['out'], entry['in'])}", _MODEL_HEADER.size)
            layers.append(DenseLayer(w, b, entry["activation"], entry["dropout"]))
        model = MlpModel(layers, arch["head"], arch["input_width"])
    except (KeyError, ParameterError) as exc:
        raise FormatError(f"architecture mismatch: {exc}", _MODEL_HEADER.size) from exc
    return model, descriptor["metadata"], arrays


def load_container(path, expected_input_width: int | None = None):
    return parse_model(Path(path).read_bytes(), expected_input_width)


def load_model(path, expected_input_width: int | None = None) -> MlpModel:
    return load_container(path, expected_input_width)[0]
