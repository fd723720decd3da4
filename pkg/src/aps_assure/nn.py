"""Feed-forward ReLU network: inference, training, scaling, model files.

The glucose predictor is a small dense network (36 inputs -> hidden ReLU
layers -> 6 linear outputs).  Inputs are min-max scaled to [0, 1]; outputs
are raw mg/dL.  Everything is plain numpy so that training is bit-exact
reproducible from a seed and the verifier can consume the raw weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MODEL_FILE_VERSION = 1


class ModelFormatError(ValueError):
    """Raised for malformed, truncated, or inconsistent model files."""


class UnsupportedVersionError(ModelFormatError):
    """Raised when a model file declares a version we cannot read."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str  # "relu" | "id"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("layer dims must be >= 1")
        if self.activation not in ("relu", "id"):
            raise ValueError(f"unknown activation {self.activation!r}")


class MinMaxScaler:
    """Per-feature affine map sending the training min to 0 and max to 1."""

    def __init__(self, mins=None, maxs=None):
        self.mins = None if mins is None else np.asarray(mins, dtype=float)
        self.maxs = None if maxs is None else np.asarray(maxs, dtype=float)
        if self.mins is not None:
            self._check()

    def _check(self):
        if self.mins.shape != self.maxs.shape:
            raise ValueError("scaler min/max shape mismatch")
        if not (np.isfinite(self.mins).all() and np.isfinite(self.maxs).all()):
            raise ValueError("scaler bounds must be finite")
        if np.any(self.maxs <= self.mins):
            bad = np.where(self.maxs <= self.mins)[0]
            raise ValueError(f"degenerate features (max <= min) at indices {bad.tolist()}")

    @property
    def fitted(self) -> bool:
        return self.mins is not None

    @classmethod
    def fit(cls, rows) -> "MinMaxScaler":
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise ValueError("fit expects a non-empty 2-D array of rows")
        sc = cls(rows.min(axis=0), rows.max(axis=0))
        return sc

    @classmethod
    def identity(cls, dim: int) -> "MinMaxScaler":
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, x):
        if not self.fitted:
            raise ValueError("scaler is not fitted")
        x = np.asarray(x, dtype=float)
        return (x - self.mins) / (self.maxs - self.mins)

    def invert(self, x_scaled):
        if not self.fitted:
            raise ValueError("scaler is not fitted")
        x_scaled = np.asarray(x_scaled, dtype=float)
        return x_scaled * (self.maxs - self.mins) + self.mins


@dataclass
class Network:
    """Layered dense net.  weights[k] has shape (out_dim, in_dim)."""

    weights: list
    biases: list
    activations: list  # "relu"/"id" per layer; last layer must be "id"
    scaler: MinMaxScaler = field(default_factory=MinMaxScaler)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights/biases/activations length mismatch")
        if not self.weights:
            raise ValueError("network needs at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: weight/bias shape mismatch")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input dim does not chain")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k}: non-finite parameters")
        if self.activations[-1] != "id":
            raise ValueError("output layer must be linear")
        for act in self.activations:
            if act not in ("relu", "id"):
                raise ValueError(f"unknown activation {act!r}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def dims(self) -> list:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    @property
    def layer_specs(self) -> list:
        return [
            LayerSpec(w.shape[1], w.shape[0], act)
            for w, act in zip(self.weights, self.activations)
        ]

    def hidden_relu_count(self) -> int:
        return sum(w.shape[0] for w, a in zip(self.weights, self.activations) if a == "relu")

    def forward_scaled(self, x):
        """Inference on inputs already in network units (scaler bypassed)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        a = np.atleast_2d(x)
        if a.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {a.shape[1]}")
        for w, b, act in zip(self.weights, self.biases, self.activations):
            a = a @ w.T + b
            if act == "relu":
                a = np.maximum(a, 0.0)
        return a[0] if squeeze else a

    def forward(self, raw_input):
        """Inference on physical-unit inputs (scaler applied first)."""
        raw_input = np.asarray(raw_input, dtype=float)
        if raw_input.shape[-1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {raw_input.shape[-1]}")
        return self.forward_scaled(self.scaler.apply(raw_input))


def init_network(dims, seed: int, scaler: MinMaxScaler | None = None) -> Network:
    """Glorot-uniform initialization, last layer linear, earlier layers ReLU."""
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        acts.append("id" if k == len(dims) - 2 else "relu")
    return Network(weights, biases, acts, scaler or MinMaxScaler())


@dataclass
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.1
    hidden: tuple = (8, 8)

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size, learning_rate must be positive")
        if not (0 < self.validation_fraction < 0.5):
            raise ValueError("validation_fraction must be in (0, 0.5)")


def _forward_cached(net: Network, x):
    """Forward pass keeping post-activations for backprop."""
    acts = [x]
    a = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        a = np.maximum(z, 0.0) if act == "relu" else z
        acts.append(a)
    return acts


def _backprop(net: Network, x, y):
    """MSE gradients for a batch.  Returns (loss, dWs, dbs)."""
    acts = _forward_cached(net, x)
    pred = acts[-1]
    n = x.shape[0] * pred.shape[1]
    diff = pred - y
    loss = float(np.sum(diff * diff) / n)
    delta = 2.0 * diff / n
    dws, dbs = [], []
    for k in range(len(net.weights) - 1, -1, -1):
        if net.activations[k] == "relu":
            delta = delta * (acts[k + 1] > 0)
        dws.append(delta.T @ acts[k])
        dbs.append(delta.sum(axis=0))
        if k > 0:
            delta = delta @ net.weights[k]
    return loss, dws[::-1], dbs[::-1]


def mse(net: Network, x_scaled, y) -> float:
    pred = net.forward_scaled(x_scaled)
    return float(np.mean((pred - y) ** 2))


def train(data, cfg: TrainingConfig):
    """Train a fresh network with Adam on MSE.

    `data` is either an (inputs, targets) array pair in physical units or an
    object with an ``as_arrays()`` method returning one.  The input scaler is
    fitted on the training portion.  Returns (Network, history) where history
    is a list of per-epoch (train_loss, validation_loss) MSE pairs.
    """
    if hasattr(data, "as_arrays"):
        x_raw, y = data.as_arrays()
    else:
        x_raw, y = data
    x_raw = np.asarray(x_raw, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_raw.ndim != 2 or x_raw.shape[0] == 0:
        raise ValueError("training data is empty")
    if y.shape[0] != x_raw.shape[0]:
        raise ValueError("inputs/targets row count mismatch")

    rng = np.random.default_rng(cfg.seed)
    n = x_raw.shape[0]
    order = rng.permutation(n)
    n_val = max(1, int(round(cfg.validation_fraction * n))) if n > 1 else 0
    val_idx, tr_idx = order[:n_val], order[n_val:]
    if tr_idx.size == 0:
        tr_idx = order

    scaler = MinMaxScaler.fit(x_raw[tr_idx])
    x = scaler.apply(x_raw)
    x_tr, y_tr = x[tr_idx], y[tr_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    dims = [x.shape[1], *cfg.hidden, y.shape[1]]
    net = init_network(dims, seed=cfg.seed, scaler=scaler)

    b1, b2 = cfg.adam_betas
    m_w = [np.zeros_like(w) for w in net.weights]
    v_w = [np.zeros_like(w) for w in net.weights]
    m_b = [np.zeros_like(b) for b in net.biases]
    v_b = [np.zeros_like(b) for b in net.biases]
    t = 0

    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(x_tr))
        for start in range(0, len(x_tr), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, dws, dbs = _backprop(net, x_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            t += 1
            corr = cfg.learning_rate * np.sqrt(1 - b2**t) / (1 - b1**t)
            for k in range(len(net.weights)):
                m_w[k] = b1 * m_w[k] + (1 - b1) * dws[k]
                v_w[k] = b2 * v_w[k] + (1 - b2) * dws[k] ** 2
                net.weights[k] -= corr * m_w[k] / (np.sqrt(v_w[k]) + cfg.adam_epsilon)
                m_b[k] = b1 * m_b[k] + (1 - b1) * dbs[k]
                v_b[k] = b2 * v_b[k] + (1 - b2) * dbs[k] ** 2
                net.biases[k] -= corr * m_b[k] / (np.sqrt(v_b[k]) + cfg.adam_epsilon)
        train_loss = mse(net, x_tr, y_tr)
        val_loss = mse(net, x_val, y_val) if len(x_val) else train_loss
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergenceError(epoch)
        history.append((train_loss, val_loss))
    return net, history


def save_model(net: Network, path):
    doc = {
        "version": MODEL_FILE_VERSION,
        "dims": net.dims,
        "layers": [
            {"W": w.tolist(), "b": b.tolist(), "act": act}
            for w, b, act in zip(net.weights, net.biases, net.activations)
        ],
        "scaler": {
            "min": net.scaler.mins.tolist() if net.scaler.fitted else [],
            "max": net.scaler.maxs.tolist() if net.scaler.fitted else [],
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> Network:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"cannot parse model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise ModelFormatError(f"{path}: not a model file")
    if doc["version"] != MODEL_FILE_VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported model file version {doc['version']!r}"
        )
    try:
        layers = doc["layers"]
        weights = [np.array(l["W"], dtype=float) for l in layers]
        biases = [np.array(l["b"], dtype=float) for l in layers]
        acts = ["relu" if l["act"] == "relu" else "id" for l in layers]
        smin, smax = doc["scaler"]["min"], doc["scaler"]["max"]
        scaler = MinMaxScaler(smin, smax) if smin else MinMaxScaler()
        net = Network(weights, biases, acts, scaler)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: {exc}") from exc
    dims = doc.get("dims")
    if dims != net.dims:
        raise ModelFormatError(f"{path}: declared dims {dims} do not match layers {net.dims}")
    return net
