"""Two-layer tanh feedforward network trained by per-sample backpropagation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from rpdct import kernels

SCHEMA = 1


class NetworkError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Mlp:
    """Weights include the bias as the last column of each matrix."""

    hidden_weights: np.ndarray  # (hidden, inputs + 1)
    output_weights: np.ndarray  # (outputs, hidden + 1)

    def __post_init__(self):
        w1 = np.array(self.hidden_weights, dtype=np.float64, order="C")
        w2 = np.array(self.output_weights, dtype=np.float64, order="C")
        if w1.ndim != 2 or w2.ndim != 2 or w2.shape[1] != w1.shape[0] + 1:
            raise NetworkError(f"inconsistent weight shapes {w1.shape}, {w2.shape}")
        if not (np.isfinite(w1).all() and np.isfinite(w2).all()):
            raise NetworkError("weights must be finite")
        w1.setflags(write=False)
        w2.setflags(write=False)
        object.__setattr__(self, "hidden_weights", w1)
        object.__setattr__(self, "output_weights", w2)

    @property
    def input_size(self) -> int:
        return self.hidden_weights.shape[1] - 1

    @property
    def hidden_size(self) -> int:
        return self.hidden_weights.shape[0]

    @property
    def output_size(self) -> int:
        return self.output_weights.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Mlp):
            return NotImplemented
        return bool(
            np.array_equal(self.hidden_weights, other.hidden_weights)
            and np.array_equal(self.output_weights, other.output_weights)
        )

    __hash__ = None


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    max_epochs: int = 2000
    target_mse: float = 1e-4
    seed: int = 0
    weight_init_scale: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise NetworkError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise NetworkError("max_epochs must be at least 1")
        if not self.target_mse > 0:
            raise NetworkError("target_mse must be positive")


@dataclass(frozen=True, eq=False)
class TrainResult:
    net: Mlp
    mse_trace: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.mse_trace)

    @property
    def final_mse(self) -> float:
        return self.mse_trace[-1]


def init_mlp(input_size: int, hidden_size: int, output_size: int, seed: int, scale: float = 1.0) -> Mlp:
    """Uniform weights in +-scale/sqrt(fan_in) from a seeded generator."""
    if min(input_size, hidden_size, output_size) < 1:
        raise NetworkError("layer sizes must be at least 1")
    rng = np.random.default_rng(seed)
    lim1 = scale / math.sqrt(input_size)
    lim2 = scale / math.sqrt(hidden_size)
    w1 = rng.uniform(-lim1, lim1, size=(hidden_size, input_size + 1))
    w2 = rng.uniform(-lim2, lim2, size=(output_size, hidden_size + 1))
    return Mlp(w1, w2)


def _check(net: Mlp, x: np.ndarray, size: int, what: str):
    if x.shape[-1] != size:
        raise NetworkError(f"{what} length {x.shape[-1]} does not match network size {size}")


def forward(net: Mlp, inputs: np.ndarray) -> np.ndarray:
    """Network output for one input vector or a ``(samples, inputs)`` batch."""
    x = np.asarray(inputs, dtype=float)
    _check(net, x, net.input_size, "input")
    w1, w2 = net.hidden_weights, net.output_weights
    hid = np.tanh(x @ w1[:, :-1].T + w1[:, -1])
    return np.tanh(hid @ w2[:, :-1].T + w2[:, -1])


def gradient(net: Mlp, inputs: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of 0.5 * ||forward(x) - target||^2 w.r.t. both weight matrices."""
    x = np.asarray(inputs, dtype=float)
    t = np.asarray(target, dtype=float)
    _check(net, x, net.input_size, "input")
    _check(net, t, net.output_size, "target")
    w1, w2 = net.hidden_weights, net.output_weights
    hid = np.tanh(w1[:, :-1] @ x + w1[:, -1])
    out = np.tanh(w2[:, :-1] @ hid + w2[:, -1])
    d2 = (out - t) * (1.0 - out * out)
    d1 = (w2[:, :-1].T @ d2) * (1.0 - hid * hid)
    g2 = np.outer(d2, np.append(hid, 1.0))
    g1 = np.outer(d1, np.append(x, 1.0))
    return g1, g2


def train(net: Mlp, inputs: np.ndarray, targets: np.ndarray, config: TrainConfig) -> TrainResult:
    """Per-sample momentum SGD; sample order is reshuffled every epoch.

    Stops once the epoch MSE (mean over samples and outputs, measured before
    each sample's update) drops to ``target_mse`` or after ``max_epochs``.
    """
    x = np.ascontiguousarray(inputs, dtype=np.float64)
    t = np.ascontiguousarray(targets, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise NetworkError("training needs a non-empty (samples, inputs) array")
    if t.shape != (len(x), net.output_size):
        raise NetworkError(f"targets shape {t.shape} does not match ({len(x)}, {net.output_size})")
    _check(net, x, net.input_size, "input")

    w1 = net.hidden_weights.copy()
    w2 = net.output_weights.copy()
    v1 = np.zeros_like(w1)
    v2 = np.zeros_like(w2)
    rng = np.random.default_rng(config.seed)
    denom = t.size
    trace = []
    for _ in range(config.max_epochs):
        order = rng.permutation(len(x)).astype(np.int64)
        sse = kernels.sgd_epoch(w1, w2, v1, v2, x, t, order, config.learning_rate, config.momentum)
        mse = sse / denom
        if not math.isfinite(mse):
            raise TrainingDivergedError(f"loss became {mse} after {len(trace) + 1} epochs")
        trace.append(mse)
        if mse <= config.target_mse:
            break
    return TrainResult(Mlp(w1, w2), trace)


def to_dict(net: Mlp) -> dict:
    return {
        "schema": SCHEMA,
        "dims": [net.input_size, net.hidden_size, net.output_size],
        "hidden_weights": net.hidden_weights.ravel().tolist(),
        "output_weights": net.output_weights.ravel().tolist(),
        "activation": "tanh",
    }


def from_dict(d: dict) -> Mlp:
    try:
        if d["schema"] != SCHEMA:
            raise NetworkError(f"unsupported network schema {d['schema']!r}")
        if d.get("activation", "tanh") != "tanh":
            raise NetworkError(f"unsupported activation {d['activation']!r}")
        ni, nh, no = (int(v) for v in d["dims"])
        w1 = np.array(d["hidden_weights"], dtype=np.float64).reshape(nh, ni + 1)
        w2 = np.array(d["output_weights"], dtype=np.float64).reshape(no, nh + 1)
    except NetworkError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"malformed network payload: {exc}") from exc
    return Mlp(w1, w2)


def save(net: Mlp) -> bytes:
    # json writes floats with repr(), which round-trips every double exactly.
    return json.dumps(to_dict(net), separators=(",", ":")).encode()


def load(data: bytes) -> Mlp:
    try:
        payload = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise NetworkError(f"malformed network payload: {exc}") from exc
    if not isinstance(payload, dict):
        raise NetworkError("network payload must be a JSON object")
    return from_dict(payload)
