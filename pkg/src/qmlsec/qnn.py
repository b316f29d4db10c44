"""Angle-encoded quantum neural network classifier.

Pipeline per sample: min-max scale features to [0, 2pi], encode feature i on
qubit i as H then RZ(f_i), apply a layered ansatz with trainable angles, read
out Pauli-Z expectations, and map them through a head:

* ``parity``   -- (P(even), P(odd)) of all measured bits; class 0 is even parity
* ``single_z`` -- <Z> of qubit 0; +1 means class 0, -1 means class 1
* ``dense``    -- softmax(W <Z> + b) over ``n_classes``
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .noise import DeviceProfile, run_noisy_bits
from .optim import NelderMeadConfig, make_optimizer, nelder_mead_minimize
from .simcore import Circuit, GateOp, gate_matrix, apply_matrix, parity_expectation, z_expectations

TWO_PI = 2 * math.pi
HEADS = ("parity", "single_z", "dense")
LOSSES = ("mse", "bce", "sce")
OPTIMIZERS = ("adagrad", "adam", "nelder_mead")
LOG_CLAMP = 1e-12

# two-term shift rule for exp(-i theta/2 P) rotations
_TWO_TERM = ((math.pi / 2, 0.5), (-math.pi / 2, -0.5))
# four-term rule for controlled rotations (generator eigenvalues 0, +-1/2)
_C_PLUS = (math.sqrt(2) + 1) / (4 * math.sqrt(2))
_C_MINUS = (math.sqrt(2) - 1) / (4 * math.sqrt(2))
_FOUR_TERM = ((math.pi / 2, _C_PLUS), (-math.pi / 2, -_C_PLUS),
              (3 * math.pi / 2, -_C_MINUS), (-3 * math.pi / 2, _C_MINUS))
SHIFT_RULES = {"RX": _TWO_TERM, "RY": _TWO_TERM, "RZ": _TWO_TERM, "ZZ": _TWO_TERM, "CRX": _FOUR_TERM}


# --- scaling -----------------------------------------------------------------

@dataclass
class MinMaxScaler:
    mins: np.ndarray
    maxs: np.ndarray

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mins.size:
            raise ValueError(f"expected {self.mins.size} features, got {X.shape[-1]}")
        span = self.maxs - self.mins
        const = span <= 0
        scaled = TWO_PI * (X - self.mins) / np.where(const, 1.0, span)
        scaled = np.where(const, math.pi, scaled)
        return np.clip(scaled, 0.0, TWO_PI)

    def to_dict(self):
        return {"min": self.mins.tolist(), "max": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def fit_scaler(X) -> MinMaxScaler:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty (samples, features) array")
    return MinMaxScaler(X.min(axis=0), X.max(axis=0))


def scale_features(X) -> tuple[np.ndarray, MinMaxScaler]:
    """Map each feature column linearly onto [0, 2pi]; constant columns go to pi."""
    scaler = fit_scaler(X)
    return scaler.transform(X), scaler


# --- circuits ------------------------------------------------------------------

def build_encoder(features: Sequence[float] | None = None, n_qubits: int | None = None,
                  param_offset: int | None = None) -> Circuit:
    """H then RZ(f_i) on qubit i.

    With ``features`` the angles are fixed; otherwise RZ on qubit i reads
    parameter ``param_offset + i``.
    """
    if features is not None:
        n = len(features)
        ops = []
        for i, f in enumerate(features):
            ops += [GateOp("H", (i,)), GateOp("RZ", (i,), angle=float(f))]
        return Circuit(n, tuple(ops))
    ops = []
    for i in range(n_qubits):
        ops += [GateOp("H", (i,)), GateOp("RZ", (i,), param_index=param_offset + i)]
    return Circuit(n_qubits, tuple(ops))


def ring_edges(n: int) -> list[tuple[int, int]]:
    if n < 2:
        return []
    if n == 2:
        return [(0, 1)]
    return [(i, (i + 1) % n) for i in range(n)]


def _crx_ring(n: int, layers: int) -> list[GateOp]:
    ops, k = [], 0
    for _ in range(layers):
        for q in range(n):
            ops.append(GateOp("RX", (q,), param_index=k))
            ops.append(GateOp("RZ", (q,), param_index=k + 1))
            k += 2
        for c, t in ring_edges(n):
            ops.append(GateOp("CRX", (c, t), param_index=k))
            k += 1
    return ops


def _ry_cz_ladder(n: int, layers: int) -> list[GateOp]:
    ops, k = [], 0
    for _ in range(layers):
        for q in range(n):
            ops.append(GateOp("RY", (q,), param_index=k))
            k += 1
        ops += [GateOp("CZ", (q, q + 1)) for q in range(n - 1)]
    return ops


ANSATZ_REGISTRY: dict[str, Callable[[int, int], list[GateOp]]] = {
    "crx-ring": _crx_ring,
    "ry-cz-ladder": _ry_cz_ladder,
}


def register_ansatz(name: str):
    def deco(fn):
        ANSATZ_REGISTRY[name] = fn
        return fn
    return deco


@dataclass(frozen=True)
class AnsatzSpec:
    family: str = "crx-ring"
    n_qubits: int = 4
    layers: int = 2

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.family not in ANSATZ_REGISTRY:
            raise ValueError(f"unknown ansatz family {self.family!r}")


def build_ansatz(spec: AnsatzSpec) -> Circuit:
    """Parametric ansatz; param_index runs 0..P-1 in circuit order."""
    if spec.family not in ANSATZ_REGISTRY:
        raise ValueError(f"unknown ansatz family {spec.family!r}")
    return Circuit(spec.n_qubits, tuple(ANSATZ_REGISTRY[spec.family](spec.n_qubits, spec.layers)))


# --- model ---------------------------------------------------------------------

@dataclass
class Head:
    kind: str
    n_classes: int = 2
    weights: np.ndarray | None = None
    biases: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in HEADS:
            raise ValueError(f"unknown head {self.kind!r}")
        if self.kind != "dense":
            self.n_classes = 2

    @property
    def n_weights(self) -> int:
        return 0 if self.kind != "dense" else self.weights.size + self.biases.size


@dataclass
class QnnModel:
    ansatz: AnsatzSpec
    theta: np.ndarray
    head: Head
    scaler: MinMaxScaler | None = None
    seed: int = 0
    _template: Circuit | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        n_params = build_ansatz(self.ansatz).num_params
        if self.theta.shape != (n_params,):
            raise ValueError(f"theta has {self.theta.size} entries, ansatz needs {n_params}")
        if self.head.kind == "dense" and self.head.weights.shape != (self.head.n_classes, self.n_qubits):
            raise ValueError("dense head weights must be (n_classes, n_qubits)")

    @property
    def n_qubits(self) -> int:
        return self.ansatz.n_qubits

    @property
    def n_classes(self) -> int:
        return self.head.n_classes

    @property
    def template(self) -> Circuit:
        """Encoder followed by ansatz; params 0..P-1 are theta, features follow."""
        if self._template is None:
            enc = build_encoder(n_qubits=self.n_qubits, param_offset=self.theta.size)
            self._template = enc.compose(build_ansatz(self.ansatz))
        return self._template

    def flat_params(self) -> np.ndarray:
        if self.head.kind != "dense":
            return self.theta.copy()
        return np.concatenate([self.theta, self.head.weights.ravel(), self.head.biases])

    def with_flat_params(self, flat) -> "QnnModel":
        flat = np.asarray(flat, dtype=np.float64)
        p = self.theta.size
        head = Head(self.head.kind, self.head.n_classes)
        if self.head.kind == "dense":
            c, n = self.head.weights.shape
            head.weights = flat[p:p + c * n].reshape(c, n).copy()
            head.biases = flat[p + c * n:p + c * n + c].copy()
        return QnnModel(self.ansatz, flat[:p].copy(), head, self.scaler, self.seed)

    def to_dict(self) -> dict:
        head = {"kind": self.head.kind, "n_classes": self.head.n_classes}
        if self.head.kind == "dense":
            head["weights"] = self.head.weights.tolist()
            head["biases"] = self.head.biases.tolist()
        return {
            "ansatz": {"family": self.ansatz.family, "n_qubits": self.ansatz.n_qubits,
                       "layers": self.ansatz.layers},
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "theta": self.theta.tolist(),
            "head": head,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d) -> "QnnModel":
        h = d["head"]
        head = Head(h["kind"], h.get("n_classes", 2))
        if head.kind == "dense":
            head.weights = np.asarray(h["weights"], dtype=np.float64)
            head.biases = np.asarray(h["biases"], dtype=np.float64)
        scaler = None if d.get("scaler") is None else MinMaxScaler.from_dict(d["scaler"])
        return cls(AnsatzSpec(**d["ansatz"]), np.asarray(d["theta"]), head, scaler, int(d.get("seed", 0)))


def init_model(n_qubits: int = 4, layers: int = 2, head: str = "dense", n_classes: int = 3,
               seed: int = 0, family: str = "crx-ring", scaler: MinMaxScaler | None = None) -> QnnModel:
    """theta ~ U[0, 2pi); dense weights ~ U[-0.5, 0.5]; biases 0."""
    spec = AnsatzSpec(family, n_qubits, layers)
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, TWO_PI, size=build_ansatz(spec).num_params)
    h = Head(head, n_classes)
    if head == "dense":
        h.weights = rng.uniform(-0.5, 0.5, size=(n_classes, n_qubits))
        h.biases = np.zeros(n_classes)
    return QnnModel(spec, theta, h, scaler, seed)


def save_model(model: QnnModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def load_model(path) -> QnnModel:
    return QnnModel.from_dict(json.loads(Path(path).read_text()))


# --- forward -------------------------------------------------------------------

def _base_angles(model: QnnModel, scaled: np.ndarray) -> list:
    """Per-op angles (float or (B,) array) for a batch of scaled features."""
    B = scaled.shape[0]
    params = np.concatenate([np.broadcast_to(model.theta, (B, model.theta.size)), scaled], axis=1)
    angles = []
    for op in model.template.ops:
        angles.append(op.angle if op.param_index is None else params[:, op.param_index])
    return angles


def _simulate(template: Circuit, angles: list, batch: int) -> np.ndarray:
    n = template.n_qubits
    states = np.zeros((batch, 2 ** n), dtype=np.complex128)
    states[:, 0] = 1.0
    for op, angle in zip(template.ops, angles):
        states = apply_matrix(states, n, gate_matrix(op.kind, angle), op.targets)
    return states


def observables(model: QnnModel, scaled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-qubit <Z> (B, n) and all-qubit parity <Z...Z> (B,)."""
    scaled = np.atleast_2d(np.asarray(scaled, dtype=np.float64))
    if scaled.shape[1] != model.n_qubits:
        raise ValueError(f"model has {model.n_qubits} qubits, got {scaled.shape[1]} features")
    states = _simulate(model.template, _base_angles(model, scaled), scaled.shape[0])
    n = model.n_qubits
    return z_expectations(states, n), parity_expectation(states, n)


def noisy_observables(model: QnnModel, scaled: np.ndarray, device: DeviceProfile, shots: int = 1024,
                      seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Shot estimates of the same observables under ``device`` noise."""
    scaled = np.atleast_2d(np.asarray(scaled, dtype=np.float64))
    n = model.n_qubits
    z = np.empty((scaled.shape[0], n))
    par = np.empty(scaled.shape[0])
    template = model.template
    if device.n_qubits > n:
        template = Circuit(device.n_qubits, template.ops)
    for i, row in enumerate(scaled):
        params = np.concatenate([model.theta, row])
        bits = run_noisy_bits(template, device, shots, seed + i, params=params)[:, :n].astype(np.int64)
        z[i] = 1.0 - 2.0 * bits.mean(axis=0)
        par[i] = np.mean(1.0 - 2.0 * (bits.sum(axis=1) & 1))
    return z, par


def _softmax(a: np.ndarray) -> np.ndarray:
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


def head_output(model: QnnModel, z: np.ndarray, parity: np.ndarray) -> np.ndarray:
    kind = model.head.kind
    if kind == "parity":
        return np.stack([(1 + parity) / 2, (1 - parity) / 2], axis=-1)
    if kind == "single_z":
        return z[:, 0]
    return _softmax(z @ model.head.weights.T + model.head.biases)


def forward(model: QnnModel, features, device: DeviceProfile | None = None, shots: int = 1024,
            seed: int = 0, scaled: bool = True) -> np.ndarray:
    """Head output for one feature vector (1-D) or a batch (2-D).

    ``features`` are already scaled to [0, 2pi] unless ``scaled=False``.
    """
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if not scaled:
        X = model.scaler.transform(X)
    if device is None:
        z, par = observables(model, X)
    else:
        z, par = noisy_observables(model, X, device, shots, seed)
    out = head_output(model, z, par)
    return out[0] if single else out


def class_probabilities(head_kind: str, output: np.ndarray) -> np.ndarray:
    if head_kind == "single_z":
        return np.stack([(1 + output) / 2, (1 - output) / 2], axis=-1)
    return output


def predict(model: QnnModel, output: np.ndarray) -> np.ndarray:
    kind = model.head.kind
    if kind == "single_z":
        return np.where(output >= 0, 0, 1)
    if kind == "parity":
        return np.where(output[:, 0] >= 0.5, 0, 1)
    return np.argmax(output, axis=1)


# --- losses ----------------------------------------------------------------------

def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype.kind not in "iu":
        if not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"label out of range for {n_classes} classes")
    return labels


def _loss_terms(head_kind: str, n_classes: int, output: np.ndarray, labels, loss_kind: str):
    """Per-sample loss and its derivative w.r.t. the head output."""
    if loss_kind not in LOSSES:
        raise ValueError(f"unknown loss {loss_kind!r}")
    labels = _check_labels(labels, n_classes)
    if output.shape[0] != labels.size:
        raise ValueError("output/label shape mismatch")
    if head_kind == "single_z" and loss_kind == "mse":
        target = np.where(labels == 0, 1.0, -1.0)
        return (output - target) ** 2, 2 * (output - target)
    probs = class_probabilities(head_kind, output)
    if probs.ndim != 2 or probs.shape[1] != n_classes:
        raise ValueError(f"expected {n_classes} class probabilities per sample")
    B, C = probs.shape
    if loss_kind == "mse":
        onehot = np.eye(C)[labels]
        loss, dp = np.mean((probs - onehot) ** 2, axis=1), 2 * (probs - onehot) / C
    elif loss_kind == "bce":
        if C != 2:
            raise ValueError("bce needs a two-class output")
        p1 = probs[:, 1]
        y = labels.astype(np.float64)
        q1 = np.maximum(p1, LOG_CLAMP)
        q0 = np.maximum(1 - p1, LOG_CLAMP)
        loss = -(y * np.log(q1) + (1 - y) * np.log(q0))
        d1 = np.where(p1 > LOG_CLAMP, -y / q1, 0.0) + np.where(1 - p1 > LOG_CLAMP, (1 - y) / q0, 0.0)
        dp = np.zeros_like(probs)
        dp[:, 1] = d1
    else:
        py = probs[np.arange(B), labels]
        loss = -np.log(np.maximum(py, LOG_CLAMP))
        dp = np.zeros_like(probs)
        dp[np.arange(B), labels] = np.where(py > LOG_CLAMP, -1.0 / np.maximum(py, LOG_CLAMP), 0.0)
    if head_kind == "single_z":
        return loss, (dp[:, 0] - dp[:, 1]) / 2
    return loss, dp


def compute_loss(output, labels, loss_kind: str, head: str = "dense") -> float:
    """Mean loss of head outputs against integer labels.

    ``single_z`` outputs are <Z> values (class 0 at +1); other heads give one
    row of class probabilities per sample.  bce treats column 1 as P(class 1).
    """
    labels = np.atleast_1d(np.asarray(labels))
    out = np.asarray(output, dtype=np.float64)
    out = np.atleast_1d(out) if head == "single_z" else np.atleast_2d(out)
    n_classes = 2 if head == "single_z" else out.shape[1]
    loss, _ = _loss_terms(head, n_classes, out, labels, loss_kind)
    return float(loss.mean())


# --- gradients -------------------------------------------------------------------

def _head_backward(model: QnnModel, z: np.ndarray, parity: np.ndarray, d_out: np.ndarray):
    """d loss / d(z, parity) per sample plus head-weight gradient sums."""
    B, n = z.shape
    dz = np.zeros_like(z)
    dpar = np.zeros(B)
    head_grad = np.zeros(0)
    kind = model.head.kind
    if kind == "single_z":
        dz[:, 0] = d_out
    elif kind == "parity":
        dpar = (d_out[:, 0] - d_out[:, 1]) / 2
    else:
        probs = _softmax(z @ model.head.weights.T + model.head.biases)
        da = probs * (d_out - np.sum(d_out * probs, axis=1, keepdims=True))
        dz = da @ model.head.weights
        head_grad = np.concatenate([(da.T @ z).ravel(), da.sum(axis=0)])
    return dz, dpar, head_grad


def _shift_table(template: Circuit, n_theta: int):
    """(op index, shift, coefficient, theta index) for every trainable op."""
    table = []
    for j, op in enumerate(template.ops):
        if op.param_index is not None and op.param_index < n_theta:
            for delta, coeff in SHIFT_RULES[op.kind]:
                table.append((j, delta, coeff, op.param_index))
    return table


def loss_and_gradient(model: QnnModel, X: np.ndarray, y: np.ndarray, loss_kind: str):
    """Mean loss and its parameter-shift gradient over ``flat_params()``.

    All shifted circuits for the whole batch run as one vectorised simulation.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B = X.shape[0]
    n = model.n_qubits
    template = model.template
    base = _base_angles(model, X)
    table = _shift_table(template, model.theta.size)
    S = 1 + len(table)
    angles = []
    for j, (op, a) in enumerate(zip(template.ops, base)):
        if op.param_index is None:
            angles.append(a)
            continue
        col = np.tile(np.broadcast_to(a, (B,)), S)
        for s, (oj, delta, _, _) in enumerate(table, start=1):
            if oj == j:
                col[s * B:(s + 1) * B] += delta
        angles.append(col)
    states = _simulate(template, angles, B * S)
    z_all = z_expectations(states, n).reshape(S, B, n)
    par_all = parity_expectation(states, n).reshape(S, B)
    z, par = z_all[0], par_all[0]

    out = head_output(model, z, par)
    loss, d_out = _loss_terms(model.head.kind, model.n_classes, out, y, loss_kind)
    dz, dpar, head_grad = _head_backward(model, z, par, d_out)

    grad_theta = np.zeros(model.theta.size)
    for s, (_, _, coeff, k) in enumerate(table, start=1):
        # d<O>/dtheta contribution of this shift term, contracted with dL/d<O>
        grad_theta[k] += coeff * (np.sum(dz * z_all[s]) + np.sum(dpar * par_all[s]))
    grad = np.concatenate([grad_theta, head_grad]) / B
    return float(loss.mean()), grad


def gradient_parameter_shift(model: QnnModel, X, y, loss_kind: str) -> np.ndarray:
    return loss_and_gradient(model, X, y, loss_kind)[1]


def mean_loss(model: QnnModel, X, y, loss_kind: str) -> float:
    z, par = observables(model, X)
    loss, _ = _loss_terms(model.head.kind, model.n_classes, head_output(model, z, par), y, loss_kind)
    return float(loss.mean())


def gradient_finite_difference(model: QnnModel, X, y, loss_kind: str, h: float = 1e-5) -> np.ndarray:
    """Central differences of the mean loss over ``flat_params()``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    flat = model.flat_params()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        grad[i] = (mean_loss(model.with_flat_params(plus), X, y, loss_kind)
                   - mean_loss(model.with_flat_params(minus), X, y, loss_kind)) / (2 * h)
    return grad


def central_difference(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_error(a, b) -> float:
    """``||a - b|| / ||b||`` (absolute error when ``b`` is zero)."""
    a, b = np.asarray(a), np.asarray(b)
    denom = np.linalg.norm(b)
    diff = np.linalg.norm(a - b)
    return float(diff if denom == 0 else diff / denom)


# --- training --------------------------------------------------------------------

@dataclass
class TrainConfig:
    loss_kind: str = "sce"
    optimizer: str = "adagrad"
    learning_rate: float = 0.5
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    nm_iters_per_epoch: int = 200

    def __post_init__(self):
        if self.loss_kind not in LOSSES:
            raise ValueError(f"unknown loss {self.loss_kind!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def _scaled(model: QnnModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_qubits:
        raise ValueError(f"model has {model.n_qubits} qubits, got {X.shape[1]} features")
    return model.scaler.transform(X) if model.scaler is not None else X


def _loss_acc(model, Xs, y, loss_kind):
    z, par = observables(model, Xs)
    out = head_output(model, z, par)
    loss, _ = _loss_terms(model.head.kind, model.n_classes, out, y, loss_kind)
    return float(loss.mean()), float(np.mean(predict(model, out) == y))


def train_qnn(model: QnnModel, train, val=None, config: TrainConfig | None = None):
    """Mini-batch training on raw features; ``train``/``val`` are ``(X, y)`` pairs.

    Fits the model's scaler on the training set when it has none.  Returns
    ``(trained_model, history)`` where history holds one dict per epoch.
    """
    cfg = config or TrainConfig()
    X, y = np.asarray(train[0], dtype=np.float64), np.asarray(train[1])
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if model.scaler is None:
        model = QnnModel(model.ansatz, model.theta, model.head, fit_scaler(X), model.seed)
    Xs = _scaled(model, X)
    y = _check_labels(y, model.n_classes)
    if val is not None and len(val[0]):
        Vs, vy = _scaled(model, val[0]), _check_labels(np.asarray(val[1]), model.n_classes)
    else:
        Vs = vy = None

    rng = np.random.default_rng(cfg.seed)
    params = model.flat_params()
    history = []
    opt = None if cfg.optimizer == "nelder_mead" else make_optimizer(cfg.optimizer, cfg.learning_rate)
    for epoch in range(1, cfg.epochs + 1):
        if opt is None:
            objective = lambda p: mean_loss(model.with_flat_params(p), Xs, y, cfg.loss_kind)  # noqa: E731
            params, _, _ = nelder_mead_minimize(
                objective, params, NelderMeadConfig(max_iter=cfg.nm_iters_per_epoch, initial_step=0.5))
        else:
            order = rng.permutation(Xs.shape[0])
            for start in range(0, order.size, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                _, grad = loss_and_gradient(model.with_flat_params(params), Xs[idx], y[idx], cfg.loss_kind)
                params = opt.step(params, grad)
        current = model.with_flat_params(params)
        tl, ta = _loss_acc(current, Xs, y, cfg.loss_kind)
        row = {"epoch": epoch, "train_loss": tl, "train_acc": ta, "val_loss": math.nan, "val_acc": math.nan}
        if Vs is not None:
            row["val_loss"], row["val_acc"] = _loss_acc(current, Vs, vy, cfg.loss_kind)
        history.append(row)
    return model.with_flat_params(params), history


def evaluate_qnn(model: QnnModel, X, y, device: DeviceProfile | None = None, shots: int = 1024,
                 seed: int = 0) -> dict:
    """Accuracy plus per-class (correct, total) counts on raw features."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    y = _check_labels(np.asarray(y), model.n_classes)
    out = forward(model, _scaled(model, X), device=device, shots=shots, seed=seed)
    pred = predict(model, out)
    per_class = {int(c): {"correct": int(np.sum((pred == c) & (y == c))), "total": int(np.sum(y == c))}
                 for c in range(model.n_classes)}
    return {"accuracy": float(np.mean(pred == y)), "per_class": per_class, "predictions": pred}


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])
