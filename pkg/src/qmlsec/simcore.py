"""Dense statevector simulation.

Bit ordering: qubit 0 is the least significant bit of a basis-state index, so
for two qubits the index ``i = b0 + 2*b1``.  Rotations follow
``R_P(theta) = exp(-i theta/2 P)`` and ``ZZ(theta) = exp(-i theta/2 Z⊗Z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_QUBITS = 16

SINGLE_QUBIT_KINDS = ("X", "Y", "Z", "H", "RX", "RY", "RZ", "DELAY")
TWO_QUBIT_KINDS = ("CNOT", "CZ", "CRX", "SWAP", "ZZ")
ROTATION_KINDS = ("RX", "RY", "RZ", "CRX", "ZZ")
GATE_KINDS = SINGLE_QUBIT_KINDS + TWO_QUBIT_KINDS
SELF_INVERSE_KINDS = ("X", "Y", "Z", "H", "CNOT", "CZ", "SWAP")


class CircuitError(ValueError):
    """Invalid gate, circuit or circuit text."""


def arity(kind: str) -> int:
    if kind in SINGLE_QUBIT_KINDS:
        return 1
    if kind in TWO_QUBIT_KINDS:
        return 2
    raise CircuitError(f"unknown gate kind {kind!r}")


@dataclass(frozen=True)
class GateOp:
    kind: str
    targets: tuple[int, ...]
    angle: float | None = None
    param_index: int | None = None
    duration: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        n = arity(self.kind)
        if len(self.targets) != n:
            raise CircuitError(f"{self.kind} needs {n} target(s), got {len(self.targets)}")
        if n == 2 and self.targets[0] == self.targets[1]:
            raise CircuitError(f"{self.kind} targets must be distinct")
        if any(t < 0 for t in self.targets):
            raise CircuitError("negative qubit index")
        if self.kind in ROTATION_KINDS:
            if (self.angle is None) == (self.param_index is None):
                raise CircuitError(f"{self.kind} needs exactly one of angle / param_index")
        elif self.angle is not None or self.param_index is not None:
            raise CircuitError(f"{self.kind} takes no angle")
        if self.duration is not None and self.duration < 0:
            raise CircuitError("negative duration")

    @property
    def is_parametric(self) -> bool:
        return self.param_index is not None


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    ops: tuple[GateOp, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise CircuitError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        for op in self.ops:
            if max(op.targets) >= self.n_qubits:
                raise CircuitError(f"{op.kind} target {op.targets} out of range for {self.n_qubits} qubits")

    def __len__(self):
        return len(self.ops)

    @property
    def num_params(self) -> int:
        idx = [op.param_index for op in self.ops if op.param_index is not None]
        return max(idx) + 1 if idx else 0

    def append(self, *ops: GateOp) -> "Circuit":
        return Circuit(self.n_qubits, self.ops + tuple(ops))

    def compose(self, other: "Circuit") -> "Circuit":
        if other.n_qubits != self.n_qubits:
            raise CircuitError("qubit count mismatch")
        return Circuit(self.n_qubits, self.ops + other.ops)

    def bind(self, params: Sequence[float]) -> "Circuit":
        """Replace every parameter binding by its value from ``params``."""
        ops = []
        for op in self.ops:
            if op.param_index is not None:
                if op.param_index >= len(params):
                    raise CircuitError(f"unresolved parameter {op.param_index}")
                op = replace(op, angle=float(params[op.param_index]), param_index=None)
            ops.append(op)
        return Circuit(self.n_qubits, tuple(ops))


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.shape != (2 ** self.n_qubits,):
            raise CircuitError(f"expected {2 ** self.n_qubits} amplitudes, got {amps.shape}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > 1e-10:
            raise CircuitError(f"state not normalized (norm^2 = {norm!r})")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        if not 1 <= n_qubits <= MAX_QUBITS:
            raise CircuitError(f"n_qubits must be in [1, {MAX_QUBITS}]")
        amps = np.zeros(2 ** n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> "StateVector":
        amps = np.zeros(2 ** n_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n_qubits, amps)


# --- gate matrices -----------------------------------------------------------

_I2 = np.eye(2, dtype=np.complex128)
_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
_H = np.array([[1, 1], [1, -1]], dtype=np.complex128) / math.sqrt(2)
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128)
_CZ = np.diag([1, 1, 1, -1]).astype(np.complex128)
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=np.complex128)

PAULIS = {"X": _X, "Y": _Y, "Z": _Z}

_FIXED = {"X": _X, "Y": _Y, "Z": _Z, "H": _H, "DELAY": _I2, "CNOT": _CNOT, "CZ": _CZ, "SWAP": _SWAP}


def gate_matrix(kind: str, angle=None) -> np.ndarray:
    """Unitary of a gate.

    Two-qubit matrices act on the local basis ``|t0 t1>`` where ``targets[0]`` is
    the more significant local bit (control first for CNOT / CRX).  ``angle`` may
    be an array of shape ``(B,)``, giving a stack of shape ``(B, d, d)``.
    """
    if kind in _FIXED:
        return _FIXED[kind]
    if kind not in ROTATION_KINDS:
        raise CircuitError(f"unknown gate kind {kind!r}")
    if angle is None:
        raise CircuitError(f"{kind} has no resolved angle")
    theta = np.asarray(angle, dtype=np.float64)
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    zero = np.zeros_like(c)
    one = np.ones_like(c)
    if kind == "RX":
        m = [[c, -1j * s], [-1j * s, c]]
    elif kind == "RY":
        m = [[c, -s], [s, c]]
    elif kind == "RZ":
        m = [[c - 1j * s, zero], [zero, c + 1j * s]]
    elif kind == "ZZ":
        a, b = c - 1j * s, c + 1j * s
        m = [[a, zero, zero, zero], [zero, b, zero, zero], [zero, zero, b, zero], [zero, zero, zero, a]]
    else:  # CRX
        m = [[one, zero, zero, zero], [zero, one, zero, zero],
             [zero, zero, c, -1j * s], [zero, zero, -1j * s, c]]
    out = np.array(m, dtype=np.complex128)
    # (d, d, *batch) -> (*batch, d, d)
    return np.moveaxis(out, (0, 1), (-2, -1)) if out.ndim > 2 else out


# --- batched kernel ----------------------------------------------------------

def apply_matrix(states: np.ndarray, n_qubits: int, matrix: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """Apply a k-qubit unitary to a batch of states of shape ``(B, 2**n)``.

    ``matrix`` is ``(d, d)`` (shared) or ``(B, d, d)`` (one per batch row).
    """
    k = len(targets)
    batch = states.shape[0]
    psi = states.reshape((batch,) + (2,) * n_qubits)
    axes = [1 + n_qubits - 1 - q for q in targets]
    psi = np.moveaxis(psi, axes, list(range(1, k + 1)))
    moved_shape = psi.shape
    psi = psi.reshape(batch, 2 ** k, -1)
    psi = np.matmul(matrix, psi)
    psi = psi.reshape(moved_shape)
    psi = np.moveaxis(psi, list(range(1, k + 1)), axes)
    return np.ascontiguousarray(psi).reshape(batch, 2 ** n_qubits)


def resolve_angles(circuit: Circuit, params=None) -> list:
    """Per-op angles: float, ``(B,)`` array, or None for fixed gates.

    ``params`` is ``(P,)`` or ``(B, P)``.
    """
    p = None if params is None else np.asarray(params, dtype=np.float64)
    angles = []
    for op in circuit.ops:
        if op.param_index is None:
            angles.append(op.angle)
            continue
        if p is None or op.param_index >= p.shape[-1]:
            raise CircuitError(f"unresolved parameter binding {op.param_index}")
        angles.append(p[..., op.param_index])
    return angles


def simulate_batch(circuit: Circuit, angles: Sequence, batch: int, init: np.ndarray | None = None) -> np.ndarray:
    """Run a circuit on ``batch`` states with pre-resolved per-op angles."""
    dim = 2 ** circuit.n_qubits
    if init is None:
        states = np.zeros((batch, dim), dtype=np.complex128)
        states[:, 0] = 1.0
    else:
        states = np.array(np.broadcast_to(init, (batch, dim)), dtype=np.complex128)
    for op, angle in zip(circuit.ops, angles):
        if op.kind == "DELAY":
            continue
        states = apply_matrix(states, circuit.n_qubits, gate_matrix(op.kind, angle), op.targets)
    return states


def run_batch(circuit: Circuit, params=None, init: np.ndarray | None = None) -> np.ndarray:
    """Statevectors for each parameter row; returns ``(B, 2**n)``."""
    p = None if params is None else np.asarray(params, dtype=np.float64)
    batch = 1 if p is None or p.ndim == 1 else p.shape[0]
    return simulate_batch(circuit, resolve_angles(circuit, p), batch, init)


# --- public single-state API -------------------------------------------------

def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    if max(gate.targets) >= state.n_qubits:
        raise CircuitError(f"target {gate.targets} out of range for {state.n_qubits} qubits")
    if gate.param_index is not None:
        raise CircuitError(f"unresolved parameter binding {gate.param_index}")
    if gate.kind == "DELAY":
        return state
    out = apply_matrix(state.amplitudes[None, :], state.n_qubits, gate_matrix(gate.kind, gate.angle), gate.targets)
    return StateVector(state.n_qubits, out[0])


def run_circuit(circuit: Circuit, init: StateVector | None = None, params=None) -> StateVector:
    if init is not None and init.n_qubits != circuit.n_qubits:
        raise CircuitError("initial state width does not match circuit")
    amps = run_batch(circuit, params, None if init is None else init.amplitudes)
    return StateVector(circuit.n_qubits, amps[0])


def _as_amplitudes(state) -> np.ndarray:
    return state.amplitudes if isinstance(state, StateVector) else np.asarray(state)


def probabilities(state) -> np.ndarray:
    """Z-basis outcome probabilities ``|a_i|^2`` indexed by basis state."""
    amps = _as_amplitudes(state)
    p = amps.real ** 2 + amps.imag ** 2
    return p / p.sum(axis=-1, keepdims=True)


def check_distribution(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("distribution must be a non-empty vector")
    if np.any(p < -1e-15) or abs(p.sum() - 1.0) > 1e-10:
        raise ValueError("not a probability distribution")
    return np.clip(p, 0.0, None)


def sample_counts(dist, shots: int, seed: int) -> dict[int, int]:
    """Multinomial shot sampling; keys are basis-state indices."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = check_distribution(dist)
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(shots, p / p.sum())
    return {int(i): int(c) for i, c in enumerate(draws) if c}


def counts_to_distribution(counts: Mapping[int, int], n_qubits: int) -> np.ndarray:
    p = np.zeros(2 ** n_qubits)
    for k, v in counts.items():
        p[int(k)] += v
    return p / p.sum()


def _z_signs(n_qubits: int, qubits: Iterable[int]) -> np.ndarray:
    idx = np.arange(2 ** n_qubits)
    ones = np.zeros_like(idx)
    for q in qubits:
        ones += (idx >> q) & 1
    return 1.0 - 2.0 * (ones & 1)


def expectation_z(state, qubit: int, n_qubits: int | None = None) -> float:
    amps = _as_amplitudes(state)
    n = int(round(math.log2(amps.shape[-1]))) if n_qubits is None else n_qubits
    if not 0 <= qubit < n:
        raise CircuitError(f"qubit {qubit} out of range")
    return float(probabilities(amps) @ _z_signs(n, [qubit]))


def z_expectations(states: np.ndarray, n_qubits: int) -> np.ndarray:
    """``<Z_q>`` for every qubit of a ``(B, 2**n)`` batch, shape ``(B, n)``."""
    p = probabilities(states)
    signs = np.stack([_z_signs(n_qubits, [q]) for q in range(n_qubits)], axis=1)
    return p @ signs


def parity_expectation(states: np.ndarray, n_qubits: int, qubits: Iterable[int] | None = None) -> np.ndarray:
    qs = range(n_qubits) if qubits is None else qubits
    return probabilities(states) @ _z_signs(n_qubits, qs)


def parity_probabilities(state, qubits: Iterable[int]) -> tuple[float, float]:
    qubits = list(qubits)
    if not qubits:
        raise ValueError("parity needs at least one qubit")
    amps = _as_amplitudes(state)
    n = int(round(math.log2(amps.shape[-1])))
    if any(not 0 <= q < n for q in qubits):
        raise CircuitError("qubit out of range")
    zpar = float(parity_expectation(amps, n, qubits))
    p_even = (1.0 + zpar) / 2.0
    return p_even, 1.0 - p_even


def total_variation_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def global_phase_aligned(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``b`` rotated by the single global phase that best matches ``a``."""
    overlap = np.vdot(b, a)
    if abs(overlap) < 1e-15:
        return b
    return b * (overlap / abs(overlap))


def random_circuit(n_qubits: int, n_gates: int, rng: np.random.Generator,
                   kinds: Sequence[str] | None = None) -> Circuit:
    """Random circuit with fixed angles drawn uniformly from [0, 2pi)."""
    kinds = [k for k in (kinds or GATE_KINDS) if k != "DELAY" and (n_qubits > 1 or arity(k) == 1)]
    ops = []
    for _ in range(n_gates):
        kind = kinds[rng.integers(len(kinds))]
        targets = tuple(int(t) for t in rng.choice(n_qubits, size=arity(kind), replace=False))
        angle = float(rng.uniform(0, 2 * math.pi)) if kind in ROTATION_KINDS else None
        ops.append(GateOp(kind, targets, angle=angle))
    return Circuit(n_qubits, tuple(ops))


# --- text format -------------------------------------------------------------

def format_circuit(circuit: Circuit) -> str:
    lines = [f"qubits {circuit.n_qubits}"]
    for op in circuit.ops:
        line = f"{op.kind} {','.join(str(t) for t in op.targets)}"
        if op.angle is not None:
            line += f" angle={op.angle!r}"
        if op.param_index is not None:
            line += f" param={op.param_index}"
        if op.duration is not None:
            line += f" dur={op.duration!r}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def parse_circuit(text: str) -> Circuit:
    n_qubits = None
    ops = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if n_qubits is None:
                if fields[0] != "qubits" or len(fields) != 2:
                    raise CircuitError("expected header 'qubits N'")
                n_qubits = int(fields[1])
                continue
            kind = fields[0]
            if kind not in GATE_KINDS:
                raise CircuitError(f"unknown gate kind {kind!r}")
            if len(fields) < 2:
                raise CircuitError("missing targets")
            targets = tuple(int(t) for t in fields[1].split(","))
            kw = {}
            for item in fields[2:]:
                key, sep, value = item.partition("=")
                if not sep or key not in ("angle", "param", "dur") or key in kw:
                    raise CircuitError(f"bad attribute {item!r}")
                kw[key] = value
            ops.append(GateOp(
                kind, targets,
                angle=float(kw["angle"]) if "angle" in kw else None,
                param_index=int(kw["param"]) if "param" in kw else None,
                duration=float(kw["dur"]) if "dur" in kw else None,
            ))
        except CircuitError as exc:
            raise CircuitError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise CircuitError(f"line {lineno}: {exc}") from None
    if n_qubits is None:
        raise CircuitError("missing 'qubits N' header")
    return Circuit(n_qubits, tuple(ops))
