"""Monte Carlo wavefunction simulation of gate, readout, decoherence and
crosstalk errors over a device profile.

Every trajectory draws its random numbers from a SplitMix64 stream keyed by
its own seed, at slots fixed by the circuit layout.  Trajectory ``k`` of a
``shots``-sized run uses seed ``splitmix(seed, k)``, so running the shots
one at a time or as one vectorised batch gives identical results.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .simcore import Circuit, GateOp, apply_matrix, gate_matrix, resolve_angles

DEFAULT_CROSSTALK_MULTIPLIER = 3.0
# per-op random slots: (error?, which pauli, damping jump?, dephasing?) per target
_SLOTS_PER_TARGET = 4
_CHUNK_AMPLITUDES = 1 << 16

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def splitmix(seed: int, k: int) -> int:
    """Derived seed for stream ``k`` of base ``seed``."""
    a = _mix(np.uint64((seed * 0x9E3779B97F4A7C15) & _MASK64))
    with np.errstate(over="ignore"):
        b = _mix(a ^ np.uint64(k & _MASK64) + _GOLDEN)
    return int(b)


def derive_seeds(seed: int, count: int, start: int = 0) -> np.ndarray:
    a = _mix(np.uint64((seed * 0x9E3779B97F4A7C15) & _MASK64))
    ks = np.arange(start, start + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(a ^ ks + _GOLDEN)


def uniforms(seeds: np.ndarray, slot: int) -> np.ndarray:
    """``slot``-th output of each SplitMix64 stream, as doubles in [0, 1)."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = seeds + np.uint64(slot + 1) * _GOLDEN
    return (_mix(state) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class QubitNoise:
    t1: float
    t2: float
    readout_p01: float = 0.0
    readout_p10: float = 0.0
    gate_error_1q: float = 0.0
    gate_error_2q: float = 0.0

    def __post_init__(self):
        if not (self.t1 > 0 and self.t2 > 0):
            raise ValueError(f"t1 and t2 must be positive, got t1={self.t1}, t2={self.t2}")
        if self.t2 > 2 * self.t1 * (1 + 1e-12):
            raise ValueError(f"t2={self.t2} exceeds 2*t1={2 * self.t1}")
        for name in ("readout_p01", "readout_p10", "gate_error_1q", "gate_error_2q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} not a probability")

    @property
    def pure_dephasing_time(self) -> float:
        rate = 1.0 / self.t2 - 0.5 / self.t1
        return math.inf if rate <= 1e-300 else 1.0 / rate


@dataclass(frozen=True)
class DeviceProfile:
    n_qubits: int
    coupling_map: frozenset
    per_qubit: tuple
    crosstalk_multiplier: float = DEFAULT_CROSSTALK_MULTIPLIER
    gate_durations: Mapping[str, float] = field(default_factory=dict)
    device_id: str = "device"

    def __post_init__(self):
        edges = frozenset(tuple(sorted((int(a), int(b)))) for a, b in self.coupling_map)
        object.__setattr__(self, "coupling_map", edges)
        object.__setattr__(self, "per_qubit", tuple(self.per_qubit))
        object.__setattr__(self, "gate_durations", dict(self.gate_durations))
        if len(self.per_qubit) != self.n_qubits:
            raise ValueError("per_qubit length must equal n_qubits")
        for a, b in edges:
            if a == b or not (0 <= a < self.n_qubits and 0 <= b < self.n_qubits):
                raise ValueError(f"invalid coupling edge ({a}, {b})")
        if self.crosstalk_multiplier < 1:
            raise ValueError("crosstalk_multiplier must be >= 1")

    def neighbors(self, qubit: int) -> set[int]:
        return {b if a == qubit else a for a, b in self.coupling_map if qubit in (a, b)}

    def duration(self, op: GateOp) -> float:
        if op.duration is not None:
            return float(op.duration)
        return float(self.gate_durations.get(op.kind, 0.0))

    def with_multiplier(self, multiplier: float) -> "DeviceProfile":
        return DeviceProfile(self.n_qubits, self.coupling_map, self.per_qubit, multiplier,
                             self.gate_durations, self.device_id)

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "n_qubits": self.n_qubits,
            "coupling_map": sorted([list(e) for e in self.coupling_map]),
            "crosstalk_multiplier": self.crosstalk_multiplier,
            "gate_durations": dict(sorted(self.gate_durations.items())),
            "per_qubit": [asdict(q) for q in self.per_qubit],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DeviceProfile":
        return cls(
            n_qubits=int(d["n_qubits"]),
            coupling_map=frozenset(tuple(e) for e in d.get("coupling_map", [])),
            per_qubit=tuple(QubitNoise(**q) for q in d["per_qubit"]),
            crosstalk_multiplier=float(d.get("crosstalk_multiplier", DEFAULT_CROSSTALK_MULTIPLIER)),
            gate_durations={k: float(v) for k, v in d.get("gate_durations", {}).items()},
            device_id=str(d.get("device_id", "device")),
        )


def save_device(device: DeviceProfile, path) -> None:
    Path(path).write_text(json.dumps(device.to_dict(), indent=2) + "\n")


def load_device(path) -> DeviceProfile:
    return DeviceProfile.from_dict(json.loads(Path(path).read_text()))


def line_coupling(n: int) -> frozenset:
    return frozenset((i, i + 1) for i in range(n - 1))


def ideal_device(n_qubits: int = 5, coupling_map: Iterable | None = None) -> DeviceProfile:
    q = QubitNoise(t1=math.inf, t2=math.inf)
    cmap = line_coupling(n_qubits) if coupling_map is None else coupling_map
    return DeviceProfile(n_qubits, frozenset(cmap), (q,) * n_qubits, device_id="ideal")


# Illustrative rates only; durations and coherence times share one time unit (ns).
_DURATIONS = {"X": 35.0, "Y": 35.0, "Z": 0.0, "H": 35.0, "RX": 35.0, "RY": 35.0, "RZ": 0.0,
              "CNOT": 300.0, "CZ": 300.0, "CRX": 350.0, "SWAP": 900.0, "ZZ": 600.0}

_NOISY = {
    "noisy-a": [
        (95e3, 80e3, 0.012, 0.045, 3e-4, 8e-3),
        (120e3, 60e3, 0.035, 0.020, 2e-4, 1.1e-2),
        (70e3, 90e3, 0.008, 0.060, 5e-4, 9e-3),
        (105e3, 110e3, 0.050, 0.015, 4e-4, 1.4e-2),
        (85e3, 40e3, 0.020, 0.038, 3e-4, 1.0e-2),
    ],
    "noisy-b": [
        (60e3, 45e3, 0.041, 0.010, 6e-4, 1.5e-2),
        (140e3, 150e3, 0.006, 0.052, 2e-4, 7e-3),
        (90e3, 70e3, 0.030, 0.030, 4e-4, 1.2e-2),
        (75e3, 100e3, 0.015, 0.070, 3e-4, 9e-3),
        (110e3, 95e3, 0.055, 0.012, 5e-4, 1.3e-2),
    ],
}


def builtin_device(name: str) -> DeviceProfile:
    """One of the shipped profiles: ``ideal``, ``noisy-a``, ``noisy-b``."""
    if name == "ideal":
        return ideal_device(5)
    if name not in _NOISY:
        raise KeyError(f"unknown device profile {name!r}; choose from ideal, noisy-a, noisy-b")
    rows = _NOISY[name]
    per_qubit = tuple(QubitNoise(t1, t2, p01, p10, e1, e2) for t1, t2, p01, p10, e1, e2 in rows)
    return DeviceProfile(len(rows), line_coupling(len(rows)), per_qubit,
                         gate_durations=_DURATIONS, device_id=name)


BUILTIN_DEVICES = ("ideal", "noisy-a", "noisy-b")


def synthesize_device(n_qubits: int, seed: int, device_id: str | None = None,
                      coupling_map: Iterable | None = None) -> DeviceProfile:
    """Random device whose per-qubit rates are drawn from a fixed spread."""
    rng = np.random.default_rng(seed)
    per_qubit = []
    for _ in range(n_qubits):
        t1 = float(rng.uniform(40e3, 150e3))
        t2 = float(min(2 * t1, rng.uniform(30e3, 160e3)))
        per_qubit.append(QubitNoise(
            t1=t1, t2=t2,
            readout_p01=float(rng.uniform(0.005, 0.15)),
            readout_p10=float(rng.uniform(0.005, 0.15)),
            gate_error_1q=float(rng.uniform(1e-4, 1e-3)),
            gate_error_2q=float(rng.uniform(5e-3, 2e-2)),
        ))
    cmap = line_coupling(n_qubits) if coupling_map is None else coupling_map
    return DeviceProfile(n_qubits, frozenset(cmap), tuple(per_qubit), gate_durations=_DURATIONS,
                         device_id=device_id or f"synthetic-{seed}")


# --- error model -------------------------------------------------------------

def effective_gate_error(device: DeviceProfile, gate: GateOp, concurrent: Iterable[int] = ()) -> float:
    """Depolarizing probability of ``gate``, tripled (by default) under crosstalk.

    Crosstalk applies when a coupling-map neighbour of any target, other than
    the gate's own targets, is being driven at the same time.
    """
    if gate.kind == "DELAY":
        return 0.0
    if len(gate.targets) == 1:
        base = device.per_qubit[gate.targets[0]].gate_error_1q
    else:
        base = sum(device.per_qubit[t].gate_error_2q for t in gate.targets) / len(gate.targets)
    concurrent = set(concurrent) - set(gate.targets)
    if concurrent:
        near = set().union(*(device.neighbors(t) for t in gate.targets))
        if near & concurrent:
            base *= device.crosstalk_multiplier
    return min(max(base, 0.0), 1.0)


def _schedule(concurrent_schedule, n_ops: int) -> list[frozenset]:
    if concurrent_schedule is None:
        return [frozenset()] * n_ops
    if isinstance(concurrent_schedule, Mapping):
        return [frozenset(concurrent_schedule.get(i, ())) for i in range(n_ops)]
    items = list(concurrent_schedule)
    if items and all(isinstance(x, (int, np.integer)) for x in items):
        return [frozenset(int(x) for x in items)] * n_ops
    if len(items) != n_ops:
        raise ValueError("concurrent_schedule must be a qubit set, one set per op, or an op->set map")
    return [frozenset(x) for x in items]


def _check_fit(circuit: Circuit, device: DeviceProfile) -> None:
    if circuit.n_qubits > device.n_qubits:
        raise ValueError(f"circuit needs {circuit.n_qubits} qubits, device has {device.n_qubits}")


def _apply_pauli_errors(states, n, q, hit, which):
    for code, name in enumerate(("X", "Y", "Z")):
        rows = np.nonzero(hit & (which == code))[0]
        if rows.size:
            states[rows] = apply_matrix(states[rows], n, gate_matrix(name), (q,))


def _decohere(states, q, t, noise: QubitNoise, u_damp, u_phase):
    """Amplitude damping then pure dephasing of qubit ``q`` over time ``t``, in place."""
    view = states.reshape(states.shape[0], -1, 2, 1 << q)
    gamma = -math.expm1(-t / noise.t1)
    if gamma > 0:
        p1 = np.sum(np.abs(view[:, :, 1, :]) ** 2, axis=(1, 2))
        jump = u_damp < gamma * p1
        rows = np.nonzero(jump)[0]
        decayed = view[rows, :, 1, :] / np.sqrt(p1[rows])[:, None, None]
        norm = np.sqrt(np.maximum(1.0 - gamma * p1, 1e-300))[:, None]
        view[:, :, 0, :] /= norm[:, None]
        view[:, :, 1, :] *= (math.sqrt(1.0 - gamma) / norm)[:, None]
        if rows.size:
            view[rows, :, 0, :] = decayed
            view[rows, :, 1, :] = 0.0
    p_z = -math.expm1(-t / noise.pure_dephasing_time) / 2.0
    if p_z > 0:
        rows = np.nonzero(u_phase < p_z)[0]
        if rows.size:
            view[rows, :, 1, :] *= -1.0


def _evolve_chunks(circuit, device, traj_seeds, concurrent_schedule, params):
    _check_fit(circuit, device)
    n = circuit.n_qubits
    dim = 2 ** n
    sched = _schedule(concurrent_schedule, len(circuit.ops))
    angles = resolve_angles(circuit, params)
    errors = [effective_gate_error(device, op, c) for op, c in zip(circuit.ops, sched)]
    durations = [device.duration(op) for op in circuit.ops]
    chunk = max(1, _CHUNK_AMPLITUDES // dim)
    for start in range(0, traj_seeds.size, chunk):
        seeds = traj_seeds[start:start + chunk]
        states = np.zeros((seeds.size, dim), dtype=np.complex128)
        states[:, 0] = 1.0
        slot = 0
        for op, angle, p_err, t in zip(circuit.ops, angles, errors, durations):
            if op.kind != "DELAY":
                states = apply_matrix(states, n, gate_matrix(op.kind, angle), op.targets)
            for q in op.targets:
                if p_err > 0:
                    hit = uniforms(seeds, slot) < p_err
                    which = np.minimum((uniforms(seeds, slot + 1) * 3).astype(np.int64), 2)
                    _apply_pauli_errors(states, n, q, hit, which)
                if t > 0:
                    _decohere(states, q, t, device.per_qubit[q],
                              uniforms(seeds, slot + 2), uniforms(seeds, slot + 3))
                slot += _SLOTS_PER_TARGET
        yield start, seeds, states, slot


def final_states(circuit: Circuit, device: DeviceProfile, traj_seeds, concurrent_schedule=None,
                 params=None) -> np.ndarray:
    """Pre-measurement trajectory states, shape ``(len(traj_seeds), 2**n)``."""
    traj_seeds = np.asarray(traj_seeds, dtype=np.uint64).reshape(-1)
    out = np.empty((traj_seeds.size, 2 ** circuit.n_qubits), dtype=np.complex128)
    for start, seeds, states, _ in _evolve_chunks(circuit, device, traj_seeds, concurrent_schedule, params):
        out[start:start + seeds.size] = states
    return out


def simulate_trajectories(circuit: Circuit, device: DeviceProfile, traj_seeds: np.ndarray,
                          concurrent_schedule=None, params=None) -> np.ndarray:
    """Measured bits, shape ``(len(traj_seeds), n_qubits)``; ``bits[:, q]`` is qubit q."""
    traj_seeds = np.asarray(traj_seeds, dtype=np.uint64).reshape(-1)
    n = circuit.n_qubits
    dim = 2 ** n
    out = np.empty((traj_seeds.size, n), dtype=np.uint8)
    for start, seeds, states, slot in _evolve_chunks(circuit, device, traj_seeds, concurrent_schedule, params):
        cum = np.cumsum(np.abs(states) ** 2, axis=1)
        u = uniforms(seeds, slot) * cum[:, -1]
        index = np.minimum((cum <= u[:, None]).sum(axis=1), dim - 1)
        bits = ((index[:, None] >> np.arange(n)) & 1).astype(np.uint8)
        out[start:start + seeds.size] = _readout(bits, device, seeds, slot + 1)
    return out


def _readout(bits: np.ndarray, device: DeviceProfile, seeds: np.ndarray, first_slot: int) -> np.ndarray:
    bits = bits.copy()
    for q in range(bits.shape[1]):
        noise = device.per_qubit[q]
        u = uniforms(seeds, first_slot + q)
        flip = np.where(bits[:, q] == 0, u < noise.readout_p01, u < noise.readout_p10)
        bits[:, q] ^= flip.astype(np.uint8)
    return bits


def trajectory_run(circuit: Circuit, device: DeviceProfile, seed: int, concurrent_schedule=None,
                   params=None) -> tuple[int, ...]:
    """One noisy trajectory; returns the measured bit of every qubit (qubit 0 first)."""
    bits = simulate_trajectories(circuit, device, np.array([seed], dtype=np.uint64),
                                 concurrent_schedule, params)
    return tuple(int(b) for b in bits[0])


def bits_to_index(bits) -> np.ndarray | int:
    bits = np.asarray(bits, dtype=np.int64)
    weights = 1 << np.arange(bits.shape[-1])
    out = bits @ weights
    return int(out) if out.ndim == 0 else out


def run_noisy_bits(circuit: Circuit, device: DeviceProfile, shots: int, seed: int,
                   concurrent_schedule=None, params=None) -> np.ndarray:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    return simulate_trajectories(circuit, device, derive_seeds(seed, shots), concurrent_schedule, params)


def run_noisy_counts(circuit: Circuit, device: DeviceProfile, shots: int, seed: int,
                     concurrent_schedule=None, params=None) -> dict[int, int]:
    bits = run_noisy_bits(circuit, device, shots, seed, concurrent_schedule, params)
    idx, counts = np.unique(bits_to_index(bits), return_counts=True)
    return {int(i): int(c) for i, c in zip(idx, counts)}


def apply_readout_error(bits: Sequence[int], device: DeviceProfile, seed: int) -> tuple[int, ...]:
    if len(bits) != device.n_qubits:
        raise ValueError(f"expected {device.n_qubits} bits, got {len(bits)}")
    arr = np.asarray(bits, dtype=np.uint8)[None, :]
    out = _readout(arr, device, np.array([seed], dtype=np.uint64), 0)
    return tuple(int(b) for b in out[0])
