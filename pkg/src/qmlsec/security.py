"""Defenses for shared quantum hardware: device fingerprints (QuPUF), split
compilation, dummy-gate obfuscation and buffer-qubit allocation, plus a
crosstalk fault-injection model for evaluating allocations."""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .noise import DeviceProfile, run_noisy_bits
from .simcore import (
    Circuit, GateOp, format_circuit, gate_matrix, parse_circuit, probabilities,
    run_circuit, total_variation_distance,
)

PUF_VARIANTS = ("hadamard", "decoherence")
MIN_PUF_SHOTS = 100
SPLIT_POLICIES = ("by_gate_count", "by_layer")
DUMMY_KINDS = ("SWAP", "ZZ")
RANK_MODES = ("exhaustive", "heuristic")
DEFAULT_DECOY_ANGLE = math.pi / 2


# ---- QuPUF -----------------------------------------------------------------

@dataclass(frozen=True)
class Signature:
    bits: tuple
    biases: tuple
    device_id: str
    shots: int

    def __post_init__(self):
        if len(self.bits) != len(self.biases):
            raise ValueError("bits and biases differ in length")
        for b, p in zip(self.bits, self.biases):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"bias {p} outside [0, 1]")
            if b != int(p > 0.5):
                raise ValueError("bit must equal bias > 0.5")


def puf_circuit(n_qubits: int, variant: str, delay: float | None = None) -> Circuit:
    if variant == "hadamard":
        return Circuit(n_qubits, tuple(GateOp("H", (q,)) for q in range(n_qubits)))
    if variant == "decoherence":
        if delay is None or not delay > 0:
            raise ValueError("decoherence variant needs delay > 0")
        ops = [GateOp("X", (q,)) for q in range(n_qubits)]
        ops += [GateOp("DELAY", (q,), duration=float(delay)) for q in range(n_qubits)]
        return Circuit(n_qubits, tuple(ops))
    raise ValueError(f"unknown PUF variant {variant!r}; choose from {PUF_VARIANTS}")


def qupuf_signature(device: DeviceProfile, variant: str = "hadamard", shots: int = 10_000,
                    delay: float | None = None, seed: int = 0) -> Signature:
    """Per-qubit P(read 1) under the device's noise, thresholded at 0.5."""
    if shots < MIN_PUF_SHOTS:
        raise ValueError(f"shots must be >= {MIN_PUF_SHOTS}")
    circ = puf_circuit(device.n_qubits, variant, delay)
    bits = run_noisy_bits(circ, device, shots, seed)
    biases = bits.mean(axis=0)
    return Signature(tuple(int(b > 0.5) for b in biases), tuple(float(b) for b in biases),
                     device.device_id, shots)


def hamming_fraction(a: Signature, b: Signature) -> float:
    if len(a.bits) != len(b.bits):
        raise ValueError("signatures differ in length")
    if not a.bits:
        raise ValueError("empty signature")
    return sum(x != y for x, y in zip(a.bits, b.bits)) / len(a.bits)


def write_signature_csv(sig: Signature, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["qubit", "bias", "bit"])
        for q, (p, b) in enumerate(zip(sig.biases, sig.bits)):
            w.writerow([q, repr(p), b])


def read_signature_csv(path, device_id: str = "device", shots: int = 0) -> Signature:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["qubit"]))
    return Signature(tuple(int(r["bit"]) for r in rows), tuple(float(r["bias"]) for r in rows), device_id, shots)


def puf_population_study(devices: Sequence[DeviceProfile], extractions: int = 10, shots: int = 10_000,
                         seed: int = 0, variant: str = "hadamard", delay: float | None = None) -> dict:
    """Mean intra-device HD (all pairs of repeat extractions on one device) and mean
    inter-device HD (first extraction of every device pair)."""
    if len(devices) < 2 or extractions < 2:
        raise ValueError("need at least 2 devices and 2 extractions")
    sigs = [[qupuf_signature(dev, variant, shots, delay, seed=seed + 1000 * i + j)
             for j in range(extractions)] for i, dev in enumerate(devices)]
    intra = [hamming_fraction(s[a], s[b]) for s in sigs
             for a in range(extractions) for b in range(a + 1, extractions)]
    inter = [hamming_fraction(sigs[a][0], sigs[b][0])
             for a in range(len(devices)) for b in range(a + 1, len(devices))]
    return {"intra_hd": float(np.mean(intra)), "inter_hd": float(np.mean(inter)), "signatures": sigs}


# ---- split compilation -----------------------------------------------------

@dataclass(frozen=True)
class Fragment:
    index: int
    total: int
    circuit: Circuit
    start: int = 0

    def to_text(self) -> str:
        return f"fragment {self.index} of {self.total}\n" + format_circuit(self.circuit)

    @classmethod
    def from_text(cls, text: str) -> "Fragment":
        head, _, body = text.partition("\n")
        parts = head.split()
        if len(parts) != 4 or parts[0] != "fragment" or parts[2] != "of":
            raise ValueError("missing 'fragment i of k' header")
        return cls(int(parts[1]), int(parts[3]), parse_circuit(body))


def asap_layers(circuit: Circuit) -> list[int]:
    """Layer (1-based) of each op when every op is scheduled as early as possible."""
    depth = [0] * circuit.n_qubits
    out = []
    for op in circuit.ops:
        layer = max(depth[t] for t in op.targets) + 1
        for t in op.targets:
            depth[t] = layer
        out.append(layer)
    return out


def _cuts(n_ops: int, k: int, policy: str, circuit: Circuit) -> list[int]:
    if policy == "by_gate_count":
        return [(j * n_ops) // k for j in range(k + 1)]
    running = np.maximum.accumulate(asap_layers(circuit))
    total = int(running[-1])
    cuts = [0]
    for j in range(1, k):
        target = j * total / k
        c = int(np.searchsorted(running, target, side="right"))
        c = max(c, cuts[-1] + 1)
        c = min(c, n_ops - (k - j))
        cuts.append(c)
    cuts.append(n_ops)
    return cuts


def split_circuit(circuit: Circuit, k: int, policy: str = "by_gate_count",
                  shuffle_seed: int | None = None) -> list[Fragment]:
    """Contiguous, non-empty pieces.  ``by_gate_count`` balances op counts;
    ``by_layer`` balances circuit depth.  With ``shuffle_seed`` the list is
    returned in a seeded random order (indices unchanged)."""
    n = len(circuit.ops)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if policy not in SPLIT_POLICIES:
        raise ValueError(f"unknown split policy {policy!r}")
    cuts = _cuts(n, k, policy, circuit)
    frags = [Fragment(j, k, Circuit(circuit.n_qubits, circuit.ops[cuts[j]:cuts[j + 1]]), cuts[j])
             for j in range(k)]
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(k)
        frags = [frags[i] for i in order]
    return frags


def recombine_circuit(fragments: Sequence[Fragment]) -> Circuit:
    if not fragments:
        raise ValueError("no fragments")
    k = fragments[0].total
    indices = sorted(f.index for f in fragments)
    if indices != list(range(k)) or any(f.total != k for f in fragments):
        raise ValueError(f"fragment indices {indices} do not form 0..{k - 1} exactly once")
    n = {f.circuit.n_qubits for f in fragments}
    if len(n) != 1:
        raise ValueError("fragments disagree on qubit count")
    ops = []
    for f in sorted(fragments, key=lambda f: f.index):
        ops.extend(f.circuit.ops)
    return Circuit(n.pop(), tuple(ops))


# ---- dummy-gate obfuscation -----------------------------------------------

@dataclass(frozen=True)
class Candidate:
    position: int
    edge: tuple
    score: float


def _dummy_op(kind: str, edge, angle: float) -> GateOp:
    if kind == "SWAP":
        return GateOp("SWAP", edge)
    if kind == "ZZ":
        return GateOp("ZZ", edge, angle=angle)
    raise ValueError(f"dummy gate must be one of {DUMMY_KINDS}, got {kind!r}")


def _edges_for(circuit: Circuit, device: DeviceProfile) -> list[tuple]:
    return sorted(e for e in device.coupling_map if max(e) < circuit.n_qubits)


def _product_p1(n: int, ops: Iterable[GateOp]) -> np.ndarray:
    """P(1) per qubit under a product-state (mean-field) approximation: every qubit
    keeps its own 2x2 density matrix and two-qubit gates act on the tensor product
    of the pair, followed by partial traces.  Cost is linear in the op count."""
    rho = np.zeros((n, 2, 2), dtype=np.complex128)
    rho[:, 0, 0] = 1.0
    for op in ops:
        u = gate_matrix(op.kind, op.angle)
        if len(op.targets) == 1:
            q = op.targets[0]
            rho[q] = u @ rho[q] @ u.conj().T
            continue
        a, b = op.targets
        joint = u @ np.kron(rho[a], rho[b]) @ u.conj().T
        t = joint.reshape(2, 2, 2, 2)
        rho[a] = np.einsum("ijkj->ik", t)
        rho[b] = np.einsum("jijk->ik", t)
    return rho[:, 1, 1].real.copy()


def rank_insertion_points(circuit: Circuit, device: DeviceProfile, gate_kind: str = "SWAP",
                          mode: str = "exhaustive", decoy_angle: float = DEFAULT_DECOY_ANGLE,
                          params=None) -> list[Candidate]:
    """Score every (op boundary, coupling edge) insertion of a dummy gate.

    ``exhaustive`` scores the exact TVD between the original and modified output
    distributions.  ``heuristic`` avoids statevector simulation: it propagates a
    product-state approximation and scores the largest single-qubit change in
    P(1), a proxy for the marginal TVD.  Sorted by descending score with ties
    broken by position, then edge.
    """
    if not circuit.ops:
        raise ValueError("circuit has no gates")
    if mode not in RANK_MODES:
        raise ValueError(f"unknown ranking mode {mode!r}")
    if circuit.num_params:
        if params is None:
            raise ValueError("circuit has parameters; pass params to rank it")
        circuit = circuit.bind(params)
    edges = _edges_for(circuit, device)
    if not edges:
        raise ValueError("no coupling edge fits the circuit")
    ops = circuit.ops
    cands = []
    if mode == "exhaustive":
        base = probabilities(run_circuit(circuit))
        for pos in range(len(ops) + 1):
            for e in edges:
                mod = Circuit(circuit.n_qubits, ops[:pos] + (_dummy_op(gate_kind, e, decoy_angle),) + ops[pos:])
                cands.append(Candidate(pos, e, total_variation_distance(base, probabilities(run_circuit(mod)))))
    else:
        base = _product_p1(circuit.n_qubits, ops)
        for pos in range(len(ops) + 1):
            for e in edges:
                mod = ops[:pos] + (_dummy_op(gate_kind, e, decoy_angle),) + ops[pos:]
                cands.append(Candidate(pos, e, float(np.max(np.abs(_product_p1(circuit.n_qubits, mod) - base)))))
    cands.sort(key=lambda c: (-round(c.score, 12), c.position, c.edge))
    return cands


@dataclass(frozen=True)
class KeyEntry:
    position: int
    kind: str
    targets: tuple
    param_index: int | None = None


@dataclass(frozen=True)
class SecurityKey:
    entries: tuple

    def to_json(self) -> str:
        return json.dumps({"entries": [
            {"position": e.position, "kind": e.kind, "targets": list(e.targets), "param_index": e.param_index}
            for e in self.entries]}, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SecurityKey":
        doc = json.loads(text)
        return cls(tuple(KeyEntry(int(e["position"]), str(e["kind"]), tuple(int(t) for t in e["targets"]),
                                  None if e.get("param_index") is None else int(e["param_index"]))
                         for e in doc["entries"]))


def insert_dummy_gates(circuit: Circuit, selections) -> tuple[Circuit, SecurityKey]:
    """Insert dummy gates at positions of the *original* circuit.

    ``selections`` holds ``(position, kind, edge)`` triples.  SWAPs are inserted
    as-is; each ZZ gets a fresh parameter index after the circuit's own, so it
    looks like one more trainable rotation.  Key positions refer to the
    obfuscated circuit and are ascending.
    """
    sel = sorted(((int(p), str(k), tuple(int(t) for t in e)) for p, k, e in selections),
                 key=lambda s: s[0])
    ops = list(circuit.ops)
    next_param = circuit.num_params
    entries = []
    for shift, (pos, kind, edge) in enumerate(sel):
        if not 0 <= pos <= len(circuit.ops):
            raise ValueError(f"insertion position {pos} outside 0..{len(circuit.ops)}")
        if kind not in DUMMY_KINDS:
            raise ValueError(f"dummy gate must be one of {DUMMY_KINDS}, got {kind!r}")
        if kind == "ZZ":
            op = GateOp("ZZ", edge, param_index=next_param)
            next_param += 1
        else:
            op = GateOp("SWAP", edge)
        at = pos + shift
        ops.insert(at, op)
        entries.append(KeyEntry(at, kind, op.targets, op.param_index))
    return Circuit(circuit.n_qubits, tuple(ops)), SecurityKey(tuple(entries))


def restore_circuit(obfuscated: Circuit, key: SecurityKey) -> Circuit:
    ops = list(obfuscated.ops)
    for e in reversed(key.entries):
        if not 0 <= e.position < len(ops):
            raise ValueError(f"key position {e.position} outside the circuit")
        op = ops[e.position]
        if (op.kind, op.targets, op.param_index) != (e.kind, e.targets, e.param_index):
            raise ValueError(f"gate at position {e.position} does not match the key")
        del ops[e.position]
    return Circuit(obfuscated.n_qubits, tuple(ops))


# ---- buffer-qubit allocation ----------------------------------------------

@dataclass(frozen=True)
class Allocation:
    programs: dict
    buffer: frozenset


def _adjacency(coupling_map, n_qubits: int) -> list[set]:
    adj = [set() for _ in range(n_qubits)]
    for a, b in coupling_map:
        adj[a].add(b)
        adj[b].add(a)
    return adj


def allocate_with_buffers(coupling_map, program_sizes: Sequence[int], n_qubits: int | None = None) -> Allocation:
    """Greedy placement, largest program first (ties in input order).  Each
    program takes the breadth-first region grown from the lowest-index start
    qubit that is neither used nor adjacent to an earlier program."""
    edges = [tuple(sorted(map(int, e))) for e in coupling_map]
    if n_qubits is None:
        n_qubits = max((max(e) for e in edges), default=-1) + 1
    if any(s < 1 for s in program_sizes):
        raise ValueError("program sizes must be >= 1")
    adj = _adjacency(edges, n_qubits)
    owner = {}
    programs = {}
    for p in sorted(range(len(program_sizes)), key=lambda i: (-program_sizes[i], i)):
        size = program_sizes[p]
        blocked = set(owner) | {nb for q in owner for nb in adj[q]}
        placed = None
        for start in range(n_qubits):
            if start in blocked:
                continue
            region, seen, queue = [], {start}, deque([start])
            while queue and len(region) < size:
                q = queue.popleft()
                region.append(q)
                for nb in sorted(adj[q]):
                    if nb not in seen and nb not in blocked:
                        seen.add(nb)
                        queue.append(nb)
            if len(region) == size:
                placed = frozenset(region)
                break
        if placed is None:
            raise ValueError(f"no placement for program {p} ({size} qubits) under the buffer rule")
        programs[p] = placed
        for q in placed:
            owner[q] = p
    buffer = frozenset(nb for q in owner for nb in adj[q] if nb not in owner)
    return Allocation(dict(sorted(programs.items())), buffer)


def allocation_is_legal(coupling_map, alloc: Allocation) -> bool:
    owner = {q: p for p, qs in alloc.programs.items() for q in qs}
    return all(not (a in owner and b in owner and owner[a] != owner[b]) for a, b in coupling_map)


# ---- crosstalk fault injection --------------------------------------------

def bell_circuit() -> Circuit:
    return Circuit(2, (GateOp("H", (0,)), GateOp("CNOT", (0, 1))))


def ideal_outcomes(circuit: Circuit, tol: float = 1e-9) -> set[int]:
    """Basis indices whose noiseless probability ties the maximum."""
    p = probabilities(run_circuit(circuit))
    return {int(i) for i in np.flatnonzero(p >= p.max() - tol)}


def place_victim(device: DeviceProfile, size: int, adversary: set, allocation: str) -> tuple[int, ...]:
    """Lowest-index connected region for the victim that touches the adversary
    (``adjacent``) or keeps at least one buffer qubit away from it (``buffered``)."""
    adj = _adjacency(device.coupling_map, device.n_qubits)
    near = {nb for q in adversary for nb in adj[q]}
    for start in range(device.n_qubits):
        if start in adversary:
            continue
        region, seen, queue = [], {start}, deque([start])
        while queue and len(region) < size:
            q = queue.popleft()
            region.append(q)
            for nb in sorted(adj[q]):
                if nb not in seen and nb not in adversary and (allocation == "adjacent" or nb not in near):
                    seen.add(nb)
                    queue.append(nb)
        if len(region) < size:
            continue
        touches = bool(set(region) & near)
        if (allocation == "adjacent") == touches:
            return tuple(region)
    raise ValueError(f"no {allocation} placement of {size} victim qubits on this device")


def simulate_fault_injection(victim: Circuit, adversary_qubits, device: DeviceProfile,
                             allocation: str = "buffered", shots: int = 10_000, seed: int = 0,
                             victim_qubits: Sequence[int] | None = None) -> float:
    """Fraction of shots where the victim reads one of its noiseless most-likely outcomes.

    The adversary drives its qubits during every victim gate, so victim gates
    with a coupling-map neighbour in the adversary set suffer crosstalk.
    """
    adversary = {int(q) for q in adversary_qubits}
    if allocation not in ("adjacent", "buffered"):
        raise ValueError("allocation must be 'adjacent' or 'buffered'")
    if victim_qubits is None:
        victim_qubits = place_victim(device, victim.n_qubits, adversary, allocation)
    victim_qubits = tuple(int(q) for q in victim_qubits)
    if len(victim_qubits) != victim.n_qubits or len(set(victim_qubits)) != len(victim_qubits):
        raise ValueError("victim_qubits must list one distinct physical qubit per victim qubit")
    if adversary & set(victim_qubits):
        raise ValueError("victim and adversary qubits overlap")
    if max(victim_qubits + tuple(adversary)) >= device.n_qubits:
        raise ValueError("qubit outside the device")
    mapped = Circuit(device.n_qubits, tuple(
        GateOp(op.kind, tuple(victim_qubits[t] for t in op.targets), op.angle, op.param_index, op.duration)
        for op in victim.ops))
    bits = run_noisy_bits(mapped, device, shots, seed, concurrent_schedule=adversary)
    logical = bits[:, list(victim_qubits)].astype(np.int64) @ (1 << np.arange(victim.n_qubits))
    good = np.isin(logical, sorted(ideal_outcomes(victim)))
    return float(good.mean())


def save_fragments(fragments: Sequence[Fragment], directory) -> list[Path]:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in fragments:
        p = root / f"fragment_{f.index:03d}.txt"
        p.write_text(f.to_text())
        paths.append(p)
    return paths


def load_fragments(paths) -> list[Fragment]:
    return [Fragment.from_text(Path(p).read_text()) for p in paths]

