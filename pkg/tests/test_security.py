import itertools
import math
from collections import deque

import numpy as np
import pytest

from oracles import oracle_state
from qmlsec.noise import DeviceProfile, QubitNoise, ideal_device, line_coupling, synthesize_device
from qmlsec.security import (
    Allocation, Fragment, KeyEntry, SecurityKey, Signature, allocate_with_buffers, allocation_is_legal,
    asap_layers, bell_circuit, hamming_fraction, ideal_outcomes, insert_dummy_gates, load_fragments,
    place_victim, puf_population_study, qupuf_signature, rank_insertion_points, read_signature_csv,
    recombine_circuit, restore_circuit, save_fragments, simulate_fault_injection, split_circuit,
    write_signature_csv,
)
from qmlsec.simcore import Circuit, GateOp, probabilities, random_circuit, run_circuit, total_variation_distance

GHZ = Circuit(3, (GateOp("H", (0,)), GateOp("CNOT", (0, 1)), GateOp("CNOT", (1, 2))))


def within_3sigma(mean, n, p):
    return abs(mean - p) <= 3 * math.sqrt(p * (1 - p) / n)


def dist(circ, params=None):
    return probabilities(run_circuit(circ, params=params))


def oracle_dist(circ):
    return np.abs(oracle_state(circ)) ** 2


def sig(bits):
    return Signature(tuple(bits), tuple(0.9 if b else 0.1 for b in bits), "d", 100)


# ---- QuPUF -----------------------------------------------------------------

def test_hadamard_puf_on_ideal_device_is_unbiased():
    s = qupuf_signature(ideal_device(3), "hadamard", 10 ** 5, seed=1)
    assert all(within_3sigma(b, 10 ** 5, 0.5) for b in s.biases)
    assert s.shots == 10 ** 5 and s.device_id == "ideal"


def test_hadamard_puf_readout_arithmetic():
    dev = DeviceProfile(1, frozenset(), (QubitNoise(math.inf, math.inf, readout_p01=0.02, readout_p10=0.1),))
    n = 10 ** 5
    s = qupuf_signature(dev, "hadamard", n, seed=2)
    expected = 0.5 * 0.9 + 0.5 * 0.02
    assert within_3sigma(s.biases[0], n, expected)
    assert s.bits == (0,)


def test_decoherence_puf_separates_t1():
    t1 = 1000.0
    dev = DeviceProfile(2, line_coupling(2), (QubitNoise(t1, t1), QubitNoise(2 * t1, 2 * t1)))
    s = qupuf_signature(dev, "decoherence", 20000, delay=t1, seed=3)
    assert within_3sigma(s.biases[0], 20000, math.exp(-1.0))
    assert within_3sigma(s.biases[1], 20000, math.exp(-0.5))
    assert s.bits == (0, 1)


def test_puf_validation():
    dev = ideal_device(2)
    with pytest.raises(ValueError):
        qupuf_signature(dev, "hadamard", 99)
    with pytest.raises(ValueError):
        qupuf_signature(dev, "decoherence", 1000)
    with pytest.raises(ValueError):
        qupuf_signature(dev, "decoherence", 1000, delay=0.0)
    with pytest.raises(ValueError):
        qupuf_signature(dev, "laser", 1000)
    with pytest.raises(ValueError):
        Signature((1,), (0.2,), "d", 100)


def test_hamming_fraction_examples():
    a = sig([0, 1, 1, 0])
    assert hamming_fraction(a, a) == 0.0
    assert hamming_fraction(a, sig([1, 0, 0, 1])) == 1.0
    assert hamming_fraction(a, sig([0, 1, 1, 1])) == 0.25
    with pytest.raises(ValueError):
        hamming_fraction(a, sig([0, 1]))


def test_signature_csv_round_trip(tmp_path):
    s = qupuf_signature(synthesize_device(3, 0), "hadamard", 500, seed=0)
    write_signature_csv(s, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "qubit,bias,bit"
    back = read_signature_csv(tmp_path / "s.csv", s.device_id, s.shots)
    assert back == s


def test_population_study_is_reproducible():
    devs = [synthesize_device(3, i) for i in range(3)]
    a = puf_population_study(devs, extractions=3, shots=500, seed=4)
    b = puf_population_study(devs, extractions=3, shots=500, seed=4)
    assert (a["intra_hd"], a["inter_hd"]) == (b["intra_hd"], b["inter_hd"])
    assert 0 <= a["intra_hd"] <= 1 and 0 <= a["inter_hd"] <= 1


# ---- split compilation -----------------------------------------------------

def test_split_examples():
    c4 = Circuit(2, (GateOp("H", (0,)), GateOp("X", (1,)), GateOp("CNOT", (0, 1)), GateOp("Z", (1,))))
    (only,) = split_circuit(c4, 1)
    assert only.circuit == c4
    frags = split_circuit(c4, 2)
    assert [len(f.circuit.ops) for f in frags] == [2, 2]
    assert [len(f.circuit.ops) for f in split_circuit(c4, 3)] == [1, 1, 2]
    for k in (0, 5):
        with pytest.raises(ValueError):
            split_circuit(c4, k)
    with pytest.raises(ValueError):
        split_circuit(c4, 2, "by_colour")


def test_split_by_layer_follows_depth():
    ops = [GateOp("H", (q,)) for q in range(4)]
    ops += [GateOp("CNOT", (0, 1)), GateOp("CNOT", (2, 3)), GateOp("CNOT", (1, 2)), GateOp("X", (0,))]
    c = Circuit(4, tuple(ops))
    assert asap_layers(c) == [1, 1, 1, 1, 2, 2, 3, 3]
    assert [len(f.circuit.ops) for f in split_circuit(c, 3, "by_layer")] == [4, 2, 2]
    # more pieces than layers still gives non-empty contiguous fragments
    frags = split_circuit(c, 8, "by_layer")
    assert all(len(f.circuit.ops) == 1 for f in frags)
    assert recombine_circuit(frags) == c


def test_split_recombine_random_circuits():
    rng = np.random.default_rng(0)
    for i in range(30):
        c = random_circuit(3, int(rng.integers(1, 15)), rng)
        for k in sorted({1, min(2, len(c)), min(3, len(c)), len(c)}):
            for policy in ("by_gate_count", "by_layer"):
                frags = split_circuit(c, k, policy, shuffle_seed=i)
                assert sorted(f.index for f in frags) == list(range(k))
                back = recombine_circuit(frags)
                assert back == c
                np.testing.assert_allclose(run_circuit(back).amplitudes, run_circuit(c).amplitudes, atol=1e-12)


def test_recombine_validation():
    frags = split_circuit(GHZ, 3)
    assert recombine_circuit(frags[::-1]) == recombine_circuit(frags)
    with pytest.raises(ValueError):
        recombine_circuit([frags[0], frags[0], frags[2]])
    with pytest.raises(ValueError):
        recombine_circuit(frags[:2])
    with pytest.raises(ValueError):
        recombine_circuit([frags[0], frags[1], Fragment(2, 3, Circuit(4, (GateOp("X", (3,)),)))])
    with pytest.raises(ValueError):
        recombine_circuit([])


def test_fragment_files(tmp_path):
    frags = split_circuit(GHZ, 2, shuffle_seed=1)
    paths = save_fragments(frags, tmp_path)
    assert paths[0].read_text().splitlines()[0].startswith("fragment ")
    assert (tmp_path / "fragment_001.txt").read_text().splitlines()[0] == "fragment 1 of 2"
    assert recombine_circuit(load_fragments(reversed(paths))) == GHZ
    with pytest.raises(ValueError):
        Fragment.from_text("qubits 2\nH 0\n")


# ---- obfuscation -----------------------------------------------------------

def test_exhaustive_matches_brute_force():
    c = Circuit(3, (GateOp("RY", (0,), angle=0.7), GateOp("CNOT", (0, 1)), GateOp("RX", (2,), angle=1.9),
                    GateOp("CRX", (1, 2), angle=0.4)))
    dev = ideal_device(3)
    base = oracle_dist(c)
    for kind in ("SWAP", "ZZ"):
        ranked = rank_insertion_points(c, dev, kind, "exhaustive")
        assert len(ranked) == (len(c.ops) + 1) * 2
        for cand in ranked:
            op = GateOp(kind, cand.edge, angle=math.pi / 2 if kind == "ZZ" else None)
            mod = Circuit(3, c.ops[:cand.position] + (op,) + c.ops[cand.position:])
            assert abs(cand.score - total_variation_distance(base, oracle_dist(mod))) < 1e-12
        assert ranked[0].score == max(x.score for x in ranked)


def test_symmetric_qubits_give_zero_tvd():
    c = Circuit(2, (GateOp("H", (0,)), GateOp("H", (1,))))
    scores = {cand.position: cand.score for cand in rank_insertion_points(c, ideal_device(2), "SWAP", "exhaustive")}
    assert scores[0] < 1e-15 and scores[2] < 1e-15
    # between the two H gates the state is |+>|0>; swapping it sends the output to |00>
    assert scores[1] == pytest.approx(0.75, abs=1e-12)


def test_ranking_order_and_tie_break():
    c = Circuit(3, (GateOp("X", (0,)),))
    ranked = rank_insertion_points(c, ideal_device(3), "SWAP", "exhaustive")
    keys = [(-round(r.score, 12), r.position, r.edge) for r in ranked]
    assert keys == sorted(keys)
    # after X on qubit 0, swapping (0, 1) moves the excitation: TVD 1
    assert (ranked[0].position, ranked[0].edge, ranked[0].score) == (1, (0, 1), 1.0)


def test_heuristic_is_exact_for_product_circuits():
    # with only single-qubit gates the product-state propagation is exact, so the
    # heuristic score equals the largest exact change of a one-qubit marginal
    rng = np.random.default_rng(5)
    c = random_circuit(3, 8, rng, kinds=("X", "H", "RX", "RY", "RZ"))
    base = probabilities(run_circuit(c))

    def marginals(p):
        idx = np.arange(p.size)
        return np.array([p[(idx >> q) & 1 == 1].sum() for q in range(3)])

    for cand in rank_insertion_points(c, ideal_device(3), "SWAP", "heuristic"):
        mod = Circuit(3, c.ops[:cand.position] + (GateOp("SWAP", cand.edge),) + c.ops[cand.position:])
        exact = np.max(np.abs(marginals(probabilities(run_circuit(mod))) - marginals(base)))
        assert cand.score == pytest.approx(exact, abs=1e-12)


def test_heuristic_tracks_exhaustive_on_sample():
    rng = np.random.default_rng(11)
    dev = ideal_device(4)
    hits = 0
    for _ in range(10):
        c = random_circuit(4, 12, rng)
        ex = rank_insertion_points(c, dev, "SWAP", "exhaustive")
        top = rank_insertion_points(c, dev, "SWAP", "heuristic")[0]
        score = next(x.score for x in ex if (x.position, x.edge) == (top.position, top.edge))
        hits += sum(x.score > score + 1e-12 for x in ex) / len(ex) < 0.3
    assert hits >= 7


def test_ranking_validation():
    with pytest.raises(ValueError):
        rank_insertion_points(Circuit(2), ideal_device(2))
    param = Circuit(2, (GateOp("RX", (0,), param_index=0), GateOp("CNOT", (0, 1))))
    with pytest.raises(ValueError):
        rank_insertion_points(param, ideal_device(2))
    assert rank_insertion_points(param, ideal_device(2), params=[1.0])
    with pytest.raises(ValueError):
        rank_insertion_points(GHZ, ideal_device(2), mode="guess")


def test_swap_in_ghz_changes_output():
    obf, key = insert_dummy_gates(GHZ, [(1, "SWAP", (0, 1))])
    # SWAP moves |+> onto qubit 1 before the CNOTs: outcomes 000 and 110 instead of 000 and 111
    assert total_variation_distance(dist(GHZ), dist(obf)) == pytest.approx(0.5, abs=1e-12)
    assert total_variation_distance(oracle_dist(GHZ), oracle_dist(obf)) == pytest.approx(0.5, abs=1e-12)
    assert key.entries == (KeyEntry(1, "SWAP", (0, 1), None),)


def test_zz_decoy_at_zero_is_neutral():
    c = Circuit(2, (GateOp("H", (0,)), GateOp("H", (1,)), GateOp("RX", (1,), param_index=0),
                    GateOp("H", (0,)), GateOp("H", (1,))))
    obf, key = insert_dummy_gates(c, [(2, "ZZ", (0, 1)), (5, "ZZ", (0, 1))])
    assert obf.num_params == 3
    assert [e.param_index for e in key.entries] == [1, 2]
    assert total_variation_distance(dist(c, [0.8]), dist(obf, [0.8, 0.0, 0.0])) < 1e-12
    assert total_variation_distance(dist(c, [0.8]), dist(obf, [0.8, 1.3, 0.0])) > 1e-3


def test_insert_and_restore_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(20):
        c = random_circuit(4, 10, rng)
        sel = [(int(rng.integers(0, 11)), str(rng.choice(["SWAP", "ZZ"])), ((q := int(rng.integers(3))), q + 1))
               for _ in range(int(rng.integers(1, 4)))]
        obf, key = insert_dummy_gates(c, sel)
        assert len(key.entries) == len(sel)
        assert len(obf.ops) == len(c.ops) + len(sel)
        for e in key.entries:
            assert (obf.ops[e.position].kind, obf.ops[e.position].targets) == (e.kind, e.targets)
        back = restore_circuit(obf, key)
        assert back.ops == c.ops
        assert total_variation_distance(dist(back), dist(c)) < 1e-12
        zeros = [0.0] * obf.num_params
        assert total_variation_distance(dist(obf, zeros), dist(back)) < 1e-12 or "SWAP" in [s[1] for s in sel]


def test_restore_rejects_tampered_key():
    obf, key = insert_dummy_gates(GHZ, [(2, "SWAP", (1, 2))])
    bad = SecurityKey((KeyEntry(2, "SWAP", (0, 1), None),))
    with pytest.raises(ValueError):
        restore_circuit(obf, bad)
    with pytest.raises(ValueError):
        restore_circuit(obf, SecurityKey((KeyEntry(9, "SWAP", (1, 2), None),)))
    with pytest.raises(ValueError):
        insert_dummy_gates(GHZ, [(7, "SWAP", (0, 1))])
    with pytest.raises(ValueError):
        insert_dummy_gates(GHZ, [(0, "CNOT", (0, 1))])
    assert SecurityKey.from_json(key.to_json()) == key


# ---- allocation ------------------------------------------------------------

def legal_placements(n, edges, sizes):
    """Every assignment of disjoint single-qubit programs obeying the buffer rule."""
    adj = {q: set() for q in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    out = []
    for combo in itertools.permutations(range(n), len(sizes)):
        if all(b not in adj[a] for a, b in itertools.combinations(combo, 2)):
            out.append(combo)
    return out


def test_allocation_on_three_qubit_path():
    alloc = allocate_with_buffers({(0, 1), (1, 2)}, [1, 1])
    assert alloc.programs == {0: frozenset({0}), 1: frozenset({2})}
    assert alloc.buffer == frozenset({1})
    assert {frozenset(p) for p in legal_placements(3, [(0, 1), (1, 2)], [1, 1])} == {frozenset({0, 2})}


def test_allocation_edge_cases():
    alloc = allocate_with_buffers(line_coupling(4), [4])
    assert alloc.programs == {0: frozenset(range(4))} and alloc.buffer == frozenset()
    with pytest.raises(ValueError):
        allocate_with_buffers({(0, 1)}, [1, 1])
    alloc = allocate_with_buffers(line_coupling(7), [1, 3])
    assert alloc.programs == {0: frozenset({4}), 1: frozenset({0, 1, 2})}
    assert alloc.buffer == frozenset({3, 5})


def _connected(qs, edges):
    qs = set(qs)
    start = min(qs)
    seen, queue = {start}, deque([start])
    while queue:
        q = queue.popleft()
        for a, b in edges:
            for x, y in ((a, b), (b, a)):
                if x == q and y in qs and y not in seen:
                    seen.add(y)
                    queue.append(y)
    return seen == qs


def test_allocation_legality_property():
    rng = np.random.default_rng(0)
    placed = 0
    for _ in range(200):
        n = int(rng.integers(3, 12))
        edges = {tuple(sorted(map(int, rng.choice(n, 2, replace=False)))) for _ in range(int(rng.integers(n - 1, 2 * n)))}
        sizes = [int(s) for s in rng.integers(1, 4, size=int(rng.integers(1, 4)))]
        try:
            alloc = allocate_with_buffers(edges, sizes, n)
        except ValueError:
            continue
        placed += 1
        owner = {}
        for p, qs in alloc.programs.items():
            assert len(qs) == sizes[p] and _connected(qs, edges)
            for q in qs:
                assert q not in owner
                owner[q] = p
        for a, b in edges:
            assert not (a in owner and b in owner and owner[a] != owner[b])
        assert allocation_is_legal(edges, alloc)
        expected_buffer = {y for a, b in edges for x, y in ((a, b), (b, a)) if x in owner and y not in owner}
        assert alloc.buffer == expected_buffer
    assert placed > 50
    assert not allocation_is_legal({(0, 1)}, Allocation({0: frozenset({0}), 1: frozenset({1})}, frozenset()))


# ---- fault injection -------------------------------------------------------

def uniform_line(n=5, multiplier=3.0):
    q = QubitNoise(80e3, 60e3, 0.02, 0.03, 5e-4, 1e-2)
    return DeviceProfile(n, line_coupling(n), (q,) * n, multiplier, {"H": 35.0, "CNOT": 300.0})


def test_victim_placement():
    dev = uniform_line()
    assert place_victim(dev, 2, {0}, "adjacent") == (1, 2)
    assert place_victim(dev, 2, {0}, "buffered") == (2, 3)
    with pytest.raises(ValueError):
        place_victim(uniform_line(3), 2, {1}, "buffered")
    assert ideal_outcomes(bell_circuit()) == {0, 3}


def test_ideal_device_is_fully_reliable():
    assert simulate_fault_injection(bell_circuit(), {0}, ideal_device(5), "adjacent", 500, 0) == 1.0


def test_crosstalk_lowers_adjacent_reliability():
    n = 10 ** 4
    dev = uniform_line()
    adj = simulate_fault_injection(bell_circuit(), {0}, dev, "adjacent", n, 1)
    buf = simulate_fault_injection(bell_circuit(), {0}, dev, "buffered", n, 2)
    se = math.sqrt(adj * (1 - adj) / n + buf * (1 - buf) / n)
    assert buf - adj > 3 * se


def test_multiplier_one_makes_arms_equal():
    n = 10 ** 4
    dev = uniform_line(multiplier=1.0)
    adj = simulate_fault_injection(bell_circuit(), {0}, dev, "adjacent", n, 1)
    buf = simulate_fault_injection(bell_circuit(), {0}, dev, "buffered", n, 2)
    se = math.sqrt(adj * (1 - adj) / n + buf * (1 - buf) / n)
    assert abs(buf - adj) <= 3 * se


def test_fault_injection_validation():
    dev = uniform_line()
    with pytest.raises(ValueError):
        simulate_fault_injection(bell_circuit(), {1}, dev, "adjacent", 100, 0, victim_qubits=(1, 2))
    with pytest.raises(ValueError):
        simulate_fault_injection(bell_circuit(), {0}, dev, "nearby", 100, 0)
    with pytest.raises(ValueError):
        simulate_fault_injection(bell_circuit(), {0}, dev, "adjacent", 100, 0, victim_qubits=(2, 2))
