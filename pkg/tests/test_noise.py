import math

import numpy as np
import pytest

from qmlsec.noise import (
    DeviceProfile, QubitNoise, apply_readout_error, builtin_device, derive_seeds,
    effective_gate_error, final_states, ideal_device, line_coupling, load_device,
    run_noisy_bits, run_noisy_counts, save_device, splitmix, trajectory_run,
)
from qmlsec.simcore import (
    Circuit, GateOp, probabilities, run_circuit, sample_counts,
)

BELL = Circuit(2, (GateOp("H", (0,)), GateOp("CNOT", (0, 1))))


def uniform_device(n=2, multiplier=3.0, durations=None, **rates):
    q = QubitNoise(t1=rates.pop("t1", math.inf), t2=rates.pop("t2", math.inf), **rates)
    return DeviceProfile(n, line_coupling(n), (q,) * n, multiplier, durations or {})


def within_3sigma(count, n, p):
    return abs(count - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_qubit_noise_validation():
    with pytest.raises(ValueError):
        QubitNoise(t1=0, t2=1)
    with pytest.raises(ValueError):
        QubitNoise(t1=1, t2=-1)
    with pytest.raises(ValueError):
        QubitNoise(t1=1, t2=3)
    with pytest.raises(ValueError):
        QubitNoise(t1=1, t2=1, readout_p01=1.5)
    with pytest.raises(ValueError):
        DeviceProfile(2, {(0, 2)}, (QubitNoise(1, 1),) * 2)
    with pytest.raises(ValueError):
        DeviceProfile(2, {(0, 1)}, (QubitNoise(1, 1),) * 2, crosstalk_multiplier=0.5)


def test_effective_gate_error_crosstalk():
    dev = DeviceProfile(4, line_coupling(4), (QubitNoise(1, 1, gate_error_1q=0.01, gate_error_2q=0.02),) * 4)
    g = GateOp("X", (1,))
    assert effective_gate_error(dev, g, set()) == 0.01
    assert effective_gate_error(dev, g, {2}) == pytest.approx(0.03)
    assert effective_gate_error(dev, g, {3}) == 0.01
    assert effective_gate_error(dev, GateOp("CNOT", (0, 1)), {2}) == pytest.approx(0.06)
    assert effective_gate_error(dev, GateOp("CNOT", (0, 1)), {3}) == pytest.approx(0.02)
    big = DeviceProfile(2, line_coupling(2), (QubitNoise(1, 1, gate_error_1q=0.5),) * 2)
    assert effective_gate_error(big, GateOp("H", (0,)), {1}) == 1.0


def test_crosstalk_invariant_to_non_neighbours():
    dev = builtin_device("noisy-a")
    rng = np.random.default_rng(0)
    for q in range(dev.n_qubits):
        g = GateOp("H", (q,))
        far = [x for x in range(dev.n_qubits) if x != q and x not in dev.neighbors(q)]
        for _ in range(10):
            sub = set(rng.choice(far, size=rng.integers(0, len(far) + 1), replace=False).tolist()) if far else set()
            assert effective_gate_error(dev, g, sub) == effective_gate_error(dev, g, set())


def test_zero_noise_trajectory_matches_noiseless():
    dev = ideal_device(2)
    for seed in range(20):
        bits = trajectory_run(BELL, dev, seed)
        assert bits in ((0, 0), (1, 1))
    counts = run_noisy_counts(BELL, dev, 10 ** 4, seed=1)
    assert set(counts) <= {0, 3}
    assert sum(counts.values()) == 10 ** 4


def test_zero_noise_distribution_matches_sample_counts():
    rng = np.random.default_rng(3)
    from qmlsec.simcore import random_circuit
    circ = random_circuit(3, 12, rng)
    p = probabilities(run_circuit(circ))
    shots = 20000
    noisy = run_noisy_counts(circ, ideal_device(3), shots, seed=5)
    exact = sample_counts(p, shots, seed=5)
    for i in range(8):
        assert within_3sigma(noisy.get(i, 0), shots, p[i]) or p[i] in (0.0, 1.0)
        assert within_3sigma(exact.get(i, 0), shots, p[i]) or p[i] in (0.0, 1.0)


def test_readout_p10_on_one_state():
    dev = uniform_device(1, readout_p10=0.1)
    circ = Circuit(1, (GateOp("X", (0,)),))
    n = 10 ** 5
    counts = run_noisy_counts(circ, dev, n, seed=7)
    assert within_3sigma(counts.get(0, 0), n, 0.1)


def test_amplitude_damping_half_life():
    t1 = 1000.0
    dev = uniform_device(1, t1=t1, t2=2 * t1)
    circ = Circuit(1, (GateOp("X", (0,)), GateOp("DELAY", (0,), duration=t1 * math.log(2))))
    n = 20000
    counts = run_noisy_counts(circ, dev, n, seed=11)
    assert within_3sigma(counts.get(1, 0), n, 0.5)


def test_dephasing_matches_t2_decay():
    # Ramsey: H, DELAY t, H -> P(0) = (1 + exp(-t/t2)) / 2 for pure dephasing
    t1, t2 = 1e12, 500.0
    dev = uniform_device(1, t1=t1, t2=t2)
    t = 400.0
    circ = Circuit(1, (GateOp("H", (0,)), GateOp("DELAY", (0,), duration=t), GateOp("H", (0,))))
    n = 20000
    counts = run_noisy_counts(circ, dev, n, seed=2)
    assert within_3sigma(counts.get(0, 0), n, (1 + math.exp(-t / t2)) / 2)


def test_depolarizing_bell_produces_odd_outcomes():
    dev = uniform_device(2, gate_error_1q=0.05, gate_error_2q=0.05)
    counts = run_noisy_counts(BELL, dev, 10 ** 4, seed=3)
    assert counts.get(1, 0) > 0 and counts.get(2, 0) > 0


def test_depolarizing_rate_on_identity_like_circuit():
    # on |0>, X and Y errors flip the outcome and Z does not: P(1) = 2p/3
    p = 0.06
    dev = uniform_device(1, gate_error_1q=p)
    circ = Circuit(1, (GateOp("Z", (0,)),))
    n = 30000
    counts = run_noisy_counts(circ, dev, n, seed=4)
    assert within_3sigma(counts.get(1, 0), n, 2 * p / 3)


def test_determinism_and_seed_derivation():
    dev = builtin_device("noisy-b")
    circ = Circuit(5, tuple([GateOp("H", (0,))] + [GateOp("CNOT", (i, i + 1)) for i in range(4)]))
    a = run_noisy_counts(circ, dev, 2000, seed=42)
    assert a == run_noisy_counts(circ, dev, 2000, seed=42)
    assert a != run_noisy_counts(circ, dev, 2000, seed=43)
    bits = run_noisy_bits(circ, dev, 50, seed=42)
    for k in (0, 7, 49):
        assert trajectory_run(circ, dev, splitmix(42, k)) == tuple(bits[k])
    assert int(derive_seeds(42, 1, start=9)[0]) == splitmix(42, 9)


def test_shot_order_independence():
    dev = builtin_device("noisy-a")
    circ = Circuit(3, (GateOp("H", (0,)), GateOp("CNOT", (0, 1)), GateOp("CRX", (1, 2), angle=1.1)))
    seeds = derive_seeds(9, 300)
    from qmlsec.noise import simulate_trajectories
    full = simulate_trajectories(circ, dev, seeds)
    perm = np.random.default_rng(0).permutation(300)
    shuffled = simulate_trajectories(circ, dev, seeds[perm])
    np.testing.assert_array_equal(full[perm], shuffled)


def bell_fidelity(dev, n=2000, seed=0):
    states = final_states(BELL, dev, derive_seeds(seed, n))
    bell = np.array([1, 0, 0, 1]) / math.sqrt(2)
    return float(np.mean(np.abs(states @ bell.conj()) ** 2))


def test_fidelity_decreases_with_gate_error():
    fids = [bell_fidelity(uniform_device(2, gate_error_1q=e)) for e in (0.0, 0.05, 0.15, 0.3)]
    assert fids[0] == pytest.approx(1.0)
    assert all(a > b for a, b in zip(fids, fids[1:]))


def test_apply_readout_error():
    dev = uniform_device(3)
    assert apply_readout_error((1, 0, 1), dev, seed=1) == (1, 0, 1)
    forced = DeviceProfile(2, line_coupling(2), (QubitNoise(1, 1), QubitNoise(1, 1, readout_p01=1.0)))
    assert apply_readout_error((0, 0), forced, seed=3) == (0, 1)
    with pytest.raises(ValueError):
        apply_readout_error((0,), forced, seed=1)
    flaky = DeviceProfile(1, frozenset(), (QubitNoise(1, 1, readout_p01=0.02),))
    n = 10 ** 5
    flips = sum(apply_readout_error((0,), flaky, seed=s)[0] for s in range(n))
    assert within_3sigma(flips, n, 0.02)


def test_device_json_round_trip(tmp_path):
    for name in ("ideal", "noisy-a", "noisy-b"):
        dev = builtin_device(name)
        save_device(dev, tmp_path / f"{name}.json")
        assert load_device(tmp_path / f"{name}.json") == dev
    with pytest.raises(KeyError):
        builtin_device("noisy-z")


def test_circuit_too_wide():
    with pytest.raises(ValueError):
        run_noisy_counts(Circuit(3), ideal_device(2), 10, 0)
    with pytest.raises(ValueError):
        run_noisy_counts(BELL, ideal_device(2), 0, 0)
