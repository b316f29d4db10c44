"""Brute-force reference implementations used only by the tests."""

import math

import numpy as np

SQ2 = 1 / math.sqrt(2)


def one_qubit_matrix(kind, theta=None):
    c = s = None
    if theta is not None:
        c, s = math.cos(theta / 2), math.sin(theta / 2)
    return {
        "X": lambda: np.array([[0, 1], [1, 0]], complex),
        "Y": lambda: np.array([[0, -1j], [1j, 0]], complex),
        "Z": lambda: np.array([[1, 0], [0, -1]], complex),
        "H": lambda: np.array([[SQ2, SQ2], [SQ2, -SQ2]], complex),
        "DELAY": lambda: np.eye(2, dtype=complex),
        "RX": lambda: np.array([[c, -1j * s], [-1j * s, c]]),
        "RY": lambda: np.array([[c, -s], [s, c]], complex),
        "RZ": lambda: np.array([[complex(c, -s), 0], [0, complex(c, s)]]),
    }[kind]()


def full_unitary(op, n):
    """2^n x 2^n matrix of one gate, built by enumerating basis states.

    Qubit 0 is the least significant index bit.
    """
    dim = 2 ** n
    u = np.zeros((dim, dim), dtype=complex)
    kind, t = op.kind, op.targets
    if len(t) == 1:
        m = one_qubit_matrix(kind, op.angle)
        for col in range(dim):
            b = (col >> t[0]) & 1
            for nb in (0, 1):
                row = col & ~(1 << t[0]) | (nb << t[0])
                u[row, col] += m[nb, b]
        return u
    a, b = t
    th = op.angle
    for col in range(dim):
        ba, bb = (col >> a) & 1, (col >> b) & 1
        if kind == "CNOT":
            u[col ^ (ba << b), col] = 1
        elif kind == "CZ":
            u[col, col] = -1 if ba and bb else 1
        elif kind == "SWAP":
            row = col & ~((1 << a) | (1 << b)) | (bb << a) | (ba << b)
            u[row, col] = 1
        elif kind == "ZZ":
            sign = 1 if ba == bb else -1
            u[col, col] = np.exp(-1j * th / 2 * sign)
        elif kind == "CRX":
            if not ba:
                u[col, col] = 1
            else:
                m = one_qubit_matrix("RX", th)
                for nb in (0, 1):
                    u[col & ~(1 << b) | (nb << b), col] += m[nb, bb]
        else:
            raise ValueError(kind)
    return u


def circuit_unitary(circuit):
    dim = 2 ** circuit.n_qubits
    u = np.eye(dim, dtype=complex)
    for op in circuit.ops:
        u = full_unitary(op, circuit.n_qubits) @ u
    return u


def oracle_state(circuit):
    return circuit_unitary(circuit)[:, 0]
