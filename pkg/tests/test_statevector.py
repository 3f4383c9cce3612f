import numpy as np
import pytest
from hypothesis import given, strategies as st

from l96qhm.statevector import (
    MAX_QUBITS,
    Circuit,
    Gate,
    StateVector,
    apply,
    cnot,
    crz,
    cz,
    haar_su2,
    haar_unitaries,
    probabilities,
    rotation_matrix,
    run,
    rx,
    ry,
    rz,
    sample_counts,
)


def basis(n, idx):
    a = np.zeros(2**n, dtype=complex)
    a[idx] = 1
    return StateVector(n, a)


def test_ry_half_turn():
    s = run(Circuit(1, [ry(0, np.pi)]))
    assert np.allclose(np.abs(s.amplitudes), [0, 1])


def test_ry_quarter_turn():
    s = run(Circuit(1, [ry(0, np.pi / 2)]))
    assert np.allclose(s.amplitudes, [np.cos(np.pi / 4), np.sin(np.pi / 4)])


def test_cz_phases():
    assert np.allclose(apply(basis(2, 3), cz(0, 1)).amplitudes, [0, 0, 0, -1])
    assert np.allclose(apply(basis(2, 2), cz(0, 1)).amplitudes, [0, 0, 1, 0])


def test_qubit_zero_is_most_significant():
    s = run(Circuit(3, [rx(0, np.pi)]))
    assert np.argmax(probabilities(s)) == 0b100


def test_cnot_and_crz():
    # |10> -> |11>
    assert np.allclose(np.abs(apply(basis(2, 2), cnot(0, 1)).amplitudes), [0, 0, 0, 1])
    # control off: untouched
    assert np.allclose(apply(basis(2, 1), crz(0, 1, 0.7)).amplitudes, [0, 1, 0, 0])
    # control on: RZ on target
    out = apply(basis(2, 3), crz(0, 1, 0.7)).amplitudes
    assert np.isclose(out[3], np.exp(0.35j))


def test_rotation_conventions():
    for k in ("RX", "RY", "RZ"):
        assert np.allclose(rotation_matrix(k, 0.0), np.eye(2))
        assert np.allclose(rotation_matrix(k, 2 * np.pi), -np.eye(2))
    t = 0.3
    assert np.allclose(rotation_matrix("RZ", t), np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)]))


def test_empty_circuit():
    assert np.allclose(run(Circuit(3)).amplitudes, basis(3, 0).amplitudes)


def random_circuit(n, g, depth=25):
    c = Circuit(n)
    for _ in range(depth):
        k = g.integers(6)
        q = int(g.integers(n))
        q2 = int((q + 1 + g.integers(n - 1)) % n)
        a = float(g.uniform(-4, 4))
        c.append([rx(q, a), ry(q, a), rz(q, a), cz(q, q2), cnot(q, q2), crz(q, q2, a)][k])
    return c


@given(st.integers(0, 10_000), st.integers(2, 5))
def test_norm_and_inverse(seed, n):
    g = np.random.default_rng(seed)
    c = random_circuit(n, g)
    s = run(c)
    assert abs(s.norm() - 1) < 1e-10
    back = run(Circuit(n, c.gates + c.inverse().gates))
    assert np.allclose(back.amplitudes, basis(n, 0).amplitudes, atol=1e-10)


@given(st.integers(0, 10_000))
def test_linearity(seed):
    g = np.random.default_rng(seed)
    c = random_circuit(3, g, 10)
    a = g.normal(size=8) + 1j * g.normal(size=8)
    b = g.normal(size=8) + 1j * g.normal(size=8)

    def U(v):
        s = StateVector(3, v)
        for gate in c.gates:
            s = apply(s, gate)
        return s.amplitudes

    assert np.allclose(U(2 * a - 1j * b), 2 * U(a) - 1j * U(b))


def test_batched_matches_single():
    angles = np.linspace(-2, 2, 5)
    c = Circuit(2, [ry(0, angles), cnot(0, 1), rz(1, 2 * angles), rx(0, 0.3)])
    sb = run(c)
    for i, a in enumerate(angles):
        s = run(Circuit(2, [ry(0, a), cnot(0, 1), rz(1, 2 * a), rx(0, 0.3)]))
        assert np.allclose(sb.amplitudes[i], s.amplitudes)


def test_probabilities_equal_superposition():
    s = run(Circuit(2, [ry(0, np.pi / 2), ry(1, np.pi / 2)]))
    p = probabilities(s)
    assert np.allclose(p, 0.25) and abs(p.sum() - 1) < 1e-10
    assert np.allclose(probabilities(run(Circuit(1))), [1, 0])


def test_sample_counts():
    g = np.random.default_rng(0)
    assert sample_counts(run(Circuit(1)), 100, g) == {0: 100}
    s = run(Circuit(2, [ry(0, np.pi / 2), ry(1, np.pi / 2)]))
    c = sample_counts(s, 4000, g)
    assert sum(c.values()) == 4000
    assert all(800 <= c[i] <= 1200 for i in range(4))
    with pytest.raises(ValueError):
        sample_counts(s, 0, g)


def test_sample_counts_deterministic():
    s = run(Circuit(2, [ry(0, 1.0), ry(1, 2.0)]))
    a = sample_counts(s, 500, np.random.default_rng(9))
    b = sample_counts(s, 500, np.random.default_rng(9))
    assert a == b


def test_haar_moments():
    g = np.random.default_rng(11)
    V = haar_unitaries(g, 10_000)
    eye = np.eye(2)
    assert np.allclose(V @ V.conj().swapaxes(-1, -2), eye, atol=1e-10)
    psi = V[:, :, 0]
    bloch = np.stack([
        2 * np.real(psi[:, 0].conj() * psi[:, 1]),
        2 * np.imag(psi[:, 0].conj() * psi[:, 1]),
        np.abs(psi[:, 0]) ** 2 - np.abs(psi[:, 1]) ** 2,
    ], axis=1)
    assert np.linalg.norm(bloch.mean(0)) < 0.05
    assert abs(np.mean(np.abs(V[:, 0, 0]) ** 2) - 0.5) < 0.02


def test_haar_su2_gate():
    gte = haar_su2(np.random.default_rng(0), 1)
    assert gte.kind == "SU2" and gte.qubits == (1,)
    s = apply(run(Circuit(2)), gte)
    assert abs(s.norm() - 1) < 1e-10


def test_gate_validation():
    with pytest.raises(ValueError):
        Gate("CZ", (1, 1))
    with pytest.raises(ValueError):
        Gate("SU2", (0,), matrix=np.array([[1, 1], [0, 1]]))
    with pytest.raises(ValueError):
        Circuit(2, [rx(2, 0.1)])
    with pytest.raises(ValueError):
        Circuit(MAX_QUBITS + 1)


def test_depth_and_count():
    c = Circuit(3, [rx(0, 1), rx(1, 1), cz(0, 1), rx(2, 1), cnot(1, 2)])
    assert c.depth() == 3
    assert c.count("RX") == 3 and len(c) == 5


def test_statevector_is_read_only():
    s = run(Circuit(1))
    with pytest.raises(ValueError):
        s.amplitudes[0] = 0
