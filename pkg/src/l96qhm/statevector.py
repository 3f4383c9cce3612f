"""Dense statevector simulator for small qubit counts.

Qubit 0 is the most significant bit of the basis index.  Gate angles may be
scalars or 1-d arrays; with arrays the circuit is evaluated for a whole batch
of parameter values at once and amplitudes carry a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_QUBITS = 12

ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + ("CZ", "CNOT", "CRZ", "SU2")

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_PAULI = {"RX": _X, "RY": _Y, "RZ": _Z}


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    angle: float | np.ndarray | None = None
    matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        n = 2 if self.kind in ("CZ", "CNOT", "CRZ") else 1
        if len(self.qubits) != n:
            raise ValueError(f"{self.kind} acts on {n} qubit(s), got {self.qubits}")
        if n == 2 and self.qubits[0] == self.qubits[1]:
            raise ValueError("control and target must differ")
        if self.kind == "SU2":
            m = np.asarray(self.matrix, dtype=complex)
            if m.shape[-2:] != (2, 2):
                raise ValueError("SU2 gate needs a 2x2 matrix")
            if not np.allclose(m @ m.conj().swapaxes(-1, -2), np.eye(2), atol=1e-10):
                raise ValueError("SU2 matrix is not unitary")

    def inverse(self) -> "Gate":
        if self.kind in ROTATIONS or self.kind == "CRZ":
            return Gate(self.kind, self.qubits, -np.asarray(self.angle))
        if self.kind == "SU2":
            return Gate("SU2", self.qubits, matrix=np.conj(np.swapaxes(self.matrix, -1, -2)))
        return self


def rx(q, angle):
    return Gate("RX", (q,), angle)


def ry(q, angle):
    return Gate("RY", (q,), angle)


def rz(q, angle):
    return Gate("RZ", (q,), angle)


def cz(a, b):
    return Gate("CZ", (a, b))


def cnot(control, target):
    return Gate("CNOT", (control, target))


def crz(control, target, angle):
    return Gate("CRZ", (control, target), angle)


def su2(q, matrix):
    return Gate("SU2", (q,), matrix=np.asarray(matrix, dtype=complex))


def rotation_matrix(kind: str, angle) -> np.ndarray:
    """``cos(t/2) 1 - i sin(t/2) A``; shape ``(..., 2, 2)`` for array angles."""
    t = np.asarray(angle, dtype=float)[..., None, None]
    return np.cos(t / 2) * np.eye(2) - 1j * np.sin(t / 2) * _PAULI[kind]


@dataclass
class Circuit:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}]")
        for g in self.gates:
            self._check(g)

    def _check(self, g: Gate):
        if any(q < 0 or q >= self.n_qubits for q in g.qubits):
            raise ValueError(f"gate {g.kind} on {g.qubits} outside {self.n_qubits} qubits")

    def append(self, g: Gate) -> "Circuit":
        self._check(g)
        self.gates.append(g)
        return self

    def inverse(self) -> "Circuit":
        return Circuit(self.n_qubits, [g.inverse() for g in reversed(self.gates)])

    def __len__(self):
        return len(self.gates)

    def depth(self) -> int:
        """As-soon-as-possible layering: gates on disjoint qubits share a layer."""
        level = [0] * self.n_qubits
        for g in self.gates:
            t = max(level[q] for q in g.qubits) + 1
            for q in g.qubits:
                level[q] = t
        return max(level, default=0)

    def count(self, kind: str) -> int:
        return sum(g.kind == kind for g in self.gates)


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes)
        if a.shape[-1] != 2**self.n_qubits:
            raise ValueError("amplitude length does not match qubit count")
        a.setflags(write=False)

    @classmethod
    def zero(cls, n_qubits: int, batch: int | None = None) -> "StateVector":
        shape = (2**n_qubits,) if batch is None else (batch, 2**n_qubits)
        a = np.zeros(shape, dtype=complex)
        a[..., 0] = 1.0
        return cls(n_qubits, a)

    @property
    def batched(self) -> bool:
        return self.amplitudes.ndim == 2

    def norm(self):
        return np.linalg.norm(self.amplitudes, axis=-1)


def _bits(n: int, q: int) -> np.ndarray:
    return (np.arange(2**n) >> (n - 1 - q)) & 1


def _apply_1q(psi: np.ndarray, n: int, q: int, m: np.ndarray) -> np.ndarray:
    # psi: (B, 2**n); m: (2, 2) or (B, 2, 2)
    B = psi.shape[0]
    t = psi.reshape(B, 2**q, 2, 2 ** (n - q - 1))
    if m.ndim == 3 and m.shape[0] == 1:
        m = m[0]
    if m.ndim == 2:
        out = np.einsum("ij,bljr->blir", m, t)
    else:
        out = np.einsum("bij,bljr->blir", m, t)
    return out.reshape(B, 2**n)


def _angles(angle):
    a = np.asarray(angle, dtype=float)
    return a.reshape(()) if a.size == 1 else a.reshape(-1)


def apply(state: StateVector, gate: Gate) -> StateVector:
    """Return the state after ``gate``; batch-aware."""
    return StateVector(state.n_qubits, _apply_raw(np.asarray(state.amplitudes), state.n_qubits, gate))


def _apply_raw(amp: np.ndarray, n: int, gate: Gate) -> np.ndarray:
    single = amp.ndim == 1
    psi = amp[None] if single else amp
    B = psi.shape[0]
    k = gate.kind
    if k in ("RX", "RY"):
        psi = _apply_1q(psi, n, gate.qubits[0], rotation_matrix(k, _angles(gate.angle)))
    elif k == "SU2":
        psi = _apply_1q(psi, n, gate.qubits[0], np.asarray(gate.matrix, dtype=complex))
    elif k == "RZ":
        t = np.asarray(gate.angle, dtype=float).reshape(-1, 1)
        z = 1 - 2 * _bits(n, gate.qubits[0])  # +1 for |0>, -1 for |1>
        psi = psi * np.exp(-0.5j * t * z)
    elif k == "CRZ":
        c, tq = gate.qubits
        t = np.asarray(gate.angle, dtype=float).reshape(-1, 1)
        on = _bits(n, c)
        z = 1 - 2 * _bits(n, tq)
        psi = psi * np.exp(-0.5j * t * z * on)
    elif k == "CZ":
        a, b = gate.qubits
        psi = psi * (1 - 2 * (_bits(n, a) & _bits(n, b)))
    elif k == "CNOT":
        c, tq = gate.qubits
        idx = np.arange(2**n)
        perm = np.where(_bits(n, c) == 1, idx ^ (1 << (n - 1 - tq)), idx)
        psi = psi[:, perm]
    return psi[0] if single else psi


def run(circuit: Circuit, batch: int | None = None) -> StateVector:
    """Apply the circuit to ``|0...0>``.

    With array-valued gate angles the batch size is inferred from them.
    """
    if batch is None:
        sizes = {np.asarray(g.angle).size for g in circuit.gates if g.angle is not None}
        sizes.discard(1)
        if len(sizes) > 1:
            raise ValueError(f"inconsistent batch sizes {sizes}")
        batch = sizes.pop() if sizes else None
    amp = StateVector.zero(circuit.n_qubits, batch).amplitudes.copy()
    for g in circuit.gates:
        amp = _apply_raw(amp, circuit.n_qubits, g)
    return StateVector(circuit.n_qubits, amp)


def probabilities(state: StateVector) -> np.ndarray:
    return np.abs(np.asarray(state.amplitudes)) ** 2


def sample_counts(state: StateVector, shots: int, rng: np.random.Generator) -> dict[int, int]:
    """Multinomial measurement record of ``shots`` computational-basis readouts."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if state.batched:
        raise ValueError("sample_counts expects a single state")
    p = probabilities(state)
    counts = rng.multinomial(shots, p / p.sum())
    return {int(i): int(c) for i, c in enumerate(counts) if c}


def haar_unitaries(rng: np.random.Generator, size: int | tuple = ()) -> np.ndarray:
    """Haar-random 2x2 unitaries via QR of a complex Ginibre matrix."""
    shape = (size,) if isinstance(size, int) else tuple(size)
    z = (rng.standard_normal(shape + (2, 2)) + 1j * rng.standard_normal(shape + (2, 2))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (d / np.abs(d))[..., None, :]


def haar_su2(rng: np.random.Generator, qubit: int = 0) -> Gate:
    return su2(qubit, haar_unitaries(rng))
