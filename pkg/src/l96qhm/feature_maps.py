"""Quantum feature-map circuits for four-dimensional inputs.

Inputs are points already rescaled to ``[-1, 1]^4`` (see
:func:`l96qhm.quantum_kernels.normalize`).  Every builder accepts a batch
``x`` of shape ``(n, 4)`` and returns one :class:`Circuit` whose gate angles
are length-``n`` arrays.

Qubit indices here are 0-based; the published circuit descriptions count
from 1.
"""
from __future__ import annotations

import numpy as np

from .statevector import Circuit, cnot, crz, cz, rx, ry, rz

NPQC_REF_Y = np.pi / 2


def npqc_shift_factors(n_qubits: int, n_layers: int) -> list[int]:
    """Shift factors ``a_2..a_L`` for the NPQC entangling layers.

    Factors are taken in increasing order from ``{0, ..., N/2 - 1}``, each
    followed by a copy of all factors emitted before it, which yields the
    ruler sequence 0, 1, 0, 2, 0, 1, 0, ...
    """
    if n_qubits < 2 or n_qubits % 2:
        raise ValueError(f"NPQC needs an even qubit count, got {n_qubits}")
    if not 1 <= n_layers <= 2 ** (n_qubits // 2):
        raise ValueError(f"NPQC needs 1 <= L <= 2^(N/2) = {2 ** (n_qubits // 2)}, got {n_layers}")
    pool = list(range(n_qubits // 2))
    factors: list[int] = []
    s = 1
    while len(factors) < n_layers - 1:
        factors.append(pool.pop(0))
        for q in range(1, s):
            if len(factors) < n_layers - 1:
                factors.append(factors[q - 1])
        s *= 2
    return factors


def npqc_pairs(n_qubits: int, shift: int) -> list[tuple[int, int]]:
    """CZ (control, target) pairs of one NPQC layer with the given shift."""
    half = n_qubits // 2
    return [(2 * j, 2 * ((j + shift) % half) + 1) for j in range(half)]


def chebyshev_angles(params, n_qubits: int, n_layers: int, static=None):
    """Expand Chebyshev angles into ``(initial, rx, crz, final)`` blocks.

    Trainable mode ties every single-qubit angle on qubit ``j`` to
    ``params[j]`` and every CRZ angle on qubit ``j`` to ``params[N + j]``.
    Static mode passes ``static`` holding all ``2N(L+1)`` angles, laid out
    as initial (N), rx (L*N), crz (L*N), final (N).
    """
    N, L = n_qubits, n_layers
    if static is not None:
        a = np.asarray(static, dtype=float)
        if a.size != 2 * N * (L + 1):
            raise ValueError(f"static Chebyshev needs {2 * N * (L + 1)} angles, got {a.size}")
        init = a[:N]
        rxa = a[N : N + L * N].reshape(L, N)
        crza = a[N + L * N : N + 2 * L * N].reshape(L, N)
        final = a[N + 2 * L * N :]
        return init, rxa, crza, final
    p = np.asarray(params, dtype=float)
    if p.size != 2 * N:
        raise ValueError(f"trainable Chebyshev needs {2 * N} angles, got {p.size}")
    single, ent = p[:N], p[N:]
    return single, np.tile(single, (L, 1)), np.tile(ent, (L, 1)), single


def chebyshev_circuit(x, n_qubits: int, n_layers: int, params=None, static=None) -> Circuit:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N, L = n_qubits, n_layers
    init, rxa, crza, final = chebyshev_angles(params, N, L, static)
    acos = np.arccos(np.clip(x, -1.0, 1.0))
    circ = Circuit(N)
    for j in range(N):
        circ.append(ry(j, init[j]))
    for l in range(L):
        for j in range(N):
            circ.append(rx(j, rxa[l, j] * acos[:, (l * N + j) % 4]))
        for j in range(N):
            circ.append(crz(j, (j + 1) % N, crza[l, j]))
    for j in range(N):
        circ.append(ry(j, final[j]))
    return circ


def npqc_n_params(n_qubits: int, n_layers: int) -> int:
    # fixed RY(pi/2) gates of the later layers carry no parameter
    return n_qubits * (n_layers + 1)


def npqc_input_angles(x, n_qubits: int, n_layers: int, scale: float) -> np.ndarray:
    """Cycle the scaled inputs onto the NPQC parameter slots."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N, L = n_qubits, n_layers
    enc = scale * x
    cols = [j % 4 for j in range(N)] * 2
    for _ in range(L - 1):
        cols += [j % 4 for j in range(N // 2)] * 2
    return enc[:, cols]


def npqc_parameter_circuit(theta, n_qubits: int, n_layers: int) -> Circuit:
    """NPQC with explicit offsets ``theta`` (n, N(L+1)) from the reference point."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    N, L = n_qubits, n_layers
    if theta.shape[1] != npqc_n_params(N, L):
        raise ValueError(f"expected {npqc_n_params(N, L)} angles, got {theta.shape[1]}")
    shifts = npqc_shift_factors(N, L)
    circ = Circuit(N)
    for j in range(N):
        circ.append(ry(j, NPQC_REF_Y + theta[:, j]))
    for j in range(N):
        circ.append(rz(j, theta[:, N + j]))
    k = 2 * N
    for a in shifts:
        for j in range(N // 2):
            circ.append(ry(2 * j, NPQC_REF_Y))
        for c, t in npqc_pairs(N, a):
            circ.append(cz(c, t))
        for j in range(N // 2):
            circ.append(ry(2 * j, NPQC_REF_Y + theta[:, k + j]))
        for j in range(N // 2):
            circ.append(rz(2 * j, theta[:, k + N // 2 + j]))
        k += N
    return circ


def npqc_circuit(x, n_qubits: int, n_layers: int, scale: float) -> Circuit:
    return npqc_parameter_circuit(npqc_input_angles(x, n_qubits, n_layers, scale), n_qubits, n_layers)


def yzcx_circuit(x, n_qubits: int, n_layers: int, scale: float, reference) -> Circuit:
    """``reference`` holds per-gate offsets with shape ``(L, 2, N)`` (RY row, RZ row)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N, L = n_qubits, n_layers
    ref = np.asarray(reference, dtype=float).reshape(L, 2, N)
    enc = scale * x
    circ = Circuit(N)
    for l in range(L):
        off = l % 2
        for j in range(N):
            circ.append(ry(j, ref[l, 0, j] + enc[:, j % 4]))
        for j in range(N):
            circ.append(rz(j, ref[l, 1, j] + enc[:, j % 4]))
        for j in range((N - off) // 2):
            circ.append(cnot(2 * j + off, 2 * j + off + 1))
    return circ


def expected_gate_count(family: str, n_qubits: int, n_layers: int) -> int:
    N, L = n_qubits, n_layers
    if family == "Chebyshev":
        return 2 * N * (L + 1)
    if family == "NPQC":
        return 2 * N * L
    if family == "YZCX":
        odd = (L + 1) // 2  # layers 1, 3, ... carry floor(N/2) CNOTs
        return 2 * N * L + odd * (N // 2) + (L // 2) * ((N - 1) // 2)
    raise ValueError(family)


def expected_depth(family: str, n_qubits: int, n_layers: int) -> int:
    N, L = n_qubits, n_layers
    return {"Chebyshev": L * (N + 1) + 2, "NPQC": 4 * L - 2, "YZCX": 3 * L}[family]
