"""Fidelity kernels on the simulated feature maps, plus the classical RBF kernel.

Three estimators are available for the quantum families:

``analytic``
    exact overlap ``|<psi(x)|psi(x')>|^2`` from two statevectors.
``it``
    inversion test; the all-zero probability of ``U(x)^dagger U(x')|0>``,
    optionally estimated from a finite number of shots.
``rm``
    randomized measurements; basis-state probabilities after shared
    Haar-random local unitaries, cross-correlated with Hamming weights.

Kernel functions here return the *unit* kernel.  The GP-facing matrix with
amplitude ``scale_amp`` and white noise ``noise_var`` comes from
:func:`kernel_matrix`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import feature_maps as fm
from .lorenz96 import PARAM_BOUNDS
from .rng import RngStream
from .statevector import Circuit, StateVector, haar_unitaries, probabilities, run, sample_counts

FAMILIES = ("RBF", "Chebyshev", "NPQC", "YZCX")
METHODS = ("analytic", "it", "rm")

# cap on complex entries held at once while building batched states
_CHUNK_ENTRIES = 2**22


def normalize(points) -> np.ndarray:
    """Affine map of raw (F, h, c, b) points onto ``[-1, 1]^4``."""
    p = np.asarray(points, dtype=float)
    lo, hi = PARAM_BOUNDS[:, 0], PARAM_BOUNDS[:, 1]
    return 2.0 * (p - lo) / (hi - lo) - 1.0


def denormalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lo, hi = PARAM_BOUNDS[:, 0], PARAM_BOUNDS[:, 1]
    return lo + (x + 1.0) * 0.5 * (hi - lo)


@dataclass(frozen=True)
class EstimatorConfig:
    method: str = "analytic"
    shots: int | None = None  # None reads probabilities exactly
    repetitions: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


ANALYTIC = EstimatorConfig()


@dataclass(frozen=True)
class KernelSpec:
    family: str
    n_qubits: int = 4
    n_layers: int = 1
    params: np.ndarray = field(default_factory=lambda: np.ones(1))
    static: np.ndarray | None = None
    scale_amp: float = 1.0
    noise_var: float = 1e-6

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        object.__setattr__(self, "params", np.atleast_1d(np.asarray(self.params, dtype=float)))
        if self.family != "RBF":
            N, L = self.n_qubits, self.n_layers
            if N < 4 or N % 2:
                raise ValueError(f"quantum kernels need an even qubit count >= 4, got {N}")
            if L < 1:
                raise ValueError("need at least one layer")
            if self.family == "NPQC":
                fm.npqc_shift_factors(N, L)  # validates the layer bound
        if not self.scale_amp > 0 or self.noise_var < 0:
            raise ValueError("need scale_amp > 0 and noise_var >= 0")

    @property
    def quantum(self) -> bool:
        return self.family != "RBF"

    @property
    def static_chebyshev(self) -> bool:
        return self.family == "Chebyshev" and self.static is not None

    def with_params(self, params=None, scale_amp=None, noise_var=None) -> "KernelSpec":
        kw = {}
        if params is not None:
            kw["params"] = np.asarray(params, dtype=float)
        if scale_amp is not None:
            kw["scale_amp"] = float(scale_amp)
        if noise_var is not None:
            kw["noise_var"] = float(noise_var)
        return replace(self, **kw)

    def describe(self) -> dict:
        return {
            "family": self.family,
            "n_qubits": self.n_qubits,
            "n_layers": self.n_layers,
            "params": self.params.tolist(),
            "static": None if self.static is None else np.asarray(self.static).tolist(),
            "scale_amp": self.scale_amp,
            "noise_var": self.noise_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        static = d.get("static")
        return cls(
            family=d["family"],
            n_qubits=int(d["n_qubits"]),
            n_layers=int(d["n_layers"]),
            params=np.asarray(d["params"], dtype=float),
            static=None if static is None else np.asarray(static, dtype=float),
            scale_amp=float(d["scale_amp"]),
            noise_var=float(d["noise_var"]),
        )


def make_kernel_spec(
    family: str,
    n_qubits: int = 4,
    n_layers: int = 1,
    rng: RngStream | None = None,
    chebyshev_mode: str = "trainable",
    lengthscale: float = 1.0,
    scale: float = 1.0,
    scale_amp: float = 1.0,
    noise_var: float = 1e-6,
) -> KernelSpec:
    """Kernel with default trainable values and any frozen random data drawn.

    Random data (Chebyshev angles, YZ-CX reference offsets) come from
    ``rng`` and stay fixed for the lifetime of the returned spec.
    """
    rng = rng if rng is not None else RngStream(0)
    static = None
    if family == "RBF":
        params = [lengthscale]
    elif family == "Chebyshev":
        g = rng.derive("chebyshev").generator()
        if chebyshev_mode == "trainable":
            params = g.uniform(0, 2 * np.pi, 2 * n_qubits)
        elif chebyshev_mode == "static":
            params = []
            static = g.uniform(0, 2 * np.pi, 2 * n_qubits * (n_layers + 1))
        else:
            raise ValueError(f"unknown Chebyshev mode {chebyshev_mode!r}")
    elif family == "NPQC":
        params = [scale]
    elif family == "YZCX":
        params = [scale]
        static = rng.derive("yzcx-reference").generator().uniform(0, 2 * np.pi, (n_layers, 2, n_qubits))
    else:
        raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
    return KernelSpec(family, n_qubits, n_layers, np.asarray(params, dtype=float), static, scale_amp, noise_var)


def build_circuit(spec: KernelSpec, x) -> Circuit:
    """Feature-map circuit for normalized input(s) ``x``."""
    N, L = spec.n_qubits, spec.n_layers
    if spec.family == "Chebyshev":
        if spec.static is not None:
            return fm.chebyshev_circuit(x, N, L, static=spec.static)
        return fm.chebyshev_circuit(x, N, L, params=spec.params)
    if spec.family == "NPQC":
        return fm.npqc_circuit(x, N, L, float(spec.params[0]))
    if spec.family == "YZCX":
        return fm.yzcx_circuit(x, N, L, float(spec.params[0]), spec.static)
    raise ValueError("RBF has no circuit")


def states(spec: KernelSpec, x) -> np.ndarray:
    """Encoded statevectors, shape ``(n, 2^N)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    step = max(1, _CHUNK_ENTRIES // 2**spec.n_qubits)
    out = np.empty((n, 2**spec.n_qubits), dtype=complex)
    for s in range(0, n, step):
        xb = x[s : s + step]
        out[s : s + step] = run(build_circuit(spec, xb), batch=xb.shape[0]).amplitudes
    return out


def rbf(x, x2, lengthscale: float) -> np.ndarray:
    x = np.atleast_2d(x)
    x2 = np.atleast_2d(x2)
    d2 = (x * x).sum(1)[:, None] + (x2 * x2).sum(1)[None, :] - 2.0 * x @ x2.T
    return np.exp(-np.maximum(d2, 0.0) / (2.0 * lengthscale**2))


def _overlaps(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a.conj() @ b.T) ** 2


def _binomial_rows(p: np.ndarray, shots: int, rng: RngStream, row_offset: int = 0) -> np.ndarray:
    out = np.empty_like(p)
    for i in range(p.shape[0]):
        g = rng.derive(row_offset + i).generator()
        out[i] = g.binomial(shots, np.clip(p[i], 0.0, 1.0)) / shots
    return out


def _hamming_weight_matrix_apply(P: np.ndarray, n_qubits: int) -> np.ndarray:
    """Multiply the last axis by ``W[v, v'] = (-2)^(-Ham(v, v'))``.

    ``W`` factorises into a Kronecker product of ``[[1, -1/2], [-1/2, 1]]``.
    """
    w = np.array([[1.0, -0.5], [-0.5, 1.0]])
    lead = P.shape[:-1]
    t = P.reshape(-1, *([2] * n_qubits))
    for q in range(n_qubits):
        t = np.moveaxis(np.tensordot(t, w, axes=([q + 1], [1])), -1, q + 1)
    return t.reshape(*lead, 2**n_qubits)


def draw_haar_sets(n_qubits: int, repetitions: int, rng: RngStream) -> np.ndarray:
    """``R`` sets of ``N`` Haar-random single-qubit unitaries, shape ``(R, N, 2, 2)``."""
    return haar_unitaries(rng.derive("haar").generator(), (repetitions, n_qubits))


def rm_state_probabilities(psi: np.ndarray, haar: np.ndarray, shots: int | None = None, rng: RngStream | None = None) -> np.ndarray:
    """Basis-state probabilities ``P[i, r, v]`` of states ``psi`` after the random local rotations.

    With ``shots`` set, each ``(i, r)`` distribution is replaced by a
    multinomial frequency estimate drawn from the per-point stream
    ``rng.derive(i)``.
    """
    psi = np.atleast_2d(psi)
    n, dim = psi.shape
    N = int(round(np.log2(dim)))
    R = haar.shape[0]
    if haar.shape[1:] != (N, 2, 2):
        raise ValueError(f"Haar sets must have shape (R, {N}, 2, 2), got {haar.shape}")
    out = np.empty((n, R, dim))
    step = max(1, _CHUNK_ENTRIES // (R * dim))
    for s in range(0, n, step):
        t = np.broadcast_to(psi[s : s + step, None, :], (min(step, n - s), R, dim))
        t = t.reshape(-1, R, *([2] * N))
        for q in range(N):
            # apply V[r, q] on qubit q for every repetition r
            t = np.moveaxis(np.einsum("rij,br...j->br...i", haar[:, q], np.moveaxis(t, q + 2, -1)), -1, q + 2)
        out[s : s + step] = (np.abs(t) ** 2).reshape(-1, R, dim)
    if shots is not None:
        if rng is None:
            raise ValueError("shot sampling needs an rng stream")
        for i in range(n):
            g = rng.derive(i).generator()
            p = out[i] / out[i].sum(axis=1, keepdims=True)
            out[i] = g.multinomial(shots, p) / shots
    return out


def rm_probabilities(spec: KernelSpec, x, haar: np.ndarray, est: EstimatorConfig, rng: RngStream | None = None) -> np.ndarray:
    """Randomized-measurement probabilities for encoded points ``x``."""
    if haar.shape[1:] != (spec.n_qubits, 2, 2):
        raise ValueError(f"Haar sets must have shape (R, {spec.n_qubits}, 2, 2), got {haar.shape}")
    return rm_state_probabilities(states(spec, x), haar, est.shots, rng)


def rm_state_kernel(psi, psi2=None, repetitions: int = 100, shots: int | None = None, rng: RngStream | None = None) -> np.ndarray:
    """RM kernel estimate directly from statevectors (any qubit count)."""
    rng = rng if rng is not None else RngStream(0)
    psi = np.atleast_2d(psi)
    N = int(round(np.log2(psi.shape[1])))
    haar = draw_haar_sets(N, repetitions, rng)
    P = rm_state_probabilities(psi, haar, shots, rng.derive("left"))
    if psi2 is None:
        K = rm_cross_correlation(P, P, N)
        return 0.5 * (K + K.T)
    P2 = rm_state_probabilities(np.atleast_2d(psi2), haar, shots, rng.derive("right"))
    return rm_cross_correlation(P, P2, N)


def rm_cross_correlation(P: np.ndarray, P2: np.ndarray, n_qubits: int) -> np.ndarray:
    R = P.shape[1]
    Q = _hamming_weight_matrix_apply(P2, n_qubits)
    return (2**n_qubits / R) * (P.reshape(P.shape[0], -1) @ Q.reshape(Q.shape[0], -1).T)


def rm_kernel_matrix(spec: KernelSpec, x, x2=None, est: EstimatorConfig = EstimatorConfig("rm", None, 100), rng: RngStream | None = None) -> np.ndarray:
    """Randomized-measurement kernel estimate; Haar sets are shared by ``x`` and ``x2``."""
    rng = rng if rng is not None else RngStream(0)
    haar = draw_haar_sets(spec.n_qubits, est.repetitions, rng)
    P = rm_probabilities(spec, x, haar, est, rng.derive("left"))
    if x2 is None:
        K = rm_cross_correlation(P, P, spec.n_qubits)
        return 0.5 * (K + K.T)
    P2 = rm_probabilities(spec, x2, haar, est, rng.derive("right"))
    return rm_cross_correlation(P, P2, spec.n_qubits)


def circuit_samplings(method: str, n: int, n2: int | None = None, repetitions: int = 1) -> int:
    """Number of distinct circuit samplings needed for one kernel matrix."""
    if method == "rm":
        return repetitions * (n + (n2 or 0))
    return n * (n - 1) // 2 if n2 is None else n * n2


def unit_kernel_matrix(spec: KernelSpec, x, x2=None, est: EstimatorConfig = ANALYTIC, rng: RngStream | None = None, row_offset: int = 0) -> np.ndarray:
    """Kernel matrix without amplitude or noise.

    Without ``x2`` the result is symmetric; for the analytic and IT
    estimators its diagonal is exactly one.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if spec.family == "RBF":
        K = rbf(x, x if x2 is None else np.atleast_2d(x2), float(spec.params[0]))
        if x2 is None:
            np.fill_diagonal(K, 1.0)
        return K
    if est.method == "rm":
        return rm_kernel_matrix(spec, x, x2, est, rng)
    a = states(spec, x)
    b = a if x2 is None else states(spec, np.atleast_2d(np.asarray(x2, dtype=float)))
    K = _overlaps(a, b)
    if est.method == "it" and est.shots is not None:
        if rng is None:
            raise ValueError("shot sampling needs an rng stream")
        if x2 is None:
            K = np.triu(_binomial_rows(K, est.shots, rng, row_offset), 1)
            K = K + K.T
        else:
            K = _binomial_rows(K, est.shots, rng, row_offset)
    if x2 is None:
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, 1.0)
    return K


def kernel_matrix(spec: KernelSpec, x, x2=None, est: EstimatorConfig = ANALYTIC, rng: RngStream | None = None) -> np.ndarray:
    """GP-facing matrix ``a^2 K + sigma^2 1`` (white noise only without ``x2``)."""
    K = spec.scale_amp * unit_kernel_matrix(spec, x, x2, est, rng)
    if x2 is None:
        K[np.diag_indices_from(K)] += spec.noise_var
    return K


def kernel_value(spec: KernelSpec, x, x2, est: EstimatorConfig = ANALYTIC, rng: RngStream | None = None) -> float:
    """Single unit-kernel entry.

    The IT route builds the actual inversion circuit ``U(x)^dagger U(x')``
    and reads (or samples) its all-zero probability.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    x2 = np.asarray(x2, dtype=float).reshape(1, -1)
    if spec.family == "RBF":
        return float(rbf(x, x2, float(spec.params[0]))[0, 0])
    if est.method == "analytic":
        return float(_overlaps(states(spec, x), states(spec, x2))[0, 0])
    if est.method == "it":
        u2 = build_circuit(spec, x2)
        u1 = build_circuit(spec, x)
        inv = Circuit(spec.n_qubits, list(u2.gates) + list(u1.inverse().gates))
        sv = run(inv, batch=None)
        sv = StateVector(sv.n_qubits, np.asarray(sv.amplitudes).reshape(-1))
        if est.shots is None:
            return float(probabilities(sv)[0])
        if rng is None:
            raise ValueError("shot sampling needs an rng stream")
        counts = sample_counts(sv, est.shots, rng.generator())
        return counts.get(0, 0) / est.shots
    return float(rm_kernel_matrix(spec, x, x2, est, rng)[0, 0])
