# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Fidelity kernels and their estimators
#
# Builds the three feature maps, checks their shapes, and compares the
# inversion test and randomized measurements against exact overlaps.

# %%
import numpy as np

from l96qhm.feature_maps import npqc_shift_factors, yzcx_circuit
from l96qhm.quantum_kernels import EstimatorConfig, kernel_value, make_kernel_spec, rm_kernel_matrix, unit_kernel_matrix
from l96qhm.rng import RngStream

# %% [markdown]
# NPQC layers pair qubits with shifts taken from a ruler sequence.

# %%
for L in (2, 4, 8):
    print(L, npqc_shift_factors(6, L))

# %%
c = yzcx_circuit(np.zeros((1, 4)), 6, 3, 1.0, np.zeros((3, 2, 6)))
print(len(c), "gates, depth", c.depth(), ",", c.count("CNOT"), "CNOTs")

# %% [markdown]
# ## Shot noise in the inversion test

# %%
spec = make_kernel_spec("YZCX", 4, 2, rng=RngStream(0))
pairs = np.random.default_rng(1).uniform(-1, 1, (30, 2, 4))
exact = np.array([kernel_value(spec, x, y) for x, y in pairs])
for S in (100, 1000, 10000):
    est = EstimatorConfig("it", shots=S)
    k = np.array([kernel_value(spec, x, y, est, RngStream(S).derive(i)) for i, (x, y) in enumerate(pairs)])
    print(f"S={S:6d}  rmse={np.sqrt(np.mean((k - exact) ** 2)):.4f}")

# %% [markdown]
# ## Randomized measurements
#
# The same Haar sets are applied to both arguments, so the diagonal is a
# purity estimate and should sit near one.

# %%
X = np.random.default_rng(2).uniform(-1, 1, (6, 4))
K = unit_kernel_matrix(spec, X)
for R in (100, 1000):
    Kr = rm_kernel_matrix(spec, X, None, EstimatorConfig("rm", None, R), RngStream(R))
    print(f"R={R:5d}  max |K_rm - K| = {np.abs(Kr - K).max():.3f}  diag mean = {np.diag(Kr).mean():.3f}")
