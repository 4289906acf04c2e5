"""Hot numeric kernels, numba-compiled with a pure-NumPy fallback.

The fallback runs the same function body through the interpreter, so both
paths execute identical floating-point operations in identical order. Set
``ENRANK_DISABLE_NUMBA=1`` to force the fallback (or to benchmark it; see
``benchmarks/bench_kernels.py``).
"""

import os

import numpy as np

DISABLE_ENV = "ENRANK_DISABLE_NUMBA"


def _sgns_epoch(vec_in, vec_out, centers, targets, negatives, lr):
    """One SGD pass of skip-gram negative sampling over prepared pairs.

    ``vec_in``/``vec_out`` are updated in place. ``centers``/``targets``
    are row indices per pair; ``negatives`` holds the pre-drawn negative
    target rows, one row of ``k`` per pair. Returns the per-pair logistic
    loss (positive plus negatives) evaluated online, before each update.
    """
    n_pairs = centers.shape[0]
    n_neg = negatives.shape[1]
    dim = vec_in.shape[1]
    losses = np.zeros(n_pairs)
    grad = np.zeros(dim)
    for p in range(n_pairs):
        c = centers[p]
        loss = 0.0
        for d in range(dim):
            grad[d] = 0.0
        for j in range(n_neg + 1):
            if j == 0:
                t = targets[p]
                label = 1.0
            else:
                t = negatives[p, j - 1]
                label = 0.0
            f = 0.0
            for d in range(dim):
                f += vec_in[c, d] * vec_out[t, d]
            # Stable softplus-based loss and sigmoid, split on the sign of f.
            if f >= 0.0:
                sig = 1.0 / (1.0 + np.exp(-f))
                loss += (1.0 - label) * f + np.log1p(np.exp(-f))
            else:
                ef = np.exp(f)
                sig = ef / (1.0 + ef)
                loss += -label * f + np.log1p(ef)
            g = (label - sig) * lr
            for d in range(dim):
                grad[d] += g * vec_out[t, d]
            for d in range(dim):
                vec_out[t, d] += g * vec_in[c, d]
        for d in range(dim):
            vec_in[c, d] += grad[d]
        losses[p] = loss
    return losses


sgns_epoch_py = _sgns_epoch

try:
    import numba

    sgns_epoch_jit = numba.njit(cache=True)(_sgns_epoch)
except ImportError:  # pragma: no cover - numba is a hard dependency normally
    sgns_epoch_jit = None

NUMBA_ENABLED = sgns_epoch_jit is not None and os.environ.get(DISABLE_ENV, "") not in (
    "1",
    "true",
    "yes",
)

sgns_epoch = sgns_epoch_jit if NUMBA_ENABLED else sgns_epoch_py
