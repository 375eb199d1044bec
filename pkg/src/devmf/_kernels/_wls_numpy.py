"""Pure-NumPy fallback for the batched weighted least-squares kernel.

Same contract as the compiled version: shared design matrix, per-task weights
and responses, ridge escalation on ill-conditioned normal equations. The
condition estimate here comes from a symmetric eigendecomposition of the
stacked normal matrices, which is the main reason this path is slower.
"""

from __future__ import annotations

import numpy as np


class KernelSolveError(ArithmeticError):
    """Normal equations remained unsolvable after ridge escalation."""


def batched_wls(design, responses, weights, jitter, cond_limit=1e12):
    """Solve argmin_b sum_l w[r,l] (z[r,l] - design[l]@b)^2 for every row r.

    design: (k, q); responses, weights: (m, k). Returns (m, q).
    """
    design = np.asarray(design, dtype=float)
    responses = np.asarray(responses, dtype=float)
    weights = np.asarray(weights, dtype=float)
    k, q = design.shape
    if responses.shape[1] != k or weights.shape != responses.shape:
        raise ValueError("design/response/weight shapes do not line up")

    gram = np.einsum("mk,ka,kb->mab", weights, design, design, optimize=True)
    rhs = np.einsum("mk,ka->ma", weights * responses, design, optimize=True)

    trace = np.trace(gram, axis1=1, axis2=2)
    if np.any(trace <= 0):
        bad = int(np.argmax(trace <= 0))
        raise KernelSolveError(f"all-zero weighted system in task {bad}")

    eye = np.eye(q)
    ridge = jitter * trace / q
    for attempt in range(4):
        evals = np.linalg.eigvalsh(gram)
        ill = (evals[:, 0] <= 0) | (evals[:, -1] > cond_limit * evals[:, 0])
        if not ill.any():
            break
        if attempt == 3:
            break
        gram[ill] += ridge[ill, None, None] * eye
        ridge = ridge * 100.0
    try:
        return np.linalg.solve(gram, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise KernelSolveError(f"weighted normal equations unsolvable: {exc}") from exc
