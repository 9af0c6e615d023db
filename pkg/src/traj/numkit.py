"""Small dense linear-algebra kernel shared by every other module.

Everything is float64 and eagerly validated: gradient checking at 1e-4
relative tolerance is not reliable in single precision, so the whole
reference path stays in doubles. Vectors are 1-D ndarrays, matrices are
2-D row-major ndarrays; one-hot vectors are never materialized here
(callers pass column indices instead).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "vec",
    "mat",
    "matvec",
    "sigmoid",
    "hadamard",
    "l2_distance",
    "concat",
    "GradCheckReport",
    "finite_diff_check",
]


def vec(values: Iterable[float]) -> np.ndarray:
    """Build a 1-D float64 vector and reject non-finite entries."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def mat(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Build a 2-D float64 matrix and reject non-finite entries."""
    m = np.asarray(values, dtype=np.float64)
    if rows is not None and cols is not None:
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Dense matrix-vector product. m (r, c), v (c,) -> (r,)."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ValueError(
            f"matvec dimension mismatch: matrix {m.shape} vs vector {v.shape}"
        )
    return m @ v


def sigmoid(x: np.ndarray | float) -> np.ndarray:
    """Elementwise logistic function, stable for large |x| (no overflow)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equal-length vectors."""
    if a.shape != b.shape:
        raise ValueError(f"hadamard length mismatch: {a.shape} vs {b.shape}")
    return a * b


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean norm of (a - b)."""
    if a.shape != b.shape:
        raise ValueError(f"l2_distance length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def concat(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a followed by b."""
    return np.concatenate([np.atleast_1d(a), np.atleast_1d(b)])


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    max_rel_error: float
    worst_param_index: int
    passed: bool

    def __str__(self) -> str:  # handy in assertion messages
        status = "passed" if self.passed else "FAILED"
        return (
            f"gradient check {status}: max relative error {self.max_rel_error:.3e} "
            f"at flat parameter index {self.worst_param_index}"
        )


def finite_diff_check(
    loss_fn: Callable[[Sequence[np.ndarray]], float],
    params: Sequence[np.ndarray],
    analytic_grads: Sequence[np.ndarray],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    `loss_fn` takes the full list of parameter arrays and returns a scalar;
    it must be deterministic. Every coordinate of every array is perturbed
    by +/- eps and the relative error uses max(|analytic|, |numeric|, 1e-8)
    as denominator, so zero gradients on flat directions stay cheap to pass.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if len(params) != len(analytic_grads):
        raise ValueError("params and analytic_grads must have the same layout")

    work = [np.array(p, dtype=np.float64, copy=True) for p in params]
    max_rel = 0.0
    worst = -1
    flat_index = 0
    for t, (p, g) in enumerate(zip(work, analytic_grads)):
        if p.shape != np.shape(g):
            raise ValueError(
                f"gradient shape mismatch for tensor {t}: {p.shape} vs {np.shape(g)}"
            )
        p_flat = p.reshape(-1)
        g_flat = np.asarray(g, dtype=np.float64).reshape(-1)
        for k in range(p_flat.size):
            orig = p_flat[k]
            p_flat[k] = orig + eps
            f_plus = float(loss_fn(work))
            p_flat[k] = orig - eps
            f_minus = float(loss_fn(work))
            p_flat[k] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValueError(
                    f"loss is non-finite while perturbing flat index {flat_index}"
                )
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(g_flat[k]), abs(numeric), 1e-8)
            rel = abs(g_flat[k] - numeric) / denom
            if rel > max_rel:
                max_rel = rel
                worst = flat_index
            flat_index += 1
    return GradCheckReport(max_rel_error=max_rel, worst_param_index=worst, passed=max_rel < tol)
