"""
Dense similarity primitives and numerically stable softmax.

Matrices are 2-D float64 numpy arrays; every public function returns
fresh arrays and leaves its inputs untouched. Each forward operation that
sits inside the trained graph has a matching `*_backward` that maps the
gradient of the output back onto the inputs.
"""
import numpy as np

from config.exceptions import DimensionError, DomainError, NonFiniteError
from .models import Metric


def as_vector(x, name="vector"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def as_matrix(m, name="matrix"):
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def ensure_finite(m, name="matrix"):
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries", tensor=name)
    return m


def _same_length(a, b, op):
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"{op}: operand lengths differ ({a.shape[0]} vs {b.shape[0]})")


def cosine(a, b):
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    _same_length(a, b, "cosine")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0:
        raise DomainError("cosine: operand 'a' has zero norm")
    if norm_b == 0:
        raise DomainError("cosine: operand 'b' has zero norm")
    return float(np.dot(a, b) / (norm_a * norm_b))


def neg_sq_euclidean(a, b):
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    _same_length(a, b, "neg_sq_euclidean")
    diff = a - b
    return float(-np.dot(diff, diff))


def softmax(m, axis=1):
    m = ensure_finite(as_matrix(m), "softmax input")
    shifted = m - m.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(m, axis=1):
    m = ensure_finite(as_matrix(m), "log_softmax input")
    shifted = m - m.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_rows(m):
    return softmax(m, axis=1)


def softmax_backward(probs, grad, axis=1):
    """Gradient w.r.t. the logits of softmax(logits, axis), given d/d(probs)."""
    return probs * (grad - (grad * probs).sum(axis=axis, keepdims=True))


def _row_norms(m, name):
    norms = np.linalg.norm(m, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DomainError(f"cosine: row {int(zero[0])} of '{name}' has zero norm")
    return norms


def _pair_differences(A, B):
    return A[:, None, :] - B[None, :, :]


def pairwise_similarity(A, B, metric, *, squared=True, temperature=1.0):
    """
    output[i][j] = kappa(row_i(A), row_j(B)) / temperature, shape (A.rows, B.rows).
    """
    A = ensure_finite(as_matrix(A, "A"), "A")
    B = ensure_finite(as_matrix(B, "B"), "B")
    if A.shape[1] != B.shape[1]:
        raise DimensionError(
            f"pairwise_similarity: column counts differ ({A.shape[1]} vs {B.shape[1]})"
        )

    if metric == Metric.COSINE:
        a_hat = A / _row_norms(A, "A")[:, None]
        b_hat = B / _row_norms(B, "B")[:, None]
        out = a_hat @ b_hat.T
    elif metric == Metric.NEG_SQ_EUCLIDEAN:
        diff = _pair_differences(A, B)
        dist_sq = np.einsum("ijk,ijk->ij", diff, diff)
        out = -dist_sq if squared else -np.sqrt(dist_sq)
    else:
        raise DomainError(f"Unknown metric '{metric}'")

    if temperature != 1.0:
        out = out / temperature
    return out


def pairwise_similarity_backward(A, B, grad, metric, *, squared=True, temperature=1.0):
    """Return (dA, dB) for output = pairwise_similarity(A, B, ...)."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    g = np.asarray(grad, dtype=np.float64)
    if temperature != 1.0:
        g = g / temperature

    if metric == Metric.COSINE:
        norm_a = _row_norms(A, "A")
        norm_b = _row_norms(B, "B")
        a_hat = A / norm_a[:, None]
        b_hat = B / norm_b[:, None]
        d_a_hat = g @ b_hat
        d_b_hat = g.T @ a_hat
        dA = (d_a_hat - (d_a_hat * a_hat).sum(axis=1, keepdims=True) * a_hat) / norm_a[:, None]
        dB = (d_b_hat - (d_b_hat * b_hat).sum(axis=1, keepdims=True) * b_hat) / norm_b[:, None]
        return dA, dB

    if metric == Metric.NEG_SQ_EUCLIDEAN:
        diff = _pair_differences(A, B)
        if squared:
            d_dist_sq = -g
        else:
            dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            # d(-sqrt(D))/dD is unbounded at D = 0; coincident pairs get no gradient
            safe = np.where(dist > 0, dist, 1.0)
            d_dist_sq = np.where(dist > 0, -g * 0.5 / safe, 0.0)
        dA = 2.0 * np.einsum("ij,ijk->ik", d_dist_sq, diff)
        dB = -2.0 * np.einsum("ij,ijk->jk", d_dist_sq, diff)
        return dA, dB

    raise DomainError(f"Unknown metric '{metric}'")
