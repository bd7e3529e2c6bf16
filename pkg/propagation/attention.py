"""
Stacked prototype rectification.

One layer: attention of the prototypes C over the episode embeddings
Z = [Z^S; Z^Q], with the support block hard-coded to each class's own
shots, rows renormalized, optionally repulsive-masked, then
C <- h(A Z) + A Z and Z <- h(Z) + Z through the residual projection.
"""
import logging

import numpy as np

from config.exceptions import ContractViolationError, DimensionError
from networks.layers import project_backward, project_forward
from numerics.similarity import as_matrix, softmax, softmax_backward
from .models import LayerRecord, MinScope, MaskSource, Mode, PropagationTrace, SoftmaxAxis

logger = logging.getLogger(__name__)


def initial_prototypes(Z_support, n_way, k_shot):
    """Row n is the mean of support rows [K*n, K*(n+1))."""
    Z_support = as_matrix(Z_support, "Z_support")
    if Z_support.shape[0] != n_way * k_shot:
        raise DimensionError(
            f"expected {n_way * k_shot} support rows for {n_way}-way {k_shot}-shot, got {Z_support.shape[0]}"
        )
    # Same product the support-only attention computes, so both agree bit for bit
    return (hardcode_support(n_way, k_shot) / k_shot) @ Z_support


def hardcode_support(n_way, k_shot):
    """N x NK matrix with ones on each class's own support block."""
    return np.kron(np.eye(n_way), np.ones((1, k_shot)))


def repulsion_threshold(constant, n_way, n_layers, layer_index):
    """beta_l = c / (N (L - l)) for l in 0..L-1."""
    if not 0 <= layer_index < n_layers:
        raise ContractViolationError(
            f"layer index {layer_index} outside 0..{n_layers - 1}; beta would divide by zero"
        )
    return constant / (n_way * (n_layers - layer_index))


def apply_repulsion(A, threshold, min_scope=MinScope.GLOBAL, compare=None, n_support=0):
    """
    Replace entries below `threshold` with -min(A). The comparison runs on
    `compare` (A itself by default). Returns (masked, mask, min, argmin).
    The query scope takes the minimum over columns n_support onward and
    falls back to the global minimum when there are no query columns.
    """
    compare = A if compare is None else compare
    mask = compare < threshold
    if min_scope == MinScope.ROW:
        min_index = A.argmin(axis=1)
        min_value = A[np.arange(A.shape[0]), min_index]
        masked = np.where(mask, -min_value[:, None], A)
        return masked, mask, min_value, tuple(min_index.tolist())
    if min_scope == MinScope.QUERY and A.shape[1] > n_support:
        row, column = np.unravel_index(int(A[:, n_support:].argmin()), (A.shape[0], A.shape[1] - n_support))
        min_index = (int(row), int(column) + n_support)
    else:
        min_index = np.unravel_index(int(A.argmin()), A.shape)
    min_value = np.asarray(A[min_index])
    masked = np.where(mask, -min_value, A)
    return masked, mask, min_value, tuple(int(i) for i in min_index)


def attention_step(C, Z_support, Z_query, config, layer_index, n_layers=None, repulsion=True):
    """
    One rectification attention. Returns a LayerRecord whose
    `masked_attention` is A and `rectified` is C* = A [Z^S; Z^Q].
    """
    C = as_matrix(C, "C")
    Z_support = as_matrix(Z_support, "Z_support")
    Z_query = as_matrix(Z_query, "Z_query")
    n_way = C.shape[0]
    if Z_support.shape[0] % n_way or Z_support.shape[1] != C.shape[1] or Z_query.shape[1] != C.shape[1]:
        raise DimensionError(
            f"inconsistent shapes C={C.shape}, Z_support={Z_support.shape}, Z_query={Z_query.shape}"
        )
    k_shot = Z_support.shape[0] // n_way
    n_layers = config.layers_train if n_layers is None else n_layers
    if not 0 <= layer_index < n_layers:
        raise ContractViolationError(f"layer index {layer_index} outside 0..{n_layers - 1}")

    if Z_query.shape[0]:
        similarity = config.metric.similarity(C, Z_query)
        axis = 0 if config.softmax_axis == SoftmaxAxis.COLUMN else 1
        query_attention = softmax(similarity, axis=axis)
    else:
        similarity = np.zeros((n_way, 0))
        query_attention = np.zeros((n_way, 0))

    scores = np.hstack([hardcode_support(n_way, k_shot), query_attention])
    row_sums = scores.sum(axis=1)
    attention = scores / row_sums[:, None]

    record = LayerRecord(
        layer_index=layer_index,
        similarity=similarity,
        query_attention=query_attention,
        scores=scores,
        row_sums=row_sums,
        attention=attention,
        masked_attention=attention,
        rectified=None,
    )

    if repulsion:
        threshold = repulsion_threshold(config.repulsion_constant, n_way, n_layers, layer_index)
        compare = scores if config.mask_source == MaskSource.SCORES else attention
        masked, mask, min_value, min_index = apply_repulsion(
            attention, threshold, config.min_scope, compare, n_support=n_way * k_shot
        )
        if mask.all():
            logger.debug(f"Layer {layer_index}: threshold {threshold:.4g} masks every attention entry")
        record.threshold = threshold
        record.mask = mask
        record.min_value = min_value
        record.min_index = min_index
        record.masked_attention = masked

    record.rectified = record.masked_attention @ np.vstack([Z_support, Z_query])
    return record


def propagate(params, Z_support, Z_query, config, mode=Mode.EVAL, *, n_way, n_layers=None):
    """
    Run L rectification layers (L from `mode` unless `n_layers` is given)
    and return the full trace. Query labels never enter this computation.
    """
    Z_support = as_matrix(Z_support, "Z_support")
    Z_query = as_matrix(Z_query, "Z_query")
    if n_way < 1 or Z_support.shape[0] % n_way:
        raise DimensionError(f"{Z_support.shape[0]} support rows do not split into {n_way} classes")
    k_shot = Z_support.shape[0] // n_way
    n_layers = config.layers_for(mode) if n_layers is None else n_layers
    repulsion = config.repulsion_active(mode)

    C = initial_prototypes(Z_support, n_way, k_shot)
    Z = np.vstack([Z_support, Z_query])
    trace = PropagationTrace(mode=mode, n_way=n_way, k_shot=k_shot, prototypes=[C], embeddings=[Z])
    n_support = n_way * k_shot

    for layer_index in range(n_layers):
        record = attention_step(
            C, Z[:n_support], Z[n_support:], config, layer_index, n_layers=n_layers, repulsion=repulsion
        )
        projection = params.projection_for(layer_index)
        C, record.prototype_pre = project_forward(projection, record.rectified, config.projection_relu)
        Z, record.embedding_pre = project_forward(projection, Z, config.projection_relu)
        trace.layers.append(record)
        trace.prototypes.append(C)
        trace.embeddings.append(Z)

    return trace


def propagate_backward(params, trace, config, d_prototypes, d_embeddings, grads):
    """
    Backpropagate gradients on the final prototypes C_L and final
    embeddings Z_L through every layer of `trace`. Projection gradients
    are accumulated into `grads`; returns the gradient on Z_0.

    The repulsive mask is a constant selection: surviving entries pass
    their gradient through, masked entries route theirs to the argmin
    entry that supplied -min(A).
    """
    n_support = trace.n_support
    d_C = np.array(d_prototypes, dtype=np.float64)
    d_Z = np.array(d_embeddings, dtype=np.float64)
    relu = config.projection_relu
    axis = 0 if config.softmax_axis == SoftmaxAxis.COLUMN else 1

    for record in reversed(trace.layers):
        index = record.layer_index
        C_l = trace.prototypes[index]
        Z_l = trace.embeddings[index]

        d_Z_l = project_backward(params, index, Z_l, record.embedding_pre, d_Z, grads, relu)
        d_rectified = project_backward(params, index, record.rectified, record.prototype_pre, d_C, grads, relu)

        d_masked = d_rectified @ Z_l.T
        d_Z_l += record.masked_attention.T @ d_rectified

        if record.mask is None:
            d_attention = d_masked
        else:
            d_attention = np.where(record.mask, 0.0, d_masked)
            routed = np.where(record.mask, d_masked, 0.0)
            if np.ndim(record.min_value) == 0:
                d_attention[record.min_index] -= routed.sum()
            else:
                rows = np.arange(d_attention.shape[0])
                d_attention[rows, list(record.min_index)] -= routed.sum(axis=1)

        # attention = scores / row_sums; only the query block of scores is variable
        d_scores = (
            d_attention - (d_attention * record.attention).sum(axis=1, keepdims=True)
        ) / record.row_sums[:, None]
        d_query_attention = d_scores[:, n_support:]

        d_C = np.zeros_like(C_l)
        if d_query_attention.shape[1]:
            d_similarity = softmax_backward(record.query_attention, d_query_attention, axis=axis)
            d_C, d_Z_query = config.metric.backward(C_l, Z_l[n_support:], d_similarity)
            d_Z_l[n_support:] += d_Z_query
        d_Z = d_Z_l

    # C_0 is the per-class mean of the support block of Z_0
    d_Z[:n_support] += np.repeat(d_C / trace.k_shot, trace.k_shot, axis=0)
    return d_Z
