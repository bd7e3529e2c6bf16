import numpy as np

from config.exceptions import ContractViolationError, DimensionError
from numerics.models import Metric, MetricSpec
from numerics.similarity import as_matrix, log_softmax, softmax
from .models import LossReduction, PredictionDistribution

COSINE = MetricSpec(Metric.COSINE)
NEG_SQ_EUCLIDEAN = MetricSpec(Metric.NEG_SQ_EUCLIDEAN)


def _distribution(logits):
    return PredictionDistribution(softmax(logits, axis=1), log_softmax(logits, axis=1), logits)


def global_likelihood(params, Z_query, metric=COSINE):
    """Softmax over kappa(z_i, w_k) for every training class k."""
    Z_query = as_matrix(Z_query, "Z_query")
    weights = params.global_head.weight
    if Z_query.shape[1] != weights.shape[1]:
        raise DimensionError(f"embedding width {Z_query.shape[1]} != global head width {weights.shape[1]}")
    return _distribution(metric.similarity(Z_query, weights))


def local_likelihood(Z_query, prototypes, metric=NEG_SQ_EUCLIDEAN):
    """Softmax over kappa(z_i, c_n) for the N episode prototypes."""
    Z_query = as_matrix(Z_query, "Z_query")
    prototypes = as_matrix(prototypes, "prototypes")
    if Z_query.shape[1] != prototypes.shape[1]:
        raise DimensionError(f"query width {Z_query.shape[1]} != prototype width {prototypes.shape[1]}")
    return _distribution(metric.similarity(Z_query, prototypes))


def cross_entropy(dist, labels, reduction=LossReduction.MEAN):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != dist.probs.shape[0]:
        raise DimensionError(f"{labels.shape[0]} labels for {dist.probs.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= dist.n_classes):
        raise ContractViolationError(f"labels must lie in [0, {dist.n_classes})")
    picked = -dist.log_probs[np.arange(labels.shape[0]), labels]
    total = float(picked.sum())
    if reduction == LossReduction.SUM:
        return total
    return total / labels.shape[0] if labels.shape[0] else 0.0


def global_loss(dist, global_labels, reduction=LossReduction.MEAN):
    return cross_entropy(dist, global_labels, reduction)


def local_loss(dist, local_labels, reduction=LossReduction.MEAN):
    return cross_entropy(dist, local_labels, reduction)


def full_loss(global_value, local_value, alpha):
    if alpha < 0:
        raise ContractViolationError(f"alpha must be >= 0, got {alpha}")
    return global_value + alpha * local_value


def cross_entropy_backward(dist, labels, weight=1.0, reduction=LossReduction.MEAN):
    """d(weight * cross_entropy)/d(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    grad = dist.probs.copy()
    grad[np.arange(labels.shape[0]), labels] -= 1.0
    if reduction == LossReduction.MEAN and labels.shape[0]:
        grad /= labels.shape[0]
    return weight * grad
