"""
Forward and reverse passes of the cooperative objective over one episode.
"""
import logging
from dataclasses import dataclass

import numpy as np

from config.exceptions import ContractViolationError, EpisodeShapeError, NonFiniteError
from networks.layers import embed_backward, embed_forward
from networks.models import GradientBag
from propagation.attention import propagate, propagate_backward
from propagation.models import Mode
from .losses import cross_entropy, cross_entropy_backward, full_loss, global_likelihood, local_likelihood
from .models import LossReport, ObjectiveConfig, ScheduleArm

logger = logging.getLogger(__name__)


def arm_weights(schedule_arm, alpha):
    """(global weight, local weight) of the arm's loss."""
    if schedule_arm == ScheduleArm.COOPERATIVE:
        return 1.0, float(alpha)
    if schedule_arm == ScheduleArm.LOCAL_ONLY:
        return 0.0, 1.0
    if schedule_arm == ScheduleArm.GLOBAL_ONLY:
        return 1.0, 0.0
    raise ContractViolationError(
        f"schedule arm '{schedule_arm}' has no single-step loss; expected cooperative, local_only or global_only"
    )


def frozen_tensors(schedule_arm):
    """Tensors outside the arm's loss; the optimizer leaves them as they are."""
    if schedule_arm == ScheduleArm.LOCAL_ONLY:
        return ("global_head.weight",)
    return ()


@dataclass
class ForwardState:
    cache: list
    n_support: int
    Z_query: np.ndarray
    trace: object
    global_dist: object
    local_dist: object
    report: LossReport
    weights: tuple


def forward(params, episode, prop_config, objective_config=None, schedule_arm=ScheduleArm.COOPERATIVE):
    objective_config = objective_config or ObjectiveConfig()
    if episode.query.shape[0] == 0:
        raise EpisodeShapeError("training needs at least one query per class")
    g_weight, l_weight = arm_weights(schedule_arm, objective_config.alpha)

    Z, cache = embed_forward(params, episode.inputs)
    n_support = episode.support.shape[0]
    Z_support, Z_query = Z[:n_support], Z[n_support:]

    global_dist = global_likelihood(params, Z_query, objective_config.global_metric)
    g_loss = cross_entropy(global_dist, episode.query_global, objective_config.reduction)

    n_layers = 0 if objective_config.local_on_raw_prototypes else None
    trace = propagate(params, Z_support, Z_query, prop_config, Mode.TRAIN, n_way=episode.n_way, n_layers=n_layers)
    local_dist = local_likelihood(trace.query_embeddings(), trace.final_prototypes, objective_config.local_metric)
    l_loss = cross_entropy(local_dist, episode.query_labels, objective_config.reduction)

    global_term = g_loss if g_weight else 0.0
    report = LossReport(
        global_loss=global_term,
        local_loss=l_loss,
        full_loss=full_loss(global_term, l_loss, l_weight),
        alpha=l_weight,
        query_accuracy_local=local_dist.accuracy(episode.query_labels),
    )
    if not np.isfinite(report.full_loss):
        raise NonFiniteError(f"loss is {report.full_loss}", tensor="full_loss")
    return ForwardState(cache, n_support, Z_query, trace, global_dist, local_dist, report, (g_weight, l_weight))


def loss_report(params, episode, prop_config, objective_config=None, schedule_arm=ScheduleArm.COOPERATIVE):
    return forward(params, episode, prop_config, objective_config, schedule_arm).report


def forward_backward(params, episode, prop_config, objective_config=None, schedule_arm=ScheduleArm.COOPERATIVE):
    """
    Loss of the chosen arm and its gradient for every ModelParams tensor.

    An arm whose weight on a term is zero never backpropagates that
    term, so alpha = 0 reproduces global_only gradients exactly.
    """
    objective_config = objective_config or ObjectiveConfig()
    state = forward(params, episode, prop_config, objective_config, schedule_arm)
    g_weight, l_weight = state.weights
    reduction = objective_config.reduction
    grads = GradientBag.zeros_like(params)
    d_Z = np.zeros((state.n_support + state.Z_query.shape[0], params.embedding_dim))

    if g_weight:
        d_logits = cross_entropy_backward(state.global_dist, episode.query_global, g_weight, reduction)
        d_query, d_head = objective_config.global_metric.backward(
            state.Z_query, params.global_head.weight, d_logits
        )
        grads["global_head.weight"] += d_head
        d_Z[state.n_support:] += d_query

    if l_weight:
        trace = state.trace
        d_logits = cross_entropy_backward(state.local_dist, episode.query_labels, l_weight, reduction)
        d_query, d_prototypes = objective_config.local_metric.backward(
            trace.query_embeddings(), trace.final_prototypes, d_logits
        )
        d_final = np.zeros_like(trace.final_embeddings)
        d_final[state.n_support:] = d_query
        d_Z += propagate_backward(params, trace, prop_config, d_prototypes, d_final, grads)

    embed_backward(params, state.cache, d_Z, grads)
    for name, value in grads.items():
        if not np.all(np.isfinite(value)):
            raise NonFiniteError("non-finite gradient", tensor=name)
    return state.report, grads


def predict(params, episode, prop_config, objective_config=None, n_layers=None):
    """
    Local matching against the prototypes rectified by layers_eval layers.
    The global head is never consulted and query labels are never read.
    """
    objective_config = objective_config or ObjectiveConfig()
    Z = embed_forward(params, episode.inputs)[0]
    n_support = episode.support.shape[0]
    trace = propagate(
        params, Z[:n_support], Z[n_support:], prop_config, Mode.EVAL, n_way=episode.n_way, n_layers=n_layers
    )
    return local_likelihood(trace.query_embeddings(), trace.final_prototypes, objective_config.local_metric)
