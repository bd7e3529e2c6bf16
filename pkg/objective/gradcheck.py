"""
Central finite-difference verification of forward_backward.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from episodes.models import Episode, make_rng
from networks.layers import init_params
from numerics.models import Metric, MetricSpec
from propagation.models import MinScope, PropagationConfig
from .engine import forward_backward, loss_report
from .models import ObjectiveConfig, ScheduleArm

logger = logging.getLogger(__name__)

EPSILON = 1e-4
RELATIVE_TOLERANCE = 1e-4
ABSOLUTE_FLOOR = 1e-7

CHECKED_ARMS = (ScheduleArm.COOPERATIVE, ScheduleArm.LOCAL_ONLY, ScheduleArm.GLOBAL_ONLY)
CHECKED_LOCAL_METRICS = (Metric.NEG_SQ_EUCLIDEAN, Metric.COSINE)


@dataclass
class GradientCheckResult:
    case: str
    n_checked: int
    max_abs_error: float
    max_rel_error: float
    worst_tensor: str
    passed: bool
    failures: list = field(default_factory=list)


def tiny_episode(seed=0):
    """2-way 1-shot episode with 2 queries per class over 3-dim features."""
    rng = make_rng(seed)
    means = np.array([[1.0, 0.0, 0.5], [-0.5, 1.0, 0.0]])
    support = means + 0.3 * rng.normal(size=(2, 3))
    query = np.repeat(means, 2, axis=0) + 0.3 * rng.normal(size=(4, 3))
    return Episode(
        n_way=2,
        k_shot=1,
        m_query=2,
        support=support,
        support_labels=np.array([0, 1]),
        query=query,
        query_labels=np.array([0, 0, 1, 1]),
        class_map=np.array([0, 2]),
    )


def tiny_params(seed=0, n_projections=1):
    """Linear 3 -> 2 embedder, 3 training classes, non-zero projection."""
    rng = make_rng(seed)
    params = init_params(3, [], 2, 3, rng, n_projections=n_projections)
    for projection in params.projections:
        projection.weight[:] = 0.2 * rng.normal(size=projection.weight.shape)
        projection.bias[:] = 0.1 * rng.normal(size=projection.bias.shape)
    return params


def numeric_gradient(params, name, loss_fn, eps=EPSILON):
    tensor = params.tensor(name)
    grad = np.zeros_like(tensor)
    for index in np.ndindex(tensor.shape):
        original = tensor[index]
        tensor[index] = original + eps
        upper = loss_fn()
        tensor[index] = original - eps
        lower = loss_fn()
        tensor[index] = original
        grad[index] = (upper - lower) / (2 * eps)
    return grad


def check_gradients(params, episode, prop_config, objective_config, schedule_arm, case="",
                    eps=EPSILON, rtol=RELATIVE_TOLERANCE, atol=ABSOLUTE_FLOOR):
    """
    Compare analytic gradients with central differences entry by entry.
    An entry passes when its absolute error is within `atol` or its
    error relative to the larger magnitude is within `rtol`.
    """
    _, analytic = forward_backward(params, episode, prop_config, objective_config, schedule_arm)

    def loss_fn():
        return loss_report(params, episode, prop_config, objective_config, schedule_arm).full_loss

    result = GradientCheckResult(case, 0, 0.0, 0.0, "", True)
    for name, grad in analytic.items():
        numeric = numeric_gradient(params, name, loss_fn, eps)
        abs_error = np.abs(grad - numeric)
        scale = np.maximum(np.abs(grad), np.abs(numeric))
        rel_error = np.divide(abs_error, scale, out=np.zeros_like(abs_error), where=scale > 0)
        bad = (abs_error > atol) & (rel_error > rtol)
        result.n_checked += grad.size
        result.max_abs_error = max(result.max_abs_error, float(abs_error.max(initial=0.0)))
        worst = float(np.where(abs_error > atol, rel_error, 0.0).max(initial=0.0))
        if worst >= result.max_rel_error:
            result.max_rel_error = worst
            result.worst_tensor = name
        for index in zip(*np.nonzero(bad)):
            result.failures.append(f"{name}{list(index)}: analytic {grad[index]:.9g} numeric {numeric[index]:.9g}")
    result.passed = not result.failures
    if not result.passed:
        logger.warning(f"Gradient check {case} failed on {len(result.failures)} entries")
    return result


REPULSION_SETTINGS = {
    "off": dict(repulsion_enabled=False),
    # partial mask; masked entries take -min(A) = 0 from the support block's zeros
    "on": dict(repulsion_enabled=True),
    # partial mask with a non-zero minimum routed back through its argmin entry
    "query_min": dict(repulsion_enabled=True, min_scope=MinScope.QUERY),
}


def standard_cases():
    """Every schedule arm x repulsion setting x local metric."""
    for arm in CHECKED_ARMS:
        for repulsion, settings in REPULSION_SETTINGS.items():
            for metric in CHECKED_LOCAL_METRICS:
                case = f"{arm}/repulsion={repulsion}/local={metric}"
                yield (
                    case,
                    arm,
                    PropagationConfig(layers_train=2, **settings),
                    ObjectiveConfig(alpha=0.5, local_metric=MetricSpec(metric)),
                )


def run_gradcheck(seed=0):
    results = []
    episode = tiny_episode(seed)
    for case, arm, prop_config, objective_config in standard_cases():
        params = tiny_params(seed, prop_config.n_projections)
        result = check_gradients(params, episode, prop_config, objective_config, arm, case=case)
        logger.info(f"{case}: max relative error {result.max_rel_error:.3e} ({result.worst_tensor or '-'})")
        results.append(result)
    return results
