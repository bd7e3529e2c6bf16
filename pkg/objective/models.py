from dataclasses import dataclass, field

import numpy as np
from django.db import models

from config.exceptions import ConfigError
from numerics.models import Metric, MetricSpec


class ScheduleArm(models.TextChoices):
    COOPERATIVE = "cooperative", "cooperative"
    PRETRAIN_FINETUNE = "pretrain_finetune", "pretrain_finetune"
    LOCAL_ONLY = "local_only", "local_only"
    GLOBAL_ONLY = "global_only", "global_only"


class LossReduction(models.TextChoices):
    MEAN = "mean", "mean"
    SUM = "sum", "sum"


@dataclass(frozen=True)
class ObjectiveConfig:
    alpha: float = 0.1
    global_metric: MetricSpec = field(default_factory=lambda: MetricSpec(Metric.COSINE))
    local_metric: MetricSpec = field(default_factory=lambda: MetricSpec(Metric.NEG_SQ_EUCLIDEAN))
    reduction: str = LossReduction.MEAN
    local_on_raw_prototypes: bool = False

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.reduction not in LossReduction.values:
            raise ConfigError(f"objective.reduction must be one of {LossReduction.values}")


class PredictionDistribution:
    """Row-stochastic class probabilities; argmax ties go to the lowest index."""

    def __init__(self, probs, log_probs=None, logits=None):
        self.probs = np.asarray(probs, dtype=np.float64)
        self.log_probs = np.log(self.probs) if log_probs is None else log_probs
        self.logits = logits

    @property
    def n_classes(self):
        return self.probs.shape[1]

    @property
    def predicted(self):
        return self.probs.argmax(axis=1)

    def accuracy(self, labels):
        labels = np.asarray(labels)
        if labels.size == 0:
            return 0.0
        return float(np.mean(self.predicted == labels))


@dataclass
class LossReport:
    """
    Terms of the schedule arm that produced it: full_loss is always
    global_loss + alpha * local_loss. A term the arm switches off is 0
    (global) or carries alpha = 0 (local).
    """
    global_loss: float
    local_loss: float
    full_loss: float
    alpha: float
    query_accuracy_local: float
