from dataclasses import dataclass

from django.db import models

from config.exceptions import ConfigError


class Metric(models.TextChoices):
    COSINE = "cosine", "cosine"
    NEG_SQ_EUCLIDEAN = "neg_sq_euclidean", "neg_sq_euclidean"


@dataclass(frozen=True)
class MetricSpec:
    """
    A similarity kappa(a, b) together with its knobs.

    `squared` only matters for NEG_SQ_EUCLIDEAN: False switches to the
    unsquared negative Euclidean distance. Similarities are divided by
    `temperature` before they reach a softmax.
    """
    kind: str = Metric.NEG_SQ_EUCLIDEAN
    squared: bool = True
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in Metric.values:
            raise ConfigError(f"Unknown metric '{self.kind}'; expected one of {Metric.values}")
        if not self.temperature > 0:
            raise ConfigError(f"Metric temperature must be > 0, got {self.temperature}")

    def similarity(self, A, B):
        from .similarity import pairwise_similarity
        return pairwise_similarity(A, B, self.kind, squared=self.squared, temperature=self.temperature)

    def backward(self, A, B, grad):
        from .similarity import pairwise_similarity_backward
        return pairwise_similarity_backward(
            A, B, grad, self.kind, squared=self.squared, temperature=self.temperature
        )
