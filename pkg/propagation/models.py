from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from django.db import models

from config.exceptions import ConfigError
from numerics.models import Metric, MetricSpec


class Mode(models.TextChoices):
    TRAIN = "train", "train"
    EVAL = "eval", "eval"


class SoftmaxAxis(models.TextChoices):
    # column: each query's scores are normalized over the N prototypes
    COLUMN = "column", "column"
    ROW = "row", "row"


class MinScope(models.TextChoices):
    GLOBAL = "global", "global"
    ROW = "row", "row"
    # minimum over the query block only, skipping the support block's structural zeros
    QUERY = "query", "query"


class RepulsionPhase(models.TextChoices):
    BOTH = "both", "both"
    TRAIN = "train", "train"
    EVAL = "eval", "eval"


class MaskSource(models.TextChoices):
    RENORMALIZED = "renormalized", "renormalized"
    SCORES = "scores", "scores"


@dataclass(frozen=True)
class PropagationConfig:
    layers_train: int = 2
    layers_eval: int = 10
    repulsion_constant: float = 1.5
    repulsion_enabled: bool = True
    repulsion_apply_in: str = RepulsionPhase.BOTH
    min_scope: str = MinScope.GLOBAL
    mask_source: str = MaskSource.SCORES
    softmax_axis: str = SoftmaxAxis.COLUMN
    metric: MetricSpec = field(default_factory=lambda: MetricSpec(Metric.NEG_SQ_EUCLIDEAN))
    share_projection: bool = True
    projection_relu: bool = False

    def __post_init__(self):
        # 0 layers is the inductive setting: raw support means, no propagation
        if self.layers_train < 0 or self.layers_eval < 0:
            raise ConfigError("propagation layer counts must be >= 0")
        if not self.repulsion_constant > 0:
            raise ConfigError(f"repulsion constant must be > 0, got {self.repulsion_constant}")
        for value, choices, key in (
            (self.repulsion_apply_in, RepulsionPhase, "repulsion.apply_in"),
            (self.min_scope, MinScope, "repulsion.min_scope"),
            (self.mask_source, MaskSource, "repulsion.mask_source"),
            (self.softmax_axis, SoftmaxAxis, "attention.softmax_axis"),
        ):
            if value not in choices.values:
                raise ConfigError(f"{key} must be one of {choices.values}, got '{value}'")

    def layers_for(self, mode):
        return self.layers_train if mode == Mode.TRAIN else self.layers_eval

    def repulsion_active(self, mode):
        if not self.repulsion_enabled:
            return False
        return self.repulsion_apply_in == RepulsionPhase.BOTH or self.repulsion_apply_in == mode

    @property
    def n_projections(self):
        if self.share_projection:
            return 1
        return max(self.layers_train, self.layers_eval, 1)


@dataclass
class LayerRecord:
    """Everything one attention + residual layer computed, kept for backprop and inspection."""
    layer_index: int
    similarity: np.ndarray  # kappa(C, Z^Q), N x NM
    query_attention: np.ndarray  # A^Q after softmax
    scores: np.ndarray  # [A^S, A^Q] before row renormalization
    row_sums: np.ndarray
    attention: np.ndarray  # row-renormalized, before masking
    masked_attention: np.ndarray  # what multiplies Z
    rectified: np.ndarray  # C* = A Z
    threshold: Optional[float] = None
    mask: Optional[np.ndarray] = None
    min_value: Optional[np.ndarray] = None
    min_index: Optional[tuple] = None
    prototype_pre: Optional[np.ndarray] = None
    embedding_pre: Optional[np.ndarray] = None


@dataclass
class PropagationTrace:
    """
    prototypes[l] / embeddings[l] are C_l / Z_l for l = 0..L; layers[l]
    holds the attention of layer l. prototypes[-1] is what prediction uses.
    """
    mode: str
    n_way: int
    k_shot: int
    prototypes: list = field(default_factory=list)
    embeddings: list = field(default_factory=list)
    layers: list = field(default_factory=list)

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def n_support(self):
        return self.n_way * self.k_shot

    @property
    def final_prototypes(self):
        return self.prototypes[-1]

    @property
    def final_embeddings(self):
        return self.embeddings[-1]

    def query_embeddings(self, layer=-1):
        return self.embeddings[layer][self.n_support:]
