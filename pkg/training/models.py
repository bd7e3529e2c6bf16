"""
Training and evaluation configuration, optimizer state and reports.
"""
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from config.exceptions import ConfigError
from networks.models import GradientBag
from objective.models import ScheduleArm


@dataclass(frozen=True)
class EpisodeShape:
    n_way: int = 5
    k_shot: int = 1
    m_query: int = 15

    def __post_init__(self):
        if self.n_way < 1 or self.k_shot < 1 or self.m_query < 0:
            raise ConfigError(
                f"episode shape needs n_way >= 1, k_shot >= 1, m_query >= 0; got "
                f"{self.n_way}/{self.k_shot}/{self.m_query}"
            )

    def __str__(self):
        return f"{self.n_way}-way {self.k_shot}-shot {self.m_query}-query"


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-3
    decay_factor: float = 10.0
    decay_every: int = 1000
    max_iters: int = 3000
    seed: int = 0
    schedule_arm: str = ScheduleArm.COOPERATIVE
    episode: EpisodeShape = field(default_factory=EpisodeShape)
    log_every: int = 100
    eval_every: int = 500
    val_episodes: int = 100

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"train.lr0 must be > 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"train.momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"train.weight_decay must be >= 0, got {self.weight_decay}")
        if not self.decay_factor > 0:
            raise ConfigError(f"train.decay_factor must be > 0, got {self.decay_factor}")
        if self.decay_every < 1:
            raise ConfigError(f"train.decay_every must be >= 1, got {self.decay_every}")
        if self.max_iters < 0:
            raise ConfigError(f"train.max_iters must be >= 0, got {self.max_iters}")
        if self.schedule_arm not in ScheduleArm.values:
            raise ConfigError(f"train.arm must be one of {ScheduleArm.values}, got '{self.schedule_arm}'")

    def learning_rate(self, iteration):
        """lr0 / decay_factor^floor(iteration / decay_every)."""
        return self.lr0 / self.decay_factor ** (iteration // self.decay_every)

    def arm_at(self, iteration):
        """pretrain_finetune runs global_only for the first half, then local_only."""
        if self.schedule_arm != ScheduleArm.PRETRAIN_FINETUNE:
            return self.schedule_arm
        if iteration < self.max_iters // 2:
            return ScheduleArm.GLOBAL_ONLY
        return ScheduleArm.LOCAL_ONLY


@dataclass
class OptimizerState:
    velocity: GradientBag
    iteration: int = 0
    lr: float = 0.1

    @classmethod
    def for_params(cls, params, config):
        return cls(velocity=GradientBag.zeros_like(params), iteration=0, lr=config.learning_rate(0))


@dataclass
class EvalReport:
    n_episodes: int
    accuracies: list
    mean: float
    std: float
    ci95: float
    fingerprint: str
    n_way: int = 0
    k_shot: int = 0
    m_query: int = 0
    n_layers: int = 0

    @classmethod
    def from_accuracies(cls, accuracies, fingerprint, shape=None, n_layers=0):
        """Sample std (n - 1 divisor); a single episode gets std = ci95 = 0."""
        accuracies = [float(a) for a in accuracies]
        n = len(accuracies)
        mean = float(np.mean(accuracies)) if n else 0.0
        std = float(np.std(accuracies, ddof=1)) if n > 1 else 0.0
        shape = shape or EpisodeShape()
        return cls(
            n_episodes=n,
            accuracies=accuracies,
            mean=mean,
            std=std,
            ci95=confidence_interval(std, n),
            fingerprint=fingerprint,
            n_way=shape.n_way,
            k_shot=shape.k_shot,
            m_query=shape.m_query,
            n_layers=n_layers,
        )


def confidence_interval(std, n):
    return 1.96 * std / math.sqrt(n) if n > 1 else 0.0


def fingerprint(*parts):
    """Short stable digest of configuration values and checkpoint checksums."""
    payload = json.dumps([str(part) for part in parts], separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class TrainResult:
    params: object
    best_params: object
    log: list
    best_val_accuracy: float = float("nan")
    best_iteration: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an ablation or sweep needs to train and evaluate one arm."""
    model: object
    train: TrainConfig
    propagation: object
    objective: object
    eval_shape: EpisodeShape = field(default_factory=EpisodeShape)
    eval_episodes: int = 600
    eval_seed: int = 0
    threads: int = 1
    metric_pairs: tuple = (("cosine", "neg_sq_euclidean"),)
    alphas: tuple = (0.0, 0.01, 0.1, 1.0, 10.0)
    n_ways: tuple = (5,)
    m_queries: tuple = (15,)
