"""
Domain objects for labeled feature datasets and few-shot episodes.
"""
from dataclasses import dataclass, field

import numpy as np
from django.db import models

from config.exceptions import EpisodeShapeError, SplitViolationError, DimensionError, NonFiniteError


class Split(models.TextChoices):
    TRAIN = "train", "train"
    VAL = "val", "val"
    TEST = "test", "test"


class RngStream(models.IntegerChoices):
    """
    Sub-streams of the single run seed. A stream's generator is
    PCG64 seeded with SeedSequence(entropy=seed, spawn_key=(stream, *index)).
    """
    SYNTHETIC = 1, "synthetic"
    INIT = 2, "init"
    TRAIN = 3, "train"
    VALIDATION = 4, "validation"
    EVALUATION = 5, "evaluation"
    INSPECT = 6, "inspect"


def make_rng(seed, *spawn_key):
    """Deterministic numpy Generator for `seed` and an optional sub-stream key."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(np.random.PCG64(sequence))


@dataclass
class DatasetClass:
    class_id: int
    split: str
    features: np.ndarray

    @property
    def n_rows(self):
        return self.features.shape[0]


@dataclass
class Dataset:
    """
    Labeled feature vectors grouped by class; each class belongs to
    exactly one split, so the splits have disjoint label spaces.
    """
    name: str
    dim: int
    classes: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        seen = {}
        for cls in self.classes:
            if cls.split not in Split.values:
                raise SplitViolationError(f"class {cls.class_id}: unknown split '{cls.split}'")
            if cls.class_id in seen:
                raise SplitViolationError(
                    f"class {cls.class_id} appears in splits '{seen[cls.class_id]}' and '{cls.split}'"
                )
            seen[cls.class_id] = cls.split
            if cls.features.ndim != 2 or cls.features.shape[1] != self.dim:
                raise DimensionError(
                    f"class {cls.class_id}: feature rows must have {self.dim} values, "
                    f"got shape {cls.features.shape}"
                )
            if not np.all(np.isfinite(cls.features)):
                raise NonFiniteError(f"class {cls.class_id} has non-finite features")

    def split_classes(self, split):
        return sorted((c for c in self.classes if c.split == split), key=lambda c: c.class_id)

    @property
    def n_train_classes(self):
        return len(self.split_classes(Split.TRAIN))

    def label_index(self, class_id):
        """
        Position of a class among its split's classes (ordered by id).
        For train classes this is the global label, i.e. the global-head row.
        """
        for cls in self.classes:
            if cls.class_id == class_id:
                ids = [c.class_id for c in self.split_classes(cls.split)]
                return ids.index(class_id)
        raise KeyError(class_id)

    def check_episode_shape(self, split, n_way, k_shot, m_query):
        classes = self.split_classes(split)
        if len(classes) < n_way:
            raise EpisodeShapeError(
                f"split '{split}' has {len(classes)} classes, cannot draw {n_way}-way episodes"
            )
        short = [c.class_id for c in classes if c.n_rows < k_shot + m_query]
        if short:
            raise EpisodeShapeError(
                f"split '{split}': classes {short} have fewer than "
                f"k_shot + m_query = {k_shot + m_query} samples"
            )


@dataclass
class Episode:
    """
    One N-way K-shot task. Support rows are block-ordered by local label:
    local class n occupies support indices [K*n, K*(n+1)). Queries are
    ordered by local label as well, M per class.
    """
    n_way: int
    k_shot: int
    m_query: int
    support: np.ndarray
    support_labels: np.ndarray
    query: np.ndarray
    query_labels: np.ndarray
    class_map: np.ndarray
    support_rows: list = field(default_factory=list)
    query_rows: list = field(default_factory=list)

    @property
    def query_global(self):
        return self.class_map[self.query_labels]

    @property
    def inputs(self):
        """Support rows followed by query rows, the order propagation sees."""
        return np.vstack([self.support, self.query])

    def relabel(self, permutation):
        """
        Episode with local class n renamed to permutation[n]; rows are
        re-sorted so the block-contiguous support layout still holds.
        """
        permutation = np.asarray(permutation)
        inverse = np.argsort(permutation)
        s_order = np.concatenate(
            [np.flatnonzero(self.support_labels == inverse[n]) for n in range(self.n_way)]
        )
        q_order = np.concatenate(
            [np.flatnonzero(self.query_labels == inverse[n]) for n in range(self.n_way)]
        ) if self.query.shape[0] else np.array([], dtype=int)
        return Episode(
            n_way=self.n_way,
            k_shot=self.k_shot,
            m_query=self.m_query,
            support=self.support[s_order],
            support_labels=permutation[self.support_labels[s_order]],
            query=self.query[q_order],
            query_labels=permutation[self.query_labels[q_order]],
            class_map=self.class_map[inverse],
            support_rows=[self.support_rows[i] for i in s_order] if self.support_rows else [],
            query_rows=[self.query_rows[i] for i in q_order] if self.query_rows else [],
        )
