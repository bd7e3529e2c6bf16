"""
Trainable parameters: the embedder f, the global head {w_k} and the
residual projection h. Tensors are float64 numpy arrays addressed by a
stable dotted name, which is also the checkpoint tensor name.
"""
import copy
import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from config.exceptions import ConfigError, ContractViolationError, DimensionError


@dataclass(frozen=True)
class ModelConfig:
    hidden_sizes: tuple = (64,)
    embedding_dim: int = 32

    def __post_init__(self):
        if any(size < 1 for size in self.hidden_sizes) or self.embedding_dim < 1:
            raise ConfigError(f"model sizes must be >= 1, got {self.hidden_sizes} -> {self.embedding_dim}")


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class Embedder:
    """MLP with ReLU on hidden layers and identity on the output layer"""
    layers: list = field(default_factory=list)

    @property
    def sizes(self):
        if not self.layers:
            return []
        return [self.layers[0].weight.shape[1]] + [layer.weight.shape[0] for layer in self.layers]

    @property
    def input_dim(self):
        return self.sizes[0]

    @property
    def output_dim(self):
        return self.sizes[-1]


@dataclass
class GlobalHead:
    weight: np.ndarray  # (n_train_classes, d), no bias

    @property
    def n_classes(self):
        return self.weight.shape[0]


@dataclass
class ProjectionLayer:
    weight: np.ndarray  # (d, d)
    bias: np.ndarray  # (d,)

    def is_zero_map(self):
        return not self.weight.any() and not self.bias.any()


@dataclass
class ModelParams:
    """
    One projection shared by every propagation layer, or one per layer
    when `projections` holds more than one entry.
    """
    embedder: Embedder
    global_head: GlobalHead
    projections: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.embedder.layers:
            raise DimensionError("embedder needs at least one layer")
        sizes = self.embedder.sizes
        for i, layer in enumerate(self.embedder.layers):
            if layer.weight.shape != (sizes[i + 1], sizes[i]) or layer.bias.shape != (sizes[i + 1],):
                raise DimensionError(f"embedder layer {i} has inconsistent shapes")
        d = self.embedder.output_dim
        if self.global_head.weight.ndim != 2 or self.global_head.weight.shape[1] != d:
            raise DimensionError(f"global head width must equal embedding dim {d}")
        if not self.projections:
            raise DimensionError("at least one projection layer is required")
        for j, proj in enumerate(self.projections):
            if proj.weight.shape != (d, d) or proj.bias.shape != (d,):
                raise DimensionError(f"projection {j} must be {d}x{d} with a {d}-vector bias")

    @property
    def embedding_dim(self):
        return self.embedder.output_dim

    @property
    def shares_projection(self):
        return len(self.projections) == 1

    @property
    def projection(self):
        return self.projections[0]

    def projection_index(self, layer_index):
        if self.shares_projection:
            return 0
        if layer_index >= len(self.projections):
            raise ContractViolationError(
                f"propagation layer {layer_index} has no projection ({len(self.projections)} trained)"
            )
        return layer_index

    def projection_for(self, layer_index):
        return self.projections[self.projection_index(layer_index)]

    def named_tensors(self):
        """(name, array) pairs in checkpoint order; arrays are the live parameters."""
        tensors = []
        for i, layer in enumerate(self.embedder.layers):
            tensors.append((f"embedder.{i}.weight", layer.weight))
            tensors.append((f"embedder.{i}.bias", layer.bias))
        tensors.append(("global_head.weight", self.global_head.weight))
        for j, proj in enumerate(self.projections):
            tensors.append((f"projection.{j}.weight", proj.weight))
            tensors.append((f"projection.{j}.bias", proj.bias))
        return tensors

    def tensor(self, name):
        for key, value in self.named_tensors():
            if key == name:
                return value
        raise KeyError(name)

    def copy(self):
        return copy.deepcopy(self)

    def stored_copy(self):
        """Copy with every tensor rounded through float32, the precision checkpoints keep."""
        clone = self.copy()
        for _, value in clone.named_tensors():
            value[...] = value.astype(np.float32)
        return clone

    def checksum(self):
        digest = hashlib.sha256()
        for name, value in self.named_tensors():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(value).tobytes())
        return digest.hexdigest()

    @classmethod
    def from_named_tensors(cls, tensors):
        tensors = dict(tensors)
        embedder = []
        i = 0
        while f"embedder.{i}.weight" in tensors:
            embedder.append(DenseLayer(tensors.pop(f"embedder.{i}.weight"), tensors.pop(f"embedder.{i}.bias")))
            i += 1
        head = GlobalHead(tensors.pop("global_head.weight"))
        projections = []
        j = 0
        while f"projection.{j}.weight" in tensors:
            projections.append(
                ProjectionLayer(tensors.pop(f"projection.{j}.weight"), tensors.pop(f"projection.{j}.bias"))
            )
            j += 1
        if tensors:
            raise KeyError(f"unexpected tensors: {sorted(tensors)}")
        return cls(embedder=Embedder(embedder), global_head=head, projections=projections)


class GradientBag:
    """One zeroed buffer per ModelParams tensor, same names and shapes."""

    def __init__(self, buffers):
        self.buffers = OrderedDict(buffers)

    @classmethod
    def zeros_like(cls, params):
        return cls((name, np.zeros_like(value)) for name, value in params.named_tensors())

    def __getitem__(self, name):
        return self.buffers[name]

    def __setitem__(self, name, value):
        self.buffers[name] = value

    def __iter__(self):
        return iter(self.buffers)

    def items(self):
        return self.buffers.items()
