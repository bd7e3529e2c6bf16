"""
Forward and backward passes of the embedder and the residual projection,
plus parameter initialization.
"""
import math

import numpy as np

from config.exceptions import DimensionError
from episodes.models import RngStream, make_rng
from numerics.similarity import as_matrix
from .models import DenseLayer, Embedder, GlobalHead, ModelParams, ProjectionLayer


def he_uniform_bound(fan_in):
    return math.sqrt(6.0 / fan_in)


def _uniform(rng, bound, shape):
    # Rounded through float32 so initial values survive a checkpoint round-trip
    return rng.uniform(-bound, bound, size=shape).astype(np.float32).astype(np.float64)


def init_params(input_dim, hidden_sizes, embedding_dim, n_train_classes, rng, n_projections=1):
    """
    He-style uniform init for the embedder and the global head; every
    projection starts at zero so a stack of any depth is the identity.
    """
    sizes = [input_dim, *hidden_sizes, embedding_dim]
    if any(s < 1 for s in sizes) or n_train_classes < 1 or n_projections < 1:
        raise DimensionError(f"all sizes must be >= 1, got {sizes}, n_train_classes={n_train_classes}")

    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        layers.append(DenseLayer(
            weight=_uniform(rng, he_uniform_bound(fan_in), (fan_out, fan_in)),
            bias=np.zeros(fan_out),
        ))
    head = GlobalHead(_uniform(rng, he_uniform_bound(embedding_dim), (n_train_classes, embedding_dim)))
    projections = [
        ProjectionLayer(np.zeros((embedding_dim, embedding_dim)), np.zeros(embedding_dim))
        for _ in range(n_projections)
    ]
    return ModelParams(embedder=Embedder(layers), global_head=head, projections=projections)


def embed_forward(params, inputs):
    """Return (embeddings, cache); the cache feeds embed_backward."""
    h = as_matrix(inputs, "inputs")
    if h.shape[1] != params.embedder.input_dim:
        raise DimensionError(
            f"embedder expects width {params.embedder.input_dim}, got {h.shape[1]}"
        )
    cache = []
    last = len(params.embedder.layers) - 1
    for i, layer in enumerate(params.embedder.layers):
        pre = h @ layer.weight.T + layer.bias
        cache.append((h, pre))
        h = np.maximum(pre, 0.0) if i < last else pre
    return h, cache


def embed_batch(params, inputs):
    return embed_forward(params, inputs)[0]


def embed_backward(params, cache, d_out, grads):
    """Accumulate embedder gradients into `grads`; returns d(inputs)."""
    g = d_out
    last = len(params.embedder.layers) - 1
    for i in range(last, -1, -1):
        h_in, pre = cache[i]
        if i < last:
            g = g * (pre > 0)
        layer = params.embedder.layers[i]
        grads[f"embedder.{i}.weight"] += g.T @ h_in
        grads[f"embedder.{i}.bias"] += g.sum(axis=0)
        g = g @ layer.weight
    return g


def project_forward(layer, M, relu=False):
    """h(M) + M with h(M) = M W^T + b (optionally ReLU'd). Returns (output, pre-activation)."""
    M = as_matrix(M, "projection input")
    d = layer.weight.shape[0]
    if M.shape[1] != d:
        raise DimensionError(f"projection expects width {d}, got {M.shape[1]}")
    if layer.is_zero_map():
        # zero map: the residual is the identity
        return M.copy(), np.zeros_like(M)
    pre = M @ layer.weight.T + layer.bias
    h = np.maximum(pre, 0.0) if relu else pre
    return h + M, pre


def project_residual(params, M, layer_index=0, relu=False):
    return project_forward(params.projection_for(layer_index), M, relu)[0]


def project_backward(params, layer_index, M, pre, d_out, grads, relu=False):
    """Accumulate projection gradients into `grads`; returns d(M)."""
    index = params.projection_index(layer_index)
    layer = params.projections[index]
    d_pre = d_out * (pre > 0) if relu else d_out
    grads[f"projection.{index}.weight"] += d_pre.T @ M
    grads[f"projection.{index}.bias"] += d_pre.sum(axis=0)
    return d_out + d_pre @ layer.weight


def build_params(model_config, input_dim, n_train_classes, seed, n_projections=1):
    """Initial parameters drawn from the INIT stream of `seed`."""
    return init_params(
        input_dim,
        list(model_config.hidden_sizes),
        model_config.embedding_dim,
        n_train_classes,
        make_rng(seed, RngStream.INIT),
        n_projections=n_projections,
    )
