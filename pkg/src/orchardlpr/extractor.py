"""Local feature extractors: shared MLPs over points or over BEV patches.

Both extractors map one preprocessed scan to a feature map Z of shape
(channels, support): one column per point for the point path, one column per
image patch for the BEV path. Pooling downstream always reduces the support
axis and keeps channels.
"""

from __future__ import annotations

import numpy as np

from .cloud import BevImage, PointCloud
from .nn import ParamTensor, he_uniform, linear_backward, linear_forward, relu_backward, relu_forward

POINT_HIDDEN = (64, 128)
BEV_HIDDEN = 256
BEV_PATCH_GRID = 16  # patches per image side; support is always 16*16 = 256


class _SharedMlp:
    """A stack of linear layers with ReLU between them and a linear output."""

    def __init__(self, name: str, dims: list[int], rng: np.random.Generator):
        self.weights = []
        self.biases = []
        for k in range(len(dims) - 1):
            self.weights.append(
                ParamTensor(f"{name}.l{k}.weight", he_uniform(rng, (dims[k + 1], dims[k])))
            )
            self.biases.append(
                ParamTensor(f"{name}.l{k}.bias", np.zeros(dims[k + 1]))
            )

    def forward(self, x: np.ndarray):
        caches = []
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h, lin_cache = linear_forward(h, w, b)
            if k < last:
                h, relu_cache = relu_forward(h)
            else:
                relu_cache = None
            caches.append((lin_cache, relu_cache))
        return h, caches

    def backward(self, upstream: np.ndarray, caches) -> np.ndarray:
        g = upstream
        for lin_cache, relu_cache in reversed(caches):
            if relu_cache is not None:
                g = relu_backward(g, relu_cache)
            g, _, _ = linear_backward(g, lin_cache)
        return g

    def parameters(self) -> list[ParamTensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


class PointMlpExtractor:
    """Shared per-point MLP 3 -> 64 -> 128 -> channels.

    Columns of the output follow the input point order, so permuting points
    permutes feature columns identically.
    """

    def __init__(self, n_points: int, channels: int, rng: np.random.Generator):
        self.n_points = n_points
        self.channels = channels
        self.mlp = _SharedMlp("extractor", [3, *POINT_HIDDEN, channels], rng)

    def forward(self, cloud: PointCloud):
        if len(cloud) != self.n_points:
            raise ValueError(
                f"expected {self.n_points} points after preprocessing, got {len(cloud)}"
            )
        return self.mlp.forward(cloud.points.T)

    def backward(self, upstream: np.ndarray, cache) -> np.ndarray:
        return self.mlp.backward(upstream, cache)

    def parameters(self) -> list[ParamTensor]:
        return self.mlp.parameters()


class BevPatchExtractor:
    """Shared per-patch MLP over a 16x16 tiling of the BEV image.

    The (3, h, w) image is cut into 256 patches of (h/16, w/16) cells; each
    patch is flattened channel-major and encoded by a shared MLP
    patch_dim -> 256 -> channels. Column s is patch s in row-major grid order.
    """

    def __init__(self, bev_size: int, channels: int, rng: np.random.Generator):
        if bev_size % BEV_PATCH_GRID != 0:
            raise ValueError(
                f"BEV size {bev_size} not divisible into a "
                f"{BEV_PATCH_GRID}x{BEV_PATCH_GRID} patch grid"
            )
        self.bev_size = bev_size
        self.channels = channels
        self.patch_cells = bev_size // BEV_PATCH_GRID
        patch_dim = 3 * self.patch_cells * self.patch_cells
        self.mlp = _SharedMlp("extractor", [patch_dim, BEV_HIDDEN, channels], rng)

    def _to_columns(self, bev: BevImage) -> np.ndarray:
        img = bev.stacked()
        c, h, w = img.shape
        if h != self.bev_size or w != self.bev_size:
            raise ValueError(
                f"BEV shape {(h, w)} does not match configured size {self.bev_size}"
            )
        g, p = BEV_PATCH_GRID, self.patch_cells
        tiles = img.reshape(c, g, p, g, p).transpose(1, 3, 0, 2, 4).reshape(g * g, -1)
        return tiles.T  # (patch_dim, 256)

    def forward(self, bev: BevImage):
        return self.mlp.forward(self._to_columns(bev))

    def backward(self, upstream: np.ndarray, cache) -> np.ndarray:
        return self.mlp.backward(upstream, cache)

    def parameters(self) -> list[ParamTensor]:
        return self.mlp.parameters()
