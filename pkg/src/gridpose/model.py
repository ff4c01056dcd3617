"""The full two-branch network over one person-centered voxel grid.

Branch (1): conv embedding + positional table + sparse-attention encoder.
Branch (2): a chain of residual 3D conv blocks on the raw feature volume.
The branches are concatenated along channels and a 1x1x1 head produces
per-joint voxel probabilities; integral regression turns those into mm
coordinates.

Weight sets are flat {dotted name: tensor} dicts, so they serialize
directly through the raw tensor dump format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionConfig, EncoderWeights, encoder_forward, init_encoder_weights
from .autodiff import as_tensor
from .config import RunConfig
from .conv import Conv3dLayer, init_conv3d, init_residual_block, residual_forward
from .posehead import fuse_and_head
from .tensorio import load_tensor_set, save_tensor_set


@dataclass
class ModelWeights:
    encoder: EncoderWeights
    residual_blocks: list = field(default_factory=list)
    head: Conv3dLayer = None

    def parameters(self):
        params = self.encoder.parameters("encoder")
        for i, block in enumerate(self.residual_blocks):
            params.update(block.parameters(f"residual{i}"))
        params.update(self.head.parameters("head"))
        return params


def init_model(n_joints, grid_dims, attention: AttentionConfig, residual_channels,
               rng, trainable=True):
    """Seeded weight init; draw order is fixed so a seed pins every tensor."""
    encoder = init_encoder_weights(n_joints, grid_dims, attention, rng, trainable)
    blocks = []
    c = n_joints
    for c_out in residual_channels:
        blocks.append(init_residual_block(c, int(c_out), rng, trainable))
        c = int(c_out)
    head = init_conv3d(attention.embed_dim + c, n_joints, 1, rng, trainable)
    return ModelWeights(encoder=encoder, residual_blocks=blocks, head=head)


def init_model_from_config(cfg: RunConfig):
    rng = np.random.default_rng(cfg.seed)
    dims = (cfg.grid_resolution,) * 3
    return init_model(cfg.n_joints, dims, cfg.attention, cfg.residual_channels, rng)


def model_forward(vol, weights: ModelWeights, attention: AttentionConfig,
                  mode="soft", counter=None):
    """Feature volume (J, X, Y, Z) -> per-joint voxel probabilities (J, X, Y, Z)."""
    vol = as_tensor(vol)
    x_t = encoder_forward(vol, weights.encoder, attention, mode=mode, counter=counter)
    x_c = vol
    for block in weights.residual_blocks:
        x_c = residual_forward(x_c, block)
    return fuse_and_head(x_t, x_c, weights.head)


def save_model(directory, weights: ModelWeights):
    save_tensor_set(directory, weights.parameters())


def load_model(directory, cfg: RunConfig):
    """Rebuild a weight set dumped by `save_model`, shaped per `cfg`.

    The dump must carry exactly the tensors the config implies; extra,
    missing, or mis-shaped entries are rejected (OSError, the CLI's I/O
    exit code) rather than silently partially loaded.
    """
    arrays = load_tensor_set(directory)
    weights = init_model_from_config(cfg)
    params = weights.parameters()
    if set(arrays) != set(params):
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        raise OSError(f"weight set mismatch: missing {missing}, unexpected {extra}")
    for name, tensor in params.items():
        arr = arrays[name]
        if arr.shape != tensor.shape:
            raise OSError(f"tensor {name}: dumped shape {arr.shape} vs expected {tensor.shape}")
        tensor.data = arr.astype(tensor.data.dtype, copy=False)
    return weights
