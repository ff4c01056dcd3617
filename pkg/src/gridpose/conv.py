"""Same-padded 3D convolution (cross-correlation) and the residual block.

Volumes are (C, X, Y, Z). Kernels must be odd so that zero padding of
(k-1)/2 keeps spatial dimensions unchanged. The forward pass is an
im2col GEMM; the backward pass folds the column gradient back with k^3
shifted slice adds. All model-math functions here accept plain ndarrays
or autodiff Tensors and always return a Tensor (use ``.data`` for the
raw array).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor


def _im2col(x_pad, k, dims):
    """(C, X+2p, Y+2p, Z+2p) padded volume -> (L, C*k^3) patch matrix."""
    sx, sy, sz = dims
    windows = np.lib.stride_tricks.sliding_window_view(x_pad, (k, k, k), axis=(1, 2, 3))
    # windows: (C, X, Y, Z, k, k, k) -> rows ordered like the flattened output
    cols = windows.transpose(1, 2, 3, 0, 4, 5, 6).reshape(sx * sy * sz, -1)
    return np.ascontiguousarray(cols)


def conv3d(x, w, b):
    """Same-padded 3D cross-correlation as an autodiff graph node.

    x: (c_in, X, Y, Z), w: (c_out, c_in, k, k, k), b: (c_out,).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    c_out, c_in, k = w.shape[0], w.shape[1], w.shape[2]
    if x.shape[0] != c_in:
        raise ValueError(f"input has {x.shape[0]} channels, layer expects {c_in}")
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    pad = (k - 1) // 2
    dims = x.shape[1:]
    sx, sy, sz = dims

    x_pad = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    cols = _im2col(x_pad, k, dims)  # (L, c_in*k^3)
    w_mat = w.data.reshape(c_out, -1)
    out_mat = cols @ w_mat.T + b.data  # (L, c_out)
    out_data = out_mat.T.reshape(c_out, sx, sy, sz)

    def backward(g):
        g_mat = g.reshape(c_out, -1).T  # (L, c_out)
        if w.requires_grad:
            w._accumulate((g_mat.T @ cols).reshape(w.data.shape))
        if b.requires_grad:
            b._accumulate(g_mat.sum(axis=0))
        if x.requires_grad:
            dcols = g_mat @ w_mat  # (L, c_in*k^3)
            d = dcols.reshape(sx, sy, sz, c_in, k, k, k).transpose(3, 0, 1, 2, 4, 5, 6)
            dx_pad = np.zeros_like(x_pad)
            for a in range(k):
                for bb in range(k):
                    for c in range(k):
                        dx_pad[:, a : a + sx, bb : bb + sy, c : c + sz] += d[:, :, :, :, a, bb, c]
            x._accumulate(dx_pad[:, pad : pad + sx, pad : pad + sy, pad : pad + sz])

    return Tensor._make(out_data, (x, w, b), backward)


@dataclass
class Conv3dLayer:
    """Weights of one same-padded conv layer; padding is (k-1)/2, never stored."""

    w: Tensor  # (c_out, c_in, k, k, k)
    b: Tensor  # (c_out,)

    def __post_init__(self):
        self.w = as_tensor(self.w)
        self.b = as_tensor(self.b)
        if self.w.ndim != 5 or self.w.shape[2] != self.w.shape[3] or self.w.shape[3] != self.w.shape[4]:
            raise ValueError(f"conv weights must be (c_out, c_in, k, k, k), got {self.w.shape}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel_size}")
        if self.b.shape != (self.c_out,):
            raise ValueError(f"bias shape {self.b.shape} does not match c_out={self.c_out}")
        if not (np.all(np.isfinite(self.w.data)) and np.all(np.isfinite(self.b.data))):
            raise ValueError("conv weights must be finite")

    @property
    def c_out(self):
        return self.w.shape[0]

    @property
    def c_in(self):
        return self.w.shape[1]

    @property
    def kernel_size(self):
        return self.w.shape[2]

    def parameters(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


def init_conv3d(c_in, c_out, kernel_size, rng, trainable=True):
    """Fan-in scaled uniform init: weights in +-sqrt(1/(c_in*k^3)), zero bias."""
    bound = float(np.sqrt(1.0 / (c_in * kernel_size**3)))
    w = rng.uniform(-bound, bound, size=(c_out, c_in, kernel_size, kernel_size, kernel_size))
    b = np.zeros(c_out)
    return Conv3dLayer(Tensor(w, requires_grad=trainable), Tensor(b, requires_grad=trainable))


def conv3d_forward(vol, layer: Conv3dLayer):
    """Apply one conv layer; output spatial dims equal input dims."""
    return conv3d(vol, layer.w, layer.b)


@dataclass
class ResidualBlock:
    """Two k=3 convs summed with a k=1 skip projection, then ReLU."""

    conv1: Conv3dLayer  # c_in -> c_out, k=3
    conv2: Conv3dLayer  # c_out -> c_out, k=3
    skip: Conv3dLayer  # c_in -> c_out, k=1

    def __post_init__(self):
        if self.conv1.c_out != self.conv2.c_in:
            raise ValueError("main-path channel mismatch between conv1 and conv2")
        if self.conv2.c_out != self.skip.c_out:
            raise ValueError("main path and skip path must produce the same channels")
        if self.conv1.c_in != self.skip.c_in:
            raise ValueError("main path and skip path must consume the same channels")

    @property
    def c_in(self):
        return self.conv1.c_in

    @property
    def c_out(self):
        return self.skip.c_out

    def parameters(self, prefix):
        params = {}
        params.update(self.conv1.parameters(f"{prefix}.conv1"))
        params.update(self.conv2.parameters(f"{prefix}.conv2"))
        params.update(self.skip.parameters(f"{prefix}.skip"))
        return params


def init_residual_block(c_in, c_out, rng, trainable=True):
    return ResidualBlock(
        conv1=init_conv3d(c_in, c_out, 3, rng, trainable),
        conv2=init_conv3d(c_out, c_out, 3, rng, trainable),
        skip=init_conv3d(c_in, c_out, 1, rng, trainable),
    )


def residual_forward(vol, block: ResidualBlock):
    """ReLU(conv2(conv1(vol)) + skip(vol))."""
    main = conv3d_forward(conv3d_forward(vol, block.conv1), block.conv2)
    shortcut = conv3d_forward(vol, block.skip)
    return (main + shortcut).relu()
