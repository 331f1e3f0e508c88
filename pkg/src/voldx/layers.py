"""Neural-network layers with explicit forward and backward passes.

Everything is plain numpy. Convolution is cross-correlation implemented as
im2col + one BLAS matmul; backward scatters column gradients back with 27
strided adds. Layers hold their parameter arrays directly; optimizers must
update those arrays in place (never rebind) so views registered in a
parameter store stay live.

Array layout: volumetric activations are [N, C, X, Y, Z]; dense activations
are [N, F].
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch


def effective_stride(size: int, stride: int) -> int:
    """Stride drops to 1 once an axis has collapsed to a single sample."""
    return 1 if size == 1 else stride


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    s = effective_stride(size, stride)
    pad = (kernel - 1) // 2
    return (size + 2 * pad - kernel) // s + 1


def conv3d_forward(x, weight, bias, stride):
    """Strided 3D cross-correlation with 'same' zero padding.

    x: [N, Cin, X, Y, Z]; weight: [Cout, Cin, k, k, k]; bias: [Cout];
    stride: per-axis (sx, sy, sz). Output spatial size is ceil(n / stride)
    per axis (stride falls back to 1 on axes of size 1).
    """
    n, cin, *spatial = x.shape
    cout, cin_w, k, _, _ = weight.shape
    if cin != cin_w:
        raise ShapeMismatch(f"conv expects {cin_w} input channels, got {cin}")
    pad = (k - 1) // 2
    strides = tuple(effective_stride(spatial[a], stride[a]) for a in range(3))

    if pad:
        xp = np.pad(x, ((0, 0), (0, 0)) + ((pad, pad),) * 3)
    else:
        xp = x
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    win = win[:, :, :: strides[0], :: strides[1], :: strides[2]]
    out_spatial = win.shape[2:5]
    # [N, ox, oy, oz, Cin, k, k, k] -> [N*P, Cin*k^3]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7))
    cols = cols.reshape(n * int(np.prod(out_spatial)), cin * k ** 3)
    w_mat = weight.reshape(cout, -1)
    y = cols @ w_mat.T
    y += bias
    y = y.reshape((n,) + out_spatial + (cout,)).transpose(0, 4, 1, 2, 3)
    cache = (cols, x.shape, strides, pad, out_spatial)
    return np.ascontiguousarray(y), cache


def conv3d_backward(dy, weight, cache):
    cols, x_shape, strides, pad, out_spatial = cache
    n, cin = x_shape[0], x_shape[1]
    cout, _, k, _, _ = weight.shape
    ox, oy, oz = out_spatial

    dy_mat = np.ascontiguousarray(dy.transpose(0, 2, 3, 4, 1)).reshape(-1, cout)
    dbias = dy_mat.sum(axis=0)
    dweight = (dy_mat.T @ cols).reshape(weight.shape)

    dcols = dy_mat @ weight.reshape(cout, -1)
    dwin = dcols.reshape(n, ox, oy, oz, cin, k, k, k).transpose(0, 4, 1, 2, 3, 5, 6, 7)

    padded_shape = (n, cin) + tuple(x_shape[2 + a] + 2 * pad for a in range(3))
    dxp = np.zeros(padded_shape, dtype=dy.dtype)
    sx, sy, sz = strides
    for a in range(k):
        for b in range(k):
            for c in range(k):
                dxp[
                    :,
                    :,
                    a : a + sx * ox : sx,
                    b : b + sy * oy : sy,
                    c : c + sz * oz : sz,
                ] += dwin[..., a, b, c]
    if pad:
        dx = dxp[
            :,
            :,
            pad : pad + x_shape[2],
            pad : pad + x_shape[3],
            pad : pad + x_shape[4],
        ]
    else:
        dx = dxp
    return np.ascontiguousarray(dx), dweight, dbias


def instance_norm_forward(x, gamma, beta, eps):
    """Per-sample, per-channel standardization over spatial voxels."""
    axes = (2, 3, 4)
    mean = x.mean(axis=axes, keepdims=True)
    var = x.var(axis=axes, keepdims=True)  # biased
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    g = gamma.reshape(1, -1, 1, 1, 1)
    y = g * xhat + beta.reshape(1, -1, 1, 1, 1)
    return y, (xhat, inv_std, gamma)


def instance_norm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    axes = (2, 3, 4)
    dgamma = (dy * xhat).sum(axis=(0, 2, 3, 4))
    dbeta = dy.sum(axis=(0, 2, 3, 4))
    dxhat = dy * gamma.reshape(1, -1, 1, 1, 1)
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=axes, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
    )
    return dx, dgamma, dbeta


def _slope_view(a, ndim):
    return a.reshape((1, -1) + (1,) * (ndim - 2))


def prelu_forward(x, a):
    """y = x for x > 0 else a*x, slope per channel (axis 1)."""
    av = _slope_view(a, x.ndim)
    pos = x > 0
    y = np.where(pos, x, av * x)
    return y, (x, pos, a)


def prelu_backward(dy, cache):
    x, pos, a = cache
    av = _slope_view(a, x.ndim)
    dx = np.where(pos, dy, av * dy)
    neg = dy * x * ~pos
    da = neg.sum(axis=tuple(i for i in range(x.ndim) if i != 1))
    return dx, da


def dense_forward(x, weight, bias):
    """x: [N, Fin]; weight: [Fin, Fout]; bias: [Fout]."""
    if x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(
            f"dense expects {weight.shape[0]} input features, got {x.shape[1]}"
        )
    return x @ weight + bias, x


def dense_backward(dy, weight, cache):
    x = cache
    dx = dy @ weight.T
    dweight = x.T @ dy
    dbias = dy.sum(axis=0)
    return dx, dweight, dbias


def sigmoid(z):
    """Numerically stable logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _uniform_init(rng, shape, fan_in, dtype):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv3d:
    def __init__(self, cin, cout, kernel, stride, rng, dtype):
        self.stride = tuple(stride)
        fan_in = cin * kernel ** 3
        self.weight = _uniform_init(rng, (cout, cin, kernel, kernel, kernel), fan_in, dtype)
        self.bias = np.zeros(cout, dtype=dtype)

    def params(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    def forward(self, x):
        return conv3d_forward(x, self.weight, self.bias, self.stride)

    def backward(self, dy, cache, prefix):
        dx, dw, db = conv3d_backward(dy, self.weight, cache)
        return dx, {f"{prefix}.weight": dw, f"{prefix}.bias": db}


class InstanceNorm:
    def __init__(self, channels, eps, dtype):
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)

    def params(self, prefix):
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}

    def forward(self, x):
        return instance_norm_forward(x, self.gamma, self.beta, self.eps)

    def backward(self, dy, cache, prefix):
        dx, dg, db = instance_norm_backward(dy, cache)
        return dx, {f"{prefix}.gamma": dg, f"{prefix}.beta": db}


class PReLU:
    def __init__(self, channels, init, dtype):
        self.slope = np.full(channels, init, dtype=dtype)

    def params(self, prefix):
        return {f"{prefix}.slope": self.slope}

    def forward(self, x):
        return prelu_forward(x, self.slope)

    def backward(self, dy, cache, prefix):
        dx, da = prelu_backward(dy, cache)
        return dx, {f"{prefix}.slope": da}


class Dense:
    def __init__(self, fin, fout, rng, dtype):
        self.weight = _uniform_init(rng, (fin, fout), fin, dtype)
        self.bias = np.zeros(fout, dtype=dtype)

    def params(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}

    def forward(self, x):
        return dense_forward(x, self.weight, self.bias)

    def backward(self, dy, cache, prefix):
        dx, dw, db = dense_backward(dy, self.weight, cache)
        return dx, {f"{prefix}.weight": dw, f"{prefix}.bias": db}


class ConvBlock:
    """conv -> instance norm -> PReLU."""

    def __init__(self, cin, cout, stride, eps, prelu_init, rng, dtype):
        self.conv = Conv3d(cin, cout, 3, stride, rng, dtype)
        self.norm = InstanceNorm(cout, eps, dtype)
        self.act = PReLU(cout, prelu_init, dtype)

    def params(self, prefix):
        out = {}
        out.update(self.conv.params(f"{prefix}.conv"))
        out.update(self.norm.params(f"{prefix}.norm"))
        out.update(self.act.params(f"{prefix}.act"))
        return out

    def forward(self, x):
        y, c1 = self.conv.forward(x)
        y, c2 = self.norm.forward(y)
        y, c3 = self.act.forward(y)
        return y, (c1, c2, c3)

    def backward(self, dy, cache, prefix):
        c1, c2, c3 = cache
        grads = {}
        dy, g = self.act.backward(dy, c3, f"{prefix}.act")
        grads.update(g)
        dy, g = self.norm.backward(dy, c2, f"{prefix}.norm")
        grads.update(g)
        dy, g = self.conv.backward(dy, c1, f"{prefix}.conv")
        grads.update(g)
        return dy, grads


class ResidualBlock:
    """Three conv blocks plus a strided 1x1x1 shortcut, summed."""

    def __init__(self, cin, cout, stride, eps, prelu_init, rng, dtype):
        self.cb1 = ConvBlock(cin, cout, stride, eps, prelu_init, rng, dtype)
        self.cb2 = ConvBlock(cout, cout, (1, 1, 1), eps, prelu_init, rng, dtype)
        self.cb3 = ConvBlock(cout, cout, (1, 1, 1), eps, prelu_init, rng, dtype)
        self.shortcut = Conv3d(cin, cout, 1, stride, rng, dtype)

    def params(self, prefix):
        out = {}
        out.update(self.cb1.params(f"{prefix}.cb1"))
        out.update(self.cb2.params(f"{prefix}.cb2"))
        out.update(self.cb3.params(f"{prefix}.cb3"))
        out.update(self.shortcut.params(f"{prefix}.shortcut"))
        return out

    def forward(self, x):
        m, k1 = self.cb1.forward(x)
        m, k2 = self.cb2.forward(m)
        m, k3 = self.cb3.forward(m)
        s, ks = self.shortcut.forward(x)
        if m.shape != s.shape:
            raise ShapeMismatch(
                f"residual main path {m.shape} != shortcut {s.shape}"
            )
        return m + s, (k1, k2, k3, ks)

    def backward(self, dy, cache, prefix):
        k1, k2, k3, ks = cache
        grads = {}
        dm, g = self.cb3.backward(dy, k3, f"{prefix}.cb3")
        grads.update(g)
        dm, g = self.cb2.backward(dm, k2, f"{prefix}.cb2")
        grads.update(g)
        dm, g = self.cb1.backward(dm, k1, f"{prefix}.cb1")
        grads.update(g)
        ds, g = self.shortcut.backward(dy, ks, f"{prefix}.shortcut")
        grads.update(g)
        return dm + ds, grads
