"""Minimal numpy layer zoo with hand-written backward passes.

Every layer follows the same protocol:

    y, cache = layer.forward(x, train=...)
    dx = layer.backward(cache, dy)        # accumulates into param.grad

Caches are returned to the caller instead of being stored on the layer, so
one layer instance can serve several concurrent forward passes (a shared
discriminator layer sees real/fake batches from both branches within a
single optimization step).

Images are channels-last (N, H, W, C); conv weights are (kh, kw, C_in, C_out)
and transposed-conv weights (C_in, kh, kw, C_out). With this layout the
im2col patch matrices reshape into GEMM operands without copies, which is
what keeps the training loops CPU-friendly.
"""

import numpy as np


class Param:
    """A named tensor plus its gradient accumulator.

    Weight tying works by aliasing: two layers holding the *same* Param
    instance share both value and gradient, so branch gradients sum
    naturally and one optimizer step updates both views at once.
    """

    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape})"


def sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(t):
    # log(1 + exp(t)), stable for large |t|
    return np.maximum(t, 0) + np.log1p(np.exp(-np.abs(t)))


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


_ONES_CACHE = {}


def _ones(n, dtype):
    key = (n, np.dtype(dtype).str)
    v = _ONES_CACHE.get(key)
    if v is None:
        v = np.ones(n, dtype=dtype)
        if len(_ONES_CACHE) > 64:
            _ONES_CACHE.clear()
        _ONES_CACHE[key] = v
    return v


def channel_sum(a2):
    """Column sums of a 2D array via GEMV (fast path for (huge, small))."""
    return a2.T @ _ones(a2.shape[0], a2.dtype)


def _out_hw(h, w, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """(N,H,W,C) -> (N*Ho*Wo, kh*kw*C) patch matrix.

    Built as one contiguous copy of an as_strided window view, which is the
    cheapest route numpy offers for this memory pattern."""
    x = np.ascontiguousarray(x)
    n, h, w, c = x.shape
    ho, wo = _out_hw(h, w, kh, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    sn, sh, sw, sc = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, ho, wo, kh, kw, c), (sn, stride * sh, stride * sw, sh, sw, sc))
    return np.ascontiguousarray(view).reshape(n * ho * wo, kh * kw * c)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of im2col: scatter-add patches back to (N,H,W,C)."""
    n, h, w, c = x_shape
    ho, wo = _out_hw(h, w, kh, stride, pad)
    cols = cols.reshape(n, ho, wo, kh, kw, c)
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + ho * stride:stride, j:j + wo * stride:stride, :] += cols[:, :, :, i, j, :]
    if pad:
        return np.ascontiguousarray(xp[:, pad:-pad, pad:-pad, :])
    return xp


def _scatter_shift_gemm(mat, weight_kkio, out_shape, kh, kw, stride, pad):
    """Accumulate mat @ weight[i,j] into shifted windows of a padded output.

    mat is (N*h*w, C_mat); weight_kkio is (kh, kw, C_mat, C_out); the result
    is the (N,H,W,C_out) array whose im2col against this geometry pairs with
    mat. One small GEMM per kernel offset keeps every add a clean slice-add.
    """
    n, h, w, c_out = out_shape[0], out_shape[1], out_shape[2], weight_kkio.shape[3]
    ho = (out_shape[1] + 2 * pad - kh) // stride + 1
    wo = (out_shape[2] + 2 * pad - kw) // stride + 1
    xp = np.zeros((n, out_shape[1] + 2 * pad, out_shape[2] + 2 * pad, c_out), dtype=mat.dtype)
    tmp = np.empty((mat.shape[0], c_out), dtype=mat.dtype)
    for i in range(kh):
        for j in range(kw):
            np.matmul(mat, weight_kkio[i, j], out=tmp)
            xp[:, i:i + ho * stride:stride, j:j + wo * stride:stride, :] += tmp.reshape(n, ho, wo, c_out)
    if pad:
        return np.ascontiguousarray(xp[:, pad:-pad, pad:-pad, :])
    return xp


class Layer:
    """Base layer; parameter-free by default."""

    def params(self):
        return []

    def state(self):
        """Mutable non-parameter tensors (e.g. batchnorm running stats)."""
        return {}

    def forward(self, x, train=False, update_stats=True):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, d_in, d_out, rng, dtype=np.float32, init_std=0.02):
        self.w = Param("W", rng.normal(0.0, init_std, (d_in, d_out)).astype(dtype))
        self.b = Param("b", np.zeros(d_out, dtype=dtype))

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=False, update_stats=True):
        return x @ self.w.value + self.b.value, x

    def backward(self, cache, dy):
        x = cache
        self.w.grad += x.T @ dy
        self.b.grad += channel_sum(dy)
        return dy @ self.w.value.T


class Conv2d(Layer):
    """Cross-correlation conv; weight (kh, kw, C_in, C_out), input NHWC."""

    def __init__(self, c_in, c_out, k, stride, pad, rng, dtype=np.float32, init_std=0.02):
        self.k, self.stride, self.pad = k, stride, pad
        self.c_in, self.c_out = c_in, c_out
        self.w = Param("W", rng.normal(0.0, init_std, (k, k, c_in, c_out)).astype(dtype))
        self.b = Param("b", np.zeros(c_out, dtype=dtype))

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train=False, update_stats=True):
        n, h, w, _ = x.shape
        ho, wo = _out_hw(h, w, self.k, self.stride, self.pad)
        cols = im2col(x, self.k, self.k, self.stride, self.pad)
        y = cols @ self.w.value.reshape(-1, self.c_out)
        y += self.b.value
        return y.reshape(n, ho, wo, self.c_out), (cols, x.shape)

    def backward(self, cache, dy):
        cols, x_shape = cache
        dy2 = np.ascontiguousarray(dy).reshape(-1, self.c_out)
        self.w.grad += (cols.T @ dy2).reshape(self.w.value.shape)
        self.b.grad += channel_sum(dy2)
        # dx: scatter dy2 @ W[i,j]^T into the input windows (adjoint of im2col)
        w_t = self.w.value.transpose(0, 1, 3, 2)  # (kh,kw,C_out,C_in)
        return _scatter_shift_gemm(dy2, w_t, x_shape, self.k, self.k, self.stride, self.pad)


class ConvTranspose2d(Layer):
    """Transposed conv; weight (C_in, kh, kw, C_out), input NHWC.

    Forward is the adjoint of Conv2d.forward with the same (k, stride, pad)
    geometry: scatter W^T x patches via col2im.
    """

    def __init__(self, c_in, c_out, k, stride, pad, rng, dtype=np.float32, init_std=0.02):
        self.k, self.stride, self.pad = k, stride, pad
        self.c_in, self.c_out = c_in, c_out
        self.w = Param("W", rng.normal(0.0, init_std, (c_in, k, k, c_out)).astype(dtype))
        self.b = Param("b", np.zeros(c_out, dtype=dtype))

    def params(self):
        return [self.w, self.b]

    def out_hw(self, h, w):
        return ((h - 1) * self.stride - 2 * self.pad + self.k,
                (w - 1) * self.stride - 2 * self.pad + self.k)

    def forward(self, x, train=False, update_stats=True):
        n, h, w, c = x.shape
        ho, wo = self.out_hw(h, w)
        x2 = np.ascontiguousarray(x).reshape(n * h * w, c)
        # scatter x2 @ W[:,i,j,:] into the output windows (adjoint of conv fwd)
        w_k = self.w.value.transpose(1, 2, 0, 3)  # (kh,kw,C_in,C_out)
        y = _scatter_shift_gemm(x2, w_k, (n, ho, wo, self.c_out),
                                self.k, self.k, self.stride, self.pad)
        y += self.b.value
        return y, (x2, (n, h, w))

    def backward(self, cache, dy):
        x2, (n, h, w) = cache
        dt = im2col(dy, self.k, self.k, self.stride, self.pad)  # (N*h*w, k*k*M)
        w2 = self.w.value.reshape(self.c_in, -1)
        self.w.grad += (x2.T @ dt).reshape(self.w.value.shape)
        self.b.grad += channel_sum(np.ascontiguousarray(dy).reshape(-1, self.c_out))
        return (dt @ w2.T).reshape(n, h, w, self.c_in)


class BatchNorm2d(Layer):
    """Batch normalization per channel over (N,H,W); channels-last input."""

    def __init__(self, c, rng, dtype=np.float32, momentum=0.1, eps=1e-5):
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param("gamma", rng.normal(1.0, 0.02, c).astype(dtype))
        self.beta = Param("beta", np.zeros(c, dtype=dtype))
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)

    def params(self):
        return [self.gamma, self.beta]

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train=False, update_stats=True):
        c = x.shape[-1]
        if train:
            x2 = x.reshape(-1, c)
            n = x2.shape[0]
            mu = channel_sum(x2) / n
            var = channel_sum(x2 * x2) / n - mu * mu
            np.maximum(var, 0.0, out=var)
            if update_stats:
                unbiased = var * (n / max(n - 1, 1))
                m = self.momentum
                self.running_mean += m * (mu.astype(self.running_mean.dtype) - self.running_mean)
                self.running_var += m * (unbiased.astype(self.running_var.dtype) - self.running_var)
        else:
            mu, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        y = xhat * self.gamma.value
        y += self.beta.value
        return y, (xhat, inv, train)

    def backward(self, cache, dy):
        xhat, inv, was_train = cache
        c = dy.shape[-1]
        dy2 = dy.reshape(-1, c)
        xhat2 = xhat.reshape(-1, c)
        self.gamma.grad += channel_sum(dy2 * xhat2)
        self.beta.grad += channel_sum(dy2)
        if not was_train:
            # running stats are constants here, so the jacobian is diagonal
            return dy * (self.gamma.value * inv)
        m = dy2.shape[0]
        dxhat = dy * self.gamma.value
        dxhat2 = dxhat.reshape(-1, c)
        s1 = channel_sum(dxhat2)
        s2 = channel_sum(dxhat2 * xhat2)
        return (inv / m) * (m * dxhat - s1 - xhat * s2)


class LeakyReLU(Layer):
    """inplace=True mutates its input/upstream-gradient buffers; only safe
    when the surrounding stack owns those intermediates (our branches do)."""

    def __init__(self, slope=0.2, inplace=False):
        self.slope = slope
        self.inplace = inplace

    def forward(self, x, train=False, update_stats=True):
        neg = x < 0
        y = x if self.inplace else x.copy()
        np.multiply(y, self.slope, where=neg, out=y)
        return y, neg

    def backward(self, cache, dy):
        neg = cache
        dx = dy if self.inplace else dy.copy()
        np.multiply(dx, self.slope, where=neg, out=dx)
        return dx


class ReLU(Layer):
    def __init__(self, inplace=False):
        self.inplace = inplace

    def forward(self, x, train=False, update_stats=True):
        neg = x < 0
        y = x if self.inplace else x.copy()
        y[neg] = 0.0
        return y, neg

    def backward(self, cache, dy):
        dx = dy if self.inplace else dy.copy()
        dx[cache] = 0.0
        return dx


class Tanh(Layer):
    def forward(self, x, train=False, update_stats=True):
        y = np.tanh(x)
        return y, y

    def backward(self, cache, dy):
        y = cache
        return dy * (1.0 - y * y)


class Flatten(Layer):
    def forward(self, x, train=False, update_stats=True):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache)


class Reshape(Layer):
    def __init__(self, shape):
        self.shape = shape  # per-sample shape

    def forward(self, x, train=False, update_stats=True):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache)
