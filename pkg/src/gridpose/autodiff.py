"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray and records the operations applied to it so
that ``backward()`` on a scalar result accumulates gradients into every
reachable tensor with ``requires_grad=True``. Gradients are exact
reverse-mode; there is no higher-order support. Only the primitives the
pose model needs are implemented: elementwise arithmetic, matmul,
reshape/transpose/concat, reductions, relu, exp/log, log-sum-exp and
softmax. The 3D convolution primitive lives in ``conv.py`` and plugs into
the same graph mechanism.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    """Sum `grad` over the axes numpy broadcast to reach `grad.shape` from `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the computation graph; wraps a float ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_children", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _children=()):
        arr = np.asarray(data)
        if arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._children = _children
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}, name={self.name})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # -- graph construction helper ----------------------------------------

    @staticmethod
    def _make(data, children, backward):
        requires = any(c.requires_grad for c in children)
        out = Tensor(data, requires_grad=requires, _children=tuple(c for c in children if c.requires_grad))
        if requires:
            out._backward = backward
        return out

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            a = self

            def backward(g):
                a._accumulate(g)

            return Tensor._make(self.data + other, (self,), backward)
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._make(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            a._accumulate(-g)

        return Tensor._make(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            a = self

            def backward(g):
                a._accumulate(g * other)

            return Tensor._make(self.data * other, (self,), backward)
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._make(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        return self * as_tensor(other) ** -1.0

    def __rtruediv__(self, other):
        return as_tensor(other) * self**-1.0

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self

        def backward(g):
            a._accumulate(g * (p * a.data ** (p - 1)))

        return Tensor._make(self.data**p, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ValueError("matmul requires operands with ndim >= 2")

        def backward(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._accumulate(_unbroadcast(gb, b.data.shape))

        return Tensor._make(self.data @ other.data, (self, other), backward)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = self.data.shape

        def backward(g):
            a._accumulate(g.reshape(old))

        return Tensor._make(self.data.reshape(shape), (self,), backward)

    def transpose(self, axes):
        a = self
        inverse = tuple(np.argsort(axes))

        def backward(g):
            a._accumulate(g.transpose(inverse))

        return Tensor._make(self.data.transpose(axes), (self,), backward)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        shape = self.data.shape

        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, shape).copy())

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- nonlinearities -----------------------------------------------------

    def relu(self):
        a = self
        mask = self.data > 0  # subgradient at 0 is 0

        def backward(g):
            a._accumulate(g * mask)

        return Tensor._make(np.where(mask, self.data, 0.0), (self,), backward)

    def exp(self):
        a = self
        out_data = np.exp(self.data)

        def backward(g):
            a._accumulate(g * out_data)

        return Tensor._make(out_data, (self,), backward)

    def log(self):
        a = self

        def backward(g):
            a._accumulate(g / a.data)

        return Tensor._make(np.log(self.data), (self,), backward)

    def abs(self):
        a = self
        sign = np.sign(self.data)

        def backward(g):
            a._accumulate(g * sign)

        return Tensor._make(np.abs(self.data), (self,), backward)

    def logsumexp(self, axis, keepdims=False):
        a = self
        m = self.data.max(axis=axis, keepdims=True)
        shifted = np.exp(self.data - m)
        total = shifted.sum(axis=axis, keepdims=True)
        out_data = np.log(total) + m
        soft = shifted / total  # softmax along `axis`, cached for the backward pass

        def backward(g):
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(gg * soft)

        if not keepdims:
            out_data = np.squeeze(out_data, axis=axis)
        return Tensor._make(out_data, (self,), backward)

    def softmax(self, axis=-1):
        a = self
        m = self.data.max(axis=axis, keepdims=True)
        ex = np.exp(self.data - m)
        out_data = ex / ex.sum(axis=axis, keepdims=True)

        def backward(g):
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - inner))

        return Tensor._make(out_data, (self,), backward)

    # -- backward pass --------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._children:
                if id(child) not in visited:
                    stack.append((child, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


# -- gradient verification ------------------------------------------------


def finite_diff_check(f, leaves, eps=1e-5, max_probes=None, rng=None, atol=1e-9):
    """Compare reverse-mode gradients of scalar `f()` against central differences.

    `f` must recompute its output from the current `.data` of `leaves`
    (dict name -> Tensor). When a leaf has more entries than `max_probes`,
    a deterministic random subset of its components is probed. Returns the
    worst relative error |fd - ad| / (|fd| + |ad| + 1e-12).

    Components whose absolute difference is within `atol` count as exact:
    central differences bottom out near |f|*1e-16/eps, so a near-zero true
    gradient otherwise drowns the relative formula in rounding noise.
    """
    if isinstance(leaves, dict):
        leaf_items = list(leaves.items())
    else:
        leaf_items = [(f"leaf{i}", t) for i, t in enumerate(leaves)]
    for _, t in leaf_items:
        t.zero_grad()
    out = f()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("finite_diff_check expects f() to return a scalar Tensor")
    out.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in leaf_items}

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for name, t in leaf_items:
        if not t.data.flags["C_CONTIGUOUS"]:
            t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        if max_probes is not None and n > max_probes:
            idxs = rng.choice(n, size=max_probes, replace=False)
        else:
            idxs = range(n)
        an_flat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f().data)
            flat[i] = orig - eps
            f_minus = float(f().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2 * eps)
            ad = an_flat[i]
            if abs(fd - ad) <= atol:
                continue
            err = abs(fd - ad) / (abs(fd) + abs(ad) + 1e-12)
            worst = max(worst, err)
    return worst


# -- optimizers ----------------------------------------------------------------


def _as_param_dict(params):
    """Accept {name: Tensor} or an ordered iterable of Tensors."""
    if isinstance(params, dict):
        return params
    return {str(i): t for i, t in enumerate(params)}


def _check_shapes(params):
    for name, t in params.items():
        if t.grad is not None and t.grad.shape != t.data.shape:
            raise ValueError(f"gradient shape {t.grad.shape} does not match parameter {name} {t.data.shape}")


def sgd_step(params, lr):
    """Plain gradient descent: w <- w - lr * g. Params with no gradient are left alone."""
    params = _as_param_dict(params)
    _check_shapes(params)
    for t in params.values():
        if t.grad is not None:
            t.data -= lr * t.grad


class Adam:
    """Adam with bias correction; defaults beta=(0.9, 0.999), eps=1e-8."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = _as_param_dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        _check_shapes(self.params)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def zero_grads(params):
    for p in _as_param_dict(params).values():
        p.zero_grad()
