"""
Reverse-mode automatic differentiation over dense numpy arrays, plus the
optimizer, random streams and numerical checks the rest of the package
builds on.

The graph is dynamic: every op applied to a :class:`Tensor` that requires
gradients records its parents and a backward closure, and
:meth:`Tensor.backward` replays them in reverse topological order.
"""
# License: simplified BSD

import contextlib
import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

_state = threading.local()
_DEBUG = {'check_finite': False}


def set_debug(check_finite=True):
    """Enable NaN/Inf detection on the output of every op."""
    _DEBUG['check_finite'] = bool(check_finite)


def is_grad_enabled():
    return getattr(_state, 'grad_enabled', True)


@contextlib.contextmanager
def no_grad():
    """Context manager disabling graph recording in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    n_extra = grad.ndim - len(shape)
    if n_extra > 0:
        grad = grad.sum(axis=tuple(range(n_extra)))
    axes = tuple(i for i, s in enumerate(shape)
                 if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor(object):
    """Dense n-dimensional array with optional gradient tracking.

    Parameters
    ----------
    data: array-like
        Values, stored as a numpy array (row-major).
    requires_grad: bool
        Whether gradients should be accumulated into ``grad``.
    name: str, optional
        Label used in error messages.
    """

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        data = np.asarray(data)
        if dtype is None and not np.issubdtype(data.dtype, np.floating):
            dtype = np.float64
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    # -- construction helpers ----------------------------------------------
    @classmethod
    def _make(cls, data, parents, backward, op):
        out = cls(data)
        if _DEBUG['check_finite'] and not np.all(np.isfinite(out.data)):
            raise FloatingPointError('non-finite output in op %r' % op)
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    # -- introspection -----------------------------------------------------
    @property
    def dims(self):
        return list(self.data.shape)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return 'Tensor(shape=%s, requires_grad=%s)' % (
            self.dims, self.requires_grad)

    # -- autodiff ----------------------------------------------------------
    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self, grad=None):
        """Back-propagate from this tensor through the recorded graph."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError('backward() without a gradient needs a '
                                 'scalar, got shape %s' % (self.dims,))
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    # -- method forms ------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return absolute(self)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(data, name=None):
    """Create a trainable leaf tensor."""
    return Tensor(np.array(data, copy=True), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------
def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast(a, b, 'add')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return Tensor._make(a.data + b.data, (a, b), backward, 'add')


def neg(a):
    return Tensor._make(-a.data, (a,), lambda g: (-g,), 'neg')


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast(a, b, 'mul')

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))
    return Tensor._make(a.data * b.data, (a, b), backward, 'mul')


def div(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast(a, b, 'div')
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return Tensor._make(out, (a, b), backward, 'div')


def power(a, exponent):
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)
    return Tensor._make(a.data ** exponent, (a,), backward, 'pow')


def exp(a):
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), 'exp')


def log(a):
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,), 'log')


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,), 'sqrt')


def tanh(a):
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),), 'tanh')


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),),
                        'sigmoid')


def relu(a):
    mask = a.data > 0
    return Tensor._make(a.data * mask, (a,), lambda g: (g * mask,), 'relu')


def absolute(a):
    sign = np.sign(a.data)
    return Tensor._make(np.abs(a.data), (a,), lambda g: (g * sign,), 'abs')


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError('%s: incompatible shapes %s and %s'
                         % (op, list(a.shape), list(b.shape)))


# ---------------------------------------------------------------------------
# Reductions and shape manipulation
# ---------------------------------------------------------------------------
def reduce_sum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return Tensor._make(out, (a,), backward, 'sum')


def reduce_mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return reduce_sum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    out = a.data.reshape(shape)
    return Tensor._make(out, (a,), lambda g: (g.reshape(a.shape),), 'reshape')


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return Tensor._make(out, (a,), lambda g: (np.transpose(g, inverse),),
                        'transpose')


def index(a, key):
    """Basic or advanced indexing; repeated indices accumulate gradients."""
    out = a.data[key]

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)
    return Tensor._make(np.array(out, copy=True), (a,), backward, 'index')


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return Tensor._make(out, tensors, backward, 'concat')


def pad_rows(a, before, after):
    """Zero-pad the first axis of ``a``."""
    widths = [(before, after)] + [(0, 0)] * (a.ndim - 1)
    out = np.pad(a.data, widths)
    end = before + a.shape[0]
    return Tensor._make(out, (a,), lambda g: (g[before:end],), 'pad_rows')


# ---------------------------------------------------------------------------
# Linear algebra and neural-network primitives
# ---------------------------------------------------------------------------
def matmul(a, b):
    """Matrix product with numpy batching rules for leading dimensions."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError('matmul: incompatible shapes %s and %s'
                         % (list(a.shape), list(b.shape)))

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return Tensor._make(np.matmul(a.data, b.data), (a, b), backward, 'matmul')


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return Tensor._make(out, (a,), backward, 'softmax')


def log_softmax(a, axis=-1):
    out = a.data - logsumexp(a.data, axis=axis, keepdims=True)
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)
    return Tensor._make(out, (a,), backward, 'log_softmax')


def conv1d(x, weight, bias=None, dilation=1):
    """Same-padded 1-D convolution over the time axis.

    Parameters
    ----------
    x: Tensor (T, C_in)
    weight: Tensor (K, C_in, C_out)
    bias: Tensor (C_out,), optional
    dilation: int

    Returns
    -------
    Tensor (T, C_out)
    """
    if x.ndim != 2 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ValueError('conv1d: incompatible shapes %s and %s'
                         % (list(x.shape), list(weight.shape)))
    n_frames, c_in = x.shape
    kernel, _, c_out = weight.shape
    span = dilation * (kernel - 1)
    left = span // 2
    padded = np.pad(x.data, [(left, span - left), (0, 0)])
    idx = np.arange(n_frames)[:, None] + dilation * np.arange(kernel)[None, :]
    cols = padded[idx].reshape(n_frames, kernel * c_in)
    w2 = weight.data.reshape(kernel * c_in, c_out)
    out = cols @ w2
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gw = (cols.T @ g).reshape(weight.shape)
        gcols = (g @ w2.T).reshape(n_frames, kernel, c_in)
        gpad = np.zeros_like(padded)
        np.add.at(gpad, idx, gcols)
        gx = gpad[left:left + n_frames]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward, 'conv1d')


def embedding_lookup(table, ids):
    """Rows of ``table`` selected by integer ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise ValueError('embedding_lookup: id %d outside table of %d rows'
                         % (bad, table.shape[0]))
    return index(table, ids)


def dropout(x, rate, rng, training=True):
    """Inverted dropout; the exact identity when not training or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError('dropout rate must lie in [0, 1), got %r' % rate)
    if not training or rate == 0.0:
        return x
    keep = (rng.uniform(size=x.shape) >= rate).astype(x.dtype)
    return x * Tensor(keep / (1.0 - rate))


def layer_norm_stats(x, eps=0.0):
    """Per-vector mean and standard deviation over the last dimension.

    ``eps`` is added to the variance before the square root.
    """
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return mu, sqrt(var + eps)


def logabsdet(w):
    """log|det W| through an LU factorisation; gradient is W^-T."""
    lu, _ = linalg.lu_factor(w.data)
    diag = np.diag(lu)
    if np.any(np.abs(diag) == 0):
        raise ValueError('logabsdet: singular matrix')
    out = np.sum(np.log(np.abs(diag)))

    def backward(g):
        return (g * np.linalg.inv(w.data).T,)
    return Tensor._make(np.asarray(out, dtype=w.dtype), (w,), backward,
                        'logabsdet')


def mse(a, b):
    d = a - b
    return (d * d).mean()


def mae(a, b):
    return absolute(a - b).mean()


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------
class RngStream(object):
    """Seeded random stream backed by numpy's counter-based Philox4x64.

    Philox output depends only on (key, counter), so an identical seed yields
    an identical sequence on every platform numpy supports.
    """

    def __init__(self, seed):
        self.seed = int(seed) % (1 << 64)
        self.generator = np.random.Generator(np.random.Philox(key=self.seed))

    def spawn(self, tag):
        """Independent stream derived from (seed, tag)."""
        digest = hashlib.sha256(('%d/%s' % (self.seed, tag)).encode('utf-8'))
        return RngStream(int.from_bytes(digest.digest()[:8], 'little'))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def beta(self, a, b, size=None):
        return self.generator.beta(a, b, size)

    def get_state(self):
        return self.generator.bit_generator.state

    def set_state(self, state):
        self.generator.bit_generator.state = state


def sample_beta(alpha, rng, size=None):
    """Draw from the symmetric Beta(alpha, alpha), strictly inside (0, 1)."""
    if not alpha > 0:
        raise ValueError('Beta parameter must be positive, got %r' % alpha)
    draw = rng.beta(alpha, alpha, size)
    tiny = np.finfo(np.float64).tiny
    return np.clip(draw, tiny, np.nextafter(1.0, 0.0))


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------
@dataclass
class AdamState:
    """Moments and step counters of Adam, keyed by parameter name.

    ``t`` counts calls to :func:`adam_step`; ``steps`` counts the updates
    each parameter actually received and drives its bias correction.
    """
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=None):
    """Apply one bias-corrected Adam update in place.

    Parameters
    ----------
    params: dict name -> Tensor
    grads: dict name -> ndarray or None
        Parameters whose gradient is None are left untouched, moments and
        step count included.
    state: AdamState
    lr: float, optional
        Overrides ``state.lr`` for this step (learning-rate schedules).

    Returns
    -------
    params
    """
    if state.t < 0:
        raise ValueError('Adam step counter must be non-negative')
    for name, grad in grads.items():
        if grad is None:
            continue
        if grad.shape != params[name].shape:
            raise ValueError('adam_step: gradient shape %s does not match '
                             'parameter %s of shape %s'
                             % (list(grad.shape), name,
                                list(params[name].shape)))
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError('non-finite gradient for %s' % name)
    state.t += 1
    lr = state.lr if lr is None else lr
    for name, grad in grads.items():
        if grad is None:
            continue
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        t = state.steps.get(name, 0) + 1
        state.steps[name] = t
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    return params


def clip_grad_norm(grads, max_norm):
    """Rescale ``grads`` in place so their global L2 norm is <= max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()
                        if g is not None))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for name, g in grads.items():
            if g is not None:
                grads[name] = g * scale
    return total


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------
def finite_difference_check(f, x, h=1e-5, coords=None, eps=1e-6):
    """Compare back-propagated gradients with central differences.

    Parameters
    ----------
    f: callable
        ``f(x)`` returns a scalar Tensor. ``x`` is perturbed in place, so
        ``f`` may also close over ``x`` (e.g. a model parameter).
    x: Tensor
        Point of evaluation; must require gradients.
    h: float
        Finite-difference step.
    coords: sequence of int, optional
        Flat coordinates to check; all by default.
    eps: float
        Denominator floor of the relative error.

    Returns
    -------
    max_rel_error: float
        max over coordinates of |analytic - numeric| /
        (|analytic| + |numeric| + eps)
    """
    x.requires_grad = True
    x.grad = None
    f(x).backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    flat = x.data.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        with no_grad():
            f_plus = f(x).item()
        flat[i] = orig - h
        with no_grad():
            f_minus = f(x).item()
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / (abs(a) + abs(numeric) + eps)
        worst = max(worst, err)
    return worst
