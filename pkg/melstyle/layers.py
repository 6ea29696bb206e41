"""
Parameter containers and the layers shared by the encoders, predictors and
the post-net conditioner.

All sequence layers work on one utterance at a time: inputs are ``(T, C)``
tensors with time on the first axis.
"""
# License: simplified BSD

from collections import OrderedDict

import numpy as np

from .numerics import (Tensor, conv1d, dropout, embedding_lookup,
                       layer_norm_stats, parameter, relu, sigmoid, tanh)


class Module(object):
    """Minimal container tracking parameters, buffers and sub-modules.

    Parameters and sub-modules are registered explicitly with
    :meth:`add_parameter` and :meth:`add_module`; a module registered under
    several names (parameter tying) is reported once by
    :meth:`named_parameters`.
    """

    def __init__(self):
        self._parameters = OrderedDict()
        self._modules = OrderedDict()
        self._buffers = OrderedDict()
        self.training = True
        self._rng = None

    def add_parameter(self, name, data):
        p = parameter(data, name=name)
        self._parameters[name] = p
        setattr(self, name, p)
        return p

    def add_module(self, name, module):
        self._modules[name] = module
        setattr(self, name, module)
        return module

    def add_buffer(self, name, data):
        self._buffers[name] = np.asarray(data)

    def buffer(self, name):
        return self._buffers[name]

    def set_buffer(self, name, data):
        if name not in self._buffers:
            raise KeyError(name)
        self._buffers[name] = np.asarray(data)

    def _walk(self, prefix, seen):
        if id(self) in seen:
            return
        seen.add(id(self))
        yield prefix, self
        for name, module in self._modules.items():
            yield from module._walk(prefix + name + '.', seen)

    def modules(self):
        """Unique sub-modules (self included) with their dotted prefix."""
        return list(self._walk('', set()))

    def named_parameters(self):
        params = OrderedDict()
        for prefix, module in self.modules():
            for name, p in module._parameters.items():
                params[prefix + name] = p
        return params

    def named_buffers(self):
        buffers = OrderedDict()
        for prefix, module in self.modules():
            for name, b in module._buffers.items():
                buffers[prefix + name] = b
        return buffers

    def load_buffers(self, buffers):
        for prefix, module in self.modules():
            for name in module._buffers:
                if prefix + name in buffers:
                    module._buffers[name] = np.asarray(buffers[prefix + name])

    def state_dict(self):
        return OrderedDict((name, p.data.copy())
                           for name, p in self.named_parameters().items())

    def load_state_dict(self, state, strict=True):
        params = self.named_parameters()
        if strict:
            missing = set(params) - set(state)
            unexpected = set(state) - set(params)
            if missing or unexpected:
                raise ValueError('parameter mismatch: missing %s, unexpected '
                                 '%s' % (sorted(missing), sorted(unexpected)))
        for name, p in params.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError('parameter %s: stored shape %s does not '
                                 'match model shape %s'
                                 % (name, list(value.shape), list(p.shape)))
            p.data = value.astype(p.dtype, copy=True)

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def train(self, mode=True):
        for _, module in self.modules():
            module.training = mode
        return self

    def eval(self):
        return self.train(False)

    def seed_dropout(self, rng):
        """Share one random stream among all dropout sites."""
        for _, module in self.modules():
            module._rng = rng
        return self

    def dropout(self, x, rate):
        if not self.training or rate == 0.0:
            return x
        if self._rng is None:
            raise ValueError('%s: dropout in training mode needs a random '
                             'stream, call seed_dropout first'
                             % type(self).__name__)
        return dropout(x, rate, self._rng, training=True)


def glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Linear(Module):
    """``x @ W + b`` on the last axis; accepts 1-D or 2-D inputs."""

    def __init__(self, n_in, n_out, rng, bias=True, zero_init=False,
                 bias_init=0.0, dtype=np.float64):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        if zero_init:
            weight = np.zeros((n_in, n_out), dtype=dtype)
        else:
            weight = glorot(rng, (n_in, n_out), n_in, n_out, dtype)
        self.add_parameter('weight', weight)
        self.use_bias = bias
        if bias:
            self.add_parameter('bias', np.full(n_out, bias_init, dtype=dtype))

    def __call__(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError('Linear: input shape %s does not match weight '
                             'shape %s' % (list(x.shape),
                                           list(self.weight.shape)))
        vector = x.ndim == 1
        if vector:
            x = x.reshape(1, self.n_in)
        y = x @ self.weight
        if self.use_bias:
            y = y + self.bias
        return y.reshape(self.n_out) if vector else y


class Conv1d(Module):
    """Same-padded convolution over time, ``(T, C_in) -> (T, C_out)``."""

    def __init__(self, n_in, n_out, kernel, rng, dilation=1, zero_init=False,
                 dtype=np.float64):
        super().__init__()
        self.dilation = dilation
        shape = (kernel, n_in, n_out)
        if zero_init:
            weight = np.zeros(shape, dtype=dtype)
        else:
            weight = glorot(rng, shape, kernel * n_in, kernel * n_out, dtype)
        self.add_parameter('weight', weight)
        self.add_parameter('bias', np.zeros(n_out, dtype=dtype))

    def __call__(self, x):
        return conv1d(x, self.weight, self.bias, dilation=self.dilation)


class Embedding(Module):

    def __init__(self, n_symbols, dim, rng, dtype=np.float64):
        super().__init__()
        self.add_parameter(
            'table', (rng.normal(size=(n_symbols, dim)) /
                      np.sqrt(dim)).astype(dtype))

    def __call__(self, ids):
        return embedding_lookup(self.table, ids)


class LayerNorm(Module):
    """Layer normalisation over the last axis with learned affine output."""

    def __init__(self, dim, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.add_parameter('gamma', np.ones(dim, dtype=dtype))
        self.add_parameter('beta', np.zeros(dim, dtype=dtype))

    def __call__(self, x):
        mu, sigma = layer_norm_stats(x, self.eps)
        return (x - mu) / sigma * self.gamma + self.beta


class ConvStack(Module):
    """Repeated conv -> relu -> layer norm -> dropout."""

    def __init__(self, n_in, channels, n_layers, kernel, rate, rng,
                 dtype=np.float64):
        super().__init__()
        self.rate = rate
        self.n_layers = n_layers
        for i in range(n_layers):
            self.add_module('conv%d' % i, Conv1d(
                n_in if i == 0 else channels, channels, kernel, rng,
                dtype=dtype))
            self.add_module('norm%d' % i, LayerNorm(channels, dtype=dtype))

    def __call__(self, x):
        for i in range(self.n_layers):
            x = relu(getattr(self, 'conv%d' % i)(x))
            x = self.dropout(getattr(self, 'norm%d' % i)(x), self.rate)
        return x


class WaveNet(Module):
    """Non-causal gated dilated convolutions with residual and skip paths.

    Layer ``i`` uses dilation ``2**i``. An optional condition sequence of the
    same length is projected and added before the gate.
    """

    def __init__(self, channels, n_layers, kernel, rng, cond_channels=None,
                 rate=0.0, dtype=np.float64):
        super().__init__()
        self.channels = channels
        self.n_layers = n_layers
        self.rate = rate
        if cond_channels:
            self.add_module('cond', Linear(cond_channels,
                                           2 * channels * n_layers, rng,
                                           dtype=dtype))
        else:
            self.cond = None
        for i in range(n_layers):
            self.add_module('dilated%d' % i, Conv1d(
                channels, 2 * channels, kernel, rng, dilation=2 ** i,
                dtype=dtype))
            width = 2 * channels if i < n_layers - 1 else channels
            self.add_module('res_skip%d' % i,
                            Linear(channels, width, rng, dtype=dtype))

    def __call__(self, x, cond=None):
        c = self.channels
        if self.cond is not None:
            if cond is None:
                raise ValueError('WaveNet built with a condition input '
                                 'needs cond')
            cond = self.cond(cond)
        skip = None
        for i in range(self.n_layers):
            h = getattr(self, 'dilated%d' % i)(x)
            if cond is not None:
                h = h + cond[:, 2 * c * i:2 * c * (i + 1)]
            acts = tanh(h[:, :c]) * sigmoid(h[:, c:])
            acts = self.dropout(acts, self.rate)
            out = getattr(self, 'res_skip%d' % i)(acts)
            if i < self.n_layers - 1:
                x = x + out[:, :c]
                part = out[:, c:]
            else:
                part = out
            skip = part if skip is None else skip + part
        return skip


class PitchPredictor(Module):
    """Two conv layers (relu, layer norm, dropout) and a per-frame linear
    head, plus an utterance-level head predicting a (mean, std) pair.

    Serves as the duration predictor (one output, no statistics) and as
    both pitch predictors.
    """

    def __init__(self, n_in, n_out, filter_size, kernel, rate, rng,
                 with_stats=True, zero_init=False, dtype=np.float64):
        super().__init__()
        self.add_module('convs', ConvStack(n_in, filter_size, 2, kernel, rate,
                                           rng, dtype=dtype))
        self.add_module('head', Linear(filter_size, n_out, rng,
                                       zero_init=zero_init, dtype=dtype))
        self.with_stats = with_stats
        if with_stats:
            self.add_module('stats_head', Linear(filter_size, 2, rng,
                                                 zero_init=zero_init,
                                                 dtype=dtype))
        else:
            self.stats_head = None

    def __call__(self, x):
        h = self.convs(x)
        out = self.head(h)
        if not self.with_stats:
            return out
        return out, self.stats_head(h.mean(axis=0))
