"""
Conditional Glow post-net.

Fine mel-spectrograms are squeezed along time and mapped to a standard
normal latent by a chain of (actnorm, invertible 1x1 convolution, affine
coupling) steps conditioned on the coarse mel and the decoder input. Step
parameters are tied: step ``k`` uses parameter set ``FlowConfig.slot(k)``.
"""
# License: simplified BSD

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import ortho_group

from .layers import Linear, Module, WaveNet
from .numerics import (Tensor, absolute, concat, log, logabsdet, no_grad,
                       pad_rows, sigmoid)

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)
MIN_SCALE = 1e-12


@dataclass
class FlowState:
    """Latent ``z`` of a squeezed input, the accumulated log-determinant and
    the number of padding frames added before squeezing."""
    z: Tensor
    logdet: Tensor
    pad: int = 0


def squeeze(x, factor):
    """``(T, C) -> (ceil(T / f), f * C)`` grouping consecutive frames.

    Returns the squeezed tensor and the number of zero frames appended.
    """
    n_frames, n_channels = x.shape
    pad = (-n_frames) % factor
    if pad:
        x = pad_rows(x, 0, pad)
    return x.reshape((n_frames + pad) // factor, factor * n_channels), pad


def unsqueeze(x, factor, pad=0):
    """Inverse of :func:`squeeze`, dropping ``pad`` trailing frames."""
    n_rows, width = x.shape
    out = x.reshape(n_rows * factor, width // factor)
    if pad:
        out = out[:n_rows * factor - pad]
    return out


class ActNorm(Module):
    """``y = s * (x + b)`` per channel."""

    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        self.add_parameter('scale', np.ones(channels, dtype=dtype))
        self.add_parameter('bias', np.zeros(channels, dtype=dtype))
        self.add_buffer('initialized', np.array(False))

    def initialize(self, x):
        """Set ``(s, b)`` so that ``x`` maps to zero mean, unit variance."""
        x = np.asarray(x)
        self.bias.data = (-x.mean(axis=0)).astype(self.bias.dtype)
        self.scale.data = (1.0 / (x.std(axis=0) + 1e-9)).astype(
            self.scale.dtype)
        self.set_buffer('initialized', np.array(True))

    def _check(self):
        if np.any(np.abs(self.scale.data) < MIN_SCALE):
            raise FloatingPointError('actnorm scale below %g is not '
                                     'invertible' % MIN_SCALE)

    def __call__(self, x):
        self._check()
        logdet = log(absolute(self.scale)).sum() * float(x.shape[0])
        return (x + self.bias) * self.scale, logdet

    def inverse(self, y):
        self._check()
        return y / self.scale - self.bias


class InvConv1x1(Module):
    """Channel mixing ``y = x W`` with a random orthogonal initial ``W``."""

    def __init__(self, channels, rng, dtype=np.float64):
        super().__init__()
        if channels > 1:
            weight = ortho_group.rvs(channels, random_state=rng.generator)
        else:
            weight = np.ones((1, 1))
        self.add_parameter('weight', weight.astype(dtype))

    def __call__(self, x):
        return x @ self.weight, logabsdet(self.weight) * float(x.shape[0])

    def inverse(self, y):
        return y @ Tensor(np.linalg.inv(self.weight.data))


class AffineCoupling(Module):
    """Transforms the second half of the channels with a scale and shift
    predicted from the first half and the condition.

    The scale is ``sigmoid(raw + offset) / sigmoid(offset)``; with the
    zero-initialised output layer the coupling starts as the identity.
    """

    def __init__(self, channels, cond_channels, cfg, rng, dtype=np.float64):
        super().__init__()
        self.split = channels // 2
        self.n_out = channels - self.split
        self.offset = cfg.scale_offset
        self.add_module('start', Linear(self.split, cfg.channels, rng,
                                        dtype=dtype))
        self.add_module('wavenet', WaveNet(cfg.channels, cfg.wavenet_layers,
                                           cfg.kernel, rng,
                                           cond_channels=cond_channels,
                                           dtype=dtype))
        self.add_module('end', Linear(cfg.channels, 2 * self.n_out, rng,
                                      zero_init=True, dtype=dtype))

    def _scale_shift(self, x_a, cond):
        out = self.end(self.wavenet(self.start(x_a), cond))
        raw, shift = out[:, :self.n_out], out[:, self.n_out:]
        norm = 1.0 / (1.0 + np.exp(-self.offset))
        return sigmoid(raw + self.offset) * (1.0 / norm), shift

    def __call__(self, x, cond):
        x_a, x_b = x[:, :self.split], x[:, self.split:]
        scale, shift = self._scale_shift(x_a, cond)
        y = concat([x_a, x_b * scale + shift], axis=1)
        return y, log(scale).sum()

    def inverse(self, y, cond):
        y_a, y_b = y[:, :self.split], y[:, self.split:]
        scale, shift = self._scale_shift(y_a, cond)
        return concat([y_a, (y_b - shift) / scale], axis=1)


class FlowStep(Module):

    def __init__(self, channels, cond_channels, cfg, rng, dtype=np.float64):
        super().__init__()
        self.add_module('actnorm', ActNorm(channels, dtype=dtype))
        self.add_module('invconv', InvConv1x1(channels, rng, dtype=dtype))
        self.add_module('coupling', AffineCoupling(channels, cond_channels,
                                                   cfg, rng, dtype=dtype))

    def __call__(self, x, cond):
        x, ld_norm = self.actnorm(x)
        x, ld_conv = self.invconv(x)
        x, ld_coupling = self.coupling(x, cond)
        return x, ld_norm + ld_conv + ld_coupling

    def inverse(self, y, cond):
        y = self.coupling.inverse(y, cond)
        y = self.invconv.inverse(y)
        return self.actnorm.inverse(y)


class FlowPostNet(Module):
    """Chain of tied flow steps over squeezed mel frames.

    Parameters
    ----------
    n_mels: int
    cond_dim: int
        Width of the frame-level condition (coarse mel and decoder input).
    cfg: FlowConfig
    rng: RngStream
    """

    def __init__(self, n_mels, cond_dim, cfg, rng, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        self.n_mels = n_mels
        self.dtype = dtype
        channels = n_mels * cfg.squeeze
        for slot in range(cfg.n_unique):
            self.add_module('step%d' % slot, FlowStep(
                channels, cond_dim * cfg.squeeze, cfg, rng, dtype=dtype))
        self.add_buffer('initialized', np.array(False))

    def step(self, k):
        return getattr(self, 'step%d' % self.cfg.slot(k))

    def squeeze_condition(self, cond):
        return squeeze(cond.detach(), self.cfg.squeeze)[0]

    def forward(self, mel, cond):
        """Map a mel ``(T, n_mels)`` to a :class:`FlowState`."""
        x, pad = squeeze(mel, self.cfg.squeeze)
        c = self.squeeze_condition(cond)
        logdet = Tensor(np.zeros((), dtype=self.dtype))
        for k in range(self.cfg.steps):
            x, ld = self.step(k)(x, c)
            if not (np.all(np.isfinite(x.data)) and
                    np.isfinite(ld.item())):
                raise FloatingPointError('non-finite value in flow step %d'
                                         % k)
            logdet = logdet + ld
        return FlowState(x, logdet, pad)

    def inverse(self, z, cond, pad=0):
        c = self.squeeze_condition(cond)
        x = z
        for k in reversed(range(self.cfg.steps)):
            x = self.step(k).inverse(x, c)
            if not np.all(np.isfinite(x.data)):
                raise FloatingPointError('non-finite value in inverse flow '
                                         'step %d' % k)
        return unsqueeze(x, self.cfg.squeeze, pad)

    def initialize(self, mels, conds):
        """Data-dependent actnorm initialisation over a batch; runs once."""
        if bool(self.buffer('initialized')):
            return False
        with no_grad():
            states = [squeeze(m, self.cfg.squeeze)[0] for m in mels]
            squeezed = [self.squeeze_condition(c) for c in conds]
            for k in range(self.cfg.steps):
                step = self.step(k)
                if not bool(step.actnorm.buffer('initialized')):
                    step.actnorm.initialize(
                        np.concatenate([s.data for s in states]))
                states = [step(s, c)[0] for s, c in zip(states, squeezed)]
        self.set_buffer('initialized', np.array(True))
        logger.debug('flow actnorm initialised on %d utterances', len(mels))
        return True


def gaussian_log_likelihood(z):
    return -0.5 * (z * z).sum() - 0.5 * z.size * LOG_2PI


def postnet_nll(postnet, mel, cond):
    """Exact negative log-likelihood per dimension of ``mel``.

    Returns
    -------
    state: FlowState
    nll: Tensor
    """
    state = postnet.forward(mel, cond)
    nll = -(gaussian_log_likelihood(state.z) + state.logdet) * \
        (1.0 / state.z.size)
    return state, nll


def postnet_sample(postnet, cond, temperature=0.8, rng=None):
    """Draw ``z ~ N(0, temperature**2)`` and invert the flow.

    Returns
    -------
    Tensor (T, n_mels)
        ``T`` is the number of condition frames.
    """
    if temperature < 0:
        raise ValueError('temperature must be non-negative, got %r'
                         % temperature)
    factor = postnet.cfg.squeeze
    n_frames = cond.shape[0]
    pad = (-n_frames) % factor
    shape = ((n_frames + pad) // factor, postnet.n_mels * factor)
    if temperature == 0:
        z = np.zeros(shape, dtype=postnet.dtype)
    else:
        if rng is None:
            raise ValueError('sampling at a positive temperature needs a '
                             'random stream')
        z = (temperature * rng.normal(size=shape)).astype(postnet.dtype)
    with no_grad():
        return postnet.inverse(Tensor(z), cond, pad)
