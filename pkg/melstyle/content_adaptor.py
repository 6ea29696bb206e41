"""
Content adaptor: mix-style layer normalisation, duration prediction, the
length regulator and the style-agnostic pitch predictor.
"""
# License: simplified BSD

import numpy as np

from .layers import Linear, Module, PitchPredictor
from .numerics import Tensor, index, layer_norm_stats, mse, sample_beta


def make_style_vector(speaker, emotion):
    """Style vector ``w``: element-wise sum of the speaker and emotion
    embeddings."""
    if speaker.shape != emotion.shape:
        raise ValueError('speaker embedding %s and emotion embedding %s '
                         'differ in shape' % (list(speaker.shape),
                                              list(emotion.shape)))
    w = speaker + emotion
    if not np.all(np.isfinite(w.data)):
        raise FloatingPointError('non-finite style vector')
    return w


class ConditionalScaleBias(Module):
    """Two linear maps of the style vector giving layer-norm scale and bias.

    With ``bias=True`` the scale map starts from a unit offset so that an
    untrained layer behaves like a plain normalisation.
    """

    def __init__(self, hidden, rng, bias=True, dtype=np.float64):
        super().__init__()
        self.add_module('scale', Linear(hidden, hidden, rng, bias=bias,
                                        bias_init=1.0, dtype=dtype))
        self.add_module('shift', Linear(hidden, hidden, rng, bias=bias,
                                        dtype=dtype))

    def __call__(self, w):
        return self.scale(w), self.shift(w)


def conditional_scale_bias(csb, w):
    """``(gamma(w), beta(w))`` for a style vector or a ``(B, H)`` batch."""
    return csb(w)


def normalize(x, eps=1e-5):
    mu, sigma = layer_norm_stats(x, eps)
    return (x - mu) / sigma


def conditional_layer_norm(x, w, csb, eps=1e-5):
    gamma, beta = csb(w)
    return normalize(x, eps) * gamma + beta


def mix_style_layer_norm(xs, w_batch, csb, cfg, rng, lam=None, perm=None):
    """Mix-style layer normalisation of a batch of hidden sequences.

    Parameters
    ----------
    xs: list of Tensor
        ``B`` hidden sequences ``(L_b, H)``.
    w_batch: Tensor (B, H)
        Style vector of each sequence.
    csb: ConditionalScaleBias
    cfg: MixStyleConfig
    rng: RngStream
    lam, perm: array-like, optional
        Fix the mixing weights ``(B,)`` and the batch permutation instead of
        sampling them.

    Returns
    -------
    list of Tensor
        ``xs`` itself when not training or when the application draw exceeds
        ``cfg.p``.
    """
    if w_batch.ndim != 2 or w_batch.shape[0] != len(xs):
        raise ValueError('batch of %d hidden sequences does not match style '
                         'batch of shape %s' % (len(xs), list(w_batch.shape)))
    if not cfg.training:
        return xs
    if rng.uniform() > cfg.p:
        return xs
    n_batch = len(xs)
    if lam is None:
        lam = sample_beta(cfg.alpha, rng, size=n_batch)
    if perm is None:
        perm = rng.permutation(n_batch)
    lam = np.asarray(lam, dtype=w_batch.dtype).reshape(n_batch, 1)
    perm = np.asarray(perm, dtype=np.int64)
    gamma, beta = csb(w_batch)
    lam_t, rest = Tensor(lam), Tensor(1.0 - lam)
    gamma_mix = gamma * lam_t + index(gamma, perm) * rest
    beta_mix = beta * lam_t + index(beta, perm) * rest
    return [normalize(x, cfg.eps) * gamma_mix[b] + beta_mix[b]
            for b, x in enumerate(xs)]


class DurationPredictor(PitchPredictor):
    """Log-duration per phoneme."""

    def __init__(self, hidden, filter_size, kernel, rate, rng,
                 dtype=np.float64):
        super().__init__(hidden, 1, filter_size, kernel, rate, rng,
                         with_stats=False, dtype=dtype)

    def __call__(self, x):
        return super().__call__(x).reshape(x.shape[0])


def predict_durations(predictor, hidden, w):
    """Log frame counts ``(L,)`` from the encoder output plus style."""
    return predictor(hidden + w)


def duration_loss(log_durations, durations):
    """MSE between predicted and ground-truth durations in log scale."""
    durations = np.asarray(durations)
    if np.any(durations < 1):
        raise ValueError('durations must be at least one frame for the log '
                         'loss, got %s' % durations.tolist())
    target = Tensor(np.log(durations).astype(log_durations.dtype))
    return mse(log_durations, target)


def durations_from_log(log_durations):
    """Integer frame counts: ``round(exp(d))`` clamped to at least one."""
    values = log_durations.data if isinstance(log_durations, Tensor) \
        else np.asarray(log_durations)
    return np.maximum(np.round(np.exp(values)), 1).astype(np.int64)


def expansion_index(durations):
    """Source row of every output frame of the length regulator."""
    durations = np.asarray(durations)
    if durations.ndim != 1 or not np.issubdtype(durations.dtype, np.integer):
        raise ValueError('durations must be a 1-D integer array')
    if np.any(durations < 0):
        raise ValueError('negative duration in %s' % durations.tolist())
    if durations.sum() == 0:
        raise ValueError('all durations are zero')
    return np.repeat(np.arange(len(durations)), durations)


def length_regulate(hidden, durations):
    """Repeat row ``i`` of ``hidden`` ``durations[i]`` times."""
    durations = np.asarray(durations)
    if hidden.shape[0] != len(durations):
        raise ValueError('hidden sequence of shape %s does not match %d '
                         'durations' % (list(hidden.shape), len(durations)))
    return index(hidden, expansion_index(durations))


def predict_sap(predictor, hidden):
    """Style-agnostic pitch: ``(T, n_scales)`` coefficients and the
    predicted (mean, std) of the log-F0 contour."""
    return predictor(hidden)
