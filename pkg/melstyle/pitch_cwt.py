"""
Pitch contours as multi-scale wavelet spectrograms.

A contour is turned into a spectrogram by interpolating log-F0 through
unvoiced frames, standardising it and convolving with Mexican-hat wavelets
at dyadic scales ``2 * 2**j`` frames. The inverse is a weighted sum of the
scales, ``(j + 3.5) ** -2.5``, re-standardised and then mapped back to Hz
with the recorded mean and standard deviation.
"""
# License: simplified BSD

import logging
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .numerics import Tensor, add, mse

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass
class PitchContour:
    """F0 in Hz per frame, 0 marking unvoiced frames."""
    f0: np.ndarray

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1)
        if np.any(self.f0 < 0) or not np.all(np.isfinite(self.f0)):
            raise ValueError('pitch contour must be finite and non-negative')

    def __len__(self):
        return len(self.f0)

    @property
    def voiced(self):
        return self.f0 > 0


@dataclass
class PitchSpectrogram:
    """Wavelet coefficients ``(T, n_scales)`` of standardised log-F0 and the
    ``[mean, std]`` of the log-F0 contour.

    Both fields are numpy arrays for analysed contours and Tensors for
    predictions.
    """
    coeffs: object
    stats: object

    @property
    def mean(self):
        return float(_values(self.stats)[0])

    @property
    def std(self):
        return float(_values(self.stats)[1])

    @property
    def shape(self):
        return tuple(self.coeffs.shape)


def _values(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def mexican_hat(t):
    """Ricker wavelet with unit L2 norm."""
    t = np.asarray(t, dtype=np.float64)
    norm = 2.0 / (np.sqrt(3.0) * np.pi ** 0.25)
    return norm * (1.0 - t ** 2) * np.exp(-0.5 * t ** 2)


def wavelet_scales(n_scales):
    return 2.0 * 2.0 ** np.arange(n_scales)


def cwt(signal, n_scales=10):
    """Mexican-hat transform of a 1-D signal at dyadic scales.

    The signal is padded symmetrically by the kernel half-width so that
    every output frame sees a full kernel.

    Returns
    -------
    coeffs: ndarray (T, n_scales)
    """
    signal = np.asarray(signal, dtype=np.float64)
    coeffs = np.empty((len(signal), n_scales))
    for j, scale in enumerate(wavelet_scales(n_scales)):
        half = int(np.ceil(5 * scale))
        kernel = mexican_hat(np.arange(-half, half + 1) / scale) \
            / np.sqrt(scale)
        padded = np.pad(signal, half, mode='symmetric')
        coeffs[:, j] = fftconvolve(padded, kernel, mode='valid')
    return coeffs


def icwt(coeffs):
    """Standardised signal from wavelet coefficients."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    weights = (np.arange(coeffs.shape[1]) + 1 + 2.5) ** -2.5
    return _standardize(coeffs @ weights)[0]


def _standardize(signal):
    mean, std = signal.mean(), signal.std()
    if std < STD_FLOOR:
        return np.zeros_like(signal), mean, 0.0
    return (signal - mean) / std, mean, std


def interpolate_log_f0(f0):
    """log-F0 with unvoiced gaps filled linearly between voiced neighbours
    and edge gaps held at the nearest voiced value."""
    f0 = np.asarray(f0, dtype=np.float64)
    voiced = f0 > 0
    if not voiced.any():
        raise ValueError('pitch contour has no voiced frame')
    frames = np.arange(len(f0))
    return np.interp(frames, frames[voiced], np.log(f0[voiced]))


def contour_to_spectrogram(contour, n_scales=10):
    """Analyse a :class:`PitchContour` (or raw F0 array)."""
    f0 = contour.f0 if isinstance(contour, PitchContour) else contour
    log_f0 = interpolate_log_f0(f0)
    standardized, mean, std = _standardize(log_f0)
    if std == 0.0:
        logger.debug('constant log-F0 contour, coefficients are zero')
    return PitchSpectrogram(cwt(standardized, n_scales),
                            np.array([mean, std]))


def spectrogram_to_contour(spectrogram, voiced):
    """Reconstruct F0 in Hz; frames where ``voiced`` is False are 0."""
    coeffs = _values(spectrogram.coeffs)
    voiced = np.asarray(voiced, dtype=bool).reshape(-1)
    if len(voiced) != coeffs.shape[0]:
        raise ValueError('voicing mask of length %d does not match %d '
                         'spectrogram frames' % (len(voiced), coeffs.shape[0]))
    std = max(spectrogram.std, 0.0)
    log_f0 = icwt(coeffs) * std + spectrogram.mean
    return np.where(voiced, np.exp(log_f0), 0.0)


def joint_pitch(sap, ssp):
    """Sum of the style-agnostic and style-specific predictions."""
    if tuple(sap.coeffs.shape) != tuple(ssp.coeffs.shape):
        raise ValueError('pitch spectrograms of shapes %s and %s cannot be '
                         'combined' % (list(sap.coeffs.shape),
                                       list(ssp.coeffs.shape)))
    return PitchSpectrogram(_sum(sap.coeffs, ssp.coeffs),
                            _sum(sap.stats, ssp.stats))


def _sum(a, b):
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        return add(a if isinstance(a, Tensor) else Tensor(a),
                   b if isinstance(b, Tensor) else Tensor(b))
    return np.asarray(a) + np.asarray(b)


def pitch_loss(predicted, target):
    """Coefficient MSE plus MSE of the (mean, std) side channel."""
    if tuple(predicted.coeffs.shape) != tuple(target.coeffs.shape):
        raise ValueError('predicted pitch spectrogram %s does not match '
                         'target %s' % (list(predicted.coeffs.shape),
                                        list(target.coeffs.shape)))
    coeffs = _as_tensor(predicted.coeffs)
    stats = _as_tensor(predicted.stats)
    return (mse(coeffs, Tensor(_values(target.coeffs).astype(coeffs.dtype))) +
            mse(stats, Tensor(_values(target.stats).astype(stats.dtype))))


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def pitch_bin_edges(f0_min, f0_max, n_bins):
    """Log-spaced edges of the voiced bins ``1 .. n_bins - 1``."""
    return np.exp(np.linspace(np.log(f0_min), np.log(f0_max), n_bins - 1))


def quantize_pitch(f0, f0_min, f0_max, n_bins):
    """Bin ids for the pitch embedding; 0 is reserved for unvoiced."""
    f0 = np.asarray(f0, dtype=np.float64)
    edges = pitch_bin_edges(f0_min, f0_max, n_bins)
    ids = np.clip(np.searchsorted(edges, f0), 1, n_bins - 1)
    return np.where(f0 > 0, ids, 0).astype(np.int64)


def warp_mask(voiced, length):
    """Nearest-frame resampling of a voicing mask to ``length`` frames."""
    voiced = np.asarray(voiced, dtype=bool)
    if length < 1:
        raise ValueError('target length must be positive')
    src = np.minimum((np.arange(length) * len(voiced)) // length,
                     len(voiced) - 1)
    return voiced[src]


def warp_contour(f0, length):
    """Nearest-frame resampling of an F0 contour to ``length`` frames."""
    f0 = np.asarray(f0, dtype=np.float64)
    src = np.minimum((np.arange(length) * len(f0)) // length, len(f0) - 1)
    return f0[src]
