"""Objective metrics: F0 frame error, embedding cosine similarity and mel
distance."""
# License: simplified BSD

import warnings

import numpy as np

from .pitch_cwt import PitchContour

GROSS_ERROR_THRESHOLD = 0.2


def _as_f0(contour):
    if isinstance(contour, PitchContour):
        return np.asarray(contour.f0, dtype=np.float64)
    return np.asarray(contour, dtype=np.float64).ravel()


def _trim(ref, syn, what):
    if len(ref) != len(syn):
        n = min(len(ref), len(syn))
        warnings.warn('%s lengths differ (%d reference vs %d synthesized '
                      'frames); trimming to %d' % (what, len(ref), len(syn),
                                                  n))
        ref, syn = ref[:n], syn[:n]
    return ref, syn


def voicing_errors(ref, syn):
    """Boolean mask of frames whose voicing decisions disagree."""
    ref, syn = _trim(_as_f0(ref), _as_f0(syn), 'contour')
    return (ref > 0) != (syn > 0)


def gross_pitch_errors(ref, syn, threshold=GROSS_ERROR_THRESHOLD):
    """Boolean mask of frames voiced in both contours whose relative
    deviation from the reference exceeds ``threshold``."""
    ref, syn = _trim(_as_f0(ref), _as_f0(syn), 'contour')
    both = (ref > 0) & (syn > 0)
    errors = np.zeros(len(ref), dtype=bool)
    errors[both] = np.abs(syn[both] - ref[both]) / ref[both] > threshold
    return errors


def metric_ffe(ref, syn, threshold=GROSS_ERROR_THRESHOLD):
    """ F0 frame error between a reference and a synthesized contour.

    Parameters
    ----------
    ref: PitchContour or array (T,)
        Reference F0 in Hz, 0 for unvoiced frames.
    syn: PitchContour or array (T',)
        Synthesized F0. Both contours are trimmed to the shorter length with
        a warning when they differ.
    threshold: float
        Relative deviation, measured against the reference, counted as a
        gross pitch error.

    Returns
    -------
    ffe: float in [0, 1]
        Fraction of frames with a voicing decision error or a gross pitch
        error.
    """
    ref, syn = _trim(_as_f0(ref), _as_f0(syn), 'contour')
    if len(ref) == 0:
        raise ValueError('cannot compute FFE on zero-length contours')
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        errors = voicing_errors(ref, syn) | gross_pitch_errors(ref, syn,
                                                               threshold)
    return float(errors.sum()) / len(ref)


def metric_cosine(e1, e2):
    """Cosine similarity ``e1 . e2 / (|e1| |e2|)`` of two embeddings."""
    e1 = np.asarray(e1, dtype=np.float64).ravel()
    e2 = np.asarray(e2, dtype=np.float64).ravel()
    if e1.shape != e2.shape:
        raise ValueError('embedding shapes differ: %s vs %s'
                         % (e1.shape, e2.shape))
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 == 0 or n2 == 0:
        raise ValueError('cosine similarity is undefined for a zero vector')
    return float(np.clip(e1 @ e2 / (n1 * n2), -1.0, 1.0))


def metric_mel_mae(ref, syn):
    """Mean absolute error between two mel arrays ``(T, n_mels)``, trimmed
    to the shorter one."""
    ref = np.asarray(getattr(ref, 'frames', ref), dtype=np.float64)
    syn = np.asarray(getattr(syn, 'frames', syn), dtype=np.float64)
    if ref.shape[1:] != syn.shape[1:]:
        raise ValueError('mel widths differ: %s vs %s'
                         % (ref.shape, syn.shape))
    ref, syn = _trim(ref, syn, 'mel')
    if len(ref) == 0:
        raise ValueError('cannot compare zero-length mel-spectrograms')
    return float(np.abs(ref - syn).mean())
