"""
Multi-level style adaptor.

Global speaker and emotion embeddings come from a small convolutional
encoder trained with an additive-margin softmax (or from precomputed
external embeddings). Local style is extracted at frame, phoneme and word
level, each passed through its own vector-quantisation codebook, and merged
into the content sequence by parameter-free scaled dot-product attention.
"""
# License: simplified BSD

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import MiniBatchKMeans

from .backbone import check_boundaries, sinusoidal_encoding
from .layers import ConvStack, Linear, Module, WaveNet
from .numerics import (Tensor, dropout, log_softmax, matmul, softmax, sqrt,
                       reduce_sum)

logger = logging.getLogger(__name__)

COLLAPSE_SHARE = 0.9


@dataclass
class GlobalStyle:
    speaker: Tensor
    emotion: Tensor

    @property
    def combined(self):
        return self.speaker + self.emotion

    def detach(self):
        return GlobalStyle(self.speaker.detach(), self.emotion.detach())


@dataclass
class LocalStyle:
    """Frame (``S_u``), phoneme (``S_p``) and word (``S_w``) level style
    sequences."""
    frame: Tensor
    phoneme: Tensor
    word: Tensor

    def levels(self):
        return [('frame', self.frame), ('phoneme', self.phoneme),
                ('word', self.word)]


@dataclass
class StyleBundle:
    global_style: GlobalStyle
    local: LocalStyle = None
    indices: dict = field(default_factory=dict)
    commit_loss: Tensor = None


class GlobalStyleEncoder(Module):
    """Convolutional frame encoder, average pooling over time and two linear
    heads. Also holds the AM-softmax class weights and the projections
    applied to external embeddings."""

    def __init__(self, n_mels, hidden, n_layers, n_speakers, n_emotions,
                 external_dim, rng, dtype=np.float64):
        super().__init__()
        self.hidden = hidden
        self.external_dim = external_dim
        self.add_module('prenet', Linear(n_mels, hidden, rng, dtype=dtype))
        self.add_module('convs', ConvStack(hidden, hidden, n_layers, 3, 0.0,
                                           rng, dtype=dtype))
        self.add_module('speaker_head', Linear(hidden, hidden, rng,
                                               dtype=dtype))
        self.add_module('emotion_head', Linear(hidden, hidden, rng,
                                               dtype=dtype))
        self.add_module('speaker_projection', Linear(external_dim, hidden, rng,
                                                     dtype=dtype))
        self.add_module('emotion_projection', Linear(external_dim, hidden, rng,
                                                     dtype=dtype))
        self.add_parameter('speaker_classes', rng.normal(
            size=(n_speakers, hidden)).astype(dtype))
        self.add_parameter('emotion_classes', rng.normal(
            size=(n_emotions, hidden)).astype(dtype))

    def __call__(self, mel):
        pooled = self.convs(self.prenet(mel)).mean(axis=0)
        return GlobalStyle(self.speaker_head(pooled),
                           self.emotion_head(pooled))

    def project(self, embedding, which):
        """Map an external ``[external_dim]`` or ``[hidden]`` embedding."""
        embedding = np.asarray(embedding).reshape(-1)
        x = Tensor(embedding.astype(self.prenet.weight.dtype))
        if len(embedding) == self.external_dim:
            return getattr(self, which + '_projection')(x)
        if len(embedding) == self.hidden:
            return x
        raise ValueError('external %s embedding has %d dimensions, expected '
                         '%d or %d' % (which, len(embedding),
                                       self.external_dim, self.hidden))


def encode_global(encoder, mel, speaker_embedding=None,
                  emotion_embedding=None):
    """Global speaker and emotion embeddings of a reference.

    External embeddings, when given, replace the corresponding head output.
    """
    mel = mel if isinstance(mel, Tensor) else Tensor(
        np.asarray(mel, dtype=encoder.prenet.weight.dtype))
    if mel.shape[0] < 1:
        raise ValueError('reference mel-spectrogram is empty')
    style = encoder(mel)
    if speaker_embedding is not None:
        style.speaker = encoder.project(speaker_embedding, 'speaker')
    if emotion_embedding is not None:
        style.emotion = encoder.project(emotion_embedding, 'emotion')
    return style


def _l2_normalize(x, what):
    norms = np.sqrt(np.sum(x.data ** 2, axis=-1))
    if np.any(norms == 0):
        raise ValueError('zero-norm %s row at index %d'
                         % (what, int(np.flatnonzero(norms == 0)[0])))
    return x / sqrt(reduce_sum(x * x, axis=-1, keepdims=True))


def am_softmax_loss(embeddings, labels, class_weights, margin=0.2,
                    scale=30.0):
    """Additive-margin softmax loss.

    Parameters
    ----------
    embeddings: Tensor (B, D)
    labels: array-like of int (B,)
    class_weights: Tensor (C, D)
    margin, scale: float

    Returns
    -------
    Tensor
        Scalar mean loss.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if embeddings.ndim == 1:
        embeddings = embeddings.reshape(1, embeddings.shape[0])
    n_classes = class_weights.shape[0]
    if len(labels) != embeddings.shape[0]:
        raise ValueError('%d labels for embeddings of shape %s'
                         % (len(labels), list(embeddings.shape)))
    if np.any((labels < 0) | (labels >= n_classes)):
        raise ValueError('labels %s outside [0, %d)'
                         % (labels.tolist(), n_classes))
    cosine = matmul(_l2_normalize(embeddings, 'embedding'),
                    _l2_normalize(class_weights, 'class weight').T)
    onehot = np.zeros(cosine.shape, dtype=cosine.dtype)
    onehot[np.arange(len(labels)), labels] = margin
    logits = (cosine - Tensor(onehot)) * scale
    picked = log_softmax(logits, axis=-1)[np.arange(len(labels)), labels]
    return -picked.mean()


def pooling_matrix(boundaries, n_frames, dtype=np.float64):
    """``(N, T)`` averaging matrix of the segments starting at
    ``boundaries``."""
    boundaries = np.asarray(boundaries, dtype=np.int64)
    check_boundaries(boundaries, n_frames)
    ends = np.append(boundaries[1:], n_frames)
    pool = np.zeros((len(boundaries), n_frames), dtype=dtype)
    for n, (start, end) in enumerate(zip(boundaries, ends)):
        pool[n, start:end] = 1.0 / (end - start)
    return pool


def pool_by_boundaries(seq, boundaries):
    """Mean of ``seq`` rows over each segment ``[b_n, b_{n+1})``."""
    return matmul(Tensor(pooling_matrix(boundaries, seq.shape[0],
                                        seq.dtype)), seq)


def phoneme_frame_boundaries(durations):
    """First frame of every phoneme."""
    durations = np.asarray(durations, dtype=np.int64)
    return np.concatenate([[0], np.cumsum(durations)[:-1]])


def word_frame_boundaries(durations, word_boundaries):
    """First frame of every word."""
    return phoneme_frame_boundaries(durations)[np.asarray(word_boundaries)]


def segment_lengths(boundaries, n_frames):
    return np.diff(np.append(np.asarray(boundaries), n_frames))


class Codebook(Module):
    """``K x D`` code matrix with an assignment histogram."""

    def __init__(self, size, dim, rng, dtype=np.float64):
        super().__init__()
        if size < 1:
            raise ValueError('codebook needs at least one code')
        self.add_parameter('codes', (rng.normal(size=(size, dim)) /
                                     np.sqrt(dim)).astype(dtype))
        self.add_buffer('usage', np.zeros(size, dtype=np.int64))
        self.add_buffer('initialized', np.array(False))

    @property
    def size(self):
        return self.codes.shape[0]

    def record(self, indices):
        self.set_buffer('usage', self.buffer('usage') +
                        np.bincount(indices, minlength=self.size))

    def top_share(self):
        usage = self.buffer('usage')
        total = usage.sum()
        return float(usage.max() / total) if total else 0.0

    def check_collapse(self, name='codebook'):
        share = self.top_share()
        if share >= COLLAPSE_SHARE:
            logger.warning('%s collapse: one code takes %.0f%% of '
                           'assignments', name, 100 * share)
        return share

    def kmeans_init(self, vectors, seed=0):
        """Data-dependent initialisation, run once, on encoder outputs."""
        if bool(self.buffer('initialized')):
            return False
        vectors = np.asarray(vectors, dtype=np.float64)
        size = self.size
        if len(vectors) < size:
            rng = np.random.RandomState(seed)
            picks = rng.randint(len(vectors), size=size - len(vectors))
            extra = vectors[picks]
            extra = extra + 1e-3 * rng.standard_normal(extra.shape)
            vectors = np.concatenate([vectors, extra])
        with warnings.catch_warnings():
            warnings.simplefilter('ignore')
            mbk = MiniBatchKMeans(init='k-means++', n_clusters=size,
                                  batch_size=1000, n_init=3,
                                  max_no_improvement=10, verbose=0,
                                  random_state=seed).fit(vectors)
        self.codes.data = mbk.cluster_centers_.astype(self.codes.dtype)
        self.set_buffer('initialized', np.array(True))
        return True


def nearest_codes(z, codes):
    """Index of the nearest code of every row, lowest index on ties."""
    distances = cdist(np.asarray(z, dtype=np.float64),
                      np.asarray(codes, dtype=np.float64), 'sqeuclidean')
    return np.argmin(distances, axis=1)


def _straight_through(z_e, selected):
    """Forward value ``selected``, gradient passed unchanged to ``z_e``."""
    return Tensor._make(selected.copy(), (z_e,), lambda g: (g,),
                        'straight_through')


def _commitment(z_e, codes, indices, commit_weight):
    """``mean((z_e - e)**2)``.

    The gradient reaching ``z_e`` is that of the commitment term; the
    gradient reaching the selected codes is divided by ``commit_weight`` so
    that, once the loss is scaled by ``commit_weight``, the codes receive
    the unweighted codebook term.
    """
    diff = z_e.data - codes.data[indices]
    value = np.mean(diff ** 2)
    factor = 2.0 / diff.size

    def backward(g):
        g_z = g * factor * diff
        g_codes = np.zeros_like(codes.data)
        np.add.at(g_codes, indices, -g_z / commit_weight)
        return g_z, g_codes
    return Tensor._make(np.asarray(value, dtype=z_e.dtype), (z_e, codes),
                        backward, 'commitment')


def vq_quantize(z_e, codebook, commit_weight=0.25):
    """Quantise rows of ``z_e`` to their nearest codes.

    Returns
    -------
    z_q: Tensor (N, D)
        Equal to the selected codes; gradients flow straight through to
        ``z_e``.
    indices: ndarray (N,)
    commit_loss: Tensor
    """
    codes = codebook.codes if isinstance(codebook, Codebook) else codebook
    if codes.shape[0] == 0:
        raise ValueError('empty codebook')
    if z_e.ndim != 2 or z_e.shape[1] != codes.shape[1]:
        raise ValueError('encoder output of shape %s does not match codebook '
                         'of shape %s' % (list(z_e.shape), list(codes.shape)))
    if not commit_weight > 0:
        raise ValueError('commit weight must be positive')
    indices = nearest_codes(z_e.data, codes.data)
    if isinstance(codebook, Codebook) and codebook.training:
        codebook.record(indices)
    z_q = _straight_through(z_e, codes.data[indices])
    return z_q, indices, _commitment(z_e, codes, indices, commit_weight)


class LocalStyleEncoder(Module):
    """Linear input, convolution stack, WaveNet refinement, output
    projection, optional boundary pooling and a vector quantiser."""

    def __init__(self, level, n_mels, hidden, n_conv, n_wavenet,
                 codebook_size, rate, rng, dtype=np.float64):
        super().__init__()
        if level not in ('frame', 'phoneme', 'word'):
            raise ValueError('unknown style level %r' % level)
        self.level = level
        self.add_module('prenet', Linear(n_mels, hidden, rng, dtype=dtype))
        self.add_module('convs', ConvStack(hidden, hidden, n_conv, 3, rate,
                                           rng, dtype=dtype))
        self.add_module('wavenet', WaveNet(hidden, n_wavenet, 3, rng,
                                           rate=rate, dtype=dtype))
        self.add_module('projection', Linear(hidden, hidden, rng,
                                             dtype=dtype))
        self.add_module('codebook', Codebook(codebook_size, hidden, rng,
                                             dtype=dtype))

    def features(self, mel):
        """Frame-level encoder output before pooling."""
        h = self.convs(self.prenet(mel))
        return self.projection(h + self.wavenet(h))

    def prequantize(self, mel, boundaries=None):
        if self.level == 'frame':
            if boundaries is not None:
                raise ValueError('frame-level style takes no boundaries')
            return self.features(mel)
        if boundaries is None:
            raise ValueError('%s-level style needs segment boundaries'
                             % self.level)
        return pool_by_boundaries(self.features(mel), boundaries)


def encode_local(encoder, mel, boundaries=None, commit_weight=0.25,
                 quantize=True):
    """Style sequence of one level.

    Returns
    -------
    style: Tensor (N, D)
    indices: ndarray or None
    commit_loss: Tensor or None
    """
    z_e = encoder.prequantize(mel, boundaries)
    if not quantize:
        return z_e, None, None
    return vq_quantize(z_e, encoder.codebook, commit_weight)


def style_to_content_align(hidden, style, n_layers=2, rate=0.5, rng=None,
                           training=False, refiners=None):
    """Stylise content queries with style keys/values.

    Each layer computes ``H + dropout(softmax(H K^T / sqrt(d)) K)`` where
    ``K`` is the style sequence plus sinusoidal positions. ``refiners``, one
    WaveNet per layer, add ``WN(H)`` after each attention residual.

    Returns
    -------
    hidden: Tensor (T, D)
    weights: list of ndarray (T, N)
    """
    if hidden.shape[0] == 0 or style.shape[0] == 0:
        raise ValueError('alignment needs non-empty content and style')
    if hidden.shape[1] != style.shape[1]:
        raise ValueError('content of shape %s and style of shape %s differ '
                         'in width' % (list(hidden.shape), list(style.shape)))
    keys = style + Tensor(sinusoidal_encoding(style.shape[0], style.shape[1],
                                              style.dtype))
    scale = 1.0 / np.sqrt(hidden.shape[1])
    if refiners is not None and len(refiners) != n_layers:
        raise ValueError('%d alignment refiners for %d layers'
                         % (len(refiners), n_layers))
    weights = []
    for i in range(n_layers):
        attn = softmax(matmul(hidden, keys.T) * scale, axis=-1)
        weights.append(attn.data)
        hidden = hidden + dropout(matmul(attn, keys), rate, rng,
                                  training=training)
        if refiners is not None:
            hidden = hidden + refiners[i](hidden)
    return hidden, weights


def predict_ssp(predictor, hidden):
    """Style-specific pitch: same head layout as the style-agnostic one."""
    return predictor(hidden)
