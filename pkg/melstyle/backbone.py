"""
Feed-forward Transformer phoneme encoder and mel decoder.
"""
# License: simplified BSD

from dataclasses import dataclass

import numpy as np

from .layers import Conv1d, Embedding, LayerNorm, Linear, Module
from .numerics import Tensor, concat, relu, softmax


@dataclass
class PhonemeSequence:
    """Phoneme ids of one utterance and the phoneme index of each word start.
    """
    ids: np.ndarray
    word_boundaries: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        self.word_boundaries = np.asarray(self.word_boundaries,
                                          dtype=np.int64).reshape(-1)
        if self.ids.size == 0:
            raise ValueError('phoneme sequence is empty')
        check_boundaries(self.word_boundaries, len(self.ids),
                         'word boundaries')

    def __len__(self):
        return len(self.ids)

    @property
    def word_lengths(self):
        """Number of phonemes in each word."""
        return np.diff(np.append(self.word_boundaries, len(self.ids)))


def check_boundaries(boundaries, length, what='boundaries'):
    boundaries = np.asarray(boundaries)
    if boundaries.size == 0 or boundaries[0] != 0:
        raise ValueError('%s must start at 0, got %s'
                         % (what, boundaries.tolist()))
    if np.any(np.diff(boundaries) <= 0):
        raise ValueError('%s must be strictly increasing, got %s'
                         % (what, boundaries.tolist()))
    if boundaries[-1] >= length:
        raise ValueError('%s %s out of range for length %d'
                         % (what, boundaries.tolist(), length))


@dataclass
class MelSpectrogram:
    """``T x n_mels`` log-amplitude frames."""
    frames: np.ndarray
    n_mels: int = 80

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError('mel-spectrogram must be a non-empty T x %d '
                             'matrix, got shape %s'
                             % (self.n_mels, list(self.frames.shape)))
        if self.frames.shape[1] != self.n_mels:
            raise ValueError('mel-spectrogram has %d bins, expected %d'
                             % (self.frames.shape[1], self.n_mels))

    def __len__(self):
        return self.frames.shape[0]


def sinusoidal_encoding(length, dim, dtype=np.float64):
    """Transformer positional encoding, sin on even and cos on odd
    channels."""
    position = np.arange(length)[:, None]
    rates = np.power(10000.0, -(2 * (np.arange(dim) // 2)) / dim)
    angles = position * rates[None, :]
    table = np.where(np.arange(dim) % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(dtype)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention; keeps the last attention weights
    in ``weights`` with shape ``(heads, T, T)``."""

    def __init__(self, hidden, heads, rng, rate=0.0, dtype=np.float64):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        self.rate = rate
        for name in ('query', 'key', 'value', 'out'):
            self.add_module(name, Linear(hidden, hidden, rng, dtype=dtype))
        self.weights = None

    def __call__(self, x):
        q, k, v = self.query(x), self.key(x), self.value(x)
        scale = 1.0 / np.sqrt(self.head_dim)
        outputs, weights = [], []
        for h in range(self.heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            attn = softmax((q[:, cols] @ k[:, cols].T) * scale, axis=-1)
            weights.append(attn.data)
            outputs.append(self.dropout(attn, self.rate) @ v[:, cols])
        self.weights = np.stack(weights)
        return self.out(concat(outputs, axis=1))


class FFTBlock(Module):
    """Self-attention and a two-layer convolutional feed-forward net, each
    followed by a residual connection and layer normalisation."""

    def __init__(self, cfg, rng, dtype=np.float64):
        super().__init__()
        self.rate = cfg.dropout
        self.add_module('attention', MultiHeadSelfAttention(
            cfg.hidden, cfg.heads, rng, rate=cfg.dropout, dtype=dtype))
        self.add_module('norm1', LayerNorm(cfg.hidden, dtype=dtype))
        self.add_module('conv1', Conv1d(cfg.hidden, cfg.filter_size,
                                        cfg.kernel, rng, dtype=dtype))
        self.add_module('conv2', Conv1d(cfg.filter_size, cfg.hidden, 1, rng,
                                        dtype=dtype))
        self.add_module('norm2', LayerNorm(cfg.hidden, dtype=dtype))

    def __call__(self, x):
        x = self.norm1(x + self.dropout(self.attention(x), self.rate))
        y = self.conv2(relu(self.conv1(x)))
        return self.norm2(x + self.dropout(y, self.rate))


class FFTStack(Module):

    def __init__(self, cfg, rng, dtype=np.float64):
        super().__init__()
        self.n_layers = cfg.layers
        self.hidden = cfg.hidden
        self.dtype = dtype
        for i in range(cfg.layers):
            self.add_module('block%d' % i, FFTBlock(cfg, rng, dtype=dtype))

    def blocks(self):
        return [getattr(self, 'block%d' % i) for i in range(self.n_layers)]

    def __call__(self, x):
        x = x + Tensor(sinusoidal_encoding(x.shape[0], self.hidden,
                                           self.dtype))
        for block in self.blocks():
            x = block(x)
        return x

    @property
    def attention_weights(self):
        return [block.attention.weights for block in self.blocks()]


class PhonemeEncoder(Module):
    """Phoneme embedding (optionally narrower than the hidden size, then
    projected), positional encoding and the FFT blocks."""

    def __init__(self, n_phonemes, cfg, rng, embed_dim=0, dtype=np.float64):
        super().__init__()
        self.n_phonemes = n_phonemes
        embed_dim = embed_dim or cfg.hidden
        self.add_module('embedding', Embedding(n_phonemes, embed_dim, rng,
                                               dtype=dtype))
        if embed_dim != cfg.hidden:
            self.add_module('projection', Linear(embed_dim, cfg.hidden, rng,
                                                 dtype=dtype))
        else:
            self.projection = None
        self.add_module('stack', FFTStack(cfg, rng, dtype=dtype))

    def __call__(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        bad = np.flatnonzero((ids < 0) | (ids >= self.n_phonemes))
        if bad.size:
            raise ValueError('unknown phoneme id %d at position %d '
                             '(vocabulary of %d symbols)'
                             % (ids[bad[0]], bad[0], self.n_phonemes))
        x = self.embedding(ids)
        if self.projection is not None:
            x = self.projection(x)
        return self.stack(x)


class MelDecoder(Module):
    """FFT blocks over frame-level hidden states and a linear projection to
    mel bins."""

    def __init__(self, cfg, n_mels, rng, zero_init=False, dtype=np.float64):
        super().__init__()
        self.add_module('stack', FFTStack(cfg, rng, dtype=dtype))
        self.add_module('projection', Linear(cfg.hidden, n_mels, rng,
                                             zero_init=zero_init,
                                             dtype=dtype))

    def __call__(self, x):
        return self.projection(self.stack(x))


def encode_phonemes(encoder, seq):
    """Hidden sequence ``(L, H)`` of a :class:`PhonemeSequence` (or ids)."""
    ids = seq.ids if isinstance(seq, PhonemeSequence) else seq
    return encoder(ids)


def decode_mel(decoder, hidden):
    """Coarse mel ``(T, n_mels)`` from frame-level decoder input."""
    if hidden.ndim != 2:
        raise ValueError('decoder input must be T x H, got shape %s'
                         % list(hidden.shape))
    return decoder(hidden)
