import numpy as np
import pytest
from numpy.testing import assert_array_almost_equal, assert_array_equal

from melstyle.backbone import (FFTStack, MelDecoder, MelSpectrogram,
                               MultiHeadSelfAttention, PhonemeEncoder,
                               PhonemeSequence, decode_mel, encode_phonemes,
                               sinusoidal_encoding)
from melstyle.config import FFTBlockConfig
from melstyle.layers import Linear, Module, WaveNet
from melstyle.numerics import RngStream, Tensor
from melstyle.tests.utils import assert_gradient_matches

CFG = FFTBlockConfig(hidden=8, layers=2, heads=2, kernel=3, filter_size=16,
                     dropout=0.0)


def test_phoneme_sequence_validation():
    seq = PhonemeSequence([3, 1, 4, 1, 5], [0, 2])
    assert len(seq) == 5
    assert_array_equal(seq.word_lengths, [2, 3])
    with pytest.raises(ValueError):
        PhonemeSequence([], [0])
    with pytest.raises(ValueError):
        PhonemeSequence([1, 2], [1])
    with pytest.raises(ValueError):
        PhonemeSequence([1, 2, 3], [0, 2, 2])
    with pytest.raises(ValueError):
        PhonemeSequence([1, 2], [0, 2])


def test_mel_spectrogram_validation():
    assert len(MelSpectrogram(np.zeros((5, 4)), n_mels=4)) == 5
    with pytest.raises(ValueError):
        MelSpectrogram(np.zeros((0, 4)), n_mels=4)
    with pytest.raises(ValueError):
        MelSpectrogram(np.zeros((5, 3)), n_mels=4)


def test_sinusoidal_encoding():
    table = sinusoidal_encoding(4, 6)
    assert table.shape == (4, 6)
    assert_array_almost_equal(table[0], [0, 1, 0, 1, 0, 1])
    assert_array_almost_equal(table[1, :2], [np.sin(1.0), np.cos(1.0)])


def test_self_attention_rows_sum_to_one():
    attn = MultiHeadSelfAttention(8, 2, RngStream(0))
    out = attn(Tensor(np.random.RandomState(0).randn(5, 8)))
    assert out.shape == (5, 8)
    assert attn.weights.shape == (2, 5, 5)
    assert_array_almost_equal(attn.weights.sum(axis=-1), np.ones((2, 5)))


def test_encoder_and_decoder_shapes():
    rng = RngStream(0)
    encoder = PhonemeEncoder(6, CFG, rng, embed_dim=4)
    hidden = encode_phonemes(encoder, PhonemeSequence([1, 2, 3], [0]))
    assert hidden.shape == (3, 8)
    assert len(encoder.stack.attention_weights) == 2
    decoder = MelDecoder(CFG, 4, rng)
    assert decode_mel(decoder, Tensor(np.zeros((7, 8)))).shape == (7, 4)
    with pytest.raises(ValueError):
        decode_mel(decoder, Tensor(np.zeros(8)))


def test_unknown_phoneme_is_reported():
    encoder = PhonemeEncoder(6, CFG, RngStream(0))
    with pytest.raises(ValueError, match='unknown phoneme id 9 at position 1'):
        encoder([1, 9, 2])


def test_fft_stack_gradient():
    stack = FFTStack(CFG, RngStream(1))
    x = Tensor(np.random.RandomState(2).randn(4, 8))
    weight = stack.block0.conv1.weight
    assert_gradient_matches(lambda _: (stack(x) ** 2).sum(), weight,
                            coords=range(0, weight.size, 7))


def test_dropout_in_training_needs_a_stream():
    attn = MultiHeadSelfAttention(8, 2, RngStream(0), rate=0.5)
    x = Tensor(np.ones((3, 8)))
    with pytest.raises(ValueError):
        attn(x)
    attn.seed_dropout(RngStream(1))
    attn(x)
    attn.eval()
    assert_array_equal(attn(x).data, attn(x).data)


def test_module_registry_and_state_dict():
    class Tied(Module):
        def __init__(self):
            super().__init__()
            shared = Linear(2, 2, RngStream(0))
            self.add_module('a', shared)
            self.add_module('b', shared)
            self.add_buffer('count', np.zeros(1))

    model = Tied()
    assert list(model.named_parameters()) == ['a.weight', 'a.bias']
    state = model.state_dict()
    state['a.bias'] = np.ones(2)
    model.load_state_dict(state)
    assert_array_equal(model.b.bias.data, [1, 1])
    with pytest.raises(ValueError):
        model.load_state_dict({'a.weight': np.zeros((2, 2))})
    with pytest.raises(ValueError):
        model.load_state_dict({'a.weight': np.zeros((3, 2)),
                               'a.bias': np.zeros(2)})
    model.load_buffers({'count': np.array([4.0])})
    assert model.buffer('count')[0] == 4.0


def test_wavenet_with_condition():
    net = WaveNet(4, 3, 3, RngStream(0), cond_channels=2)
    x = Tensor(np.random.RandomState(0).randn(9, 4))
    cond = Tensor(np.random.RandomState(1).randn(9, 2))
    assert net(x, cond).shape == (9, 4)
    with pytest.raises(ValueError):
        net(x)


def test_decoder_gradient():
    decoder = MelDecoder(CFG, 4, RngStream(3))
    hidden = Tensor(np.random.RandomState(4).randn(5, 8), requires_grad=True)

    def loss(_):
        return (decode_mel(decoder, hidden) ** 2).sum()
    assert_gradient_matches(loss, hidden)
    for p in (decoder.stack.block1.conv2.weight, decoder.projection.weight):
        assert_gradient_matches(loss, p, coords=range(0, p.size, 9))
