import logging

import numpy as np
import pytest
from numpy.testing import assert_array_almost_equal, assert_array_equal

from melstyle.layers import WaveNet
from melstyle.numerics import RngStream, Tensor
from melstyle.style_adaptor import (Codebook, GlobalStyleEncoder,
                                    LocalStyleEncoder, am_softmax_loss,
                                    encode_global, encode_local,
                                    nearest_codes, phoneme_frame_boundaries,
                                    pool_by_boundaries, pooling_matrix,
                                    style_to_content_align, vq_quantize,
                                    word_frame_boundaries)
from melstyle.tests.utils import assert_gradient_matches


def test_am_softmax_closed_form():
    '''Embedding aligned with its class and orthogonal to the other one:
    the loss is log(1 + exp(-s (1 - m))).'''
    weights = Tensor(np.eye(2))
    loss = am_softmax_loss(Tensor([[3.0, 0.0]]), [0], weights,
                           margin=0.2, scale=30.0)
    assert abs(loss.item() - np.log1p(np.exp(-24.0))) < 1e-13


def test_am_softmax_single_class_without_margin_is_zero():
    loss = am_softmax_loss(Tensor([[0.3, -1.2]]), [0],
                           Tensor([[1.0, 2.0]]), margin=0.0, scale=1.0)
    assert abs(loss.item()) < 1e-12


def test_am_softmax_validation():
    weights = Tensor(np.eye(3))
    with pytest.raises(ValueError):
        am_softmax_loss(Tensor(np.ones((2, 3))), [0, 3], weights)
    with pytest.raises(ValueError):
        am_softmax_loss(Tensor(np.ones((2, 3))), [0], weights)
    with pytest.raises(ValueError, match='zero-norm'):
        am_softmax_loss(Tensor(np.zeros((1, 3))), [0], weights)


def test_am_softmax_gradient():
    rng = np.random.RandomState(0)
    emb = Tensor(rng.randn(4, 3), requires_grad=True)
    weights = Tensor(rng.randn(2, 3), requires_grad=True)
    labels = [0, 1, 1, 0]

    def loss(_):
        return am_softmax_loss(emb, labels, weights)
    assert_gradient_matches(loss, emb)
    assert_gradient_matches(loss, weights)


def test_global_encoder_and_external_embeddings():
    encoder = GlobalStyleEncoder(4, 8, 1, 2, 2, 12, RngStream(0))
    mel = np.random.RandomState(0).randn(7, 4)
    style = encode_global(encoder, mel)
    assert style.speaker.shape == (8,)
    assert style.combined.shape == (8,)
    external = encode_global(encoder, mel, speaker_embedding=np.ones(12))
    assert_array_equal(external.emotion.data, style.emotion.data)
    assert not np.allclose(external.speaker.data, style.speaker.data)
    native = encode_global(encoder, mel, emotion_embedding=np.ones(8))
    assert_array_equal(native.emotion.data, np.ones(8))
    with pytest.raises(ValueError):
        encode_global(encoder, mel, speaker_embedding=np.ones(5))
    with pytest.raises(ValueError):
        encode_global(encoder, np.zeros((0, 4)))


def test_pooling():
    seq = Tensor(np.arange(12.0).reshape(6, 2))
    assert_array_equal(pool_by_boundaries(seq, np.arange(6)).data, seq.data)
    assert_array_almost_equal(pool_by_boundaries(seq, [0]).data,
                              seq.data.mean(axis=0, keepdims=True))
    assert_array_almost_equal(pool_by_boundaries(seq, [0, 2]).data,
                              [[1, 2], [7, 8]])
    assert_array_almost_equal(pooling_matrix([0, 1], 3),
                              [[1, 0, 0], [0, .5, .5]])
    with pytest.raises(ValueError):
        pooling_matrix([0, 6], 6)


def test_frame_boundaries():
    durations = np.array([2, 1, 3, 2])
    assert_array_equal(phoneme_frame_boundaries(durations), [0, 2, 3, 6])
    assert_array_equal(word_frame_boundaries(durations, [0, 2]), [0, 3])


def test_nearest_codes_match_brute_force():
    rng = np.random.RandomState(0)
    codes = rng.randn(128, 8)
    z = rng.randn(1000, 8)
    brute = np.array([np.argmin(((codes - row) ** 2).sum(axis=1))
                      for row in z])
    assert_array_equal(nearest_codes(z, codes), brute)


def test_nearest_codes_ties_take_lowest_index():
    codes = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert_array_equal(nearest_codes([[1.0, 0.0], [0.5, 0.5]], codes),
                       [0, 0])


def test_vq_on_codebook_rows():
    codebook = Codebook(5, 3, RngStream(0))
    z = Tensor(codebook.codes.data[[4, 1, 1]].copy(), requires_grad=True)
    z_q, indices, commit = vq_quantize(z, codebook)
    assert_array_equal(indices, [4, 1, 1])
    assert_array_equal(z_q.data, z.data)
    assert commit.item() == 0.0
    assert_array_equal(codebook.buffer('usage'), [0, 2, 0, 0, 1])


def test_vq_gradients():
    '''Straight-through estimator to the encoder; the codes receive the
    codebook term, i.e. the commitment gradient rescaled by the weight.'''
    codebook = Codebook(4, 2, RngStream(0))
    z = Tensor(np.random.RandomState(1).randn(3, 2), requires_grad=True)
    z_q, indices, commit = vq_quantize(z, codebook, commit_weight=0.25)
    (z_q.sum() + commit * 0.25).backward()
    diff = z.data - codebook.codes.data[indices]
    assert_array_almost_equal(z.grad, 1.0 + 0.25 * 2 * diff / diff.size)
    expected = np.zeros_like(codebook.codes.data)
    np.add.at(expected, indices, -2 * diff / diff.size)
    assert_array_almost_equal(codebook.codes.grad, expected)


def test_vq_validation():
    codebook = Codebook(4, 2, RngStream(0))
    with pytest.raises(ValueError):
        vq_quantize(Tensor(np.zeros((3, 3))), codebook)
    with pytest.raises(ValueError):
        vq_quantize(Tensor(np.zeros((3, 2))), codebook, commit_weight=0)
    with pytest.raises(ValueError):
        vq_quantize(Tensor(np.zeros((3, 2))), Tensor(np.zeros((0, 2))))
    with pytest.raises(ValueError):
        Codebook(0, 2, RngStream(0))


def test_codebook_usage_only_recorded_in_training():
    codebook = Codebook(3, 2, RngStream(0))
    codebook.eval()
    vq_quantize(Tensor(np.zeros((4, 2))), codebook)
    assert codebook.buffer('usage').sum() == 0


def test_codebook_kmeans_init_runs_once():
    codebook = Codebook(4, 2, RngStream(0))
    centres = np.array([[0, 0], [10, 0], [0, 10], [10, 10]], dtype=float)
    points = np.repeat(centres, 25, axis=0) + \
        0.01 * np.random.RandomState(0).randn(100, 2)
    assert codebook.kmeans_init(points, seed=0)
    found = codebook.codes.data[np.lexsort(codebook.codes.data.T[::-1])]
    assert_array_almost_equal(found, centres[np.lexsort(centres.T[::-1])],
                              decimal=1)
    assert not codebook.kmeans_init(points + 5.0, seed=0)
    small = Codebook(6, 2, RngStream(0))
    assert small.kmeans_init(points[:3], seed=0)
    assert small.codes.shape == (6, 2)


def test_codebook_collapse_warning(caplog):
    codebook = Codebook(4, 2, RngStream(0))
    codebook.set_buffer('usage', np.array([95, 5, 0, 0]))
    with caplog.at_level(logging.WARNING, logger='melstyle.style_adaptor'):
        share = codebook.check_collapse('frame-level codebook')
    assert share == 0.95
    assert 'collapse' in caplog.text


def test_local_encoders():
    mel = Tensor(np.random.RandomState(0).randn(9, 4))
    durations = np.array([3, 2, 4])
    rng = RngStream(0)
    frame = LocalStyleEncoder('frame', 4, 8, 2, 2, 5, 0.0, rng)
    style, indices, commit = encode_local(frame, mel)
    assert style.shape == (9, 8)
    assert indices.shape == (9,)
    assert commit.shape == ()
    phoneme = LocalStyleEncoder('phoneme', 4, 8, 2, 2, 5, 0.0, rng)
    style, _, _ = encode_local(phoneme, mel,
                               phoneme_frame_boundaries(durations))
    assert style.shape == (3, 8)
    word = LocalStyleEncoder('word', 4, 8, 2, 2, 5, 0.0, rng)
    style, indices, commit = encode_local(
        word, mel, word_frame_boundaries(durations, [0, 1]), quantize=False)
    assert style.shape == (2, 8)
    assert indices is None and commit is None
    with pytest.raises(ValueError):
        encode_local(word, mel)
    with pytest.raises(ValueError):
        encode_local(frame, mel, [0, 3])
    with pytest.raises(ValueError):
        LocalStyleEncoder('sentence', 4, 8, 2, 2, 5, 0.0, rng)


def test_alignment_attention():
    rng = np.random.RandomState(0)
    hidden = Tensor(rng.randn(6, 8))
    style = Tensor(rng.randn(3, 8))
    out, weights = style_to_content_align(hidden, style, n_layers=2)
    assert out.shape == (6, 8)
    assert len(weights) == 2
    for w in weights:
        assert w.shape == (6, 3)
        assert_array_almost_equal(w.sum(axis=1), np.ones(6))
    with pytest.raises(ValueError):
        style_to_content_align(hidden, Tensor(np.zeros((0, 8))))
    with pytest.raises(ValueError):
        style_to_content_align(hidden, Tensor(np.zeros((3, 4))))


def test_alignment_gradient():
    rng = np.random.RandomState(1)
    hidden = Tensor(rng.randn(4, 6), requires_grad=True)
    style = Tensor(rng.randn(3, 6), requires_grad=True)

    def loss(_):
        return (style_to_content_align(hidden, style)[0] ** 2).sum()
    assert_gradient_matches(loss, hidden)
    assert_gradient_matches(loss, style)


@pytest.mark.parametrize('level', ['frame', 'phoneme', 'word'])
def test_local_encoder_gradient(level):
    rng = np.random.RandomState(2)
    mel = Tensor(rng.randn(9, 4), requires_grad=True)
    durations = np.array([3, 2, 4])
    boundaries = {'frame': None,
                  'phoneme': phoneme_frame_boundaries(durations),
                  'word': word_frame_boundaries(durations, [0, 1])}[level]
    encoder = LocalStyleEncoder(level, 4, 6, 2, 2, 5, 0.0, RngStream(3))

    def loss(_):
        style, _, _ = encode_local(encoder, mel, boundaries, quantize=False)
        return (style ** 2).sum()
    assert_gradient_matches(loss, mel)
    for name in ('prenet.weight', 'convs.conv1.weight',
                 'wavenet.dilated1.weight', 'projection.weight'):
        p = encoder.named_parameters()[name]
        assert_gradient_matches(loss, p, coords=range(0, p.size, 5))


def test_alignment_gradient_with_wavenet_refiners():
    rng = np.random.RandomState(4)
    hidden = Tensor(rng.randn(5, 6), requires_grad=True)
    style = Tensor(rng.randn(3, 6), requires_grad=True)
    stream = RngStream(5)
    refiners = [WaveNet(6, 2, 3, stream) for _ in range(2)]

    def loss(_):
        out, _ = style_to_content_align(hidden, style, refiners=refiners)
        return (out ** 2).sum()
    assert_gradient_matches(loss, hidden)
    assert_gradient_matches(loss, style)
    weight = refiners[1].res_skip0.weight
    assert_gradient_matches(loss, weight, coords=range(0, weight.size, 7))
    with pytest.raises(ValueError):
        style_to_content_align(hidden, style, n_layers=3, refiners=refiners)
