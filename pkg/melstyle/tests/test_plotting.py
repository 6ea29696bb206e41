import numpy as np
import pytest
from numpy.testing import assert_array_equal

from melstyle.backbone import MelSpectrogram
from melstyle.plotting import (mel_to_graymap, plot_attention, plot_losses,
                               plot_mel)


def _read_pgm(path):
    with open(path, 'rb') as f:
        blob = f.read()
    magic, size, depth, pixels = blob.split(b'\n', 3)
    width, height = map(int, size.split())
    assert magic == b'P5' and depth == b'255'
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def test_graymap_orientation_and_range():
    mel = np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]])
    pixels = mel_to_graymap(mel)
    assert pixels.shape == (3, 2)
    assert_array_equal(pixels[:, 0], [102, 51, 0])
    assert pixels.max() == 255 and pixels.min() == 0
    assert pixels[0, 1] == 255


def test_constant_mel_is_mid_gray():
    assert_array_equal(mel_to_graymap(np.full((5, 4), 2.5)), 128)


def test_pgm_file(tmp_path):
    path = str(tmp_path / 'mel.pgm')
    mel = MelSpectrogram(np.random.RandomState(0).randn(1, 80))
    assert plot_mel(mel, path) == path
    pixels = _read_pgm(path)
    assert pixels.shape == (80, 1)
    assert_array_equal(pixels, mel_to_graymap(mel))


def test_pgm_bytes_are_deterministic(tmp_path):
    mel = np.random.RandomState(1).randn(7, 4)
    a, b = str(tmp_path / 'a.pgm'), str(tmp_path / 'b.pgm')
    plot_mel(mel, a)
    plot_mel(mel.copy(), b)
    with open(a, 'rb') as fa, open(b, 'rb') as fb:
        assert fa.read() == fb.read()


def test_unwritable_path_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        plot_mel(np.ones((2, 2)), str(tmp_path / 'missing' / 'mel.pgm'))


def test_graymap_needs_a_matrix():
    with pytest.raises(ValueError):
        mel_to_graymap(np.ones(4))


def test_attention_figure(tmp_path):
    rng = np.random.RandomState(0)
    attention = {'frame': [rng.rand(6, 6), rng.rand(6, 6)],
                 'phoneme': [rng.rand(6, 3), rng.rand(6, 3)],
                 'word': [rng.rand(6, 2)]}
    path = str(tmp_path / 'attention.png')
    assert plot_attention(attention, path) == path
    with open(path, 'rb') as f:
        assert f.read(8) == b'\x89PNG\r\n\x1a\n'
    with pytest.raises(ValueError):
        plot_attention({'frame': []}, str(tmp_path / 'none.png'))


def test_loss_curves(tmp_path):
    history = [{'step': k, 'phase': 'A' if k < 3 else 'B',
                'L_dur': 1.0 / (k + 1), 'L_mel': 2.0 / (k + 1), 'L_p': 0.5,
                'L_pn': -1.0, 'L_c': 0.0, 'total': 2.5} for k in range(6)]
    path = str(tmp_path / 'losses.png')
    assert plot_losses(history, path, warmup_steps=3) == path
    with pytest.raises(ValueError):
        plot_losses([], str(tmp_path / 'empty.png'))
