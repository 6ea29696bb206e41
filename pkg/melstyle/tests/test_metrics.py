import numpy as np
import pytest
from sklearn.metrics.pairwise import cosine_similarity

from melstyle.metrics import (gross_pitch_errors, metric_cosine, metric_ffe,
                              metric_mel_mae, voicing_errors)
from melstyle.pitch_cwt import PitchContour


def test_ffe_of_identical_contours_is_zero():
    f0 = np.array([0.0, 100.0, 120.0, 0.0, 180.0])
    assert metric_ffe(f0, f0.copy()) == 0.0
    assert metric_ffe(PitchContour(f0), PitchContour(f0)) == 0.0


def test_ffe_voicing_disagreement_everywhere():
    assert metric_ffe([100.0, 100.0, 100.0], [0.0, 0.0, 0.0]) == 1.0


def test_ffe_mixed_errors():
    '''One voicing error and one gross pitch error out of five frames.'''
    ref = np.array([100.0, 100.0, 0.0, 200.0, 150.0])
    syn = np.array([105.0, 0.0, 0.0, 300.0, 160.0])
    assert voicing_errors(ref, syn).tolist() == [False, True, False, False,
                                                 False]
    assert gross_pitch_errors(ref, syn).tolist() == [False, False, False,
                                                     True, False]
    assert metric_ffe(ref, syn) == pytest.approx(2 / 5)


def test_ffe_relative_error_uses_the_reference():
    '''|125 - 100| / 100 exceeds 20% but |100 - 125| / 125 does not.'''
    assert metric_ffe([100.0], [125.0]) == 1.0
    assert metric_ffe([125.0], [100.0]) == 0.0


def test_ffe_threshold():
    assert metric_ffe([100.0], [115.0], threshold=0.1) == 1.0
    assert metric_ffe([100.0], [115.0]) == 0.0


def test_ffe_trims_with_a_warning():
    with pytest.warns(UserWarning, match='trimming'):
        ffe = metric_ffe([100.0, 100.0, 100.0, 100.0], [100.0, 0.0])
    assert ffe == 0.5


def test_ffe_of_empty_contours():
    with pytest.raises(ValueError):
        metric_ffe([], [])


def test_cosine():
    rng = np.random.RandomState(0)
    a, b = rng.randn(16), rng.randn(16)
    assert metric_cosine(a, a) == pytest.approx(1.0)
    assert metric_cosine([1.0, 0.0], [0.0, 2.0]) == 0.0
    assert metric_cosine(a, -a) == pytest.approx(-1.0)
    assert metric_cosine(a, b) == pytest.approx(
        cosine_similarity(a[None], b[None])[0, 0])
    with pytest.raises(ValueError):
        metric_cosine(np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        metric_cosine(np.ones(3), np.ones(4))


def test_mel_mae():
    ref = np.zeros((4, 2))
    syn = np.ones((4, 2))
    assert metric_mel_mae(ref, syn) == 1.0
    with pytest.warns(UserWarning):
        assert metric_mel_mae(ref, syn[:2]) == 1.0
    with pytest.raises(ValueError):
        metric_mel_mae(ref, np.ones((4, 3)))
