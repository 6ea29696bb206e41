import os

import numpy as np
import pytest

from melstyle.config import build_config
from melstyle.corpus import toy_utterance
from melstyle.numerics import Tensor, finite_difference_check

slow = pytest.mark.skipif(os.environ.get('MELSTYLE_RUN_SLOW') != '1',
                          reason='set MELSTYLE_RUN_SLOW=1 to run')


def tiny_config(**overrides):
    """ Model and training configuration of the tiny preset, small enough
    for unit tests.
    """
    return build_config('tiny', overrides)


def toy_corpus(n_speakers=2, n_emotions=2, n_texts=2, seed=0):
    """ Toy utterances matching the tiny preset (6 phonemes, 4 mel bins).
    """
    corpus = []
    for speaker in range(n_speakers):
        for emotion in range(n_emotions):
            for text in range(n_texts):
                uid = 'spk%d_emo%d_txt%02d' % (speaker, emotion, text)
                corpus.append(toy_utterance(uid, text, speaker, emotion,
                                            seed=seed, n_phonemes=6,
                                            n_mels=4))
    return corpus


def random_tensor(shape, seed=0, requires_grad=True):
    rng = np.random.RandomState(seed)
    return Tensor(rng.randn(*shape), requires_grad=requires_grad)


def assert_gradient_matches(f, x, tol=1e-4, coords=None):
    """ Back-propagated gradient of the scalar ``f(x)`` agrees with central
    differences.
    """
    error = finite_difference_check(f, x, coords=coords)
    assert error < tol, 'relative gradient error %g' % error
