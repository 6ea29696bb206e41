"""
Top-level estimator: trains the acoustic model on a corpus, transfers the
style of reference utterances to new text and scores the results.
"""
# License: simplified BSD

import logging

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .backbone import PhonemeSequence
from .config import build_config
from .metrics import metric_cosine, metric_ffe, metric_mel_mae
from .model import AcousticModel
from .numerics import RngStream, no_grad
from .pitch_cwt import warp_contour
from .training import (TrainingState, load_checkpoint, save_checkpoint,
                       train)

logger = logging.getLogger(__name__)

MODES = ('parallel', 'nonparallel')


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError("mode must be 'parallel' or 'nonparallel', got %r"
                         % (mode,))


def _ids(phonemes):
    if isinstance(phonemes, PhonemeSequence):
        return np.asarray(phonemes.ids)
    return np.asarray(phonemes, dtype=np.int64).ravel()


def nonparallel_pairs(corpus):
    """Pair every utterance with a reference of different text.

    The reference of utterance ``i`` is the first following utterance
    (cyclically) whose phonemes differ; utterances with no such partner are
    skipped.

    Returns
    -------
    list of (target, reference)
    """
    pairs = []
    n = len(corpus)
    for i, target in enumerate(corpus):
        for k in range(1, n):
            ref = corpus[(i + k) % n]
            if not np.array_equal(ref.phonemes.ids, target.phonemes.ids):
                pairs.append((target, ref))
                break
    return pairs


def _score_one(model, target, reference, mode, temperature, rng):
    """Synthesize one pair and compute its metrics."""
    durations = target.durations if mode == 'parallel' else None
    result = model.synthesize(target.phonemes, reference,
                              temperature=temperature, rng=rng,
                              durations=durations)
    with no_grad():
        syn_speaker = model.global_style(result.mel).speaker.data
        ref_speaker = model.global_style(reference.mel.frames).speaker.data
    if mode == 'parallel':
        ref_f0 = target.pitch.f0
        mel_mae = metric_mel_mae(target.mel, result.mel)
    else:
        ref_f0 = warp_contour(reference.pitch.f0, result.n_frames)
        mel_mae = np.nan
    return {
        'id': target.id,
        'reference': reference.id,
        'speaker': reference.speaker,
        'emotion': reference.emotion,
        'n_frames': result.n_frames,
        'ffe': metric_ffe(ref_f0, result.f0),
        'mel_mae': mel_mae,
        'speaker_cosine': metric_cosine(syn_speaker, ref_speaker),
        'speaker_embedding': syn_speaker,
    }


class StyleSpeech(BaseEstimator):
    """
    Style-transferring acoustic model: encodes text, takes global and
    multi-level local style from a reference utterance and generates a
    mel-spectrogram of the text spoken in that style.
    """

    def __init__(self, preset='desk', overrides=None, seed=None,
                 temperature=0.8, n_jobs=1, parallel_backend='threading',
                 verbose=0):
        """
        Parameters
        ----------
        preset: str, optional (default = 'desk')
            Configuration preset: 'full', 'desk', 'toy' or 'tiny'.
        overrides: dict, optional
            Dotted configuration keys to values applied over the preset,
            for instance ``{'encoder.hidden': 64, 'warmup_steps': 200}``.
        seed: int, optional
            Overrides the run seed of the configuration. It drives the
            parameter initialisation, batch sampling, dropout and sampling.
        temperature: float, optional (default = 0.8)
            Post-net sampling temperature used for synthesis.
        n_jobs: integer, optional (default = 1)
            The number of CPUs to use for evaluation. -1 means
            'all CPUs', -2 'all CPUs but one', and so on.
        parallel_backend: str, ParallelBackendBase instance or None
            (default: 'threading')
            Specify the parallelization backend implementation. For more
            informations see joblib.Parallel documentation
        verbose: integer, optional (default = 0)
            Indicate the level of verbosity. By default, nothing is printed.
        """
        self.preset = preset
        self.overrides = overrides
        self.seed = seed
        self.temperature = temperature
        self.n_jobs = n_jobs
        self.parallel_backend = parallel_backend
        self.verbose = verbose

    def _configs(self):
        overrides = dict(self.overrides or {})
        if self.seed is not None:
            overrides['seed'] = self.seed
        return build_config(self.preset, overrides)

    def _check_corpus(self, corpus):
        if not corpus:
            raise ValueError('empty corpus')
        cfg = self.model_config_
        for utt in corpus:
            if utt.mel.n_mels != cfg.n_mels:
                raise ValueError('utterance %s has %d mel bins, the model '
                                 'expects %d' % (utt.id, utt.mel.n_mels,
                                                 cfg.n_mels))
            if utt.speaker >= cfg.n_speakers or \
                    utt.emotion >= cfg.n_emotions:
                raise ValueError('utterance %s: labels (%d, %d) exceed the '
                                 'configured %d speakers and %d emotions'
                                 % (utt.id, utt.speaker, utt.emotion,
                                    cfg.n_speakers, cfg.n_emotions))

    def fit(self, corpus, init_from=None, n_steps=None, callback=None):
        """Pre-train the global encoder then train the acoustic model.

        Parameters
        ----------
        corpus: list of Utterance
        init_from: str, optional
            Checkpoint whose parameters and buffers initialise the model
            (fine-tuning); optimiser state and progress start afresh.
        n_steps: int, optional
            Stop after this many acoustic steps.
        callback: callable, optional
            Called with each step's LossBreakdown.

        Returns
        -------
        self
        """
        self.model_config_, self.train_config_ = self._configs()
        self._check_corpus(corpus)
        self.model_seed_ = self.train_config_.seed
        self.model_ = AcousticModel(self.model_config_, seed=self.model_seed_)
        if init_from is not None:
            self.init_from(init_from)
        self.state_ = TrainingState.start(self.train_config_)
        return self.partial_fit(corpus, n_steps=n_steps, callback=callback)

    def init_from(self, path):
        """Copy parameters and buffers of a checkpoint into the model."""
        checkpoint = load_checkpoint(path)
        self.model_.load_state_dict(checkpoint.params)
        self.model_.load_buffers(checkpoint.buffers)
        logger.info('initialised parameters from %s (step %d)', path,
                    checkpoint.state.step)
        return self

    def partial_fit(self, corpus, n_steps=None, callback=None):
        """Continue training from the current state."""
        check_is_fitted(self, ['model_', 'state_'])
        self._check_corpus(corpus)
        train(self.model_, corpus, self.train_config_, self.state_,
              n_steps=n_steps, callback=callback)
        return self

    @property
    def history_(self):
        check_is_fitted(self, 'state_')
        return pd.DataFrame(self.state_.history)

    def save(self, path):
        check_is_fitted(self, ['model_', 'state_'])
        save_checkpoint(path, self.model_, self.state_, self.train_config_,
                        model_seed=self.model_seed_,
                        estimator={'preset': self.preset,
                                   'overrides': dict(self.overrides or {}),
                                   'seed': self.seed})
        return path

    @classmethod
    def load(cls, path, **params):
        """Rebuild a fitted estimator from a checkpoint.

        ``preset``, ``overrides`` and ``seed`` default to the values the
        checkpointed estimator was built with; keyword arguments win.
        """
        checkpoint = load_checkpoint(path)
        for key in ('preset', 'overrides', 'seed'):
            if key in checkpoint.estimator:
                params.setdefault(key, checkpoint.estimator[key])
        estimator = cls(**params)
        estimator.model_config_ = checkpoint.model_config
        estimator.train_config_ = checkpoint.train_config
        estimator.model_seed_ = checkpoint.model_seed
        estimator.model_ = checkpoint.build_model()
        estimator.state_ = checkpoint.state
        return estimator

    def _rng(self, tag, seed=None):
        base = self.train_config_.seed if seed is None else seed
        return RngStream(base).spawn(tag)

    def synthesize(self, reference, phonemes=None, mode='nonparallel',
                   temperature=None, seed=None, durations=None):
        """ Generate ``phonemes`` in the style of ``reference``.

        Parameters
        ----------
        reference: Utterance
            Style reference.
        phonemes: PhonemeSequence or array of ints, optional
            Text to speak; defaults to the reference transcript.
        mode: 'parallel' or 'nonparallel'
            Parallel synthesis speaks the reference transcript and reuses
            its durations unless ``durations`` is given.
        temperature: float, optional
            Defaults to the estimator's temperature.
        seed: int, optional
            Seed of the sampling stream; the stream is also keyed by the
            reference id.
        durations: array of int, optional
            Frame counts per phoneme overriding the predicted ones.

        Returns
        -------
        SynthesisResult
        """
        check_is_fitted(self, 'model_')
        _check_mode(mode)
        if phonemes is None:
            phonemes = reference.phonemes
        if mode == 'parallel':
            if not np.array_equal(_ids(phonemes), reference.phonemes.ids):
                raise ValueError('parallel synthesis needs the reference '
                                 'transcript (reference %s)' % reference.id)
            if durations is None:
                durations = reference.durations
        temperature = self.temperature if temperature is None else \
            temperature
        rng = self._rng('synth/%s' % reference.id, seed)
        return self.model_.synthesize(phonemes, reference,
                                      temperature=temperature, rng=rng,
                                      durations=durations)

    def evaluate(self, corpus, mode='parallel', temperature=None, seed=None):
        """ Objective scores of style transfer over a corpus.

        In parallel mode every utterance is copy-synthesized from itself with
        its own durations and compared to its ground truth. In non-parallel
        mode each utterance is spoken in the style of a reference of another
        text (see :func:`nonparallel_pairs`); FFE is then measured against
        the reference contour warped to the synthesized length and no mel
        distance is reported.

        Returns
        -------
        scores: pandas.DataFrame
            One row per synthesized utterance with columns id, reference,
            speaker, emotion, n_frames, ffe, mel_mae, speaker_cosine and
            closest_speaker (label whose mean reference embedding is the most
            similar to the synthesized one).
        """
        check_is_fitted(self, 'model_')
        _check_mode(mode)
        if not corpus:
            raise ValueError('empty corpus')
        if mode == 'parallel':
            pairs = [(utt, utt) for utt in corpus]
        else:
            pairs = nonparallel_pairs(corpus)
            if not pairs:
                raise ValueError('non-parallel evaluation needs at least two '
                                 'different transcripts')
        temperature = self.temperature if temperature is None else \
            temperature
        model = self.model_
        was_training = model.training
        model.eval()
        try:
            rows = Parallel(self.n_jobs, backend=self.parallel_backend,
                            verbose=self.verbose)(
                delayed(_score_one)(
                    model, target, ref, mode, temperature,
                    self._rng('eval/%s/%s' % (target.id, ref.id), seed))
                for target, ref in pairs)
        finally:
            model.train(was_training)
        centroids = self.speaker_centroids(corpus)
        labels = sorted(centroids)
        for row in rows:
            embedding = row.pop('speaker_embedding')
            sims = [metric_cosine(embedding, centroids[s]) for s in labels]
            row['closest_speaker'] = labels[int(np.argmax(sims))]
        scores = pd.DataFrame(rows)
        logger.info('%s evaluation on %d utterances: FFE %.3f, speaker '
                    'cosine %.3f', mode, len(scores), scores['ffe'].mean(),
                    scores['speaker_cosine'].mean())
        return scores

    def speaker_centroids(self, corpus):
        """Mean speaker embedding of the corpus mels, per speaker label."""
        check_is_fitted(self, 'model_')
        model = self.model_
        was_training = model.training
        model.eval()
        sums = {}
        try:
            with no_grad():
                for utt in corpus:
                    emb = model.global_style(utt.mel.frames).speaker.data
                    total, count = sums.get(utt.speaker, (0.0, 0))
                    sums[utt.speaker] = (total + emb, count + 1)
        finally:
            model.train(was_training)
        return {label: total / count
                for label, (total, count) in sums.items()}
