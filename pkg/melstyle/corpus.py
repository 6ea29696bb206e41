"""
Corpus records, manifest ingestion and the procedural toy corpus.

A manifest is a UTF-8, tab-separated file without header. Each line holds:
id, phoneme ids, durations, word-boundary indices (all space-separated
integers), speaker label, emotion label, pitch file, mel file, and
optionally an external speaker embedding file and an emotion embedding
file. File paths are relative to the manifest's directory.
"""
# License: simplified BSD

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .backbone import MelSpectrogram, PhonemeSequence
from .numerics import RngStream
from .pitch_cwt import PitchContour, contour_to_spectrogram
from .tensor_io import (load_tensor, load_vocabulary, save_tensor,
                        save_vocabulary)

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ['id', 'phonemes', 'durations', 'words', 'speaker',
                    'emotion', 'pitch', 'mel', 'speaker_embedding',
                    'emotion_embedding']
N_REQUIRED = 8
VOCABULARY_FILE = 'phonemes.txt'


@dataclass
class Utterance:
    """One corpus record. Training uses each utterance as its own style
    reference."""
    id: str
    phonemes: PhonemeSequence
    durations: np.ndarray
    pitch: PitchContour
    mel: MelSpectrogram
    speaker: int = 0
    emotion: int = 0
    speaker_embedding: np.ndarray = None
    emotion_embedding: np.ndarray = None
    _spectrograms: dict = field(default_factory=dict, repr=False,
                                compare=False)

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=np.int64)
        n_frames = len(self.mel)
        if len(self.durations) != len(self.phonemes):
            raise ValueError('utterance %s: %d durations for %d phonemes'
                             % (self.id, len(self.durations),
                                len(self.phonemes)))
        if np.any(self.durations < 1):
            raise ValueError('utterance %s: every phoneme needs at least one '
                             'frame, got durations %s'
                             % (self.id, self.durations.tolist()))
        if self.durations.sum() != n_frames:
            raise ValueError('utterance %s: durations sum to %d but the mel '
                             'has %d frames' % (self.id, self.durations.sum(),
                                                n_frames))
        if len(self.pitch) != n_frames:
            raise ValueError('utterance %s: pitch has %d frames but the mel '
                             'has %d' % (self.id, len(self.pitch), n_frames))
        if not self.pitch.voiced.any():
            raise ValueError('utterance %s: pitch contour has no voiced frame'
                             % self.id)

    @property
    def n_frames(self):
        return len(self.mel)

    def pitch_spectrogram(self, n_scales):
        """Analysed ground-truth pitch, cached per number of scales."""
        if n_scales not in self._spectrograms:
            self._spectrograms[n_scales] = contour_to_spectrogram(
                self.pitch, n_scales)
        return self._spectrograms[n_scales]


def _ints(text, uid, column):
    try:
        return np.array([int(v) for v in str(text).split()], dtype=np.int64)
    except ValueError:
        raise ValueError('utterance %s: column %s is not a list of integers: '
                         '%r' % (uid, column, text))


def _load(root, relative, uid, column):
    path = os.path.join(root, relative)
    if not os.path.exists(path):
        raise FileNotFoundError('utterance %s: %s file %s not found'
                                % (uid, column, path))
    return load_tensor(path)


def read_manifest(path):
    """Manifest rows as a DataFrame with named columns."""
    if not os.path.exists(path):
        raise FileNotFoundError('manifest %s not found' % path)
    try:
        table = pd.read_csv(path, sep='\t', header=None, dtype=str,
                            keep_default_na=False, quoting=csv.QUOTE_NONE,
                            encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise ValueError('empty corpus: %s has no records' % path)
    if table.shape[1] < N_REQUIRED or table.shape[1] > len(MANIFEST_COLUMNS):
        raise ValueError('manifest %s: expected %d to %d columns, got %d'
                         % (path, N_REQUIRED, len(MANIFEST_COLUMNS),
                            table.shape[1]))
    table.columns = MANIFEST_COLUMNS[:table.shape[1]]
    if len(table) == 0:
        raise ValueError('empty corpus: %s has no records' % path)
    return table


def _check_vocabulary(root, n_phonemes):
    """Vocabulary size to validate ids against (``n_phonemes`` if there is
    no vocabulary file)."""
    path = os.path.join(root, VOCABULARY_FILE)
    if not os.path.exists(path):
        return n_phonemes
    size = len(load_vocabulary(path))
    if n_phonemes is not None and size != n_phonemes:
        raise ValueError('%s lists %d phonemes, the model expects %d'
                         % (path, size, n_phonemes))
    return size


def ingest_corpus(path, n_mels=80, n_speakers=None, n_emotions=None,
                  n_phonemes=None):
    """Parse and validate every record of a manifest.

    Parameters
    ----------
    path: str
        Manifest file.
    n_mels: int
        Expected number of mel bins.
    n_speakers, n_emotions, n_phonemes: int, optional
        Label and vocabulary sizes to validate against.

    Returns
    -------
    corpus: list of Utterance

    Notes
    -----
    When a phoneme vocabulary (``phonemes.txt``, one symbol per line) sits
    next to the manifest, its size must equal ``n_phonemes`` and bounds the
    phoneme ids.
    """
    table = read_manifest(path)
    root = os.path.dirname(os.path.abspath(path))
    n_phonemes = _check_vocabulary(root, n_phonemes)
    corpus = []
    for row in table.itertuples(index=False):
        uid = row.id
        ids = _ints(row.phonemes, uid, 'phonemes')
        if n_phonemes is not None and np.any((ids < 0) | (ids >= n_phonemes)):
            raise ValueError('utterance %s: phoneme id outside vocabulary of '
                             '%d symbols' % (uid, n_phonemes))
        try:
            speaker, emotion = int(row.speaker), int(row.emotion)
        except ValueError:
            raise ValueError('utterance %s: labels must be integers, got %r '
                             'and %r' % (uid, row.speaker, row.emotion))
        for label, value, limit in (('speaker', speaker, n_speakers),
                                    ('emotion', emotion, n_emotions)):
            if value < 0 or (limit is not None and value >= limit):
                raise ValueError('utterance %s: unknown %s label %d'
                                 % (uid, label, value))
        try:
            phonemes = PhonemeSequence(ids, _ints(row.words, uid, 'words'))
            mel = MelSpectrogram(_load(root, row.mel, uid, 'mel'), n_mels)
            pitch = PitchContour(_load(root, row.pitch, uid, 'pitch'))
        except ValueError as exc:
            raise ValueError('utterance %s: %s' % (uid, exc))
        extras = {}
        for column in ('speaker_embedding', 'emotion_embedding'):
            value = getattr(row, column, '')
            if isinstance(value, str) and value:
                extras[column] = _load(root, value, uid, column)
        corpus.append(Utterance(uid, phonemes,
                                _ints(row.durations, uid, 'durations'),
                                pitch, mel, speaker, emotion, **extras))
    logger.info('ingested %d utterances from %s', len(corpus), path)
    return corpus


def write_manifest(path, records):
    """Write manifest rows (lists of strings) with pandas."""
    table = pd.DataFrame(records)
    table.to_csv(path, sep='\t', header=False, index=False,
                 quoting=csv.QUOTE_NONE, encoding='utf-8')


def _template(rng, n_mels):
    """Smooth spectral envelope: a few Gaussian formant bumps."""
    bins = np.arange(n_mels)
    env = np.zeros(n_mels)
    for _ in range(3):
        centre = rng.uniform(0, n_mels)
        width = rng.uniform(0.04, 0.12) * n_mels
        env += rng.uniform(0.5, 1.5) * np.exp(-0.5 * ((bins - centre) /
                                                      width) ** 2)
    return env


_EMOTION_SHAPES = (
    lambda u: 1.0 + 0.05 * np.sin(2 * np.pi * u),
    lambda u: 1.15 + 0.15 * np.sin(4 * np.pi * u),
    lambda u: 0.92 - 0.12 * u,
)


def _emotion_shape(emotion, u):
    if emotion < len(_EMOTION_SHAPES):
        return _EMOTION_SHAPES[emotion](u)
    return 1.0 + 0.08 * np.cos((emotion + 1) * np.pi * u)


def toy_utterance(uid, text, speaker, emotion, seed=0, n_phonemes=24,
                  n_mels=80):
    """Procedural utterance of toy ``text`` spoken by ``speaker`` in
    ``emotion``.

    Phoneme ids and durations come from the text. Speakers set the
    spectral tilt, one formant, the base F0 and the speaking rate; emotions
    shape the F0 contour and the energy. Phonemes with an id divisible by
    5 are unvoiced.
    """
    root = RngStream(seed)
    text_rng = root.spawn('text/%d' % text)
    speaker_rng = root.spawn('speaker/%d' % speaker)
    noise_rng = root.spawn('noise/%s' % uid)

    n_ph = int(text_rng.integers(3, 9))
    ids = text_rng.integers(1, n_phonemes, size=n_ph)
    n_words = int(text_rng.integers(1, max(2, n_ph // 2) + 1))
    words = np.sort(text_rng.permutation(np.arange(1, n_ph))[:n_words - 1])
    words = np.concatenate([[0], words]).astype(np.int64)
    base_durations = text_rng.integers(2, 7, size=n_ph)

    rate = speaker_rng.uniform(0.8, 1.25)
    base_f0 = (110.0, 210.0, 140.0, 250.0)[speaker % 4] * \
        (1.0 + 0.05 * (speaker // 4))
    bins = np.arange(n_mels)
    sign = 1.0 if speaker % 2 == 0 else -1.0
    timbre = np.linspace(-0.5, 0.5, n_mels) * sign * \
        speaker_rng.uniform(0.4, 1.0)
    formant = ((0.2 + 0.618034 * speaker) % 1.0) * n_mels
    timbre = timbre + 0.6 * np.exp(-0.5 * ((bins - formant) /
                                           (0.05 * n_mels)) ** 2)
    durations = np.maximum(np.round(base_durations * rate *
                                    (1.0 + 0.1 * (emotion == 1))), 1)
    durations = durations.astype(np.int64)
    n_frames = int(durations.sum())

    phone_of_frame = np.repeat(np.arange(n_ph), durations)
    u = (np.arange(n_frames) + 0.5) / n_frames
    voiced = (ids[phone_of_frame] % 5) != 0
    if not voiced.any():
        voiced[:] = True
    f0 = np.where(voiced, base_f0 * _emotion_shape(emotion, u), 0.0)

    templates = {pid: _template(RngStream(seed).spawn('phone/%d' % pid),
                                n_mels) for pid in set(ids.tolist())}
    energy = (0.0, 0.3, -0.3)[emotion] if emotion < 3 else 0.1 * emotion
    mel = np.empty((n_frames, n_mels))
    for t in range(n_frames):
        frame = templates[ids[phone_of_frame[t]]] + timbre + energy
        if voiced[t]:
            centre = (np.log(f0[t]) - np.log(60.0)) / np.log(8.0) * n_mels
            frame = frame + 0.8 * np.exp(-0.5 * ((bins - centre) / 2.0) ** 2)
        mel[t] = frame
    mel += 0.02 * noise_rng.normal(size=mel.shape)
    return Utterance(uid, PhonemeSequence(ids, words), durations,
                     PitchContour(f0), MelSpectrogram(mel, n_mels),
                     speaker, emotion)


def _round_robin(seed, n_speakers, n_emotions, n_texts):
    """All (speaker, emotion, text) triples, one text per cell per round.

    Cells alternate speakers first, so any prefix covers the speakers as
    evenly as its length allows.
    """
    rng = RngStream(seed).spawn('subset')
    cells = [(s, e) for e in range(n_emotions) for s in range(n_speakers)]
    texts = {cell: rng.permutation(n_texts) for cell in cells}
    return [(s, e, int(texts[s, e][r])) for r in range(n_texts)
            for s, e in cells]


def generate_toy_corpus(out_dir, seed=0, n_speakers=4, n_emotions=3,
                        n_texts=16, n_phonemes=24, n_mels=80, limit=None):
    """Write a toy corpus (GSTN files, vocabulary, manifest) to ``out_dir``.

    Parameters
    ----------
    limit: int, optional
        Keep this many utterances, drawn round-robin over the
        (speaker, emotion) cells so that every speaker appears once
        ``limit >= n_speakers``; texts are shuffled within each cell.

    Returns
    -------
    manifest: str
        Path of the written manifest.
    """
    combos = sorted(_round_robin(seed, n_speakers, n_emotions,
                                 n_texts)[:limit])
    for sub in ('mel', 'pitch'):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    save_vocabulary(os.path.join(out_dir, VOCABULARY_FILE),
                    ['p%d' % i for i in range(n_phonemes)])
    records = []
    for speaker, emotion, text in combos:
        uid = 'spk%d_emo%d_txt%02d' % (speaker, emotion, text)
        utt = toy_utterance(uid, text, speaker, emotion, seed=seed,
                            n_phonemes=n_phonemes, n_mels=n_mels)
        mel_path = os.path.join('mel', uid + '.gstn')
        pitch_path = os.path.join('pitch', uid + '.gstn')
        save_tensor(os.path.join(out_dir, mel_path), utt.mel.frames)
        save_tensor(os.path.join(out_dir, pitch_path), utt.pitch.f0)
        records.append([uid, ' '.join(map(str, utt.phonemes.ids)),
                        ' '.join(map(str, utt.durations)),
                        ' '.join(map(str, utt.phonemes.word_boundaries)),
                        str(speaker), str(emotion), pitch_path, mel_path])
    manifest = os.path.join(out_dir, 'manifest.tsv')
    write_manifest(manifest, records)
    logger.info('wrote %d toy utterances to %s', len(records), out_dir)
    return manifest
