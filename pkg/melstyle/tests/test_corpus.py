import os

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from melstyle.backbone import MelSpectrogram, PhonemeSequence
from melstyle.corpus import (Utterance, generate_toy_corpus, ingest_corpus,
                             read_manifest, toy_utterance, write_manifest)
from melstyle.pitch_cwt import PitchContour
from melstyle.tensor_io import load_vocabulary, save_tensor, save_vocabulary


def _write_record(root, uid, durations=(2, 3), n_frames=5, n_mels=4,
                  speaker='0', emotion='1', extra=()):
    save_tensor(os.path.join(root, uid + '.mel'), np.ones((n_frames, n_mels)))
    save_tensor(os.path.join(root, uid + '.f0'), np.full(n_frames, 120.0))
    return [uid, '1 2', ' '.join(map(str, durations)), '0', speaker, emotion,
            uid + '.f0', uid + '.mel'] + list(extra)


def test_utterance_validation():
    phonemes = PhonemeSequence([1, 2], [0])
    mel = MelSpectrogram(np.zeros((5, 4)), 4)
    pitch = PitchContour(np.full(5, 100.0))
    utt = Utterance('u', phonemes, [2, 3], pitch, mel)
    assert utt.n_frames == 5
    with pytest.raises(ValueError, match='u: durations sum to 4'):
        Utterance('u', phonemes, [2, 2], pitch, mel)
    with pytest.raises(ValueError):
        Utterance('u', phonemes, [5, 0], pitch, mel)
    with pytest.raises(ValueError):
        Utterance('u', phonemes, [5], pitch, mel)
    with pytest.raises(ValueError):
        Utterance('u', phonemes, [2, 3], PitchContour(np.ones(4)), mel)
    with pytest.raises(ValueError, match='no voiced frame'):
        Utterance('u', phonemes, [2, 3], PitchContour(np.zeros(5)), mel)


def test_pitch_spectrogram_is_cached():
    utt = toy_utterance('a', 0, 0, 0, n_phonemes=6, n_mels=4)
    spec = utt.pitch_spectrogram(4)
    assert spec is utt.pitch_spectrogram(4)
    assert spec.shape == (utt.n_frames, 4)


def test_ingest_manifest(tmp_path):
    root = str(tmp_path)
    save_tensor(os.path.join(root, 'spk.emb'), np.arange(12.0))
    records = [_write_record(root, 'a'),
               _write_record(root, 'b', extra=['spk.emb'])]
    write_manifest(os.path.join(root, 'manifest.tsv'), records)
    corpus = ingest_corpus(os.path.join(root, 'manifest.tsv'), n_mels=4,
                           n_speakers=2, n_emotions=2, n_phonemes=6)
    assert [u.id for u in corpus] == ['a', 'b']
    assert corpus[0].speaker_embedding is None
    assert_array_equal(corpus[1].speaker_embedding, np.arange(12.0))
    assert_array_equal(corpus[0].durations, [2, 3])
    assert corpus[0].emotion == 1


def test_empty_manifest(tmp_path):
    path = tmp_path / 'manifest.tsv'
    path.write_text('')
    with pytest.raises(ValueError, match='empty corpus'):
        ingest_corpus(str(path))


def test_duration_mismatch_names_the_utterance(tmp_path):
    root = str(tmp_path)
    records = [_write_record(root, 'ok'),
               _write_record(root, 'bad_one', durations=(2, 2))]
    write_manifest(os.path.join(root, 'manifest.tsv'), records)
    with pytest.raises(ValueError, match='bad_one'):
        ingest_corpus(os.path.join(root, 'manifest.tsv'), n_mels=4)


@pytest.mark.parametrize('kwargs, record', [
    ({'n_mels': 5}, {}),
    ({'n_emotions': 1}, {}),
    ({'n_phonemes': 2}, {}),
    ({}, {'speaker': 'x'}),
    ({}, {'emotion': '-1'}),
])
def test_invalid_records(tmp_path, kwargs, record):
    root = str(tmp_path)
    write_manifest(os.path.join(root, 'manifest.tsv'),
                   [_write_record(root, 'a', **record)])
    kwargs.setdefault('n_mels', 4)
    with pytest.raises(ValueError, match='utterance a'):
        ingest_corpus(os.path.join(root, 'manifest.tsv'), **kwargs)


def test_missing_files_raise_oserror(tmp_path):
    root = str(tmp_path)
    record = _write_record(root, 'a')
    os.remove(os.path.join(root, 'a.mel'))
    write_manifest(os.path.join(root, 'manifest.tsv'), [record])
    with pytest.raises(OSError):
        ingest_corpus(os.path.join(root, 'manifest.tsv'), n_mels=4)
    with pytest.raises(OSError):
        read_manifest(os.path.join(root, 'missing.tsv'))


def test_wrong_column_count(tmp_path):
    path = tmp_path / 'manifest.tsv'
    path.write_text('a\t1 2\t2 3\n')
    with pytest.raises(ValueError, match='columns'):
        read_manifest(str(path))


def test_toy_utterances_are_deterministic_and_styled():
    a = toy_utterance('x', 3, 1, 2, seed=7)
    b = toy_utterance('x', 3, 1, 2, seed=7)
    assert_array_equal(a.mel.frames, b.mel.frames)
    assert_array_equal(a.pitch.f0, b.pitch.f0)
    low = toy_utterance('y', 3, 0, 0, seed=7)
    high = toy_utterance('z', 3, 1, 0, seed=7)
    assert_array_equal(low.phonemes.ids, high.phonemes.ids)
    assert high.pitch.f0[high.pitch.voiced].mean() > \
        low.pitch.f0[low.pitch.voiced].mean()


def test_generate_toy_corpus(tmp_path):
    out = str(tmp_path / 'toy')
    manifest = generate_toy_corpus(out, seed=3, n_speakers=2, n_emotions=2,
                                   n_texts=3, n_phonemes=6, n_mels=4)
    corpus = ingest_corpus(manifest, n_mels=4, n_speakers=2, n_emotions=2,
                           n_phonemes=6)
    assert len(corpus) == 12
    assert load_vocabulary(os.path.join(out, 'phonemes.txt'))[:2] == \
        ['p0', 'p1']
    again = generate_toy_corpus(str(tmp_path / 'again'), seed=3,
                                n_speakers=2, n_emotions=2, n_texts=3,
                                n_phonemes=6, n_mels=4, limit=5)
    subset = ingest_corpus(again, n_mels=4)
    assert len(subset) == 5
    by_id = {u.id: u for u in corpus}
    for utt in subset:
        np.testing.assert_allclose(utt.mel.frames, by_id[utt.id].mel.frames,
                                   rtol=1e-6)


def test_limited_toy_corpus_covers_every_speaker(tmp_path):
    manifest = generate_toy_corpus(str(tmp_path), seed=1, n_speakers=4,
                                   n_emotions=3, n_texts=16, n_phonemes=6,
                                   n_mels=4, limit=16)
    table = read_manifest(manifest)
    speakers = table['speaker'].astype(int).value_counts()
    assert sorted(speakers.index) == [0, 1, 2, 3]
    assert (speakers == 4).all()
    assert table['emotion'].astype(int).nunique() == 3
    assert table['id'].is_unique


def test_vocabulary_next_to_the_manifest(tmp_path):
    root = str(tmp_path)
    write_manifest(os.path.join(root, 'manifest.tsv'),
                   [_write_record(root, 'a')])
    save_vocabulary(os.path.join(root, 'phonemes.txt'),
                    ['sil', 'a', 'b', 'c'])
    manifest = os.path.join(root, 'manifest.tsv')
    assert len(ingest_corpus(manifest, n_mels=4, n_phonemes=4)) == 1
    assert len(ingest_corpus(manifest, n_mels=4)) == 1
    with pytest.raises(ValueError, match='lists 4 phonemes'):
        ingest_corpus(manifest, n_mels=4, n_phonemes=6)
    save_vocabulary(os.path.join(root, 'phonemes.txt'), ['sil', 'a'])
    with pytest.raises(ValueError, match='utterance a: phoneme id'):
        ingest_corpus(manifest, n_mels=4)
