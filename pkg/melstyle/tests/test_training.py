import json
import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from melstyle.model import AcousticModel
from melstyle.numerics import RngStream, no_grad
from melstyle.tests.utils import slow, tiny_config, toy_corpus
from melstyle.training import (CHECKPOINT_MAGIC, TrainingState,
                               global_accuracy, global_pretrain_step,
                               load_checkpoint,
                               sample_batch, save_checkpoint, train,
                               training_step, weighted_total)


def _setup(**overrides):
    model_config, train_config = tiny_config(**overrides)
    model = AcousticModel(model_config, seed=train_config.seed)
    return model, train_config, TrainingState.start(train_config)


def _assert_same_parameters(a, b):
    state_b = b.state_dict()
    for name, value in a.state_dict().items():
        assert_array_equal(value, state_b[name], err_msg=name)


def test_total_is_the_weighted_sum():
    model, cfg, state = _setup(w_mel=2.0, w_pitch=0.5)
    losses = training_step(model, toy_corpus()[:2], 0, cfg, state)
    values = losses.as_dict()
    expected = sum(cfg.loss_weights[name] * values[name]
                   for name in ('L_dur', 'L_mel', 'L_p', 'L_pn', 'L_c'))
    assert losses.total == pytest.approx(expected)
    assert weighted_total(values, cfg.loss_weights) == losses.total
    assert losses.phase == 'A'
    assert state.adam.t == 1


def test_codebooks_idle_during_warm_up():
    model, cfg, state = _setup(warmup_steps=1)
    corpus = toy_corpus()
    warm = training_step(model, corpus[:2], 0, cfg, state)
    assert warm.L_c == 0.0
    for name in model.codebook_parameter_names():
        assert model.named_parameters()[name].grad is None
    quantised = training_step(model, corpus[:2], 1, cfg, state)
    assert quantised.phase == 'B'
    for name in model.codebook_parameter_names():
        assert model.named_parameters()[name].grad is not None


def test_global_encoder_excluded_from_acoustic_updates():
    model, cfg, state = _setup()
    before = {name: p.data.copy()
              for name, p in model.global_parameters().items()}
    training_step(model, toy_corpus()[:2], 0, cfg, state)
    for name, p in model.global_parameters().items():
        assert_array_equal(p.data, before[name])


def test_global_pretraining_updates_only_the_global_encoder():
    model, cfg, state = _setup()
    before = model.state_dict()
    value = global_pretrain_step(model, toy_corpus()[:4], cfg, state)
    assert np.isfinite(value) and value > 0
    after = model.state_dict()
    for name in model.acoustic_parameters():
        assert_array_equal(after[name], before[name])
    assert any(not np.array_equal(after[name], before[name])
               for name in model.global_parameters())


def test_global_accuracy():
    model, cfg, state = _setup(global_pretrain_steps=20)
    corpus = toy_corpus()
    train(model, corpus, cfg, state, n_steps=0)
    speaker, emotion = global_accuracy(model, corpus)
    assert 0.0 <= speaker <= 1.0 and 0.0 <= emotion <= 1.0
    with pytest.raises(ValueError):
        global_accuracy(model, [])


def test_adam_counts_steps_per_parameter(tmp_path):
    model, cfg, state = _setup(warmup_steps=2)
    train(model, toy_corpus(), cfg, state, n_steps=3)
    codebooks = model.codebook_parameter_names()
    assert state.adam.t == 3
    assert set(codebooks) <= set(state.adam.steps)
    for name, t in state.adam.steps.items():
        assert t == (1 if name in codebooks else 3), name
    path = str(tmp_path / 'model.ckpt')
    save_checkpoint(path, model, state, cfg)
    assert load_checkpoint(path).state.adam.steps == state.adam.steps


def test_sample_batch_is_seeded():
    corpus = toy_corpus()
    a = sample_batch(corpus, 3, RngStream(0).spawn('batch/0'))
    b = sample_batch(corpus, 3, RngStream(0).spawn('batch/0'))
    assert [u.id for u in a] == [u.id for u in b]
    assert len({u.id for u in a}) == 3
    assert len(sample_batch(corpus[:2], 5, RngStream(0))) == 2


def test_training_is_deterministic():
    corpus = toy_corpus()
    model_a, cfg, state_a = _setup(warmup_steps=2)
    train(model_a, corpus, cfg, state_a, n_steps=3)
    model_b, _, state_b = _setup(warmup_steps=2)
    train(model_b, corpus, cfg, state_b, n_steps=3)
    _assert_same_parameters(model_a, model_b)
    assert state_a.history == state_b.history
    assert [h['phase'] for h in state_a.history] == ['A', 'A', 'B']
    assert state_a.global_step == cfg.global_pretrain_steps


def test_train_rejects_empty_corpus():
    model, cfg, state = _setup()
    with pytest.raises(ValueError):
        train(model, [], cfg, state)


def test_non_finite_loss_is_a_numerical_failure():
    model, cfg, state = _setup()
    model.decoder.projection.bias.data[:] = np.nan
    with pytest.raises(FloatingPointError, match='step 0'):
        training_step(model, toy_corpus()[:2], 0, cfg, state)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model, cfg, state = _setup(warmup_steps=1)
    train(model, toy_corpus(), cfg, state, n_steps=2)
    path = str(tmp_path / 'model.ckpt')
    save_checkpoint(path, model, state, cfg, model_seed=cfg.seed)
    checkpoint = load_checkpoint(path)
    assert checkpoint.train_config == cfg
    assert checkpoint.model_config == model.cfg
    assert checkpoint.state.step == 2
    assert checkpoint.state.history == state.history
    assert checkpoint.state.adam.t == state.adam.t
    for name, m in state.adam.m.items():
        assert_array_equal(checkpoint.state.adam.m[name], m)
        assert_array_equal(checkpoint.state.adam.v[name], state.adam.v[name])
    rebuilt = checkpoint.build_model()
    _assert_same_parameters(model, rebuilt)
    for name, value in model.named_buffers().items():
        assert_array_equal(rebuilt.named_buffers()[name], value)


def test_resumed_training_matches_uninterrupted(tmp_path):
    corpus = toy_corpus()
    straight, cfg, state = _setup(warmup_steps=2)
    train(straight, corpus, cfg, state, n_steps=5)

    first, _, first_state = _setup(warmup_steps=2)
    train(first, corpus, cfg, first_state, n_steps=2)
    path = str(tmp_path / 'half.ckpt')
    save_checkpoint(path, first, first_state, cfg, model_seed=cfg.seed)
    checkpoint = load_checkpoint(path)
    resumed, resumed_state = checkpoint.build_model(), checkpoint.state
    train(resumed, corpus, checkpoint.train_config, resumed_state, n_steps=3)

    assert resumed_state.step == state.step == 5
    _assert_same_parameters(straight, resumed)
    assert [h['total'] for h in resumed_state.history] == \
        [h['total'] for h in state.history]


@pytest.mark.parametrize('corrupt', [
    lambda blob: b'NOTACKPT' + blob[8:],
    lambda blob: blob[:12],
    lambda blob: blob[:-3],
    lambda blob: blob[:8] + b'\x09' + blob[9:],
])
def test_corrupt_checkpoints_raise_oserror(tmp_path, corrupt):
    model, cfg, state = _setup()
    path = tmp_path / 'model.ckpt'
    save_checkpoint(str(path), model, state, cfg)
    blob = path.read_bytes()
    assert blob.startswith(CHECKPOINT_MAGIC)
    path.write_bytes(corrupt(blob))
    with pytest.raises(OSError):
        load_checkpoint(str(path))


def _rewrite_header(blob, edit):
    size = struct.unpack_from('<II', blob, len(CHECKPOINT_MAGIC))[1]
    start = len(CHECKPOINT_MAGIC) + 8
    header = json.loads(blob[start:start + size].decode('utf-8'))
    edit(header)
    text = json.dumps(header).encode('utf-8')
    return (CHECKPOINT_MAGIC + struct.pack('<II', 1, len(text)) + text +
            blob[start + size:])


@pytest.mark.parametrize('edit', [
    lambda header: header.pop('seed'),
    lambda header: header.pop('tensors'),
    lambda header: header['adam'].pop('beta2'),
    lambda header: header['model_config'].pop('n_mels'),
    lambda header: header.update(history=None, global_adam=[]),
])
def test_checkpoint_header_missing_fields_raise_oserror(tmp_path, edit):
    model, cfg, state = _setup()
    path = tmp_path / 'model.ckpt'
    save_checkpoint(str(path), model, state, cfg)
    path.write_bytes(_rewrite_header(path.read_bytes(), edit))
    with pytest.raises(OSError, match='corrupt checkpoint header'):
        load_checkpoint(str(path))


@slow
def test_fifty_steps_give_identical_checkpoints(tmp_path):
    corpus = toy_corpus()
    blobs, traces = [], []
    for run in ('a', 'b'):
        model, cfg, state = _setup(total_steps=60, warmup_steps=10)
        train(model, corpus, cfg, state, n_steps=50)
        path = tmp_path / ('%s.ckpt' % run)
        save_checkpoint(str(path), model, state, cfg, model_seed=cfg.seed)
        blobs.append(path.read_bytes())
        traces.append([h['total'] for h in state.history])
    assert len(traces[0]) == 50
    assert traces[0] == traces[1]
    assert blobs[0] == blobs[1]


@slow
def test_training_reduces_the_mel_loss():
    corpus = toy_corpus(n_texts=3)
    model, cfg, state = _setup(total_steps=200, warmup_steps=100,
                               learning_rate=3e-3)
    train(model, corpus, cfg, state)
    mel = [h['L_mel'] for h in state.history]
    assert np.mean(mel[-20:]) < 0.5 * np.mean(mel[:20])


def test_pretrained_speaker_embeddings_group_by_speaker():
    model, cfg, state = _setup(global_pretrain_steps=60,
                               global_learning_rate=1e-2)
    train(model, toy_corpus(n_texts=2), cfg, state, n_steps=0)
    held_out = [u for u in toy_corpus(n_texts=4) if u.id[-2:] in ('02', '03')]
    with no_grad():
        rows = np.stack([model.utterance_style(u).speaker.data
                         for u in held_out])
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    sims = rows @ rows.T
    speakers = np.array([u.speaker for u in held_out])
    same = speakers[:, None] == speakers[None, :]
    off_diagonal = ~np.eye(len(held_out), dtype=bool)
    assert sims[same & off_diagonal].mean() > sims[~same].mean()
