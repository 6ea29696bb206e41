"""
Training orchestration and checkpoints.

Every random draw of step ``k`` comes from streams spawned from the run
seed with the step index as tag, so a run resumed from a checkpoint follows
the same trajectory as an uninterrupted one.
"""
# License: simplified BSD

import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ModelConfig, TrainConfig, config_from_dict
from .model import LOSS_TERMS, AcousticModel
from .numerics import (AdamState, RngStream, adam_step, clip_grad_norm,
                       concat, no_grad, set_debug)
from .style_adaptor import am_softmax_loss
from .tensor_io import decode_tensor, encode_tensor

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'GSTNCKPT'
CHECKPOINT_VERSION = 1


@dataclass
class LossBreakdown:
    """Scalar loss terms of one step; ``total`` is the weighted sum."""
    step: int
    phase: str
    L_dur: float
    L_mel: float
    L_p: float
    L_pn: float
    L_c: float
    total: float
    grad_norm: float = 0.0

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainingState:
    """Optimiser state and progress of a run."""
    seed: int = 0
    step: int = 0
    global_step: int = 0
    adam: AdamState = field(default_factory=AdamState)
    global_adam: AdamState = field(default_factory=AdamState)
    history: list = field(default_factory=list)

    @classmethod
    def start(cls, cfg):
        def adam(lr):
            return AdamState(lr=lr, beta1=cfg.beta1, beta2=cfg.beta2,
                             eps=cfg.adam_eps)
        return cls(seed=cfg.seed, adam=adam(cfg.learning_rate),
                   global_adam=adam(cfg.global_learning_rate))

    def stream(self, tag):
        return RngStream(self.seed).spawn(tag)


def weighted_total(values, weights):
    """``sum(weight * value)`` over the loss terms in a fixed order."""
    total = 0.0
    for name in LOSS_TERMS:
        total += weights[name] * values[name]
    return total


def sample_batch(corpus, batch_size, rng):
    """``batch_size`` distinct utterances (fewer if the corpus is small)."""
    order = rng.permutation(len(corpus))[:batch_size]
    return [corpus[i] for i in order]


def _apply_gradients(params, state, lr, max_norm):
    grads = {name: p.grad for name, p in params.items()}
    norm = clip_grad_norm(grads, max_norm)
    adam_step(params, grads, state, lr=lr)
    return norm


def training_step(model, batch, step, cfg, state, rng=None):
    """One optimisation step of the five-term loss.

    Parameters
    ----------
    model: AcousticModel
    batch: list of Utterance
    step: int
        Global step index; steps below ``cfg.warmup_steps`` run the warm-up
        phase (no quantisation, hard alignment).
    cfg: TrainConfig
    state: TrainingState
    rng: RngStream, optional
        Defaults to the run stream of this step.

    Returns
    -------
    LossBreakdown
    """
    if not batch:
        raise ValueError('step %d: empty batch' % step)
    phase_b = step >= cfg.warmup_steps
    rng = rng if rng is not None else state.stream('step/%d' % step)
    model.train()
    model.zero_grad()
    terms = model.forward_train(batch, phase_b=phase_b, rng=rng)
    values = {}
    for name in LOSS_TERMS:
        values[name] = terms[name].item()
        if not np.isfinite(values[name]):
            raise FloatingPointError('step %d: non-finite loss term %s'
                                     % (step, name))
    weights = cfg.loss_weights
    objective = None
    for name in LOSS_TERMS:
        term = terms[name] * weights[name]
        objective = term if objective is None else objective + term
    objective.backward()
    try:
        norm = _apply_gradients(model.acoustic_parameters(), state.adam,
                                cfg.learning_rate_at(step), cfg.grad_clip)
    except FloatingPointError as exc:
        raise FloatingPointError('step %d: %s' % (step, exc))
    return LossBreakdown(step, 'B' if phase_b else 'A',
                         total=weighted_total(values, weights),
                         grad_norm=float(norm), **values)


def global_pretrain_step(model, batch, cfg, state):
    """AM-softmax update of the global encoder on speaker and emotion
    labels."""
    model.train()
    model.zero_grad()
    styles = [model.utterance_style(utt) for utt in batch]
    hidden = model.cfg.hidden
    speakers = concat([g.speaker.reshape(1, hidden) for g in styles], axis=0)
    emotions = concat([g.emotion.reshape(1, hidden) for g in styles], axis=0)
    enc, mcfg = model.global_encoder, model.cfg
    loss = (am_softmax_loss(speakers, [u.speaker for u in batch],
                            enc.speaker_classes, mcfg.am_margin,
                            mcfg.am_scale) +
            am_softmax_loss(emotions, [u.emotion for u in batch],
                            enc.emotion_classes, mcfg.am_margin,
                            mcfg.am_scale))
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError('global pre-training step %d: non-finite '
                                 'AM-softmax loss' % state.global_step)
    loss.backward()
    _apply_gradients(model.global_parameters(), state.global_adam,
                     cfg.global_learning_rate, cfg.grad_clip)
    return value


def global_accuracy(model, corpus):
    """Fraction of utterances whose speaker and emotion embeddings are the
    most cosine-similar to their own class weights.

    Returns
    -------
    speaker, emotion: float
    """
    if not corpus:
        raise ValueError('empty corpus')
    enc = model.global_encoder

    def unit(x):
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    speakers, emotions = [], []
    with no_grad():
        for utt in corpus:
            g = model.utterance_style(utt)
            speakers.append(g.speaker.data)
            emotions.append(g.emotion.data)
    scores = []
    for rows, classes, labels in (
            (speakers, enc.speaker_classes, [u.speaker for u in corpus]),
            (emotions, enc.emotion_classes, [u.emotion for u in corpus])):
        sims = unit(np.stack(rows)) @ unit(classes.data).T
        scores.append(float(np.mean(np.argmax(sims, axis=1) ==
                                    np.asarray(labels))))
    return tuple(scores)


def pretrain_global(model, corpus, cfg, state):
    """Run the remaining global-encoder pre-training steps."""
    todo = state.global_step < cfg.global_pretrain_steps
    while state.global_step < cfg.global_pretrain_steps:
        batch = sample_batch(corpus, cfg.batch_size,
                             state.stream('global/%d' % state.global_step))
        value = global_pretrain_step(model, batch, cfg, state)
        if state.global_step % cfg.log_every == 0:
            logger.info('global step %d: am-softmax %.4f', state.global_step,
                        value)
        state.global_step += 1
    if todo:
        logger.info('global pre-training done: speaker accuracy %.3f, '
                    'emotion accuracy %.3f', *global_accuracy(model, corpus))
    return state


def train(model, corpus, cfg, state=None, n_steps=None, callback=None):
    """Pre-train the global encoder, then run the acoustic training loop.

    Parameters
    ----------
    model: AcousticModel
    corpus: list of Utterance
    cfg: TrainConfig
    state: TrainingState, optional
        Resume from this state.
    n_steps: int, optional
        Stop after this many acoustic steps instead of ``cfg.total_steps``.
    callback: callable, optional
        Called with each :class:`LossBreakdown`.
    """
    if not corpus:
        raise ValueError('empty corpus')
    state = state if state is not None else TrainingState.start(cfg)
    set_debug(cfg.debug)
    pretrain_global(model, corpus, cfg, state)
    stop = cfg.total_steps if n_steps is None else min(
        cfg.total_steps, state.step + n_steps)
    while state.step < stop:
        step = state.step
        batch = sample_batch(corpus, cfg.batch_size,
                             state.stream('batch/%d' % step))
        losses = training_step(model, batch, step, cfg, state)
        state.history.append(losses.as_dict())
        state.step += 1
        if step == cfg.warmup_steps:
            logger.info('step %d: warm-up over, quantised style enabled',
                        step)
        if step % cfg.log_every == 0:
            logger.info('step %d [%s] total %.4f dur %.4f mel %.4f pitch %.4f '
                        'postnet %.4f commit %.4f', step, losses.phase,
                        losses.total, losses.L_dur, losses.L_mel, losses.L_p,
                        losses.L_pn, losses.L_c)
            if step >= cfg.warmup_steps:
                for encoder in model.local_encoders():
                    encoder.codebook.check_collapse('%s-level codebook'
                                                    % encoder.level)
        if callback is not None:
            callback(losses)
    return state


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
@dataclass
class Checkpoint:
    """Everything needed to rebuild a model and resume its training."""
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict
    buffers: dict
    state: TrainingState
    model_seed: int = 0
    estimator: dict = field(default_factory=dict)

    def build_model(self):
        model = AcousticModel(self.model_config, seed=self.model_seed)
        model.load_state_dict(self.params)
        model.load_buffers(self.buffers)
        return model


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return {'__ndarray__': value.tolist(), 'dtype': str(value.dtype)}
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (np.integer, np.bool_)):
        return value.item()
    return value


def _from_json(value):
    if isinstance(value, dict):
        if '__ndarray__' in value:
            return np.array(value['__ndarray__'], dtype=value['dtype'])
        return {k: _from_json(v) for k, v in value.items()}
    return value


def _adam_header(adam):
    return {'lr': adam.lr, 'beta1': adam.beta1, 'beta2': adam.beta2,
            'eps': adam.eps, 't': adam.t, 'steps': dict(adam.steps)}


def save_checkpoint(path, model, state, train_config, model_seed=0,
                    estimator=None):
    """Write parameters, buffers, optimiser moments and progress.

    Layout: magic ``b"GSTNCKPT"``, u32 version, u32 header length, UTF-8
    JSON header, then one GSTN version-2 tensor per name listed in the
    header. ``estimator`` is an optional JSON-able dict of the settings
    the model was built from (preset, overrides).
    """
    tensors = [('param/' + name, p.data)
               for name, p in model.named_parameters().items()]
    for prefix, adam in (('adam', state.adam), ('global_adam',
                                                 state.global_adam)):
        for name in sorted(adam.m):
            tensors.append(('%s.m/%s' % (prefix, name), adam.m[name]))
            tensors.append(('%s.v/%s' % (prefix, name), adam.v[name]))
    header = {
        'model_config': asdict(model.cfg),
        'train_config': asdict(train_config),
        'model_seed': model_seed,
        'seed': state.seed,
        'step': state.step,
        'global_step': state.global_step,
        'adam': _adam_header(state.adam),
        'global_adam': _adam_header(state.global_adam),
        'buffers': _jsonable(dict(model.named_buffers())),
        'history': state.history,
        'estimator': estimator or {},
        'tensors': [name for name, _ in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(struct.pack('<II', CHECKPOINT_VERSION, len(blob)))
        fp.write(blob)
        for _, array in tensors:
            fp.write(encode_tensor(np.asarray(array), version=2))
    logger.info('saved checkpoint at step %d to %s', state.step, path)


def _restore_adam(meta, prefix, arrays):
    state = AdamState(lr=meta['lr'], beta1=meta['beta1'],
                      beta2=meta['beta2'], eps=meta['eps'], t=meta['t'])
    for key, array in arrays.items():
        if key.startswith(prefix + '.m/'):
            state.m[key[len(prefix) + 3:]] = array
        elif key.startswith(prefix + '.v/'):
            state.v[key[len(prefix) + 3:]] = array
    # headers without per-parameter counts: every moment saw all t steps
    steps = meta.get('steps')
    state.steps = ({name: int(t) for name, t in steps.items()}
                   if steps is not None else dict.fromkeys(state.m, state.t))
    return state


def _restore(header, arrays):
    state = TrainingState(
        seed=header['seed'], step=header['step'],
        global_step=header['global_step'],
        adam=_restore_adam(header['adam'], 'adam', arrays),
        global_adam=_restore_adam(header['global_adam'], 'global_adam',
                                  arrays),
        history=header['history'])
    params = {key[len('param/'):]: array for key, array in arrays.items()
              if key.startswith('param/')}
    return Checkpoint(config_from_dict(ModelConfig, header['model_config']),
                      config_from_dict(TrainConfig, header['train_config']),
                      params, _from_json(header['buffers']), state,
                      header['model_seed'], header.get('estimator') or {})


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises
    ------
    OSError
        Bad magic, unknown version, truncation, trailing bytes, or a
        header that does not parse or misses a field.
    """
    with open(path, 'rb') as fp:
        buffer = fp.read()
    if buffer[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise OSError('%s: not a checkpoint (bad magic %r)'
                      % (path, buffer[:len(CHECKPOINT_MAGIC)]))
    pos = len(CHECKPOINT_MAGIC)
    if len(buffer) < pos + 8:
        raise OSError('%s: truncated checkpoint header' % path)
    version, size = struct.unpack_from('<II', buffer, pos)
    if version != CHECKPOINT_VERSION:
        raise OSError('%s: checkpoint version %d, expected %d'
                      % (path, version, CHECKPOINT_VERSION))
    pos += 8
    if len(buffer) < pos + size:
        raise OSError('%s: truncated checkpoint header' % path)
    try:
        header = json.loads(buffer[pos:pos + size].decode('utf-8'))
        names = list(header['tensors'])
    except (ValueError, KeyError, TypeError) as exc:
        raise OSError('%s: corrupt checkpoint header (%r)' % (path, exc))
    pos += size
    arrays = {}
    for name in names:
        arrays[name], pos = decode_tensor(buffer, pos, source=str(path))
    if pos != len(buffer):
        raise OSError('%s: %d trailing bytes' % (path, len(buffer) - pos))
    try:
        return _restore(header, arrays)
    except (KeyError, TypeError, AttributeError) as exc:
        raise OSError('%s: corrupt checkpoint header (missing or malformed '
                      'field %s)' % (path, exc))
