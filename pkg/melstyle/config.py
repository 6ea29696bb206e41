"""
Model and training configuration: dataclasses, presets and the key=value
configuration file format.
"""
# License: simplified BSD

import dataclasses
from dataclasses import dataclass, field


@dataclass
class FFTBlockConfig:
    """Feed-forward Transformer stack (phoneme encoder or mel decoder)."""
    hidden: int = 256
    layers: int = 4
    heads: int = 2
    kernel: int = 9
    filter_size: int = 1024
    dropout: float = 0.1

    def __post_init__(self):
        for name in ('hidden', 'layers', 'heads', 'kernel', 'filter_size'):
            if getattr(self, name) <= 0:
                raise ValueError('%s must be positive, got %r'
                                 % (name, getattr(self, name)))
        if self.hidden % self.heads:
            raise ValueError('hidden (%d) must be divisible by heads (%d)'
                             % (self.hidden, self.heads))
        _check_rate('dropout', self.dropout)


@dataclass
class MixStyleConfig:
    """Mix-style layer normalisation: Beta parameter, application
    probability and the training switch."""
    alpha: float = 0.2
    p: float = 0.2
    training: bool = True
    eps: float = 1e-5

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError('mix-style alpha must be positive, got %r'
                             % self.alpha)
        if not 0.0 <= self.p <= 1.0:
            raise ValueError('mix-style p must lie in [0, 1], got %r' % self.p)


@dataclass
class FlowConfig:
    """Conditional Glow post-net."""
    steps: int = 12
    shared_groups: int = 3
    share_mode: str = 'interleave'
    wavenet_layers: int = 3
    kernel: int = 3
    channels: int = 192
    squeeze: int = 2
    scale_offset: float = 2.0

    def __post_init__(self):
        if self.steps <= 0 or self.shared_groups <= 0:
            raise ValueError('flow steps and shared groups must be positive')
        if self.steps % self.shared_groups:
            raise ValueError('flow steps (%d) must be divisible by shared '
                             'groups (%d)' % (self.steps, self.shared_groups))
        if self.share_mode not in ('interleave', 'block'):
            raise ValueError('unknown flow share_mode %r' % self.share_mode)
        if self.squeeze <= 0:
            raise ValueError('squeeze factor must be positive')

    @property
    def n_unique(self):
        """Number of distinct step parameterisations."""
        if self.share_mode == 'interleave':
            return self.steps // self.shared_groups
        return self.shared_groups

    def slot(self, step):
        """Index of the parameter set used by flow step ``step``."""
        if self.share_mode == 'interleave':
            return step % self.n_unique
        return step // (self.steps // self.shared_groups)


@dataclass
class ModelConfig:
    n_phonemes: int = 64
    n_speakers: int = 4
    n_emotions: int = 3
    n_mels: int = 80
    phoneme_embed: int = 0
    encoder: FFTBlockConfig = field(default_factory=FFTBlockConfig)
    decoder: FFTBlockConfig = field(default_factory=FFTBlockConfig)
    predictor_kernel: int = 3
    predictor_filter: int = 256
    predictor_dropout: float = 0.5
    mix_style: MixStyleConfig = field(default_factory=MixStyleConfig)
    content_norm: str = 'mixstyle'
    n_scales: int = 10
    pitch_bins: int = 256
    f0_min: float = 50.0
    f0_max: float = 800.0
    global_conv_layers: int = 2
    external_embed_dim: int = 768
    am_margin: float = 0.2
    am_scale: float = 30.0
    use_local_style: bool = True
    local_conv_layers: int = 5
    local_wn_layers: int = 4
    codebook_size: int = 128
    commit_weight: float = 0.25
    align_layers: int = 2
    align_dropout: float = 0.5
    align_wn_layers: int = 0
    use_postnet: bool = True
    flow: FlowConfig = field(default_factory=FlowConfig)
    dtype: str = 'float32'

    def __post_init__(self):
        if self.encoder.hidden != self.decoder.hidden:
            raise ValueError('encoder hidden (%d) and decoder hidden (%d) '
                             'must match' % (self.encoder.hidden,
                                             self.decoder.hidden))
        if self.content_norm not in ('mixstyle', 'conditional', 'layernorm'):
            raise ValueError('unknown content_norm %r' % self.content_norm)
        if self.dtype not in ('float32', 'float64'):
            raise ValueError('dtype must be float32 or float64')
        if self.align_wn_layers < 0:
            raise ValueError('align_wn_layers must be non-negative')
        if self.codebook_size < 1:
            raise ValueError('codebook_size must be at least 1')
        if not 0.0 < self.f0_min < self.f0_max:
            raise ValueError('need 0 < f0_min < f0_max')
        _check_rate('predictor_dropout', self.predictor_dropout)
        _check_rate('align_dropout', self.align_dropout)

    @property
    def hidden(self):
        return self.encoder.hidden


@dataclass
class TrainConfig:
    total_steps: int = 20000
    warmup_steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    lr_decay_start: int = 1000
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    grad_clip: float = 1.0
    w_dur: float = 1.0
    w_mel: float = 1.0
    w_pitch: float = 1.0
    w_postnet: float = 1.0
    w_commit: float = 0.25
    global_pretrain_steps: int = 500
    global_learning_rate: float = 1e-3
    seed: int = 1234
    log_every: int = 50
    debug: bool = False

    def __post_init__(self):
        if self.total_steps <= 0 or self.batch_size <= 0:
            raise ValueError('total_steps and batch_size must be positive')
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError('warm-up steps (%d) must be below total steps '
                             '(%d)' % (self.warmup_steps, self.total_steps))

    @property
    def loss_weights(self):
        return {'L_dur': self.w_dur, 'L_mel': self.w_mel,
                'L_p': self.w_pitch, 'L_pn': self.w_postnet,
                'L_c': self.w_commit}

    def learning_rate_at(self, step):
        """Constant, then inverse square-root decay after lr_decay_start."""
        if step < self.lr_decay_start:
            return self.learning_rate
        return self.learning_rate * (self.lr_decay_start / (step + 1.0)) ** 0.5


def _check_rate(name, value):
    if not 0.0 <= value < 1.0:
        raise ValueError('%s must lie in [0, 1), got %r' % (name, value))


PRESETS = {
    'full': {'align_wn_layers': 2},
    'desk': {
        'encoder.hidden': 128, 'encoder.layers': 2, 'encoder.filter_size': 512,
        'decoder.hidden': 128, 'decoder.layers': 2, 'decoder.filter_size': 512,
        'predictor_filter': 128, 'pitch_bins': 64, 'flow.channels': 96,
    },
    'tiny': {
        'encoder.hidden': 8, 'encoder.layers': 1, 'encoder.kernel': 3,
        'encoder.filter_size': 16, 'encoder.dropout': 0.0,
        'decoder.hidden': 8, 'decoder.layers': 1, 'decoder.kernel': 3,
        'decoder.filter_size': 16, 'decoder.dropout': 0.0,
        'n_mels': 4, 'n_phonemes': 6, 'n_speakers': 2, 'n_emotions': 2,
        'predictor_filter': 8, 'predictor_dropout': 0.0, 'n_scales': 4,
        'pitch_bins': 8, 'local_conv_layers': 2, 'local_wn_layers': 2,
        'codebook_size': 5, 'align_dropout': 0.0, 'global_conv_layers': 1,
        'external_embed_dim': 12, 'flow.steps': 3, 'flow.shared_groups': 3,
        'flow.wavenet_layers': 1, 'flow.channels': 6, 'dtype': 'float64',
        'total_steps': 20, 'warmup_steps': 5, 'batch_size': 2,
        'global_pretrain_steps': 5, 'lr_decay_start': 10, 'log_every': 5,
    },
    'toy': {
        'encoder.hidden': 32, 'encoder.layers': 2, 'encoder.kernel': 5,
        'encoder.filter_size': 64, 'encoder.dropout': 0.0,
        'decoder.hidden': 32, 'decoder.layers': 2, 'decoder.kernel': 5,
        'decoder.filter_size': 64, 'decoder.dropout': 0.0,
        'n_phonemes': 24, 'n_speakers': 4, 'n_emotions': 3, 'n_mels': 80,
        'predictor_filter': 64, 'predictor_dropout': 0.1, 'n_scales': 10,
        'pitch_bins': 64, 'local_conv_layers': 2, 'local_wn_layers': 2,
        'codebook_size': 32, 'align_dropout': 0.1, 'external_embed_dim': 32,
        'flow.steps': 6, 'flow.shared_groups': 3, 'flow.wavenet_layers': 2,
        'flow.channels': 32, 'total_steps': 2000, 'warmup_steps': 200,
        'batch_size': 4, 'global_pretrain_steps': 400, 'lr_decay_start': 1000,
        'log_every': 100,
    },
}


def _coerce(raw, current):
    if isinstance(current, bool):
        lowered = raw.strip().lower()
        if lowered in ('1', 'true', 'yes', 'on'):
            return True
        if lowered in ('0', 'false', 'no', 'off'):
            return False
        raise ValueError('expected a boolean, got %r' % raw)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw.strip() if isinstance(raw, str) else raw


def _as_fields(config):
    """Nested dict of the field values of a (nested) dataclass."""
    values = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        values[f.name] = _as_fields(value) if dataclasses.is_dataclass(
            value) else value
    return values


def _set(values, key, raw):
    """Set a possibly dotted ``key`` inside nested field dicts."""
    head, _, rest = key.partition('.')
    if head not in values:
        raise KeyError(key)
    current = values[head]
    if rest:
        if not isinstance(current, dict):
            raise KeyError(key)
        _set(current, rest, raw)
    elif isinstance(current, dict):
        raise KeyError(key)
    else:
        values[head] = _coerce(raw, current) if isinstance(raw, str) else raw


def _instantiate(cls, values):
    """Build ``cls`` from nested field dicts; validation runs bottom-up, once
    every override is in place."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        value = values[f.name]
        if isinstance(value, dict):
            value = _instantiate(type(getattr(cls(), f.name)), value)
        kwargs[f.name] = value
    return cls(**kwargs)


def build_config(preset='desk', overrides=None):
    """Build ``(ModelConfig, TrainConfig)`` from a preset plus overrides.

    Parameters
    ----------
    preset: str
        One of ``'full'``, ``'desk'``, ``'toy'``, ``'tiny'``.
    overrides: dict, optional
        Dotted keys to values (strings are coerced to the field type).
    """
    if preset not in PRESETS:
        raise ValueError('unknown preset %r (choose from %s)'
                         % (preset, ', '.join(sorted(PRESETS))))
    merged = dict(PRESETS[preset])
    merged.update(overrides or {})
    model, train = _as_fields(ModelConfig()), _as_fields(TrainConfig())
    for key, value in merged.items():
        target = train if key.partition('.')[0] in train else model
        try:
            _set(target, key, value)
        except KeyError:
            raise ValueError('unknown configuration key %r' % key)
    return (_instantiate(ModelConfig, model),
            _instantiate(TrainConfig, train))


def read_config_file(path):
    """Parse a UTF-8 key=value file; ``#`` starts a comment."""
    entries = {}
    with open(path, encoding='utf-8') as fp:
        for lineno, line in enumerate(fp, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ValueError('%s:%d: expected key=value, got %r'
                                 % (path, lineno, line))
            key, value = line.split('=', 1)
            entries[key.strip()] = value.strip()
    return entries


def load_config(path=None, preset=None, overrides=None):
    """Read a configuration file and return ``(ModelConfig, TrainConfig)``.

    A ``preset`` entry in the file selects the base preset; explicit
    ``preset``/``overrides`` arguments take precedence over the file.
    """
    entries = read_config_file(path) if path is not None else {}
    chosen = preset or entries.pop('preset', 'desk')
    entries.pop('preset', None)
    entries.update(overrides or {})
    return build_config(chosen, entries)


def config_from_dict(cls, values):
    """Rebuild a configuration dataclass from ``dataclasses.asdict``
    output."""
    return _instantiate(cls, values)
