"""
The acoustic model: phoneme encoder, content adaptor, multi-level style
adaptor, pitch fusion, mel decoder and flow post-net wired together for
training and for style-transferring synthesis.
"""
# License: simplified BSD

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .backbone import MelDecoder, PhonemeEncoder, PhonemeSequence
from .content_adaptor import (ConditionalScaleBias, DurationPredictor,
                              conditional_layer_norm, duration_loss,
                              durations_from_log, length_regulate,
                              make_style_vector, mix_style_layer_norm,
                              predict_durations, predict_sap)
from .flow_postnet import FlowPostNet, postnet_nll, postnet_sample
from .layers import (Embedding, LayerNorm, Linear, Module, PitchPredictor,
                     WaveNet)
from .numerics import RngStream, Tensor, concat, mae, no_grad
from .pitch_cwt import (PitchSpectrogram, joint_pitch, pitch_loss,
                        quantize_pitch, spectrogram_to_contour, warp_mask)
from .style_adaptor import (GlobalStyleEncoder, LocalStyle,
                            LocalStyleEncoder, StyleBundle, encode_global,
                            encode_local, phoneme_frame_boundaries,
                            predict_ssp, segment_lengths,
                            style_to_content_align, word_frame_boundaries)

logger = logging.getLogger(__name__)

LOSS_TERMS = ('L_dur', 'L_mel', 'L_p', 'L_pn', 'L_c')
LEVELS = ('frame', 'phoneme', 'word')


@dataclass
class SynthesisResult:
    """Output of one synthesis call; arrays are plain numpy."""
    mel: np.ndarray
    coarse: np.ndarray
    durations: np.ndarray
    f0: np.ndarray
    speaker_embedding: np.ndarray
    emotion_embedding: np.ndarray
    attention: dict = field(default_factory=dict)

    @property
    def n_frames(self):
        return self.mel.shape[0]


class AcousticModel(Module):
    """All trainable blocks of the synthesiser.

    Parameters
    ----------
    cfg: ModelConfig
    seed: int
        Seed of the parameter initialisation stream.
    """

    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        rng = RngStream(seed).spawn('init')
        hidden, dtype = cfg.hidden, self.dtype
        self.add_module('encoder', PhonemeEncoder(
            cfg.n_phonemes, cfg.encoder, rng, embed_dim=cfg.phoneme_embed,
            dtype=dtype))
        if cfg.content_norm == 'layernorm':
            self.add_module('content_norm', LayerNorm(hidden, dtype=dtype))
        else:
            self.add_module('content_norm', ConditionalScaleBias(
                hidden, rng, dtype=dtype))
        predictor = dict(filter_size=cfg.predictor_filter,
                         kernel=cfg.predictor_kernel,
                         rate=cfg.predictor_dropout, rng=rng, dtype=dtype)
        self.add_module('duration', DurationPredictor(hidden, **predictor))
        self.add_module('sap', PitchPredictor(hidden, cfg.n_scales,
                                              **predictor))
        self.add_module('ssp', PitchPredictor(hidden, cfg.n_scales,
                                              **predictor))
        self.add_module('global_encoder', GlobalStyleEncoder(
            cfg.n_mels, hidden, cfg.global_conv_layers, cfg.n_speakers,
            cfg.n_emotions, cfg.external_embed_dim, rng, dtype=dtype))
        if cfg.use_local_style:
            for level in LEVELS:
                self.add_module('local_' + level, LocalStyleEncoder(
                    level, cfg.n_mels, hidden, cfg.local_conv_layers,
                    cfg.local_wn_layers, cfg.codebook_size,
                    cfg.encoder.dropout, rng, dtype=dtype))
        self.add_module('pitch_embedding', Embedding(cfg.pitch_bins, hidden,
                                                     rng, dtype=dtype))
        for i in range(cfg.align_layers if cfg.align_wn_layers else 0):
            self.add_module('align_wn%d' % i, WaveNet(
                hidden, cfg.align_wn_layers, 3, rng, rate=cfg.align_dropout,
                dtype=dtype))
        self.add_module('global_projection', Linear(hidden, hidden, rng,
                                                    dtype=dtype))
        self.add_module('decoder', MelDecoder(cfg.decoder, cfg.n_mels, rng,
                                              dtype=dtype))
        if cfg.use_postnet:
            self.add_module('postnet', FlowPostNet(
                cfg.n_mels, cfg.n_mels + hidden, cfg.flow, rng, dtype=dtype))
        else:
            self.postnet = None

    # -- parameter groups --------------------------------------------------
    def acoustic_parameters(self):
        """Parameters trained by the five-term loss (global encoder
        excluded)."""
        return {name: p for name, p in self.named_parameters().items()
                if not name.startswith('global_encoder.')}

    def global_parameters(self):
        return {name: p for name, p in self.named_parameters().items()
                if name.startswith('global_encoder.')}

    def local_encoders(self):
        if not self.cfg.use_local_style:
            return []
        return [getattr(self, 'local_' + level) for level in LEVELS]

    def codebook_parameter_names(self):
        return [name for name in self.named_parameters()
                if name.endswith('codebook.codes')]

    # -- building blocks ---------------------------------------------------
    def tensor(self, array):
        return Tensor(np.asarray(array, dtype=self.dtype))

    def global_style(self, mel, speaker_embedding=None,
                     emotion_embedding=None):
        return encode_global(self.global_encoder, self.tensor(mel),
                             speaker_embedding, emotion_embedding)

    def utterance_style(self, utt):
        return self.global_style(utt.mel.frames, utt.speaker_embedding,
                                 utt.emotion_embedding)

    def normalize_content(self, hiddens, styles, rng=None):
        """Apply the configured content normalisation to a batch."""
        mode = self.cfg.content_norm
        if mode == 'layernorm':
            return [self.content_norm(h) for h in hiddens]
        if mode == 'conditional':
            return [conditional_layer_norm(h, w, self.content_norm)
                    for h, w in zip(hiddens, styles)]
        cfg = dataclasses.replace(
            self.cfg.mix_style,
            training=self.cfg.mix_style.training and self.training)
        if not cfg.training:
            return list(hiddens)
        hidden = self.cfg.hidden
        w_batch = concat([w.reshape(1, hidden) for w in styles], axis=0)
        return mix_style_layer_norm(list(hiddens), w_batch, self.content_norm,
                                    cfg, rng)

    def local_style(self, mel, durations, word_boundaries, quantize=True):
        """Frame, phoneme and word style of a reference.

        Returns
        -------
        local: LocalStyle
        indices: dict level -> ndarray (empty without quantisation)
        commit_loss: Tensor or None
        """
        boundaries = {
            'frame': None,
            'phoneme': phoneme_frame_boundaries(durations),
            'word': word_frame_boundaries(durations, word_boundaries),
        }
        mel = self.tensor(mel)
        styles, indices, commit = {}, {}, None
        for encoder in self.local_encoders():
            seq, idx, loss = encode_local(encoder, mel,
                                          boundaries[encoder.level],
                                          self.cfg.commit_weight, quantize)
            styles[encoder.level] = seq
            if quantize:
                indices[encoder.level] = idx
                commit = loss if commit is None else commit + loss
        return LocalStyle(**styles), indices, commit

    def init_codebooks(self, batch, seed):
        """k-means initialisation of every codebook from a batch."""
        todo = [enc for enc in self.local_encoders()
                if not bool(enc.codebook.buffer('initialized'))]
        if not todo:
            return False
        with no_grad():
            for encoder in todo:
                rows = []
                for utt in batch:
                    bounds = {
                        'frame': None,
                        'phoneme': phoneme_frame_boundaries(utt.durations),
                        'word': word_frame_boundaries(
                            utt.durations, utt.phonemes.word_boundaries),
                    }[encoder.level]
                    rows.append(encoder.prequantize(
                        self.tensor(utt.mel.frames), bounds).data)
                encoder.codebook.kmeans_init(np.concatenate(rows), seed)
        logger.info('initialised %d codebooks with k-means', len(todo))
        return True

    def stylize(self, content, local, durations=None, word_boundaries=None,
                hard=False, rng=None):
        """Merge local style into frame-level content.

        ``hard`` adds boundary-expanded style sequences (ground-truth
        alignment); otherwise attention aligns each level in turn.

        Returns
        -------
        hidden: Tensor
        attention: dict level -> list of ndarray
        """
        if local is None:
            return content, {}
        if hard:
            n_frames = content.shape[0]
            words = segment_lengths(
                word_frame_boundaries(durations, word_boundaries), n_frames)
            return (content + local.frame +
                    length_regulate(local.phoneme, durations) +
                    length_regulate(local.word, words)), {}
        attention = {}
        for level, style in local.levels():
            content, weights = style_to_content_align(
                content, style, self.cfg.align_layers, self.cfg.align_dropout,
                rng=rng, training=self.training,
                refiners=self.align_refiners())
            attention[level] = weights
        return content, attention

    def align_refiners(self):
        if not self.cfg.align_wn_layers:
            return None
        return [getattr(self, 'align_wn%d' % i)
                for i in range(self.cfg.align_layers)]

    def global_condition(self, g):
        """Learned projection of ``G_s + G_e`` added to the decoder input."""
        return self.global_projection(g.combined)

    def embed_pitch(self, f0):
        cfg = self.cfg
        return self.pitch_embedding(quantize_pitch(f0, cfg.f0_min, cfg.f0_max,
                                                   cfg.pitch_bins))

    # -- training ----------------------------------------------------------
    def forward_train(self, batch, phase_b=True, rng=None,
                      detach_global=True):
        """Loss terms averaged over a batch of utterances.

        Each utterance is its own style reference. Before warm-up ends
        (``phase_b=False``) local style skips quantisation and is added by
        ground-truth expansion; afterwards it is quantised and attended.

        Returns
        -------
        dict
            Scalar Tensors keyed by ``LOSS_TERMS``.
        """
        if not batch:
            raise ValueError('empty training batch')
        cfg = self.cfg
        rng = rng if rng is not None else RngStream(0)
        self.seed_dropout(rng)
        use_local = cfg.use_local_style
        if use_local and phase_b:
            self.init_codebooks(batch, int(rng.integers(0, 2 ** 31 - 1)))

        styles = []
        for utt in batch:
            g = self.utterance_style(utt)
            styles.append(g.detach() if detach_global else g)
        w = [make_style_vector(g.speaker, g.emotion) for g in styles]
        hiddens = [self.encoder(utt.phonemes.ids) for utt in batch]
        contents = self.normalize_content(hiddens, w, rng)

        terms = {name: [] for name in LOSS_TERMS}
        conds, targets = [], []
        for utt, h_c, w_b, g in zip(batch, contents, w, styles):
            log_d = predict_durations(self.duration, h_c, w_b)
            terms['L_dur'].append(duration_loss(log_d, utt.durations))
            frames = length_regulate(h_c, utt.durations)
            sap_coeffs, sap_stats = predict_sap(self.sap, frames)

            local = None
            if use_local:
                local, _, commit = self.local_style(
                    utt.mel.frames, utt.durations,
                    utt.phonemes.word_boundaries, quantize=phase_b)
                if commit is not None:
                    terms['L_c'].append(commit)
            styled, _ = self.stylize(frames, local, utt.durations,
                                     utt.phonemes.word_boundaries,
                                     hard=not phase_b, rng=rng)
            ssp_coeffs, ssp_stats = predict_ssp(self.ssp, styled)
            joint = joint_pitch(PitchSpectrogram(sap_coeffs, sap_stats),
                                PitchSpectrogram(ssp_coeffs, ssp_stats))
            terms['L_p'].append(pitch_loss(
                joint, utt.pitch_spectrogram(cfg.n_scales)))

            decoder_input = styled + self.embed_pitch(utt.pitch.f0) + \
                self.global_condition(g)
            coarse = self.decoder(decoder_input)
            target = self.tensor(utt.mel.frames)
            terms['L_mel'].append(mae(coarse, target))
            conds.append(concat([coarse, decoder_input], axis=1).detach())
            # the flow models what the decoder misses
            targets.append(target - coarse.detach())

        if self.postnet is not None:
            self.postnet.initialize(targets, conds)
            for target, cond in zip(targets, conds):
                terms['L_pn'].append(postnet_nll(self.postnet, target,
                                                 cond)[1])
        return {name: self._batch_mean(values, len(batch))
                for name, values in terms.items()}

    def _batch_mean(self, values, n_batch):
        if not values:
            return self.tensor(0.0)
        total = values[0]
        for value in values[1:]:
            total = total + value
        return total * (1.0 / n_batch)

    # -- inference ---------------------------------------------------------
    def reference_style(self, reference):
        """Global and local style of a reference utterance."""
        g = self.utterance_style(reference)
        bundle = StyleBundle(g)
        if self.cfg.use_local_style:
            bundle.local, bundle.indices, bundle.commit_loss = \
                self.local_style(reference.mel.frames, reference.durations,
                                 reference.phonemes.word_boundaries)
        return bundle

    def synthesize(self, phonemes, reference, temperature=0.8, rng=None,
                   durations=None):
        """Mel-spectrogram of ``phonemes`` in the style of ``reference``.

        Parameters
        ----------
        phonemes: PhonemeSequence or array of ids
        reference: Utterance
        temperature: float
            Post-net sampling temperature.
        rng: RngStream, optional
            Needed for sampling at a positive temperature.
        durations: array of int, optional
            Frame counts to use instead of the predicted ones.
        """
        if reference is None or reference.n_frames == 0:
            raise ValueError('synthesis needs a non-empty reference')
        ids = phonemes.ids if isinstance(phonemes, PhonemeSequence) \
            else np.asarray(phonemes)
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                return self._synthesize(ids, reference, temperature, rng,
                                        durations)
        finally:
            self.train(was_training)

    def _synthesize(self, ids, reference, temperature, rng, durations):
        cfg = self.cfg
        bundle = self.reference_style(reference)
        g = bundle.global_style
        w = make_style_vector(g.speaker, g.emotion)
        content = self.normalize_content([self.encoder(ids)], [w])[0]
        if durations is None:
            durations = durations_from_log(
                predict_durations(self.duration, content, w))
        else:
            durations = np.asarray(durations, dtype=np.int64)
        frames = length_regulate(content, durations)
        sap_coeffs, sap_stats = predict_sap(self.sap, frames)
        styled, attention = self.stylize(frames, bundle.local)
        ssp_coeffs, ssp_stats = predict_ssp(self.ssp, styled)
        joint = joint_pitch(PitchSpectrogram(sap_coeffs, sap_stats),
                            PitchSpectrogram(ssp_coeffs, ssp_stats))
        voiced = warp_mask(reference.pitch.voiced, frames.shape[0])
        f0 = spectrogram_to_contour(joint, voiced)
        decoder_input = styled + self.embed_pitch(f0) + \
            self.global_condition(g)
        coarse = self.decoder(decoder_input)
        if self.postnet is not None:
            cond = concat([coarse, decoder_input], axis=1)
            mel = coarse.data + postnet_sample(self.postnet, cond,
                                               temperature, rng).data
        else:
            mel = coarse.data
        return SynthesisResult(mel.copy(), coarse.data.copy(), durations, f0,
                               g.speaker.data.copy(), g.emotion.data.copy(),
                               attention)
