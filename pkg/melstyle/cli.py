"""
Command line interface.

    melstyle gen-corpus --out DIR
    melstyle train MANIFEST --out CKPT [--checkpoint CKPT] [--init-from CKPT]
    melstyle synth MANIFEST --checkpoint CKPT --reference ID --out MEL
    melstyle eval MANIFEST --checkpoint CKPT --mode parallel --out TSV
    melstyle plot MEL --out PGM

Exit status: 0 on success, 1 on invalid input, 2 on a numerical failure,
3 on an I/O error.
"""
# License: simplified BSD

import argparse
import logging
import os
import sys
import time

import numpy as np

from .config import PRESETS, build_config, read_config_file
from .corpus import generate_toy_corpus, ingest_corpus
from .plotting import plot_attention, plot_losses, plot_mel
from .style_transfer import MODES, StyleSpeech
from .tensor_io import load_tensor, save_tensor
from .version import __version__

logger = logging.getLogger(__name__)

LEVEL = [logging.WARNING, logging.INFO, logging.DEBUG]

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def setup_logging(verbosity, log_file=None):
    """Map the ``-v`` count to a level on the root logger."""
    root = logging.getLogger()
    root.setLevel(LEVEL[min(verbosity, len(LEVEL) - 1)])
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - '
                                  '%(message)s')
    handlers = [logging.StreamHandler()]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file))
    for handler in handlers:
        handler.setFormatter(formatter)
        root.addHandler(handler)
    if verbosity >= len(LEVEL):
        logger.warning('verbosity level is too high, using the highest (%d)',
                       len(LEVEL) - 1)
    return handlers


def _parse_overrides(pairs):
    entries = {}
    for pair in pairs or []:
        key, sep, value = pair.partition('=')
        if not sep or not key.strip():
            raise ValueError('--set expects key=value, got %r' % pair)
        entries[key.strip()] = value.strip()
    return entries


def _preset_and_overrides(args):
    entries = read_config_file(args.config) if args.config else {}
    preset = args.preset or entries.pop('preset', 'desk')
    entries.pop('preset', None)
    entries.update(_parse_overrides(args.set))
    return preset, entries


def _estimator(args):
    preset, overrides = _preset_and_overrides(args)
    return StyleSpeech(preset=preset, overrides=overrides, seed=args.seed)


def _ingest(manifest, model_config):
    return ingest_corpus(manifest, n_mels=model_config.n_mels,
                         n_speakers=model_config.n_speakers,
                         n_emotions=model_config.n_emotions,
                         n_phonemes=model_config.n_phonemes)


def _load_fitted(args):
    estimator = StyleSpeech.load(args.checkpoint, n_jobs=getattr(args, 'jobs',
                                                                 1))
    if getattr(args, 'temperature', None) is not None:
        estimator.temperature = args.temperature
    return estimator


def _find(corpus, uid):
    for utt in corpus:
        if utt.id == uid:
            return utt
    raise ValueError('no utterance %r in the corpus' % uid)


# ---------------------------------------------------------------------------
# Sub-commands
# ---------------------------------------------------------------------------
def cmd_gen_corpus(args):
    model_config, train_config = build_config(
        *_preset_and_overrides(args))
    seed = train_config.seed if args.seed is None else args.seed
    manifest = generate_toy_corpus(
        args.out, seed=seed, n_speakers=model_config.n_speakers,
        n_emotions=model_config.n_emotions, n_texts=args.texts,
        n_phonemes=model_config.n_phonemes, n_mels=model_config.n_mels,
        limit=args.limit)
    print(manifest)


def cmd_train(args):
    if args.checkpoint and os.path.exists(args.checkpoint):
        estimator = _load_fitted(args)
        corpus = _ingest(args.manifest, estimator.model_config_)
        logger.info('resuming from %s at step %d', args.checkpoint,
                    estimator.state_.step)
        estimator.partial_fit(corpus, n_steps=args.steps)
    else:
        estimator = _estimator(args)
        model_config, _ = estimator._configs()
        corpus = _ingest(args.manifest, model_config)
        estimator.fit(corpus, init_from=args.init_from, n_steps=args.steps)
    estimator.save(args.out)
    if args.plot_losses:
        plot_losses(estimator.state_.history, args.plot_losses,
                    warmup_steps=estimator.train_config_.warmup_steps)
    last = estimator.state_.history[-1] if estimator.state_.history else None
    if last is not None:
        print('step %d total %.6f' % (last['step'], last['total']))


def cmd_synth(args):
    estimator = _load_fitted(args)
    corpus = _ingest(args.manifest, estimator.model_config_)
    reference = _find(corpus, args.reference)
    if args.text is not None:
        phonemes = _find(corpus, args.text).phonemes
    elif args.phonemes is not None:
        phonemes = np.array([int(v) for v in args.phonemes.split()],
                            dtype=np.int64)
    else:
        phonemes = None
    result = estimator.synthesize(reference, phonemes, mode=args.mode,
                                  temperature=args.temperature,
                                  seed=args.seed)
    save_tensor(args.out, result.mel)
    if args.plot:
        plot_mel(result.mel, args.plot)
    if args.attention and result.attention:
        plot_attention(result.attention, args.attention)
    print('%s: %d frames' % (args.out, result.n_frames))


def cmd_eval(args):
    estimator = _load_fitted(args)
    corpus = _ingest(args.manifest, estimator.model_config_)
    scores = estimator.evaluate(corpus, mode=args.mode,
                                temperature=args.temperature, seed=args.seed)
    scores.to_csv(args.out, sep='\t', index=False, float_format='%.6f')
    print(scores[['ffe', 'mel_mae', 'speaker_cosine']].mean().to_string())


def cmd_plot(args):
    if args.checkpoint:
        estimator = _load_fitted(args)
        plot_losses(estimator.state_.history, args.out,
                    warmup_steps=estimator.train_config_.warmup_steps)
    elif args.mel:
        plot_mel(load_tensor(args.mel), args.out)
    else:
        raise ValueError('plot needs a mel file or --checkpoint')


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------
def _config_options(parser):
    parser.add_argument('--config', default=None,
                        help='key=value configuration file')
    parser.add_argument('--preset', default=None,
                        choices=sorted(PRESETS),
                        help='configuration preset (default: desk)')
    parser.add_argument('--set', action='append', metavar='KEY=VALUE',
                        help='override one configuration key')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='melstyle',
        description='Style-transferring text-to-mel synthesis.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbosity', action='count', default=0,
                        help='increase output verbosity')
    common.add_argument('-l', '--log-file', default=None, help='logger file')
    common.add_argument('--seed', type=int, default=None,
                        help='run seed (overrides the configuration)')
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    p = sub.add_parser('gen-corpus', parents=[common],
                       help='write the procedural toy corpus')
    _config_options(p)
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--texts', type=int, default=16,
                   help='number of toy texts (default: 16)')
    p.add_argument('--limit', type=int, default=None,
                   help='keep a random subset of this many utterances')
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser('train', parents=[common],
                       help='train a model on a manifest')
    _config_options(p)
    p.add_argument('manifest')
    p.add_argument('--out', required=True, help='checkpoint to write')
    p.add_argument('--checkpoint', default=None,
                   help='resume from this checkpoint when it exists')
    p.add_argument('--init-from', default=None,
                   help='initialise parameters from a checkpoint')
    p.add_argument('--steps', type=int, default=None,
                   help='stop after this many steps')
    p.add_argument('--plot-losses', default=None,
                   help='save the loss curves to this image')
    p.set_defaults(func=cmd_train)

    for name, func, text in (('synth', cmd_synth, 'synthesize one utterance'),
                             ('eval', cmd_eval, 'score style transfer')):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('manifest')
        p.add_argument('--checkpoint', required=True)
        p.add_argument('--mode', choices=MODES, default='parallel')
        p.add_argument('--temperature', type=float, default=None)
        p.add_argument('--out', required=True)
        p.set_defaults(func=func)
        if name == 'synth':
            p.add_argument('--reference', required=True,
                           help='id of the style reference')
            group = p.add_mutually_exclusive_group()
            group.add_argument('--text', default=None,
                              help='id of the utterance whose transcript '
                                   'is spoken')
            group.add_argument('--phonemes', default=None,
                              help='space-separated phoneme ids')
            p.add_argument('--plot', default=None,
                           help='also write the mel as a PGM image')
            p.add_argument('--attention', default=None,
                           help='also plot the alignment attention')
        else:
            p.add_argument('--jobs', type=int, default=1,
                           help='parallel evaluation jobs')

    p = sub.add_parser('plot', parents=[common],
                       help='render a mel file or loss curves')
    p.add_argument('mel', nargs='?', default=None, help='GSTN mel file')
    p.add_argument('--checkpoint', default=None,
                   help='plot the loss history of this checkpoint')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = setup_logging(args.verbosity, args.log_file)
    start_time = time.time()
    try:
        args.func(args)
        logger.debug('total time in minutes: %02.2f',
                     (time.time() - start_time) / 60.0)
    except FloatingPointError as exc:
        logger.error('numerical failure: %s', exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        logger.error('I/O error: %s', exc)
        return EXIT_IO
    except ValueError as exc:
        logger.error('invalid input: %s', exc)
        return EXIT_INVALID
    finally:
        root = logging.getLogger()
        for handler in handlers:
            root.removeHandler(handler)
            handler.close()
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
