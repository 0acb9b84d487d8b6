"""TSTNN command line

Trains the two-stage transformer speech enhancement network, denoises WAV
files with a checkpoint, evaluates checkpoints on paired directories,
synthesises training mixtures, reports parameter counts and runs the
finite-difference gradient suite.

Example:
    The program is run using the command line interface:

        $ python run.py synth --out data --snr-db 0 --count 4 --seed 1
        $ python run.py train --config tiny.json --out tiny.ckpt --steps 300
        $ python run.py denoise --ckpt tiny.ckpt --in noisy.wav --out enhanced.wav
        $ python run.py eval --ckpt tiny.ckpt --clean data/clean --noisy data/noisy --baseline
        $ python run.py params
        $ python run.py gradcheck --all

Exit codes are 0 on success, 2 for usage, configuration and input errors and
3 for numeric failures.
"""

import argparse
import dataclasses
import logging
import os
from typing import Optional, Sequence

import numpy as np

from config.settings import Config
from tstnn.checkpoint import load_checkpoint
from tstnn.exceptions import (ConfigError, GradcheckFailure, TstnnException, UsageError,
                              handle_exception)
from tstnn.framing import read_wav, write_wav
from tstnn.gradcheck import GRADCHECKS, run_gradchecks
from tstnn.helper import load_run_config, load_training_data, read_pairs, write_tsv
from tstnn.metrics import MetricReport, ReportGenerator, UtteranceMetrics
from tstnn.model import PRESETS, TSTNN, param_report
from tstnn.synth import SynthSpec, synth_batch
from tstnn.training import train

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def cmd_train(args: argparse.Namespace) -> int:
    """Trains a model from a run config and writes the checkpoint and the trace."""

    model_config, train_config = load_run_config(args.config)
    overrides = {}
    if args.steps is not None:
        # each epoch runs at least one step
        overrides.update(max_steps=args.steps, epochs=max(train_config.epochs, args.steps))
    if args.seed is not None:
        overrides.update(seed=args.seed)
    train_config = dataclasses.replace(train_config, **overrides)

    model = TSTNN(model_config, seed=train_config.seed)
    data = load_training_data(train_config, model_config)
    trace_path = args.trace or f'{args.out}.trace.tsv'
    report = train(model, train_config, data, trace_path=trace_path, checkpoint_path=args.out)
    logger.info('trained %d steps, loss %.5g -> %.5g; checkpoint %s, trace %s',
                report.steps, report.initial_loss, report.final_loss, args.out, trace_path)
    return 0


def cmd_denoise(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.ckpt)
    noisy = read_wav(args.input)
    if noisy.sample_rate != model.config.sample_rate:
        raise ConfigError(f'{args.input} is at {noisy.sample_rate} Hz, model expects '
                          f'{model.config.sample_rate} Hz', field='sample_rate')
    write_wav(args.out, model.denoise(noisy))
    logger.info('denoised %s -> %s', args.input, args.out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Scores the denoised noisy files against their clean partners."""

    model = load_checkpoint(args.ckpt)
    report, baseline = MetricReport(), MetricReport() if args.baseline else None
    for name, clean, noisy in read_pairs(args.clean, args.noisy):
        if noisy.sample_rate != model.config.sample_rate:
            raise ConfigError(f'{name} is at {noisy.sample_rate} Hz', field='sample_rate')
        enhanced = model.denoise(noisy)
        report.add(UtteranceMetrics.measure(name, clean, enhanced, args.frame, args.hop))
        if baseline is not None:
            baseline.add(UtteranceMetrics.measure(name, clean, noisy, args.frame, args.hop))

    logger.info('evaluated %d files', len(report.utterances))
    write_tsv(args.report, ReportGenerator(report, baseline).generate_report())
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(args.snr_db, args.clip_samples, args.sample_rate, args.noise, args.seed)
    pairs = synth_batch(spec, args.count)
    clean_dir, noisy_dir = os.path.join(args.out, 'clean'), os.path.join(args.out, 'noisy')
    os.makedirs(clean_dir, exist_ok=True)
    os.makedirs(noisy_dir, exist_ok=True)
    for i, (clean, noisy) in enumerate(pairs):
        write_wav(os.path.join(clean_dir, f'{i:04d}.wav'), clean)
        write_wav(os.path.join(noisy_dir, f'{i:04d}.wav'), noisy)
    logger.info('wrote %d pairs to %s', len(pairs), args.out)
    return 0


def cmd_params(args: argparse.Namespace) -> int:
    """Prints per-submodule and total parameter counts and, optionally, a shape trace."""

    if args.config:
        model_config, _ = load_run_config(args.config)
    else:
        model_config = PRESETS[args.preset]
    model = TSTNN(model_config)
    lines = param_report(model, args.depth)
    if args.trace:
        shapes = []
        frames = np.zeros((1, 1, args.trace, model_config.frame_size), dtype=model.params.dtype)
        model.forward_frames(frames, shapes)
        lines += [f'{stage}\t{list(shape)}' for stage, shape in shapes]
    write_tsv(None, lines)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradchecks(None if args.all else args.op, seed=args.seed)
    write_tsv(None, [result.line() for result in results])
    failed = [result.name for result in results if not result.passed]
    if failed:
        raise GradcheckFailure(f'{len(failed)} check(s) failed: {", ".join(failed)}', field='gradcheck')
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='tstnn', description='Two-stage transformer speech enhancement')
    commands = parser.add_subparsers(dest='command', required=True)

    train_parser = commands.add_parser('train', help='train a model')
    train_parser.add_argument('--config', required=True, help='flat JSON run config')
    train_parser.add_argument('--out', required=True, help='checkpoint path')
    train_parser.add_argument('--steps', type=int, help='stop after this many optimizer steps')
    train_parser.add_argument('--seed', type=int, help='overrides the config seed')
    train_parser.add_argument('--trace', help='trace path, defaults to <out>.trace.tsv')
    train_parser.set_defaults(handler=cmd_train)

    denoise_parser = commands.add_parser('denoise', help='enhance one WAV file')
    denoise_parser.add_argument('--ckpt', required=True)
    denoise_parser.add_argument('--in', dest='input', required=True)
    denoise_parser.add_argument('--out', required=True)
    denoise_parser.set_defaults(handler=cmd_denoise)

    eval_parser = commands.add_parser('eval', help='score a checkpoint on paired WAV directories')
    eval_parser.add_argument('--ckpt', required=True)
    eval_parser.add_argument('--clean', required=True)
    eval_parser.add_argument('--noisy', required=True)
    eval_parser.add_argument('--baseline', action='store_true', help='also score the unprocessed input')
    eval_parser.add_argument('--report', help='report path, stdout when omitted')
    eval_parser.add_argument('--frame', type=int, default=512)
    eval_parser.add_argument('--hop', type=int, default=256)
    eval_parser.set_defaults(handler=cmd_eval)

    synth_parser = commands.add_parser('synth', help='write synthetic clean/noisy pairs')
    synth_parser.add_argument('--out', required=True)
    synth_parser.add_argument('--snr-db', type=float, default=0.0, help="target SNR, 'inf' for clean copies")
    synth_parser.add_argument('--count', type=int, default=4)
    synth_parser.add_argument('--seed', type=int, default=0)
    synth_parser.add_argument('--clip-samples', type=int, default=16000)
    synth_parser.add_argument('--sample-rate', type=int, default=16000)
    synth_parser.add_argument('--noise', default='white', help='white, pink or a WAV path')
    synth_parser.set_defaults(handler=cmd_synth)

    params_parser = commands.add_parser('params', help='report parameter counts')
    params_parser.add_argument('--config', help='flat JSON run config')
    params_parser.add_argument('--preset', choices=sorted(PRESETS), default='full')
    params_parser.add_argument('--depth', type=int, default=2, help='name components per group')
    params_parser.add_argument('--trace', type=int, metavar='N', help='print stage shapes for N frames')
    params_parser.set_defaults(handler=cmd_params)

    gradcheck_parser = commands.add_parser('gradcheck', help='finite-difference gradient suite')
    selection = gradcheck_parser.add_mutually_exclusive_group(required=True)
    selection.add_argument('--op', action='append', choices=sorted(GRADCHECKS))
    selection.add_argument('--all', action='store_true')
    gradcheck_parser.add_argument('--seed', type=int, default=0)
    gradcheck_parser.set_defaults(handler=cmd_gradcheck)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main function.

    Parses the command line, configures logging and dispatches to the
    subcommand handler, mapping handled errors to exit codes.
    """

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=Config.LOG_LEVEL, format=LOG_FORMAT)
    try:
        return args.handler(args)
    except TstnnException as e:
        return handle_exception(e)
    except OSError as e:
        return handle_exception(UsageError(f'{e.filename}: {e.strerror}', field='path'))


if __name__ == '__main__':
    raise SystemExit(main())
