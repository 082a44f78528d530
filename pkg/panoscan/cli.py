from __future__ import annotations

import argparse
import json
import os.path
import sys
from collections.abc import Sequence
from typing import Any

import numpy as np

from panoscan import config as config_mod
from panoscan import pngio
from panoscan.assessor import prediction_json
from panoscan.assessor import score_image
from panoscan.config import RunConfig
from panoscan.console import BOLD
from panoscan.console import color
from panoscan.console import error
from panoscan.console import set_quiet
from panoscan.console import status
from panoscan.console import warn
from panoscan.console import wrote
from panoscan.diffcore import Array
from panoscan.errors import DataError
from panoscan.errors import PanoscanError
from panoscan.errors import UndefinedCorrelationError
from panoscan.features import build_bank
from panoscan.features import ViewportBank
from panoscan.metrics import sweep
from panoscan.policy import rollout
from panoscan.policy import scanpath_json
from panoscan.ppo import BankSource
from panoscan.ppo import CHECKPOINT_NAME
from panoscan.ppo import evaluate
from panoscan.ppo import Model
from panoscan.ppo import train
from panoscan.ppo import visitation_rate
from panoscan.synth_data import LabeledSample
from panoscan.synth_data import load_manifest
from panoscan.synth_data import make_dataset
from panoscan.visualize import overlay_heatmap

HEATMAP_SCANPATHS = 15
BOOL_WORDS = frozenset(('true', 'false', 'yes', 'no', 'on', 'off'))


def _makedirs(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise DataError(f'cannot create {path}: {e}')


def _write_lines(path: str, objs: Sequence[dict[str, Any]]) -> None:
    try:
        with open(path, 'w') as f:
            for obj in objs:
                f.write(json.dumps(obj, sort_keys=True) + '\n')
    except OSError as e:
        raise DataError(f'cannot write {path}: {e}')
    wrote(path)


def resolve_config(
        args: argparse.Namespace,
        overrides: dict[str, Any],
        near: str | None = None,
) -> RunConfig:
    """Config file, then ablation presets, then ``--key value`` overrides.

    Commands reading a checkpoint default to the snapshot written beside it.
    """
    path = args.config
    if path is None and near is not None:
        snapshot = os.path.join(os.path.dirname(os.path.abspath(near)), config_mod.SNAPSHOT_NAME)
        if os.path.exists(snapshot):
            path = snapshot
    cfg = config_mod.load_config(path)
    cfg = config_mod.apply_ablations(cfg, args.ablate)
    cfg = config_mod.apply_overrides(cfg, overrides)
    if args.single_thread:
        cfg = cfg.replace(threads=1)
    return config_mod.validate(cfg)


def find_manifest(data_dir: str, *names: str) -> str:
    for name in names:
        path = os.path.join(data_dir, f'{name}.jsonl')
        if os.path.exists(path):
            return path
    raise DataError(
        'no {} manifest in {}'.format(' or '.join(names), data_dir),
    )


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.n is not None:
        cfg = config_mod.validate(cfg.replace(dataset_size=args.n))
    _makedirs(args.out_dir)
    manifests = make_dataset(
        args.out_dir,
        cfg.dataset_size,
        cfg.seed,
        cfg.split,
        cfg.erp_width,
        cfg.erp_height,
        config_mod.severity_table(cfg),
        cfg.label_noise,
        cfg.threads,
    )
    config_mod.write_snapshot(cfg, args.out_dir)
    for name, path in manifests.items():
        wrote(path)
        status(f'{name}: {len(load_manifest(path))} images')
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    train_samples = load_manifest(find_manifest(args.data_dir, 'train'))
    val_samples = load_manifest(find_manifest(args.data_dir, 'val', 'test'))
    if len(train_samples) < cfg.batch_size:
        raise DataError(
            f'{len(train_samples)} training images cannot fill a batch of {cfg.batch_size}',
        )
    _makedirs(args.out_dir)
    config_mod.write_snapshot(cfg, args.out_dir)
    status(color(
        f'training on {len(train_samples)} images, validating on {len(val_samples)}',
        BOLD,
    ))
    train(cfg, train_samples, val_samples, args.out_dir)
    wrote(os.path.join(args.out_dir, CHECKPOINT_NAME))
    return 0


def _kt(args: argparse.Namespace, cfg: RunConfig) -> tuple[int, int]:
    k = cfg.num_scanpaths if args.k is None else args.k
    t = cfg.scanpath_length if args.t is None else args.t
    config_mod.validate(cfg.replace(num_scanpaths=k, scanpath_length=t))
    return k, t


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    k, t = _kt(args, cfg)
    samples = load_manifest(args.manifest)
    model = Model.load(args.checkpoint, cfg)
    try:
        report, preds = evaluate(model, samples, cfg, k, t)
    except UndefinedCorrelationError as e:
        raise DataError(f'cannot score {args.manifest}: {e}')
    summary = report.to_json()
    summary['visitation_rate'] = visitation_rate(
        [p.scanpaths for p in preds], [p.sample for p in preds], model.grid,
    )
    print(json.dumps(summary, sort_keys=True))
    out = args.out or os.path.join(
        os.path.dirname(os.path.abspath(args.checkpoint)), 'predictions.jsonl',
    )
    _write_lines(out, [
        prediction_json(p.sample.name, p.q_hat, p.per_path, k, t) for p in preds
    ])
    return 0


def _image_bank(path: str, model: Model, cfg: RunConfig) -> tuple[Array, ViewportBank]:
    erp = pngio.load_png(path)
    return erp, build_bank(erp, model.grid, cfg.render_res, cfg.feature_dim)


def _scanpaths(
        bank: ViewportBank,
        model: Model,
        cfg: RunConfig,
        k: int,
        t: int,
        greedy: bool,
) -> list[list[int]]:
    trajs = rollout(
        bank.features, bank.global_feat, model.policy, k, t,
        np.random.default_rng([cfg.eval_seed, 0]), cfg.mask_revisits, greedy,
    )
    return [tr.actions for tr in trajs]


def cmd_scanpath(args: argparse.Namespace, cfg: RunConfig) -> int:
    k, t = _kt(args, cfg)
    model = Model.load(args.checkpoint, cfg)
    _, bank = _image_bank(args.image, model, cfg)
    paths = _scanpaths(bank, model, cfg, k, t, args.greedy)
    _, per_path = score_image(
        model.assessor, bank.features, bank.global_feat, paths, cfg.raw_output,
    )
    objs = [
        scanpath_json(args.image, i, path, model.grid, score)
        for i, (path, score) in enumerate(zip(paths, per_path))
    ]
    if args.out is None:
        for obj in objs:
            print(json.dumps(obj, sort_keys=True))
    else:
        _write_lines(args.out, objs)
    return 0


def cmd_heatmap(args: argparse.Namespace, cfg: RunConfig) -> int:
    k = HEATMAP_SCANPATHS if args.k is None else args.k
    model = Model.load(args.checkpoint, cfg)
    erp, bank = _image_bank(args.image, model, cfg)
    paths = _scanpaths(bank, model, cfg, k, cfg.scanpath_length, args.greedy)
    pngio.save_png(args.out_png, overlay_heatmap(erp, paths, model.grid))
    wrote(args.out_png)
    return 0


def cmd_sweep(args: argparse.Namespace, cfg: RunConfig) -> int:
    samples: list[LabeledSample] = load_manifest(args.manifest)
    model = Model.load(args.checkpoint, cfg)
    banks = BankSource(cfg, model.grid)
    if cfg.mask_revisits and max(cfg.sweep_ts) > model.grid.size:
        warn(f'T values above {model.grid.size} are skipped with revisits masked')
    ts = [int(t) for t in cfg.sweep_ts if not cfg.mask_revisits or t <= model.grid.size]
    try:
        sweep(
            lambda k, t: evaluate(model, samples, cfg, k, t, banks=banks)[0],
            [int(k) for k in cfg.sweep_ks],
            ts,
            args.out_csv,
        )
    except UndefinedCorrelationError as e:
        raise DataError(f'cannot score {args.manifest}: {e}')
    wrote(args.out_csv)
    return 0


COMMANDS = {
    'synth': cmd_synth,
    'train': cmd_train,
    'eval': cmd_eval,
    'scanpath': cmd_scanpath,
    'heatmap': cmd_heatmap,
    'sweep': cmd_sweep,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML file of config keys.')
    common.add_argument(
        '--ablate', action='append', default=[],
        choices=sorted(config_mod.ABLATIONS),
        help='Apply an ablation preset (repeatable).',
    )
    common.add_argument('--quiet', action='store_true')
    common.add_argument(
        '--single-thread', action='store_true',
        help='Force threads=1 for bit-reproducible runs.',
    )

    parser = argparse.ArgumentParser(
        prog='panoscan',
        allow_abbrev=False,
        description=(
            'Scanpath policy and quality assessor for 360-degree panoramas. '
            'Any config key can be overridden with --some-key value.'
        ),
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser(
        'synth', parents=[common], allow_abbrev=False,
        help='Write a synthetic dataset.',
    )
    p.add_argument('out_dir')
    p.add_argument('--n', type=int, help='Number of images (dataset_size).')

    p = sub.add_parser(
        'train', parents=[common], allow_abbrev=False,
        help='Train policy and assessor.',
    )
    p.add_argument('data_dir')
    p.add_argument('out_dir')

    def kt(p: argparse.ArgumentParser) -> None:
        p.add_argument('-k', type=int, help='Scanpaths per image.')
        p.add_argument('-t', type=int, help='Viewports per scanpath.')

    p = sub.add_parser(
        'eval', parents=[common], allow_abbrev=False,
        help='Score a manifest.',
    )
    p.add_argument('checkpoint')
    p.add_argument('manifest')
    kt(p)
    p.add_argument('--out', help='Prediction JSON lines (default: beside checkpoint).')

    p = sub.add_parser(
        'scanpath', parents=[common], allow_abbrev=False,
        help='Export scanpaths.',
    )
    p.add_argument('checkpoint')
    p.add_argument('image')
    kt(p)
    p.add_argument('--greedy', action='store_true')
    p.add_argument('--out', help='JSON lines file (default: stdout).')

    p = sub.add_parser(
        'heatmap', parents=[common], allow_abbrev=False,
        help='Render a visitation heatmap.',
    )
    p.add_argument('checkpoint')
    p.add_argument('image')
    p.add_argument('out_png')
    p.add_argument('-k', type=int, help=f'Scanpaths (default {HEATMAP_SCANPATHS}).')
    p.add_argument('--greedy', action='store_true')

    p = sub.add_parser(
        'sweep', parents=[common], allow_abbrev=False,
        help='SRCC/PLCC over a K x T grid.',
    )
    p.add_argument('checkpoint')
    p.add_argument('manifest')
    p.add_argument('out_csv')
    return parser


def split_overrides(argv: Sequence[str]) -> tuple[list[str], list[str]]:
    """Separates ``--config-key value`` tokens from the subcommand's own
    arguments."""
    own: list[str] = []
    overrides: list[str] = []
    i = 0
    while i < len(argv):
        arg = argv[i]
        key = arg[2:].split('=', 1)[0].replace('-', '_')
        if not arg.startswith('--') or key not in config_mod.FIELDS:
            own.append(arg)
            i += 1
            continue
        overrides.append(arg)
        i += 1
        if '=' in arg or i == len(argv) or argv[i].startswith('--'):
            continue
        if isinstance(config_mod.FIELDS[key], bool) and argv[i].lower() not in BOOL_WORDS:
            continue
        overrides.append(argv[i])
        i += 1
    return own, overrides


def main(argv: Sequence[str] | None = None) -> int:
    own, rest = split_overrides(sys.argv[1:] if argv is None else argv)
    args = _parser().parse_args(own)
    set_quiet(args.quiet)
    try:
        overrides = config_mod.parse_overrides(rest)
        cfg = resolve_config(args, overrides, getattr(args, 'checkpoint', None))
        return COMMANDS[args.command](args, cfg)
    except PanoscanError as e:
        error(f'{type(e).__name__}: {e}')
        return e.exit_code


if __name__ == '__main__':
    exit(main())
