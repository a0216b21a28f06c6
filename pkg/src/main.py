"""
Command line entry point: `python src/main.py [global flags] <command> [command flags]`.
Commands: synth, pretrain, train, infer, eval, report, run (all of them in order). Every command reads and writes
inside the output directory (--out):
    data/           sites.csv, site_params.csv (synthetic datasets)
    prep/           split.yaml, norm_stats.yaml, class_weights.txt
    checkpoints/    member_XX/{tamlstm,ctlstm,tamrl}.h5
    logs/           metrics.log (one line per epoch), flux.log
    predictions/    predictions_<model>.csv
    eval/           metrics_by_site.csv, summary.csv
    report/         summary.csv, metrics_by_{site,igbp,koppen}.csv, relative_rmse.csv, scatter_sites.csv
Exit codes: 0 success, 2 usage error, 3 data validation error, 4 runtime failure.
"""
import argparse
import os
import sys
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from datasets.flux_sites import NormStats, SiteTask, apply_normalize, build_site_tasks, fit_normalize, \
    load_site_csv, split_sites, window_sequences, write_site_csv
from datasets.synthetic import load_site_params, synth_records, write_site_params
from modules.tam_lstm import TamLstm
from train_tamrl import MODEL_KINDS, FluxEnsemble, ensembles_of, joint_train, load_member, member_dir, \
    train_ensemble
from utils.command_line_logger import CommandLineLogger, set_log_level
from utils.config import RunConfig, TamRlConfig, load_config, save_config
from utils.data import ManualSeedReproducible
from utils.errors import DataValidationError, FluxError, InsufficientWindowsError, PipelineStateError
from utils.losses import LossConfig, save_class_weights
from utils.metrics.predictions import load_predictions, stitch_predictions, write_predictions
from utils.metrics.scores import site_metrics
from utils.metrics.tables import metrics_frame, print_summary, summary_table, write_report
from utils.train import TrainingLog

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
EXIT_CODES = {'ok': EXIT_OK, 'usage': EXIT_USAGE, 'data': EXIT_DATA, 'runtime': EXIT_RUNTIME}
LOG_LEVELS = ('debug', 'info', 'warning', 'error', 'critical')

logger = CommandLineLogger(name='main')


class RunLayout:
    """
    RunLayout Class:
    File locations of one pipeline run below its output directory.
    """

    def __init__(self, out_dir: str, data_csv: Optional[str] = None):
        self.root = os.path.abspath(out_dir)
        self.data_csv = os.path.abspath(data_csv) if data_csv else os.path.join(self.root, 'data', 'sites.csv')
        self.params_csv = os.path.join(os.path.dirname(self.data_csv), 'site_params.csv')
        self.prep = os.path.join(self.root, 'prep')
        self.checkpoints = os.path.join(self.root, 'checkpoints')
        self.logs = os.path.join(self.root, 'logs')
        self.predictions_dir = os.path.join(self.root, 'predictions')
        self.eval_dir = os.path.join(self.root, 'eval')
        self.report_dir = os.path.join(self.root, 'report')

    @property
    def split(self) -> str:
        return os.path.join(self.prep, 'split.yaml')

    @property
    def norm_stats(self) -> str:
        return os.path.join(self.prep, 'norm_stats.yaml')

    @property
    def class_weights(self) -> str:
        return os.path.join(self.prep, 'class_weights.txt')

    @property
    def metrics_log(self) -> str:
        return os.path.join(self.logs, 'metrics.log')

    def checkpoint(self, member: int, kind: str) -> str:
        return os.path.join(member_dir(self.checkpoints, member), f'{kind}.h5')

    def predictions(self, kind: str) -> str:
        return os.path.join(self.predictions_dir, f'predictions_{kind}.csv')


#
# --------------
# Data preparation
# -------------
#

@dataclass
class PreparedData:
    train: List[SiteTask]
    held_out: List[SiteTask]
    stats: NormStats
    model_config: TamRlConfig
    loss: LossConfig
    labels: Dict[str, Tuple[str, str]]


def _read_split(filepath: str) -> Optional[dict]:
    if not os.path.isfile(filepath):
        return None
    with open(filepath) as yaml_fp:
        return yaml.safe_load(yaml_fp)


def prepare_data(config: RunConfig, layout: RunLayout) -> PreparedData:
    """
    Load the site CSV, split sites (re-using prep/split.yaml when present), fit normalization statistics on the
    training sites only, window every site and fit the class weights of the training windows. Writes prep/.
    """
    if not os.path.isfile(layout.data_csv):
        raise PipelineStateError(f'site data not found: {layout.data_csv} (run "synth" or pass --data)')
    records = load_site_csv(layout.data_csv)
    if not records:
        raise DataValidationError(f'{layout.data_csv} holds no records')
    driver_dim = len(records[0].drivers)
    raw_tasks = build_site_tasks(window_sequences(records, config.data.window, config.data.stride))
    for site_id in sorted({_r.site_id for _r in records} - {_t.site_id for _t in raw_tasks}):
        logger.warning(f'site {site_id} yields no {config.data.window}-day window and is ignored')

    split = _read_split(layout.split)
    if split is None:
        rng = np.random.default_rng(config.train.seed)
        train, held_out = split_sites(raw_tasks, config.data.holdout_fraction, rng, stratify_by=config.data.stratify_by)
        split = {'seed': config.train.seed, 'holdout_fraction': config.data.holdout_fraction,
                 'stratify_by': config.data.stratify_by, 'train': [_t.site_id for _t in train],
                 'held_out': [_t.site_id for _t in held_out],
                 'labels': {_t.site_id: [_t.igbp, _t.koppen] for _t in raw_tasks}}
        os.makedirs(layout.prep, exist_ok=True)
        with open(layout.split, 'w') as yaml_fp:
            yaml.safe_dump(split, yaml_fp, sort_keys=False)
    train_ids, held_ids = set(split['train']), set(split['held_out'])
    if train_ids & held_ids:
        raise DataValidationError(f'{layout.split}: sites on both sides of the split: {sorted(train_ids & held_ids)}')

    stats = fit_normalize([_r for _r in records if _r.site_id in train_ids])
    stats.check_unseen(sorted(held_ids))
    stats.save(layout.norm_stats)
    params = load_site_params(layout.params_csv)
    tasks = build_site_tasks(window_sequences(apply_normalize(stats, records), config.data.window,
                                              config.data.stride), params=params)
    train = [_t for _t in tasks if _t.site_id in train_ids]
    held_out = [_t for _t in tasks if _t.site_id in held_ids]
    if not train or not held_out:
        raise DataValidationError('both the training and the held-out split need at least one windowed site')

    if config.model.driver_dim is not None and config.model.driver_dim != driver_dim:
        raise DataValidationError(f'model.driver_dim={config.model.driver_dim} but the data has {driver_dim} drivers')
    model_config = config.model.resolve(
        driver_dim=driver_dim,
        igbp_labels=config.model.igbp_labels or sorted({_t.igbp for _t in tasks}),
        koppen_labels=config.model.koppen_labels or sorted({_t.koppen for _t in tasks}))
    loss = config.loss.with_class_weights([_w.igbp for _t in train for _w in _t.windows],
                                          [_w.koppen for _t in train for _w in _t.windows])
    save_class_weights(layout.class_weights, loss)
    logger.info(f'prepared {len(train)} training / {len(held_out)} held-out sites, D={driver_dim}')
    return PreparedData(train=train, held_out=held_out, stats=stats, model_config=model_config, loss=loss,
                        labels={_s: tuple(_l) for _s, _l in split['labels'].items()})


#
# --------------
# Commands
# -------------
#

def cmd_synth(config: RunConfig, layout: RunLayout, args: argparse.Namespace) -> None:
    n_sites = getattr(args, 'sites', None)
    n_sites = config.data.synth_sites if n_sites is None else n_sites
    days = getattr(args, 'days', None)
    days = config.data.synth_days if days is None else days
    noise_sd = getattr(args, 'noise_sd', None)
    noise_sd = config.data.synth_noise_sd if noise_sd is None else noise_sd
    records, params = synth_records(n_sites, days, np.random.default_rng(config.train.seed), noise_sd=noise_sd)
    write_site_csv(layout.data_csv, records)
    write_site_params(layout.params_csv, params)
    logger.info(f'synthesized {n_sites} sites × {days} days into {layout.data_csv}')


def cmd_pretrain(config: RunConfig, layout: RunLayout, args: argparse.Namespace) -> None:
    data = prepare_data(config, layout)
    train_ensemble(data.train, data.model_config, data.loss, config.train, kinds=('tamlstm', 'ctlstm'),
                   out_dir=layout.checkpoints, log=TrainingLog(layout.metrics_log, logger=logger), logger=logger)


def cmd_train(config: RunConfig, layout: RunLayout, args: argparse.Namespace) -> None:
    data = prepare_data(config, layout)
    log = TrainingLog(layout.metrics_log, logger=logger)
    for member, seed in enumerate(config.train.member_seeds()):
        init = TamLstm.load(layout.checkpoint(member, 'tamlstm'))
        model = joint_train(data.train, init, data.model_config, data.loss, config.train, seed=seed, member=member,
                            log=log, checkpoint_dir=member_dir(layout.checkpoints, member), logger=logger)
        model.save(layout.checkpoint(member, 'tamrl'), seed=seed, member=member)


def _available_kinds(layout: RunLayout) -> List[str]:
    kinds = [_k for _k in MODEL_KINDS if os.path.isfile(layout.checkpoint(0, _k))]
    if not kinds:
        raise PipelineStateError(f'no trained model found under {layout.checkpoints} (run "pretrain" and "train")')
    return kinds


def predict_held_out(ensemble: FluxEnsemble, held_out: Sequence[SiteTask], support_size: int,
                     support_selection: str) -> pd.DataFrame:
    """
    Zero-shot predictions of every held-out site: the support windows are selected from the site, every other window
    is predicted and the per-window outputs are stitched per day. Days inside a support window are not returned.
    """
    frames = []
    for site in held_out:
        try:
            support = site.select_support(support_size, mode=support_selection)
        except InsufficientWindowsError as e:
            logger.warning(f'skipping held-out site {site.site_id}: {e}')
            continue
        support_ids = {id(_w) for _w in support}
        windows = [_w for _w in site.windows if id(_w) not in support_ids]
        support_dates = {_d for _w in support for _d in _w.dates}
        frame = stitch_predictions(windows, ensemble.predict(site, support, windows), exclude_dates=support_dates)
        if frame.empty:
            logger.warning(f'skipping held-out site {site.site_id}: every predicted day lies in a support window')
            continue
        frames.append(frame)
    if not frames:
        raise DataValidationError('no held-out site could be predicted')
    return pd.concat(frames, ignore_index=True)


def cmd_infer(config: RunConfig, layout: RunLayout, args: argparse.Namespace) -> None:
    data = prepare_data(config, layout)
    kinds = _available_kinds(layout)
    members = [load_member(layout.checkpoints, _k, kinds) for _k in range(len(config.train.member_seeds()))]
    for kind, ensemble in ensembles_of(members, clip_after_mean=config.eval.clip_after_mean).items():
        before = [_m.checksum() for _m in ensemble.models]
        frame = predict_held_out(ensemble, data.held_out, config.eval.support_size, config.eval.support_selection)
        if [_m.checksum() for _m in ensemble.models] != before:
            raise FluxError(f'{kind}: model parameters changed during inference')
        write_predictions(layout.predictions(kind), frame)
        logger.info(f'{kind}: {len(ensemble)}-member predictions written to {layout.predictions(kind)}')


def _load_all_predictions(layout: RunLayout) -> pd.DataFrame:
    frames = [load_predictions(layout.predictions(_k), model=_k) for _k in MODEL_KINDS
              if os.path.isfile(layout.predictions(_k))]
    if not frames:
        raise PipelineStateError(f'no predictions found under {layout.predictions_dir} (run "infer")')
    return pd.concat(frames, ignore_index=True)


def cmd_eval(config: RunConfig, layout: RunLayout, args: argparse.Namespace) -> None:
    split = _read_split(layout.split)
    if split is None:
        raise PipelineStateError(f'{layout.split} not found (run "pretrain")')
    labels = {_s: tuple(_l) for _s, _l in split['labels'].items()}
    predictions = _load_all_predictions(layout)
    metrics = site_metrics(predictions, labels, strict_qc=config.eval.strict_qc)
    if not metrics:
        raise DataValidationError('no evaluable prediction rows')
    os.makedirs(layout.eval_dir, exist_ok=True)
    metrics_frame(metrics).to_csv(os.path.join(layout.eval_dir, 'metrics_by_site.csv'), index=False)
    summary = summary_table(metrics, predictions=predictions, pooled=config.eval.pooled,
                            strict_qc=config.eval.strict_qc)
    summary.to_csv(os.path.join(layout.eval_dir, 'summary.csv'), index=False)
    print_summary(summary, title='Held-out sites' + (' (qc == 1)' if config.eval.strict_qc else ''))


def cmd_report(config: RunConfig, layout: RunLayout, args: argparse.Namespace) -> None:
    metrics_path = os.path.join(layout.eval_dir, 'metrics_by_site.csv')
    if not os.path.isfile(metrics_path):
        raise PipelineStateError(f'{metrics_path} not found (run "eval")')
    metrics = pd.read_csv(metrics_path, dtype={'site_id': str, 'igbp': str, 'koppen': str},
                          float_precision='round_trip')
    paths = write_report(layout.report_dir, metrics, reference_model=config.eval.reference_model,
                         predictions=_load_all_predictions(layout), pooled=config.eval.pooled,
                         strict_qc=config.eval.strict_qc)
    logger.info(f'report written: {", ".join(sorted(paths))}')


def cmd_run(config: RunConfig, layout: RunLayout, args: argparse.Namespace) -> None:
    if getattr(args, 'data', None) is None:
        cmd_synth(config, layout, args)
    for command in (cmd_pretrain, cmd_train, cmd_infer, cmd_eval, cmd_report):
        command(config, layout, args)


COMMANDS: Dict[str, Tuple[Callable, str]] = {
    'synth': (cmd_synth, 'generate a synthetic multi-site dataset'),
    'pretrain': (cmd_pretrain, 'split and normalize the data, train TAMLSTM (stage 1) and CT-LSTM'),
    'train': (cmd_train, 'joint TAM-RL training (stage 2) from the TAMLSTM checkpoints'),
    'infer': (cmd_infer, 'zero-shot ensemble predictions on the held-out sites'),
    'eval': (cmd_eval, 'per-site metrics and the summary table'),
    'report': (cmd_report, 'per-group, relative-RMSE and scatter tables'),
    'run': (cmd_run, 'synth (unless --data), pretrain, train, infer, eval and report'),
}


#
# --------------
# Parsing
# -------------
#

def build_parser() -> argparse.ArgumentParser:
    """
    Global flags are accepted before or after the command.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=argparse.SUPPRESS, help='YAML configuration file')
    common.add_argument('--seed', type=int, default=argparse.SUPPRESS, help='base seed (overrides train.seed)')
    common.add_argument('--out', type=str, default=argparse.SUPPRESS, help='output directory (default: ./runs/default)')
    common.add_argument('--data', type=str, default=argparse.SUPPRESS, help='site CSV (default: <out>/data/sites.csv)')
    common.add_argument('--strict-qc', action='store_true', default=argparse.SUPPRESS,
                        help='evaluate only steps with qc == 1')
    common.add_argument('--log-level', type=str, choices=LOG_LEVELS, default=argparse.SUPPRESS,
                        help='console log level')

    parser = argparse.ArgumentParser(prog='tamrl', description='Zero-shot carbon-flux upscaling with TAM-RL.',
                                     parents=[common])
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True
    for name, (_, help_text) in COMMANDS.items():
        command = commands.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name in ('synth', 'run'):
            command.add_argument('--sites', type=int, default=None, help='number of synthetic sites')
            command.add_argument('--days', type=int, default=None, help='days per synthetic site')
            command.add_argument('--noise-sd', type=float, default=None, help='NEE noise standard deviation')
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    Load the configuration file and apply the command line overrides.
    """
    config = load_config(getattr(args, 'config', None))
    if getattr(args, 'seed', None) is not None:
        config.train = replace(config.train, seed=args.seed, seeds=None)
    if getattr(args, 'strict_qc', False):
        config.eval = replace(config.eval, strict_qc=True)
    return config


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.
    :param (optional) argv: command line arguments (defaults to sys.argv[1:])
    :return: the exit code
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if getattr(args, 'log_level', None):
        set_log_level(args.log_level)
    try:
        config = resolve_config(args)
        layout = RunLayout(getattr(args, 'out', None) or os.path.join('runs', 'default'), getattr(args, 'data', None))
        os.makedirs(layout.logs, exist_ok=True)
        logger.attach_file(os.path.join(layout.logs, 'flux.log'))
        save_config(os.path.join(layout.root, 'config.yaml'), config)
        ManualSeedReproducible.manual_seed(config.train.seed)
        COMMANDS[args.command][0](config, layout, args)
    except DataValidationError as e:
        logger.error(f'[{args.command}] invalid data: {e}')
        return EXIT_DATA
    except FluxError as e:
        logger.error(f'[{args.command}] {e}')
        return EXIT_RUNTIME
    except Exception as e:
        logger.critical(f'[{args.command}] {e.__class__.__name__}: {e}')
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(run_cli())
