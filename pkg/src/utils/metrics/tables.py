import math
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd
from prettytable import PrettyTable

from utils.command_line_logger import CommandLineLogger
from utils.errors import DataValidationError
from utils.metrics.scores import SiteMetrics, balance_residual, pooled_metrics, relative_rmse

GROUPINGS = ('igbp', 'koppen', 'all')
REPORT_FILES = ('summary.csv', 'metrics_by_site.csv', 'metrics_by_igbp.csv', 'metrics_by_koppen.csv',
                'relative_rmse.csv', 'scatter_sites.csv')
SITE_COLUMNS = ['model', 'target', 'site_id', 'igbp', 'koppen', 'n', 'rmse', 'r2']
GROUP_COLUMNS = ['model', 'target', 'group', 'n_sites', 'rmse_mean', 'rmse_sd', 'r2_mean', 'r2_sd', 'r2_sites']

_logger = CommandLineLogger(name='metrics')


def metrics_frame(metrics: Union[Sequence[SiteMetrics], pd.DataFrame]) -> pd.DataFrame:
    """
    :return: one row per (model, target, site) following `SITE_COLUMNS`, sorted
    """
    if isinstance(metrics, pd.DataFrame):
        frame = metrics.copy()
    else:
        frame = pd.DataFrame([_m.to_dict() for _m in metrics], columns=list(SiteMetrics.__dataclass_fields__))
    frame['r2'] = pd.to_numeric(frame['r2'], errors='coerce')
    frame['site_id'] = frame['site_id'].astype(str)
    return frame[SITE_COLUMNS].sort_values(['model', 'target', 'site_id'], kind='mergesort').reset_index(drop=True)


def aggregate(metrics: Union[Sequence[SiteMetrics], pd.DataFrame], by: str = 'all') -> pd.DataFrame:
    """
    Unweighted across-site aggregation: every site counts once regardless of its number of evaluated steps.
    :param metrics: `SiteMetrics` objects (or a frame of them, e.g. a re-read metrics_by_site.csv)
    :param (str) by: 'igbp', 'koppen' or 'all'
    :return: one row per (model, target, group) following `GROUP_COLUMNS`; the standard deviations (ddof=1) are NaN
             for groups of a single site
    """
    if by not in GROUPINGS:
        raise DataValidationError(f'unknown grouping key "{by}" (known: {list(GROUPINGS)})')
    frame = metrics_frame(metrics)
    if frame.empty:
        raise DataValidationError('nothing to aggregate')
    frame['group'] = 'all' if by == 'all' else frame[by]
    table = frame.groupby(['model', 'target', 'group'], sort=True).agg(
        n_sites=('site_id', 'size'), rmse_mean=('rmse', 'mean'), rmse_sd=('rmse', 'std'), r2_mean=('r2', 'mean'),
        r2_sd=('r2', 'std'), r2_sites=('r2', 'count'))
    return table.reset_index()[GROUP_COLUMNS]


@dataclass(frozen=True)
class ComparisonCell:
    """
    ComparisonCell Class:
    One cell of the relative-RMSE heatmap: the group-mean RMSE of a model and its improvement over the reference
    model's group-mean RMSE (None when the reference RMSE is 0).
    """
    grouping: str
    group: str
    model: str
    target: str
    mean_rmse: float
    n_sites: int
    n_samples: int
    reference_rmse: float
    relative_rmse: Optional[float]


def comparison_cells(metrics: Union[Sequence[SiteMetrics], pd.DataFrame], reference_model: str,
                     groupings: Sequence[str] = ('igbp', 'koppen')) -> List[ComparisonCell]:
    """
    :param metrics: per-site metrics of every model (the reference included)
    :param (str) reference_model: model the others are compared against
    :param (Sequence) groupings: label groupings to build cells for
    :return: list of `ComparisonCell` objects
    """
    frame = metrics_frame(metrics)
    if reference_model not in set(frame['model']):
        raise DataValidationError(f'reference model "{reference_model}" has no metrics')
    cells = []
    for grouping in groupings:
        table = aggregate(frame, by=grouping)
        samples = frame.assign(group=frame[grouping] if grouping != 'all' else 'all') \
            .groupby(['model', 'target', 'group'])['n'].sum()
        reference = table[table['model'] == reference_model].set_index(['target', 'group'])['rmse_mean']
        for row in table.itertuples(index=False):
            if (row.target, row.group) not in reference.index:
                continue
            ref = float(reference[(row.target, row.group)])
            rel = relative_rmse(ref, row.rmse_mean) if ref > 0 else None
            if rel is None:
                _logger.warning(f'relative RMSE undefined for {grouping}={row.group} ({row.target}): reference is 0')
            cells.append(ComparisonCell(grouping=grouping, group=str(row.group), model=row.model, target=row.target,
                                        mean_rmse=float(row.rmse_mean), n_sites=int(row.n_sites),
                                        n_samples=int(samples[(row.model, row.target, row.group)]),
                                        reference_rmse=ref, relative_rmse=rel))
    return cells


def scatter_sites(metrics: Union[Sequence[SiteMetrics], pd.DataFrame], reference_model: str) -> pd.DataFrame:
    """
    Per-site pairs (candidate vs reference) of RMSE and R², one row per (candidate model, target, site).
    """
    frame = metrics_frame(metrics)
    reference = frame[frame['model'] == reference_model][['target', 'site_id', 'rmse', 'r2']] \
        .rename(columns={'rmse': 'reference_rmse', 'r2': 'reference_r2'})
    candidates = frame[frame['model'] != reference_model]
    table = candidates.merge(reference, on=['target', 'site_id'], how='inner')
    table['reference_model'] = reference_model
    return table[['model', 'reference_model', 'target', 'site_id', 'igbp', 'koppen', 'rmse', 'reference_rmse', 'r2',
                  'reference_r2']].sort_values(['model', 'target', 'site_id'], kind='mergesort').reset_index(drop=True)


def summary_table(metrics: Union[Sequence[SiteMetrics], pd.DataFrame], predictions: Optional[pd.DataFrame] = None,
                  pooled: bool = False, strict_qc: bool = False) -> pd.DataFrame:
    """
    Model × target summary: across-site mean RMSE / R² (and their standard deviations); with :attr:`pooled`, also
    the per-sample metrics; with :attr:`predictions`, the mean flux-balance residual of each model.
    """
    table = aggregate(metrics, by='all').drop(columns=['group'])
    if predictions is not None and pooled:
        table = table.merge(pooled_metrics(predictions, strict_qc=strict_qc), on=['model', 'target'], how='left')
    if predictions is not None:
        table = table.merge(balance_residual(predictions), on='model', how='left')
    return table


def print_summary(table: pd.DataFrame, title: Optional[str] = None) -> str:
    """
    Print (and return) a Table-1 style prettytable of a summary table.
    """
    pt = PrettyTable()
    pt.field_names = ['Model', 'Target', 'Sites', 'RMSE', 'R²']
    for row in table.itertuples(index=False):
        pt.add_row([row.model, row.target, row.n_sites, _fmt(row.rmse_mean, row.rmse_sd),
                    _fmt(row.r2_mean, row.r2_sd)])
    if title:
        pt.title = title
    text = pt.get_string()
    print(text)
    return text


def _fmt(mean: float, sd: float) -> str:
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return '-'
    return f'{mean:.3f}' if sd is None or math.isnan(sd) else f'{mean:.3f} ± {sd:.3f}'


def write_report(out_dir: str, metrics: Union[Sequence[SiteMetrics], pd.DataFrame], reference_model: str,
                 predictions: Optional[pd.DataFrame] = None, pooled: bool = False,
                 strict_qc: bool = False) -> Dict[str, str]:
    """
    Write every report table as long-format CSV into :attr:`out_dir`.
    :return: a dict file name -> absolute path
    """
    os.makedirs(out_dir, exist_ok=True)
    cells = comparison_cells(metrics, reference_model=reference_model)
    tables = {
        'summary.csv': summary_table(metrics, predictions=predictions, pooled=pooled, strict_qc=strict_qc),
        'metrics_by_site.csv': metrics_frame(metrics),
        'metrics_by_igbp.csv': aggregate(metrics, by='igbp'),
        'metrics_by_koppen.csv': aggregate(metrics, by='koppen'),
        'relative_rmse.csv': pd.DataFrame([asdict(_c) for _c in cells],
                                          columns=list(ComparisonCell.__dataclass_fields__)),
        'scatter_sites.csv': scatter_sites(metrics, reference_model=reference_model),
    }
    paths = {}
    for name, table in tables.items():
        paths[name] = os.path.abspath(os.path.join(out_dir, name))
        table.to_csv(paths[name], index=False)
    return paths
