import datetime
import math
import os
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import yaml
from torch import Tensor
from torch.utils.data import Dataset

from utils.autodiff import DTYPE
from utils.command_line_logger import CommandLineLogger
from utils.errors import DataValidationError, DimensionError, InsufficientWindowsError

TARGET_COLUMNS = ('gpp', 'nee', 'qc', 'igbp', 'koppen')
WINDOW_DEFAULT = 45
STRIDE_DEFAULT = 15

_logger = CommandLineLogger(name='FluxSites')


def csv_header(n_drivers: int) -> List[str]:
    return ['site_id', 'date', *[f'driver_{_i}' for _i in range(1, n_drivers + 1)], *TARGET_COLUMNS]


@dataclass(frozen=True)
class SiteRecord:
    """
    SiteRecord Class:
    One daily row of a site: D drivers, observed gpp/nee (None when missing), a continuous QC flag in [0, 1] and the
    site's static labels.
    """
    site_id: str
    date: datetime.date
    drivers: Tuple[float, ...]
    gpp: Optional[float]
    nee: Optional[float]
    qc: float
    igbp: str
    koppen: str


#
# --------------
# CSV
# -------------
#

def _row_list(rows: np.ndarray, limit: int = 10) -> str:
    rows = [int(_r) for _r in rows]
    return ', '.join(map(str, rows[:limit])) + (', ...' if len(rows) > limit else '')


def _to_numeric(df: pd.DataFrame, column: str, row_no: np.ndarray, filepath: str) -> pd.Series:
    raw = df[column].str.strip()
    values = pd.to_numeric(raw.replace('', np.nan), errors='coerce')
    bad = values.isna().to_numpy() & (raw != '').to_numpy()
    bad |= ~np.isfinite(values.fillna(0.0).to_numpy())
    if bad.any():
        raise DataValidationError(f'{filepath}: column "{column}" holds non-numeric values on data row(s) '
                                  f'{_row_list(row_no[bad])}')
    return raw.map(lambda _v: float(_v) if _v != '' else np.nan)


def load_site_csv(filepath: str) -> List[SiteRecord]:
    """
    Load daily site records from a CSV file whose header is exactly
    `site_id,date,driver_1,...,driver_D,gpp,nee,qc,igbp,koppen`. Dates are ISO-8601 (YYYY-MM-DD); empty fields mark
    missing values: missing gpp/nee become None, a missing qc becomes 0.0, missing drivers are an error.
    Row numbers in error messages count data rows from 1 (the header is not counted).
    :param (str) filepath: path to the CSV file
    :return: list of `SiteRecord` objects, grouped by site (first-appearance order) and sorted by date
    """
    if not os.path.isfile(filepath):
        raise DataValidationError(f'site CSV not found: {filepath}')
    df = pd.read_csv(filepath, dtype=str, keep_default_na=False, skipinitialspace=True)
    columns = [str(_c).strip() for _c in df.columns]
    n_drivers = len(columns) - 2 - len(TARGET_COLUMNS)
    if n_drivers < 1 or columns != csv_header(n_drivers):
        raise DataValidationError(f'{filepath}: header {columns} does not match '
                                  f'"site_id,date,driver_1..driver_D,{",".join(TARGET_COLUMNS)}"')
    df.columns = columns
    if df.empty:
        return []
    row_no = np.arange(1, len(df) + 1)

    site_ids = df['site_id'].str.strip()
    if (site_ids == '').any():
        raise DataValidationError(f'{filepath}: empty site_id on data row(s) '
                                  f'{_row_list(row_no[(site_ids == "").to_numpy()])}')
    dates = pd.to_datetime(df['date'].str.strip(), format='%Y-%m-%d', errors='coerce')
    if dates.isna().any():
        raise DataValidationError(f'{filepath}: unparseable date on data row(s) '
                                  f'{_row_list(row_no[dates.isna().to_numpy()])}')

    drivers = [_to_numeric(df, f'driver_{_i}', row_no, filepath) for _i in range(1, n_drivers + 1)]
    for _i, _values in enumerate(drivers, start=1):
        if _values.isna().any():
            raise DataValidationError(f'{filepath}: missing driver_{_i} on data row(s) '
                                      f'{_row_list(row_no[_values.isna().to_numpy()])}')
    gpp = _to_numeric(df, 'gpp', row_no, filepath)
    nee = _to_numeric(df, 'nee', row_no, filepath)
    qc = _to_numeric(df, 'qc', row_no, filepath).fillna(0.0)
    out_of_range = ((qc < 0) | (qc > 1)).to_numpy()
    if out_of_range.any():
        raise DataValidationError(f'{filepath}: qc outside [0, 1] on data row(s) {_row_list(row_no[out_of_range])}')

    igbp, koppen = df['igbp'].str.strip(), df['koppen'].str.strip()
    for _name, _labels in (('igbp', igbp), ('koppen', koppen)):
        if (_labels == '').any():
            raise DataValidationError(f'{filepath}: empty {_name} label on data row(s) '
                                      f'{_row_list(row_no[(_labels == "").to_numpy()])}')
        per_site = _labels.groupby(site_ids).nunique()
        if (per_site > 1).any():
            raise DataValidationError(f'{filepath}: {_name} label varies within site(s) '
                                      f'{sorted(per_site[per_site > 1].index)}')

    frame = pd.DataFrame({'site_id': site_ids, 'date': dates, 'row_no': row_no})
    non_increasing = frame.groupby('site_id', sort=False)['date'].diff() <= pd.Timedelta(0)
    if non_increasing.any():
        raise DataValidationError(f'{filepath}: dates not strictly increasing within a site on data row(s) '
                                  f'{_row_list(row_no[non_increasing.to_numpy()])}')

    driver_matrix = np.column_stack([_d.to_numpy(dtype=np.float64) for _d in drivers])
    site_order = {_s: _k for _k, _s in enumerate(pd.unique(site_ids))}
    order = sorted(range(len(df)), key=lambda _k: (site_order[site_ids.iat[_k]], dates.iat[_k]))
    return [
        SiteRecord(site_id=site_ids.iat[_k], date=dates.iat[_k].date(),
                   drivers=tuple(float(_v) for _v in driver_matrix[_k]),
                   gpp=None if pd.isna(gpp.iat[_k]) else float(gpp.iat[_k]),
                   nee=None if pd.isna(nee.iat[_k]) else float(nee.iat[_k]),
                   qc=float(qc.iat[_k]), igbp=igbp.iat[_k], koppen=koppen.iat[_k])
        for _k in order
    ]


def write_site_csv(filepath: str, records: Sequence[SiteRecord], n_drivers: Optional[int] = None) -> None:
    """
    Write records with the same schema `load_site_csv` reads. Floats are written with their shortest round-trip
    representation so that reloading reproduces them exactly.
    :param (str) filepath: output path (parent directories are created)
    :param (Sequence) records: records to write
    :param (optional) n_drivers: driver count for the header of an empty file
    """
    if n_drivers is None:
        if not records:
            raise DataValidationError('write_site_csv: driver count unknown for an empty record list')
        n_drivers = len(records[0].drivers)

    def _fmt(value: Optional[float]) -> str:
        return '' if value is None else repr(float(value))

    rows = []
    for record in records:
        if len(record.drivers) != n_drivers:
            raise DimensionError(f'write_site_csv: record of {record.site_id} has {len(record.drivers)} drivers, '
                                 f'expected {n_drivers}')
        rows.append([record.site_id, record.date.isoformat(), *[_fmt(_v) for _v in record.drivers],
                     _fmt(record.gpp), _fmt(record.nee), _fmt(record.qc), record.igbp, record.koppen])
    os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)
    pd.DataFrame(rows, columns=csv_header(n_drivers), dtype=str).to_csv(filepath, index=False)


#
# --------------
# Normalization
# -------------
#

@dataclass(frozen=True)
class NormStats:
    """
    NormStats Class:
    Per-driver mean and (population) standard deviation, together with the sites they were fitted on.
    """
    mean: Tuple[float, ...]
    std: Tuple[float, ...]
    site_ids: Tuple[str, ...]

    def to_dict(self) -> dict:
        return {'mean': list(self.mean), 'std': list(self.std), 'site_ids': list(self.site_ids)}

    @staticmethod
    def from_dict(values: dict) -> 'NormStats':
        return NormStats(mean=tuple(float(_v) for _v in values['mean']), std=tuple(float(_v) for _v in values['std']),
                         site_ids=tuple(values['site_ids']))

    def save(self, filepath: str) -> None:
        with open(filepath, 'w') as yaml_fp:
            yaml.safe_dump(self.to_dict(), yaml_fp, sort_keys=False)

    @staticmethod
    def load(filepath: str) -> 'NormStats':
        with open(filepath) as yaml_fp:
            return NormStats.from_dict(yaml.safe_load(yaml_fp))

    def check_unseen(self, site_ids: Sequence[str]) -> None:
        """
        :raises DataValidationError: if any of :attr:`site_ids` took part in fitting these statistics
        """
        leaked = sorted(set(site_ids) & set(self.site_ids))
        if leaked:
            raise DataValidationError(f'normalization statistics were fitted on evaluation site(s) {leaked}')


def fit_normalize(records: Sequence[SiteRecord], logger: Optional[CommandLineLogger] = None) -> NormStats:
    """
    Fit z-score statistics of every driver on (training-split) records. Degenerate drivers get std 1.
    :param (Sequence) records: training records
    :param (optional) logger: CommandLineLogger instance
    :return: a `NormStats` instance
    """
    logger = logger or _logger
    if not records:
        raise DataValidationError('fit_normalize: no records to fit on')
    drivers = np.array([_r.drivers for _r in records], dtype=np.float64)
    mean = drivers.mean(axis=0)
    std = drivers.std(axis=0)
    for _i in range(std.shape[0]):
        if not np.isfinite(std[_i]) or std[_i] <= 1e-12 * max(1.0, abs(mean[_i])):
            logger.warning(f'driver_{_i + 1} has (near) zero variance on the training split: std set to 1')
            std[_i] = 1.0
            if np.all(drivers[:, _i] == drivers[0, _i]):
                mean[_i] = drivers[0, _i]
    site_ids = tuple(dict.fromkeys(_r.site_id for _r in records))
    return NormStats(mean=tuple(mean.tolist()), std=tuple(std.tolist()), site_ids=site_ids)


def apply_normalize(stats: NormStats, records: Sequence[SiteRecord]) -> List[SiteRecord]:
    """
    z-score the drivers of :attr:`records` with :attr:`stats`; targets, qc and labels are untouched.
    :return: new `SiteRecord` objects
    """
    if not records:
        return []
    drivers = np.array([_r.drivers for _r in records], dtype=np.float64)
    if drivers.shape[1] != len(stats.mean):
        raise DimensionError(f'apply_normalize: records have {drivers.shape[1]} drivers, stats {len(stats.mean)}')
    normalized = (drivers - np.array(stats.mean)) / np.array(stats.std)
    return [replace(_r, drivers=tuple(_row.tolist())) for _r, _row in zip(records, normalized)]


#
# --------------
# Windowing
# -------------
#

@dataclass(frozen=True, eq=False)
class TimeSeriesWindow:
    """
    TimeSeriesWindow Class:
    One contiguous daily window of a site:
        - drivers: [T × D] normalized drivers
        - targets: [T × 2] observed (gpp, nee); missing values are stored as 0 with mask False
        - qc: [T] quality flags
        - mask: [T] target validity (masked steps contribute nothing to any loss)
    `segment` and `offset` locate the window inside the site's contiguous segments.
    """
    site_id: str
    start: datetime.date
    dates: Tuple[datetime.date, ...]
    drivers: Tensor
    targets: Tensor
    qc: Tensor
    mask: Tensor
    igbp: str
    koppen: str
    segment: int = 0
    offset: int = 0

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def labels(self) -> Tuple[str, str]:
        return self.igbp, self.koppen


def window_count(length: int, window: int = WINDOW_DEFAULT, stride: int = STRIDE_DEFAULT) -> int:
    """
    :return: floor((length - window) / stride) + 1, or 0 when length < window
    """
    return 0 if length < window else (length - window) // stride + 1


def split_segments(records: Sequence[SiteRecord]) -> List[List[SiteRecord]]:
    """
    Split the date-sorted records of one site into runs of consecutive days.
    """
    segments = []
    for record in records:
        if segments and (record.date - segments[-1][-1].date).days == 1:
            segments[-1].append(record)
        else:
            segments.append([record])
    return segments


def group_by_site(records: Sequence[SiteRecord]) -> Dict[str, List[SiteRecord]]:
    grouped = {}
    for record in records:
        grouped.setdefault(record.site_id, []).append(record)
    return grouped


def _make_window(records: Sequence[SiteRecord], segment: int, offset: int) -> TimeSeriesWindow:
    targets = [[_r.gpp if _r.gpp is not None else 0.0, _r.nee if _r.nee is not None else 0.0] for _r in records]
    return TimeSeriesWindow(
        site_id=records[0].site_id, start=records[0].date, dates=tuple(_r.date for _r in records),
        drivers=torch.tensor([_r.drivers for _r in records], dtype=DTYPE),
        targets=torch.tensor(targets, dtype=DTYPE),
        qc=torch.tensor([_r.qc for _r in records], dtype=DTYPE),
        mask=torch.tensor([_r.gpp is not None and _r.nee is not None for _r in records], dtype=torch.bool),
        igbp=records[0].igbp, koppen=records[0].koppen, segment=segment, offset=offset,
    )


def window_sequences(records: Sequence[SiteRecord], window: int = WINDOW_DEFAULT, stride: int = STRIDE_DEFAULT,
                     logger: Optional[CommandLineLogger] = None) -> List[TimeSeriesWindow]:
    """
    Cut every contiguous segment of every site into windows at offsets 0, stride, 2*stride, ... A step is valid
    (mask True) only when both gpp and nee were observed.
    :param (Sequence) records: date-sorted records (any number of sites)
    :param (int) window: window length in days
    :param (int) stride: days between consecutive window starts
    :param (optional) logger: CommandLineLogger instance
    :return: list of `TimeSeriesWindow` objects (site by site, segment by segment)
    """
    if window < 1 or stride < 1:
        raise DataValidationError(f'window ({window}) and stride ({stride}) must be >= 1')
    logger = logger or _logger
    windows = []
    for site_id, site_records in group_by_site(records).items():
        for segment_no, segment in enumerate(split_segments(site_records)):
            for k in range(window_count(len(segment), window, stride)):
                windows.append(_make_window(segment[k * stride:k * stride + window], segment_no, k * stride))
    if records and not windows:
        logger.warning(f'no segment reaches {window} contiguous days: windowing produced no windows')
    return windows


#
# --------------
# Site tasks
# -------------
#

class SiteTask(Dataset):
    """
    SiteTask Class:
    All windows of one site plus its static labels: the unit of episodic sampling and of zero-shot evaluation.
    """

    def __init__(self, site_id: str, igbp: str, koppen: str, windows: Sequence[TimeSeriesWindow],
                 params: Optional[object] = None):
        """
        SiteTask class constructor.
        :param (str) site_id: site identifier
        :param (str) igbp: IGBP label
        :param (str) koppen: Köppen label
        :param (Sequence) windows: the site's windows in time order
        :param (optional) params: known generating parameters of synthetic sites (`SynthSiteParams`)
        """
        super(SiteTask, self).__init__()
        foreign = {_w.site_id for _w in windows} - {site_id}
        assert not foreign, f'windows of {sorted(foreign)} given to site task "{site_id}"'
        self.site_id = site_id
        self.igbp = igbp
        self.koppen = koppen
        self.windows = list(windows)
        self.params = params

    def __getitem__(self, index: int) -> TimeSeriesWindow:
        return self.windows[index]

    def __len__(self) -> int:
        return len(self.windows)

    def __repr__(self) -> str:
        return f'SiteTask({self.site_id}, igbp={self.igbp}, koppen={self.koppen}, windows={len(self)})'

    def label(self, by: str) -> str:
        assert by in ('igbp', 'koppen'), f'unknown label "{by}"'
        return getattr(self, by)

    def select_support(self, k: int, mode: str = 'spaced') -> List[TimeSeriesWindow]:
        """
        Pick the support windows used at inference time: `k` windows spread evenly over the record ('spaced', the
        way one year per decade would be picked) or the `k` earliest ('first'). At least one window is always left
        out of the support.
        :param (int) k: requested support size
        :param (str) mode: 'spaced' or 'first'
        :return: list of `TimeSeriesWindow` objects in time order
        """
        if len(self) < 2:
            raise InsufficientWindowsError(self.site_id, len(self), 1)
        k = max(1, min(k, len(self) - 1))
        if mode == 'first':
            return self.windows[:k]
        if mode != 'spaced':
            raise DataValidationError(f'unknown support selection "{mode}"')
        indices = sorted({int(_i) for _i in np.round(np.linspace(0, len(self) - 1, k))})
        return [self.windows[_i] for _i in indices]


def build_site_tasks(windows: Sequence[TimeSeriesWindow], params: Optional[Dict[str, object]] = None) \
        -> List[SiteTask]:
    """
    Group windows into one `SiteTask` per site (first-appearance order).
    :param (Sequence) windows: windows of any number of sites
    :param (optional) params: site_id -> known synthetic parameters
    :return: list of `SiteTask` objects
    """
    grouped: Dict[str, List[TimeSeriesWindow]] = {}
    for w in windows:
        grouped.setdefault(w.site_id, []).append(w)
    return [SiteTask(_s, _ws[0].igbp, _ws[0].koppen, _ws, params=(params or {}).get(_s))
            for _s, _ws in grouped.items()]


def holdout_count(n_sites: int, holdout_fraction: float) -> int:
    return min(max(int(math.floor(n_sites * holdout_fraction + 0.5)), 1), n_sites - 1)


def split_sites(tasks: Sequence, holdout_fraction: float, rng: np.random.Generator, stratify_by: Optional[str] = None,
                logger: Optional[CommandLineLogger] = None) -> Tuple[list, list]:
    """
    Site-level train / held-out partition. round(n * fraction) sites (at least 1, at most n - 1) are held out.
    In stratified mode, held-out sites are drawn round-robin over label groups and every label with at least two
    sites keeps one of them in the training split.
    :param (Sequence) tasks: `SiteTask` objects (anything with `site_id` and the stratification label)
    :param (float) holdout_fraction: share of held-out sites, in (0, 1)
    :param (np.random.Generator) rng: random generator
    :param (optional) stratify_by: None, 'igbp' or 'koppen'
    :param (optional) logger: CommandLineLogger instance
    :return: a tuple (train, held_out), both in input order
    """
    logger = logger or _logger
    if len(tasks) < 2:
        raise DataValidationError(f'split_sites needs at least 2 sites, got {len(tasks)}')
    if not 0.0 < holdout_fraction < 1.0:
        raise DataValidationError(f'holdout fraction must lie in (0, 1), got {holdout_fraction}')
    site_ids = [_t.site_id for _t in tasks]
    if len(set(site_ids)) != len(site_ids):
        raise DataValidationError('split_sites: duplicate site identifiers')
    n_hold = holdout_count(len(tasks), holdout_fraction)

    if stratify_by is None:
        held = set(rng.permutation(len(tasks))[:n_hold].tolist())
    else:
        if stratify_by not in ('igbp', 'koppen'):
            raise DataValidationError(f'cannot stratify by "{stratify_by}"')
        groups: Dict[str, List[int]] = {}
        for _k, _t in enumerate(tasks):
            groups.setdefault(getattr(_t, stratify_by), []).append(_k)
        labels = sorted(groups)
        candidates = {_l: rng.permutation(groups[_l]).tolist()[:len(groups[_l]) - 1] for _l in labels}
        ordered = []
        for rank in range(max(len(_c) for _c in candidates.values())):
            for _l in [labels[_i] for _i in rng.permutation(len(labels))]:
                if rank < len(candidates[_l]):
                    ordered.append(candidates[_l][rank])
        if not ordered:
            logger.warning(f'every {stratify_by} label has a single site: falling back to an unstratified split')
            held = set(rng.permutation(len(tasks))[:n_hold].tolist())
        else:
            if len(ordered) < n_hold:
                logger.warning(f'stratified split can only hold out {len(ordered)} of the {n_hold} requested sites')
            held = set(ordered[:n_hold])
    train = [_t for _k, _t in enumerate(tasks) if _k not in held]
    held_out = [_t for _k, _t in enumerate(tasks) if _k in held]
    return train, held_out
