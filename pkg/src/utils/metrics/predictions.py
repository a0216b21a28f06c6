import datetime
import os
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from modules.partial.decoding import FluxPrediction
from utils.errors import DataValidationError, PipelineStateError
from utils.metrics.scores import PREDICTION_COLUMNS

# Targets written to predictions files; reco has no observed truth
WRITTEN_TARGETS = ('gpp', 'reco', 'nee')
_TRUTH_COLUMN = {'gpp': 0, 'nee': 1}


def stitch_predictions(windows: Sequence, predictions: Sequence[FluxPrediction],
                       exclude_dates: Iterable[datetime.date] = ()) -> pd.DataFrame:
    """
    Turn per-window predictions of one site into one row per day per target. Days covered by several (overlapping)
    windows get the mean of their predictions. The truth is missing for unobserved steps and for reco.
    :param (Sequence) windows: `TimeSeriesWindow` objects of one site
    :param (Sequence) predictions: one `FluxPrediction` per window
    :param (Iterable) exclude_dates: days to leave out entirely (the days of the support windows)
    :return: a frame following `PREDICTION_COLUMNS`, sorted by (date, target)
    """
    if len(windows) != len(predictions):
        raise DataValidationError(f'{len(windows)} windows but {len(predictions)} predictions')
    excluded = set(exclude_dates)
    sums: Dict[tuple, List[float]] = {}
    truth: Dict[tuple, float] = {}
    qc: Dict[tuple, float] = {}
    for window, prediction in zip(windows, predictions):
        mask = window.mask.numpy()
        targets = window.targets.numpy()
        flags = window.qc.numpy()
        for target in WRITTEN_TARGETS:
            values = prediction.head(target).detach().numpy()
            for t, day in enumerate(window.dates):
                if day in excluded:
                    continue
                key = (window.site_id, day.isoformat(), target)
                sums.setdefault(key, []).append(float(values[t]))
                qc[key] = float(flags[t])
                truth[key] = float(targets[t, _TRUTH_COLUMN[target]]) if target in _TRUTH_COLUMN and mask[t] \
                    else np.nan
    rows = [[*_k[:2], _k[2], float(np.mean(_v)), truth[_k], qc[_k]] for _k, _v in sums.items()]
    frame = pd.DataFrame(rows, columns=list(PREDICTION_COLUMNS))
    return frame.sort_values(['site_id', 'date', 'target'], kind='mergesort').reset_index(drop=True)


def write_predictions(filepath: str, frame: pd.DataFrame) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)
    frame[list(PREDICTION_COLUMNS)].to_csv(filepath, index=False)


def load_predictions(filepath: str, model: Optional[str] = None) -> pd.DataFrame:
    """
    Read a predictions file (optionally tagging every row with a model name).
    :raises PipelineStateError: if the file is missing
    :raises DataValidationError: if its header differs from `PREDICTION_COLUMNS`
    """
    if not os.path.isfile(filepath):
        raise PipelineStateError(f'predictions file not found: {filepath}')
    frame = pd.read_csv(filepath, dtype={'site_id': str, 'date': str, 'target': str}, float_precision='round_trip')
    if tuple(frame.columns) != PREDICTION_COLUMNS:
        raise DataValidationError(f'{filepath}: header {list(frame.columns)} != {list(PREDICTION_COLUMNS)}')
    return frame.assign(model=model) if model is not None else frame
