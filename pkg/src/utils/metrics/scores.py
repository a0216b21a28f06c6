import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from utils.errors import DataValidationError

ArrayLike = Union[Sequence[float], np.ndarray]

# Predictions file schema (one row per step per target)
PREDICTION_COLUMNS = ('site_id', 'date', 'target', 'pred', 'truth', 'qc')
EVAL_TARGETS = ('gpp', 'nee')


def _paired(pred: ArrayLike, truth: ArrayLike, what: str) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size == 0 or pred.size != truth.size:
        raise DataValidationError(f'{what} needs equal nonzero lengths, got {pred.size} and {truth.size}')
    return pred, truth


def rmse(pred: ArrayLike, truth: ArrayLike) -> float:
    """
    Root mean squared error sqrt(mean((pred - truth)^2)), in the unit of the fluxes (gC m-2 d-1).
    :raises DataValidationError: for empty or mismatched inputs
    """
    pred, truth = _paired(pred, truth, 'rmse')
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def r2(pred: ArrayLike, truth: ArrayLike) -> Optional[float]:
    """
    Coefficient of determination 1 - SS_res / SS_tot (SS_tot about the mean of the truth). Can be negative.
    :return: a `float`, or None when undefined (fewer than 2 samples or constant truth)
    """
    pred, truth = _paired(pred, truth, 'r2')
    if pred.size < 2:
        return None
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    return 1.0 - float(np.sum((pred - truth) ** 2)) / ss_tot


def relative_rmse(reference: float, candidate: float) -> float:
    """
    Relative improvement (reference - candidate) / reference; positive when the candidate beats the reference.
    :raises DataValidationError: if :attr:`reference` is not positive
    """
    if not reference > 0:
        raise DataValidationError(f'relative_rmse needs a positive reference RMSE, got {reference}')
    return (reference - candidate) / reference


@dataclass(frozen=True)
class SiteMetrics:
    """
    SiteMetrics Class:
    Scores of one model for one target at one site. `r2` is None when undefined.
    """
    site_id: str
    model: str
    target: str
    rmse: float
    r2: Optional[float]
    n: int
    igbp: str
    koppen: str

    def __post_init__(self):
        assert self.n >= 1 and self.rmse >= 0.0, f'invalid site metrics {self}'

    def to_dict(self) -> dict:
        return asdict(self)


def evaluated_rows(predictions: pd.DataFrame, strict_qc: bool = False) -> pd.DataFrame:
    """
    Rows of a predictions frame that can be scored: a known truth, an evaluated target and, with :attr:`strict_qc`,
    only perfect-quality steps (qc == 1).
    """
    rows = predictions[predictions['target'].isin(EVAL_TARGETS) & predictions['truth'].notna()]
    if strict_qc:
        rows = rows[rows['qc'] == 1.0]
    return rows


def site_metrics(predictions: pd.DataFrame, labels: Dict[str, Tuple[str, str]], model: Optional[str] = None,
                 strict_qc: bool = False) -> List[SiteMetrics]:
    """
    Score a predictions frame per (model, site, target).
    :param (pd.DataFrame) predictions: rows following `PREDICTION_COLUMNS` (plus a 'model' column unless
                                       :attr:`model` is given)
    :param (dict) labels: site_id -> (igbp, koppen)
    :param (optional) model: model name of every row (overrides a 'model' column)
    :param (bool) strict_qc: score only steps with qc == 1
    :return: list of `SiteMetrics` sorted by (model, site_id, target)
    """
    frame = predictions.assign(model=model) if model is not None else predictions
    rows = evaluated_rows(frame, strict_qc=strict_qc)
    unknown = sorted(set(rows['site_id']) - set(labels))
    if unknown:
        raise DataValidationError(f'no labels for site(s) {unknown}')
    metrics = []
    for (model_name, site_id, target), group in rows.groupby(['model', 'site_id', 'target'], sort=True):
        pred, truth = group['pred'].to_numpy(), group['truth'].to_numpy()
        igbp, koppen = labels[site_id]
        metrics.append(SiteMetrics(site_id=str(site_id), model=str(model_name), target=str(target),
                                   rmse=rmse(pred, truth), r2=r2(pred, truth), n=int(pred.size), igbp=igbp,
                                   koppen=koppen))
    return metrics


def pooled_metrics(predictions: pd.DataFrame, strict_qc: bool = False) -> pd.DataFrame:
    """
    Per-sample (pooled over every site) RMSE and R² per (model, target).
    """
    rows = evaluated_rows(predictions, strict_qc=strict_qc)
    records = []
    for (model_name, target), group in rows.groupby(['model', 'target'], sort=True):
        pooled_r2 = r2(group['pred'], group['truth'])
        records.append({'model': model_name, 'target': target, 'rmse_pooled': rmse(group['pred'], group['truth']),
                        'r2_pooled': math.nan if pooled_r2 is None else pooled_r2, 'n_samples': len(group)})
    return pd.DataFrame(records, columns=['model', 'target', 'rmse_pooled', 'r2_pooled', 'n_samples'])


def balance_residual(predictions: pd.DataFrame) -> pd.DataFrame:
    """
    Mean absolute flux-balance residual |nee - (reco - gpp)| of the predictions, per model.
    """
    wide = predictions.pivot_table(index=['model', 'site_id', 'date'], columns='target', values='pred',
                                   aggfunc='first')
    if not {'gpp', 'reco', 'nee'} <= set(wide.columns):
        return pd.DataFrame(columns=['model', 'balance_residual'])
    residual = (wide['nee'] - (wide['reco'] - wide['gpp'])).abs()
    return residual.groupby(level='model').mean().rename('balance_residual').reset_index()
