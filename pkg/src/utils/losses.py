"""
Knowledge-guided composite loss:
    L = mean_t( w_qc[t] * mask[t] * w_igbp * w_koppen * SE[t] ) + alpha * mean_t( (nee - (reco - gpp))^2 )
where SE[t] is the squared error of the supervised heads (gpp, nee) at step t, averaged over the two heads.
RECO has no direct error term; it is constrained through the carbon-balance penalty only.
"""
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import torch
from torch import Tensor

from modules.partial.decoding import FluxPrediction
from utils.autodiff import DTYPE, add, mean_all, mul, sub
from utils.errors import DataValidationError, DimensionError

NEE_CONVENTIONS = ('reco_minus_gpp', 'gpp_minus_reco')
CLASS_WEIGHT_MODES = ('inverse_frequency', 'uniform')
MSE_REDUCTIONS = ('mean', 'sum')


@dataclass
class LossConfig:
    """
    LossConfig Class:
    :param (float) alpha: flux-penalty coefficient (>= 0)
    :param (dict) w_igbp: IGBP label -> class weight (> 0)
    :param (dict) w_koppen: Köppen label -> class weight (> 0)
    :param (str) class_weight_mode: 'inverse_frequency' (N / (K n_c)) or 'uniform' (all weights 1)
    :param (str) nee_convention: 'reco_minus_gpp' (NEE = RECO - GPP) or 'gpp_minus_reco'
    :param (str) mse_reduction: how squared errors of the two supervised heads combine per step ('mean' or 'sum')
    """
    alpha: float = 0.1
    w_igbp: Dict[str, float] = field(default_factory=dict)
    w_koppen: Dict[str, float] = field(default_factory=dict)
    class_weight_mode: str = 'inverse_frequency'
    nee_convention: str = 'reco_minus_gpp'
    mse_reduction: str = 'mean'

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise DataValidationError(f'loss.alpha must be a finite non-negative number, got {self.alpha}')
        if self.class_weight_mode not in CLASS_WEIGHT_MODES:
            raise DataValidationError(f'loss.class_weight_mode must be one of {CLASS_WEIGHT_MODES}')
        if self.nee_convention not in NEE_CONVENTIONS:
            raise DataValidationError(f'loss.nee_convention must be one of {NEE_CONVENTIONS}')
        if self.mse_reduction not in MSE_REDUCTIONS:
            raise DataValidationError(f'loss.mse_reduction must be one of {MSE_REDUCTIONS}')
        for _name, _table in (('igbp', self.w_igbp), ('koppen', self.w_koppen)):
            for _label, _w in _table.items():
                if not (math.isfinite(_w) and _w > 0):
                    raise DataValidationError(f'class weight {_name}.{_label}={_w} must be positive')

    def window_weight(self, igbp: str, koppen: str) -> float:
        """
        :return: w_igbp * w_koppen for the given static labels (the qc factor is applied per step)
        """
        return sample_weight(1.0, igbp, koppen, self).product

    def with_class_weights(self, igbp_labels: Sequence[str], koppen_labels: Sequence[str]) -> 'LossConfig':
        """
        Fit both class-weight tables from per-window labels of the training split.
        :return: a new `LossConfig` instance
        """
        return LossConfig(alpha=self.alpha, class_weight_mode=self.class_weight_mode,
                          nee_convention=self.nee_convention, mse_reduction=self.mse_reduction,
                          w_igbp=compute_class_weights(igbp_labels, mode=self.class_weight_mode),
                          w_koppen=compute_class_weights(koppen_labels, mode=self.class_weight_mode))


@dataclass(frozen=True)
class SampleWeight:
    w_qc: float
    w_igbp: float
    w_koppen: float

    @property
    def product(self) -> float:
        return self.w_qc * self.w_igbp * self.w_koppen


def compute_class_weights(labels: Iterable[str], mode: str = 'inverse_frequency') -> Dict[str, float]:
    """
    Inverse-frequency class weights w_c = N / (K * n_c), so that sum_c n_c * w_c == N.
    :param labels: one label per sample (per window)
    :param (str) mode: 'inverse_frequency' or 'uniform'
    :return: a dict label -> weight, sorted by label
    """
    counts = Counter(labels)
    if not counts:
        raise DataValidationError('compute_class_weights: no labels given')
    if mode not in CLASS_WEIGHT_MODES:
        raise DataValidationError(f'class-weight mode must be one of {CLASS_WEIGHT_MODES}, got "{mode}"')
    n_total, n_classes = sum(counts.values()), len(counts)
    if mode == 'uniform':
        return {_c: 1.0 for _c in sorted(counts)}
    return {_c: n_total / (n_classes * counts[_c]) for _c in sorted(counts)}


def qc_weight(qc_flag: float) -> float:
    """
    The quality weight of a step is its continuous QC flag.
    :param (float) qc_flag: value in [0, 1]
    :return: the same value as float
    """
    qc_flag = float(qc_flag)
    if not 0.0 <= qc_flag <= 1.0:
        raise DataValidationError(f'qc flag must lie in [0, 1], got {qc_flag}')
    return qc_flag


def sample_weight(qc_flag: float, igbp: str, koppen: str, cfg: LossConfig) -> SampleWeight:
    """
    Per-step weight factors of the data term.
    :return: a `SampleWeight` instance
    """
    for _label, _table, _name in ((igbp, cfg.w_igbp, 'IGBP'), (koppen, cfg.w_koppen, 'Köppen')):
        if _label not in _table:
            raise DataValidationError(f'unknown {_name} label "{_label}" (no class weight)')
    return SampleWeight(w_qc=qc_weight(qc_flag), w_igbp=cfg.w_igbp[igbp], w_koppen=cfg.w_koppen[koppen])


def _check_qc(qc: Tensor) -> None:
    if not bool(((qc >= 0) & (qc <= 1)).all()):
        bad = qc[(qc < 0) | (qc > 1) | torch.isnan(qc)]
        raise DataValidationError(f'qc flags must lie in [0, 1], found {bad[:5].tolist()}')


def flux_residual(preds: FluxPrediction, convention: str = 'reco_minus_gpp') -> Tensor:
    if convention == 'reco_minus_gpp':
        return sub(preds.nee, sub(preds.reco, preds.gpp))
    if convention == 'gpp_minus_reco':
        return sub(preds.nee, sub(preds.gpp, preds.reco))
    raise DataValidationError(f'nee convention must be one of {NEE_CONVENTIONS}, got "{convention}"')


def flux_penalty(preds: FluxPrediction, convention: str = 'reco_minus_gpp') -> Tensor:
    """
    Carbon-balance penalty: mean over timesteps of (nee - (reco - gpp))^2 on unclipped predictions.
    :param (FluxPrediction) preds: predictions of one window
    :param (str) convention: NEE sign convention
    :return: a scalar tensor
    """
    if len(preds) == 0:
        raise DimensionError('flux_penalty: empty prediction sequence')
    residual = flux_residual(preds, convention)
    return mean_all(mul(residual, residual))


def weighted_mse_term(preds: FluxPrediction, targets: Tensor, qc: Tensor, w_window: float = 1.0,
                      mask: Optional[Tensor] = None, reduction: str = 'mean') -> Tensor:
    """
    Quality and class weighted squared error of the supervised heads, averaged over all T steps (masked steps count
    in T but contribute zero).
    :param (FluxPrediction) preds: predictions of one window
    :param (Tensor) targets: [T × 2] observed (gpp, nee)
    :param (Tensor) qc: [T] quality flags in [0, 1]
    :param (float) w_window: w_igbp * w_koppen of the window
    :param (optional) mask: [T] validity of the observed targets (all valid if None)
    :param (str) reduction: 'mean' or 'sum' over the two heads
    :return: a scalar tensor
    """
    n_steps = len(preds)
    if n_steps == 0:
        raise DimensionError('weighted_mse_term: empty prediction sequence')
    if tuple(targets.shape) != (n_steps, 2) or tuple(qc.shape) != (n_steps,) or \
            (mask is not None and tuple(mask.shape) != (n_steps,)):
        raise DimensionError(f'weighted_mse_term: {n_steps} predicted steps vs targets {list(targets.shape)}, qc '
                             f'{list(qc.shape)}' + ('' if mask is None else f', mask {list(mask.shape)}'))
    _check_qc(qc)
    err_gpp = sub(preds.gpp, targets[:, 0])
    err_nee = sub(preds.nee, targets[:, 1])
    squared = add(mul(err_gpp, err_gpp), mul(err_nee, err_nee))
    if reduction == 'mean':
        squared = mul(0.5, squared)
    weights = qc.to(DTYPE) * w_window
    if mask is not None:
        weights = weights * mask.to(DTYPE)
    return mean_all(mul(weights, squared))


def composite_loss(preds: FluxPrediction, targets: Tensor, qc: Tensor, labels: Tuple[str, str], cfg: LossConfig,
                   mask: Optional[Tensor] = None) -> Tensor:
    """
    Composite loss of one window: weighted MSE term + alpha * flux penalty.
    :param (FluxPrediction) preds: unclipped predictions of one window
    :param (Tensor) targets: [T × 2] observed (gpp, nee)
    :param (Tensor) qc: [T] quality flags
    :param (tuple) labels: (igbp, koppen) static labels of the window's site
    :param (LossConfig) cfg: loss configuration (alpha and class-weight tables)
    :param (optional) mask: [T] target validity
    :return: a scalar tensor
    """
    w_window = cfg.window_weight(*labels)
    data_term = weighted_mse_term(preds, targets, qc, w_window=w_window, mask=mask, reduction=cfg.mse_reduction)
    return add(data_term, mul(cfg.alpha, flux_penalty(preds, cfg.nee_convention)))


def window_loss(preds: FluxPrediction, window, cfg: LossConfig) -> Tensor:
    """
    :param window: the `TimeSeriesWindow` the predictions were made for
    """
    return composite_loss(preds, window.targets, window.qc, (window.igbp, window.koppen), cfg, mask=window.mask)


#
# --------------
# Class-weight tables (key=value text)
# -------------
#

def save_class_weights(filepath: str, cfg: LossConfig) -> None:
    """
    Write both class-weight tables as `igbp.<label>=<weight>` / `koppen.<label>=<weight>` lines.
    :param (str) filepath: output file path
    :param (LossConfig) cfg: loss configuration holding the tables
    """
    lines = []
    for _prefix, _table in (('igbp', cfg.w_igbp), ('koppen', cfg.w_koppen)):
        for _label in sorted(_table):
            if '\n' in _label or '=' in _label:
                raise DataValidationError(f'label "{_label}" cannot be stored as key=value')
            lines.append(f'{_prefix}.{_label}={_table[_label]!r}')
    os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)
    with open(filepath, 'w') as fp:
        fp.write('\n'.join(lines) + '\n')


def load_class_weights(filepath: str) -> Tuple[Dict[str, float], Dict[str, float]]:
    """
    Read the tables written by `save_class_weights`.
    :return: a tuple (w_igbp, w_koppen)
    """
    tables = {'igbp': {}, 'koppen': {}}
    with open(filepath) as fp:
        for line_no, line in enumerate(fp, start=1):
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition('=')
            prefix, dot, label = key.partition('.')
            if not sep or not dot or prefix not in tables:
                raise DataValidationError(f'{filepath}:{line_no}: malformed class-weight line "{line}"')
            tables[prefix][label] = float(value)
    return tables['igbp'], tables['koppen']
