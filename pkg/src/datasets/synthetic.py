"""
Synthetic multi-site flux data with known generating parameters.

Every site shares the same driver climatology; what differs between sites are latent ecosystem parameters
(light-use efficiency, base respiration, Q10 and temperature optimum), so the drivers alone cannot tell sites apart
while a few observed windows can. Drivers: driver_1 = PAR, driver_2 = air temperature (°C), driver_3 and driver_4
are distractors unrelated to the fluxes.
    GPP  = lue * PAR * exp(-((T - t_opt) / 12)^2)
    RECO = rb * q10^((T - 15) / 10)
    NEE  = RECO - GPP + eps,  eps ~ N(0, noise_sd^2)
"""
import datetime
import math
import os
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from datasets.flux_sites import SiteRecord, SiteTask, build_site_tasks, window_sequences
from utils.errors import DataValidationError

ArrayLike = Union[float, np.ndarray]

N_DRIVERS = 4
START_DATE = datetime.date(2001, 1, 1)
QC_PERFECT_PROBABILITY = 0.85

# label bins: (upper bound, label)
KOPPEN_BINS = ((16.0, 'Dfb'), (23.0, 'Cfa'), (math.inf, 'Aw'))
IGBP_BINS = ((0.4, 'GRA'), (0.6, 'DBF'), (math.inf, 'CRO'))


@dataclass(frozen=True)
class SynthSiteParams:
    lue: float
    rb: float
    q10: float
    t_opt: float
    noise_sd: float

    def __post_init__(self):
        if not (self.lue > 0 and self.rb > 0 and self.q10 > 1 and self.noise_sd >= 0 and math.isfinite(self.t_opt)):
            raise DataValidationError(f'invalid synthetic site parameters: {self}')

    @property
    def igbp(self) -> str:
        return _bin(self.lue, IGBP_BINS)

    @property
    def koppen(self) -> str:
        return _bin(self.t_opt, KOPPEN_BINS)


def _bin(value: float, bins: Tuple[Tuple[float, str], ...]) -> str:
    return next(_label for _upper, _label in bins if value < _upper)


def gpp_lue(lue: float, par: ArrayLike, temperature: ArrayLike, t_opt: float) -> ArrayLike:
    """Light-use-efficiency GPP with a Gaussian temperature response peaking (at 1) at t_opt."""
    return lue * par * np.exp(-((temperature - t_opt) / 12.0) ** 2)


def reco_q10(rb: float, q10: float, temperature: ArrayLike) -> ArrayLike:
    """Q10 respiration referenced at 15 °C."""
    return rb * q10 ** ((temperature - 15.0) / 10.0)


def draw_site_params(rng: np.random.Generator, noise_sd: float = 0.1) -> SynthSiteParams:
    return SynthSiteParams(lue=float(rng.uniform(0.25, 0.85)), rb=float(rng.uniform(0.5, 3.0)),
                           q10=float(rng.uniform(1.3, 2.5)), t_opt=float(rng.uniform(10.0, 30.0)),
                           noise_sd=float(noise_sd))


def synth_drivers(days: int, rng: np.random.Generator) -> np.ndarray:
    """
    :return: a [days × 4] array (PAR, T, distractor, distractor)
    """
    doy = np.arange(days, dtype=np.float64) % 365.0
    par = np.maximum(10.0 + 6.0 * np.sin(2.0 * np.pi * (doy - 80.0) / 365.0) + rng.normal(0.0, 1.5, days), 0.0)
    temperature = 12.0 + 10.0 * np.sin(2.0 * np.pi * (doy - 105.0) / 365.0) + rng.normal(0.0, 2.0, days)
    distractor_1 = rng.normal(0.0, 1.0, days)
    distractor_2 = np.cos(2.0 * np.pi * doy / 365.0) + rng.normal(0.0, 0.5, days)
    return np.column_stack([par, temperature, distractor_1, distractor_2])


def synth_site_records(site_id: str, params: SynthSiteParams, days: int, rng: np.random.Generator,
                       start: datetime.date = START_DATE) -> List[SiteRecord]:
    """
    Generate `days` consecutive daily records of one site.
    """
    drivers = synth_drivers(days, rng)
    par, temperature = drivers[:, 0], drivers[:, 1]
    gpp = gpp_lue(params.lue, par, temperature, params.t_opt)
    nee = reco_q10(params.rb, params.q10, temperature) - gpp
    if params.noise_sd > 0:
        nee = nee + rng.normal(0.0, params.noise_sd, days)
    perfect = rng.random(days) < QC_PERFECT_PROBABILITY
    qc = np.where(perfect, 1.0, np.round(rng.uniform(0.3, 1.0, days), 3))
    return [
        SiteRecord(site_id=site_id, date=start + datetime.timedelta(days=_d),
                   drivers=tuple(float(_v) for _v in drivers[_d]), gpp=float(gpp[_d]), nee=float(nee[_d]),
                   qc=float(qc[_d]), igbp=params.igbp, koppen=params.koppen)
        for _d in range(days)
    ]


def synth_records(n_sites: int, days: int, rng: np.random.Generator, noise_sd: float = 0.1) \
        -> Tuple[List[SiteRecord], Dict[str, SynthSiteParams]]:
    """
    Generate the records of :attr:`n_sites` sites, ids 'S000', 'S001', ...
    :param (int) n_sites: number of sites (>= 1)
    :param (int) days: days per site (>= 45)
    :param (np.random.Generator) rng: random generator (fixes the whole dataset)
    :param (float) noise_sd: NEE noise standard deviation (>= 0)
    :return: a tuple (records, site_id -> SynthSiteParams)
    """
    if n_sites < 1:
        raise DataValidationError(f'n_sites must be >= 1, got {n_sites}')
    if days < 45:
        raise DataValidationError(f'days must be >= 45, got {days}')
    if not noise_sd >= 0:
        raise DataValidationError(f'noise_sd must be >= 0, got {noise_sd}')
    records, params = [], {}
    for k in range(n_sites):
        site_id = f'S{k:03d}'
        params[site_id] = draw_site_params(rng, noise_sd=noise_sd)
        records.extend(synth_site_records(site_id, params[site_id], days, rng))
    return records, params


def synth_generate(n_sites: int, days: int, rng: np.random.Generator, noise_sd: float = 0.1, window: int = 45,
                   stride: int = 15) -> List[SiteTask]:
    """
    Generate synthetic sites and window them (drivers not normalized).
    :return: list of `SiteTask` objects carrying their `SynthSiteParams` in `params`
    """
    records, params = synth_records(n_sites, days, rng, noise_sd=noise_sd)
    return build_site_tasks(window_sequences(records, window=window, stride=stride), params=params)


def true_reco(params: SynthSiteParams, records: List[SiteRecord]) -> np.ndarray:
    """
    :return: the noise-free RECO of raw (not normalized) records
    """
    return reco_q10(params.rb, params.q10, np.array([_r.drivers[1] for _r in records], dtype=np.float64))


#
# --------------
# Sidecar
# -------------
#

PARAM_COLUMNS = ('site_id', *[_f.name for _f in fields(SynthSiteParams)], 'igbp', 'koppen')


def write_site_params(filepath: str, params: Dict[str, SynthSiteParams]) -> None:
    rows = [[_s, *[repr(_v) for _v in asdict(_p).values()], _p.igbp, _p.koppen] for _s, _p in params.items()]
    os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)
    pd.DataFrame(rows, columns=list(PARAM_COLUMNS), dtype=str).to_csv(filepath, index=False)


def load_site_params(filepath: Optional[str]) -> Dict[str, SynthSiteParams]:
    """
    :return: site_id -> SynthSiteParams (empty if :attr:`filepath` is None or missing)
    """
    if filepath is None or not os.path.isfile(filepath):
        return {}
    df = pd.read_csv(filepath, dtype={'site_id': str}, float_precision='round_trip')
    names = [_f.name for _f in fields(SynthSiteParams)]
    return {_row['site_id']: SynthSiteParams(**{_n: float(_row[_n]) for _n in names}) for _, _row in df.iterrows()}
