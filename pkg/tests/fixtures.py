import datetime
from typing import List, Optional, Sequence

import numpy as np

from datasets.flux_sites import SiteRecord, SiteTask, TimeSeriesWindow, build_site_tasks, window_sequences
from datasets.synthetic import IGBP_BINS, KOPPEN_BINS, synth_generate
from utils.config import TamRlConfig
from utils.losses import LossConfig

IGBP_LABELS = sorted(_l for _, _l in IGBP_BINS)
KOPPEN_LABELS = sorted(_l for _, _l in KOPPEN_BINS)


def make_records(site_id: str = 'A', days: int = 10, n_drivers: int = 2, igbp: str = 'GRA', koppen: str = 'Dfb',
                 start: datetime.date = datetime.date(2001, 1, 1), gap_after: Optional[int] = None, gap: int = 0,
                 seed: int = 0) -> List[SiteRecord]:
    """
    Daily records with random drivers and targets; with :attr:`gap_after`, `gap` days are skipped after that many
    records.
    """
    rng = np.random.default_rng(seed)
    records, date = [], start
    for k in range(days):
        if gap_after is not None and k == gap_after:
            date += datetime.timedelta(days=gap)
        records.append(SiteRecord(site_id=site_id, date=date, drivers=tuple(rng.normal(size=n_drivers).tolist()),
                                  gpp=float(rng.uniform(0, 5)), nee=float(rng.normal()), qc=1.0, igbp=igbp,
                                  koppen=koppen))
        date += datetime.timedelta(days=1)
    return records


def make_windows(site_id: str = 'A', days: int = 10, window: int = 5, stride: int = 5, **kwargs) \
        -> List[TimeSeriesWindow]:
    return window_sequences(make_records(site_id, days, **kwargs), window=window, stride=stride)


def make_site(site_id: str = 'A', days: int = 30, window: int = 5, stride: int = 5, **kwargs) -> SiteTask:
    return build_site_tasks(make_windows(site_id, days, window, stride, **kwargs))[0]


def small_sites(n_sites: int = 3, days: int = 60, window: int = 10, stride: int = 10, seed: int = 0) \
        -> List[SiteTask]:
    return synth_generate(n_sites, days, np.random.default_rng(seed), noise_sd=0.05, window=window, stride=stride)


def small_config(driver_dim: int = 4, **overrides) -> TamRlConfig:
    values = dict(driver_dim=driver_dim, hidden_dim=4, encoder_hidden=3, embedding_dim=3, generator_hidden=[4],
                  igbp_labels=IGBP_LABELS, koppen_labels=KOPPEN_LABELS)
    values.update(overrides)
    return TamRlConfig(**values)


def uniform_loss(alpha: float = 0.1) -> LossConfig:
    return LossConfig(alpha=alpha, w_igbp={_l: 1.0 for _l in IGBP_LABELS},
                      w_koppen={_l: 1.0 for _l in KOPPEN_LABELS})


def windows_of(sites: Sequence[SiteTask]) -> List[TimeSeriesWindow]:
    return [_w for _s in sites for _w in _s.windows]
