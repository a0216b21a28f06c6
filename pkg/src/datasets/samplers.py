from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np
from torch.utils.data import Sampler

from datasets.flux_sites import SiteTask, TimeSeriesWindow
from utils.command_line_logger import CommandLineLogger
from utils.errors import InsufficientWindowsError


@dataclass(frozen=True)
class Episode:
    """
    Episode Class:
    One training episode of a single site: the support windows feed the task encoder, the query windows the loss.
    """
    site_id: str
    support: List[TimeSeriesWindow]
    query: List[TimeSeriesWindow]

    def __post_init__(self):
        assert len(self.support) > 0 and len(self.query) > 0, 'support and query must be nonempty'
        assert not {id(_w) for _w in self.support} & {id(_w) for _w in self.query}, 'support and query overlap'
        assert all(_w.site_id == self.site_id for _w in [*self.support, *self.query]), 'foreign window in episode'


def sample_episode(site: SiteTask, support_size: int, rng: np.random.Generator,
                   query_size: Optional[int] = None) -> Episode:
    """
    Draw an episode: `support_size` windows uniformly without replacement, the query being a random subset of (at most
    `query_size`) remaining windows.
    :param (SiteTask) site: the site to sample from
    :param (int) support_size: number of support windows (>= 1)
    :param (np.random.Generator) rng: random generator
    :param (optional) query_size: maximum number of query windows (all remaining windows if None)
    :return: an `Episode` instance
    :raises InsufficientWindowsError: if the site has no more than `support_size` windows
    """
    assert support_size >= 1, 'support_size must be >= 1'
    if len(site) <= support_size:
        raise InsufficientWindowsError(site.site_id, len(site), support_size)
    order = rng.permutation(len(site))
    support_idx, rest = order[:support_size], order[support_size:]
    if query_size is not None:
        rest = rest[:max(1, query_size)]
    return Episode(site_id=site.site_id,
                   support=[site[int(_i)] for _i in sorted(support_idx)],
                   query=[site[int(_i)] for _i in sorted(rest)])


class EpisodeSampler(Sampler):
    """
    EpisodeSampler Class:
    Yields one episode per eligible site per epoch, visiting sites in an order reshuffled every epoch. Sites with too
    few windows are skipped (with a warning, once).
    """

    def __init__(self, sites: Sequence[SiteTask], support_size: int, rng: np.random.Generator,
                 query_size: Optional[int] = None, logger: Union[CommandLineLogger, None] = None):
        """
        EpisodeSampler class constructor.
        :param (Sequence) sites: training `SiteTask` objects
        :param (int) support_size: support windows per episode
        :param (np.random.Generator) rng: random generator (owned by one training run)
        :param (optional) query_size: maximum query windows per episode
        :param (optional) logger: CommandLineLogger instance
        """
        super(EpisodeSampler, self).__init__()
        self.logger = logger or CommandLineLogger(name=self.__class__.__name__)
        self.support_size = support_size
        self.query_size = query_size
        self.rng = rng
        self.sites = [_s for _s in sites if len(_s) > support_size]
        for skipped in [_s for _s in sites if len(_s) <= support_size]:
            self.logger.warning(f'[EpisodeSampler] skipping site {skipped.site_id}: '
                                f'{len(skipped)} windows <= support size {support_size}')
        if not self.sites:
            raise InsufficientWindowsError('*', max((len(_s) for _s in sites), default=0), support_size)

    def __iter__(self) -> Iterator[Episode]:
        for i in self.rng.permutation(len(self.sites)):
            yield sample_episode(self.sites[int(i)], self.support_size, self.rng, query_size=self.query_size)

    def __len__(self) -> int:
        return len(self.sites)
