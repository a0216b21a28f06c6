import unittest

import numpy as np

from datasets.samplers import EpisodeSampler, sample_episode
from tests.fixtures import make_site
from utils.errors import InsufficientWindowsError


class TestSampleEpisode(unittest.TestCase):

    def test_minimal_site(self) -> None:
        site = make_site('A', days=20)
        self.assertEqual(4, len(site))
        episode = sample_episode(site, 3, np.random.default_rng(0))
        self.assertEqual(3, len(episode.support))
        self.assertEqual(1, len(episode.query))

    def test_disjoint(self) -> None:
        site = make_site('A', days=50)
        rng = np.random.default_rng(1)
        for _ in range(10):
            episode = sample_episode(site, 3, rng)
            support = {_w.offset for _w in episode.support}
            query = {_w.offset for _w in episode.query}
            self.assertFalse(support & query)
            self.assertEqual(len(site), len(support | query))
            self.assertEqual('A', episode.site_id)

    def test_query_size(self) -> None:
        episode = sample_episode(make_site('A', days=50), 2, np.random.default_rng(0), query_size=4)
        self.assertEqual(4, len(episode.query))
        offsets = [_w.offset for _w in episode.query]
        self.assertEqual(sorted(offsets), offsets)

    def test_replay(self) -> None:
        site = make_site('A', days=50)
        a = sample_episode(site, 3, np.random.default_rng(5))
        b = sample_episode(site, 3, np.random.default_rng(5))
        self.assertEqual([_w.offset for _w in a.support], [_w.offset for _w in b.support])
        self.assertEqual([_w.offset for _w in a.query], [_w.offset for _w in b.query])

    def test_insufficient(self) -> None:
        with self.assertRaises(InsufficientWindowsError) as ctx:
            sample_episode(make_site('A', days=15), 3, np.random.default_rng(0))
        self.assertIn('A', str(ctx.exception))


class TestEpisodeSampler(unittest.TestCase):

    def test_skips_small_sites(self) -> None:
        sites = [make_site('A', days=20), make_site('B', days=10), make_site('C', days=30)]
        sampler = EpisodeSampler(sites, 3, np.random.default_rng(0))
        self.assertEqual(2, len(sampler))
        episodes = list(sampler)
        self.assertEqual({'A', 'C'}, {_e.site_id for _e in episodes})

    def test_epoch_order(self) -> None:
        sites = [make_site(_s, days=20) for _s in 'ABCDEF']
        order = [_e.site_id for _e in EpisodeSampler(sites, 1, np.random.default_rng(3))]
        self.assertEqual(sorted('ABCDEF'), sorted(order))
        replay = [_e.site_id for _e in EpisodeSampler(sites, 1, np.random.default_rng(3))]
        self.assertEqual(order, replay)

    def test_no_eligible_site(self) -> None:
        with self.assertRaises(InsufficientWindowsError):
            EpisodeSampler([make_site('A', days=10)], 3, np.random.default_rng(0))
