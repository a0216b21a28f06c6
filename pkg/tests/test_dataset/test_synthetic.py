import os
import tempfile
import unittest

import numpy as np

from datasets.synthetic import N_DRIVERS, SynthSiteParams, gpp_lue, load_site_params, reco_q10, synth_generate, \
    synth_records, true_reco, write_site_params
from utils.errors import DataValidationError


class TestResponses(unittest.TestCase):

    def test_reco_q10(self) -> None:
        self.assertAlmostEqual(2.0, reco_q10(1.0, 2.0, 25.0), places=12)
        self.assertAlmostEqual(1.0, reco_q10(1.0, 2.0, 15.0), places=12)
        self.assertAlmostEqual(0.5, reco_q10(1.0, 2.0, 5.0), places=12)

    def test_gpp_lue(self) -> None:
        self.assertAlmostEqual(0.5 * 12.0, gpp_lue(0.5, 12.0, 20.0, 20.0), places=12)
        self.assertLess(gpp_lue(0.5, 12.0, 5.0, 20.0), 0.5 * 12.0)
        self.assertEqual(0.0, gpp_lue(0.5, 0.0, 20.0, 20.0))

    def test_labels(self) -> None:
        params = SynthSiteParams(lue=0.3, rb=1.0, q10=2.0, t_opt=12.0, noise_sd=0.1)
        self.assertEqual(('GRA', 'Dfb'), (params.igbp, params.koppen))
        params = SynthSiteParams(lue=0.5, rb=1.0, q10=2.0, t_opt=20.0, noise_sd=0.1)
        self.assertEqual(('DBF', 'Cfa'), (params.igbp, params.koppen))
        params = SynthSiteParams(lue=0.7, rb=1.0, q10=2.0, t_opt=28.0, noise_sd=0.1)
        self.assertEqual(('CRO', 'Aw'), (params.igbp, params.koppen))


class TestSynthGenerate(unittest.TestCase):

    def test_records(self) -> None:
        records, params = synth_records(2, 50, np.random.default_rng(3), noise_sd=0.0)
        self.assertEqual(['S000', 'S001'], list(params))
        self.assertEqual(100, len(records))
        site = [_r for _r in records if _r.site_id == 'S001']
        self.assertEqual(N_DRIVERS, len(site[0].drivers))
        gpp = np.array([_r.gpp for _r in site])
        nee = np.array([_r.nee for _r in site])
        self.assertTrue(np.allclose(true_reco(params['S001'], site) - gpp, nee, atol=1e-12))
        self.assertTrue(all(0.0 <= _r.qc <= 1.0 for _r in records))
        self.assertTrue(all(_r.igbp == params['S001'].igbp for _r in site))

    def test_deterministic(self) -> None:
        a, _ = synth_records(2, 50, np.random.default_rng(7))
        b, _ = synth_records(2, 50, np.random.default_rng(7))
        c, _ = synth_records(2, 50, np.random.default_rng(8))
        self.assertEqual(a, b)
        self.assertNotEqual(a, c)

    def test_windows(self) -> None:
        sites = synth_generate(3, 100, np.random.default_rng(0))
        self.assertEqual(3, len(sites))
        self.assertTrue(all(len(_s) == 4 for _s in sites))
        self.assertTrue(all(isinstance(_s.params, SynthSiteParams) for _s in sites))
        self.assertEqual(45, len(sites[0][0]))

    def test_invalid(self) -> None:
        rng = np.random.default_rng(0)
        with self.assertRaises(DataValidationError):
            synth_records(0, 50, rng)
        with self.assertRaises(DataValidationError):
            synth_records(1, 44, rng)
        with self.assertRaises(DataValidationError):
            synth_records(1, 50, rng, noise_sd=-1.0)
        with self.assertRaises(DataValidationError):
            SynthSiteParams(lue=0.5, rb=1.0, q10=1.0, t_opt=20.0, noise_sd=0.1)

    def test_params_sidecar(self) -> None:
        _, params = synth_records(3, 45, np.random.default_rng(1))
        with tempfile.TemporaryDirectory() as tmp:
            filepath = os.path.join(tmp, 'synth', 'site_params.csv')
            write_site_params(filepath, params)
            self.assertEqual(params, load_site_params(filepath))
            self.assertEqual({}, load_site_params(os.path.join(tmp, 'missing.csv')))
        self.assertEqual({}, load_site_params(None))
