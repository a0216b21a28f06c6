import os
import tempfile
import unittest

import yaml

from utils.config import DataConfig, EvalConfig, RunConfig, TamRlConfig, TrainRunConfig, load_config, save_config
from utils.errors import DataValidationError


class TestConfig(unittest.TestCase):

    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def _write(self, values) -> str:
        filepath = os.path.join(self.tmp.name, 'config.yaml')
        with open(filepath, 'w') as yaml_fp:
            yaml.safe_dump(values, yaml_fp)
        return filepath

    def test_defaults(self) -> None:
        config = load_config()
        self.assertEqual(45, config.data.window)
        self.assertEqual(15, config.data.stride)
        self.assertEqual(0.1, config.loss.alpha)
        self.assertEqual(10, config.train.ensemble_size)
        self.assertEqual('ctlstm', config.eval.reference_model)
        self.assertEqual('near_identity', config.model.generator_init)
        self.assertEqual(1e-2, config.model.generator_init_scale)
        # configs/default.yaml mirrors the dataclass defaults
        self.assertEqual(RunConfig().to_dict(), config.to_dict())

    def test_partial_file(self) -> None:
        config = load_config(self._write({'data': {'window': 30}, 'loss': {'alpha': 0.5}}))
        self.assertEqual(30, config.data.window)
        self.assertEqual(15, config.data.stride)
        self.assertEqual(0.5, config.loss.alpha)

    def test_rejects_unknown_keys(self) -> None:
        with self.assertRaises(DataValidationError):
            load_config(self._write({'data': {'windw': 30}}))
        with self.assertRaises(DataValidationError):
            load_config(self._write({'optimizer': {}}))
        with self.assertRaises(DataValidationError):
            load_config(self._write({'loss': {'w_igbp': {'GRA': 1.0}}}))
        with self.assertRaises(DataValidationError):
            load_config(os.path.join(self.tmp.name, 'missing.yaml'))

    def test_invalid_values(self) -> None:
        with self.assertRaises(DataValidationError):
            DataConfig(holdout_fraction=1.0)
        with self.assertRaises(DataValidationError):
            TamRlConfig(hidden_dim=0)
        with self.assertRaises(DataValidationError):
            TamRlConfig(modulation=True, static_onehot=True)
        with self.assertRaises(DataValidationError):
            TrainRunConfig(ensemble_size=2, seeds=[1])
        with self.assertRaises(DataValidationError):
            EvalConfig(support_selection='random')

    def test_round_trip(self) -> None:
        config = RunConfig.from_dict({'train': {'seed': 5, 'ensemble_size': 2}, 'eval': {'strict_qc': True}})
        filepath = os.path.join(self.tmp.name, 'saved.yaml')
        save_config(filepath, config)
        self.assertEqual(config.to_dict(), load_config(filepath).to_dict())

    def test_member_seeds(self) -> None:
        self.assertEqual([3, 4, 5], TrainRunConfig(seed=3, ensemble_size=3).member_seeds())
        self.assertEqual([9, 1], TrainRunConfig(ensemble_size=2, seeds=[9, 1]).member_seeds())
        with self.assertRaises(DataValidationError):
            TrainRunConfig(ensemble_size=2, seeds=[4, 4]).member_seeds()

    def test_model_widths(self) -> None:
        config = TamRlConfig(driver_dim=4, hidden_dim=8, embedding_dim=5, generator_hidden=[6],
                             igbp_labels=[str(_i) for _i in range(17)], koppen_labels=list('ABCDE'))
        self.assertEqual(4, config.input_dim)
        self.assertEqual([5, 6, 2 * 4 + 2 * 8], config.generator_widths)
        ct = config.resolve(modulation=False, static_onehot=True)
        self.assertEqual(22, ct.static_dim)
        self.assertEqual(26, ct.input_dim)
        self.assertTrue(config.modulation)
