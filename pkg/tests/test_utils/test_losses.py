import os
import tempfile
import unittest
from collections import Counter

import torch

from modules.partial.decoding import FluxPrediction
from utils.autodiff import DTYPE, backward, grad_check, tensor
from utils.errors import DataValidationError, DimensionError
from utils.losses import LossConfig, compute_class_weights, composite_loss, flux_penalty, load_class_weights, \
    qc_weight, sample_weight, save_class_weights, weighted_mse_term
from utils.train import member_rng


def _preds(gpp, reco, nee, requires_grad: bool = False) -> FluxPrediction:
    return FluxPrediction(tensor(gpp, requires_grad=requires_grad), tensor(reco, requires_grad=requires_grad),
                          tensor(nee, requires_grad=requires_grad))


def _cfg(alpha: float = 0.1, **kwargs) -> LossConfig:
    return LossConfig(alpha=alpha, w_igbp={'GRA': 1.0, 'ENF': 2.0}, w_koppen={'Dfb': 1.0, 'Cfa': 0.5}, **kwargs)


class TestClassWeights(unittest.TestCase):

    def test_balanced(self) -> None:
        self.assertEqual({'A': 1.0, 'B': 1.0}, compute_class_weights(['A', 'B', 'A', 'B']))

    def test_inverse_frequency(self) -> None:
        weights = compute_class_weights(['A', 'A', 'A', 'B'])
        self.assertAlmostEqual(4 / 6, weights['A'], places=12)
        self.assertAlmostEqual(2.0, weights['B'], places=12)

    def test_total_mass(self) -> None:
        labels = ['A'] * 7 + ['B'] * 2 + ['C'] * 13 + ['D']
        weights = compute_class_weights(labels)
        counts = Counter(labels)
        self.assertAlmostEqual(len(labels), sum(counts[_c] * _w for _c, _w in weights.items()), places=10)

    def test_uniform_and_errors(self) -> None:
        self.assertEqual({'A': 1.0, 'B': 1.0}, compute_class_weights(['A', 'A', 'B'], mode='uniform'))
        with self.assertRaises(DataValidationError):
            compute_class_weights([])
        with self.assertRaises(DataValidationError):
            compute_class_weights(['A'], mode='sqrt')

    def test_save_load(self) -> None:
        cfg = LossConfig().with_class_weights(['GRA', 'GRA', 'ENF'], ['Dfb', 'Cfa', 'Cfa'])
        with tempfile.TemporaryDirectory() as tmp:
            filepath = os.path.join(tmp, 'prep', 'class_weights.txt')
            save_class_weights(filepath, cfg)
            with open(filepath) as fp:
                self.assertTrue(all(_l.startswith(('igbp.', 'koppen.')) for _l in fp.read().splitlines()))
            w_igbp, w_koppen = load_class_weights(filepath)
        self.assertEqual(cfg.w_igbp, w_igbp)
        self.assertEqual(cfg.w_koppen, w_koppen)


class TestWeights(unittest.TestCase):

    def test_qc_weight(self) -> None:
        self.assertEqual(1.0, qc_weight(1.0))
        self.assertEqual(0.0, qc_weight(0.0))
        self.assertEqual(0.25, qc_weight(0.25))
        with self.assertRaises(DataValidationError):
            qc_weight(1.3)

    def test_sample_weight(self) -> None:
        w = sample_weight(0.5, 'ENF', 'Cfa', _cfg())
        self.assertEqual(0.5 * 2.0 * 0.5, w.product)
        with self.assertRaises(DataValidationError):
            sample_weight(1.0, 'CRO', 'Cfa', _cfg())
        self.assertEqual(sample_weight(1.0, 'ENF', 'Cfa', _cfg()).product, _cfg().window_weight('ENF', 'Cfa'))
        with self.assertRaises(DataValidationError):
            _cfg().window_weight('ENF', 'Xx')

    def test_config_validation(self) -> None:
        with self.assertRaises(DataValidationError):
            LossConfig(alpha=-0.1)
        with self.assertRaises(DataValidationError):
            LossConfig(w_igbp={'GRA': 0.0})
        with self.assertRaises(DataValidationError):
            LossConfig(nee_convention='nee')
        with self.assertRaises(DataValidationError):
            _cfg().window_weight('GRA', 'Aw')


class TestFluxPenalty(unittest.TestCase):

    def test_exact_balance(self) -> None:
        self.assertEqual(0.0, float(flux_penalty(_preds([5.0], [2.0], [-3.0]))))

    def test_values(self) -> None:
        self.assertEqual(1.0, float(flux_penalty(_preds([0.0], [1.0], [0.0]))))
        # residuals 0 and 2
        self.assertEqual(2.0, float(flux_penalty(_preds([1.0, 1.0], [2.0, 2.0], [1.0, 3.0]))))

    def test_convention(self) -> None:
        preds = _preds([5.0], [2.0], [3.0])
        self.assertEqual(0.0, float(flux_penalty(preds, convention='gpp_minus_reco')))
        self.assertEqual(36.0, float(flux_penalty(preds, convention='reco_minus_gpp')))
        with self.assertRaises(DataValidationError):
            flux_penalty(preds, convention='other')


class TestCompositeLoss(unittest.TestCase):

    def setUp(self) -> None:
        self.labels = ('GRA', 'Dfb')
        self.targets = tensor([[1.0, -1.0], [2.0, 0.5], [0.0, 1.0]])
        self.qc = tensor([1.0, 0.5, 0.8])
        self.preds = _preds([1.5, 1.0, -0.2], [1.0, 2.0, 0.5], [-0.4, 1.2, 0.9])

    def test_perfect(self) -> None:
        preds = _preds([1.0, 2.0], [0.0, 2.5], [-1.0, 0.5])
        loss = composite_loss(preds, tensor([[1.0, -1.0], [2.0, 0.5]]), tensor([1.0, 1.0]), self.labels, _cfg())
        self.assertEqual(0.0, float(loss))

    def test_single_step(self) -> None:
        # gpp error 1, nee error 3, balanced fluxes
        preds = _preds([2.0], [4.0], [2.0])
        loss = composite_loss(preds, tensor([[1.0, -1.0]]), tensor([1.0]), self.labels, _cfg())
        self.assertAlmostEqual(5.0, float(loss), places=12)

    def test_decomposition(self) -> None:
        cfg = _cfg(alpha=0.3)
        loss = composite_loss(self.preds, self.targets, self.qc, ('ENF', 'Cfa'), cfg)
        data = weighted_mse_term(self.preds, self.targets, self.qc, w_window=2.0 * 0.5)
        self.assertAlmostEqual(float(data) + 0.3 * float(flux_penalty(self.preds)), float(loss), places=12)
        no_penalty = composite_loss(self.preds, self.targets, self.qc, ('ENF', 'Cfa'), _cfg(alpha=0.0))
        self.assertEqual(float(data), float(no_penalty))

    def test_alpha_scaling(self) -> None:
        single = float(composite_loss(self.preds, self.targets, self.qc, self.labels, _cfg(alpha=0.2)))
        double = float(composite_loss(self.preds, self.targets, self.qc, self.labels, _cfg(alpha=0.4)))
        self.assertAlmostEqual(0.2 * float(flux_penalty(self.preds)), double - single, delta=1e-12)

    def test_zero_quality(self) -> None:
        preds = _preds([1.5, 1.0, -0.2], [1.0, 2.0, 0.5], [-0.4, 1.2, 0.9], requires_grad=True)
        qc = torch.zeros(3, dtype=DTYPE)
        loss = composite_loss(preds, self.targets, qc, self.labels, _cfg(alpha=0.1))
        self.assertAlmostEqual(0.1 * float(flux_penalty(preds)), float(loss), places=12)
        backward(loss)
        residual = (preds.nee - (preds.reco - preds.gpp)).detach()
        # d/dnee of 0.1 * mean(residual^2)
        self.assertTrue(torch.allclose(0.1 * 2 * residual / 3, preds.nee.grad, atol=1e-12))

    def test_reco_only_through_penalty(self) -> None:
        preds = _preds([1.5, 1.0, -0.2], [1.0, 2.0, 0.5], [-0.4, 1.2, 0.9], requires_grad=True)
        backward(composite_loss(preds, self.targets, self.qc, self.labels, _cfg(alpha=0.0)))
        self.assertTrue(preds.reco.grad is None or bool((preds.reco.grad == 0).all()))
        self.assertTrue(bool((preds.gpp.grad != 0).any()))

    def test_mask(self) -> None:
        mask = torch.tensor([True, False, True])
        masked = float(weighted_mse_term(self.preds, self.targets, self.qc, mask=mask))
        err_gpp = self.preds.gpp - self.targets[:, 0]
        err_nee = self.preds.nee - self.targets[:, 1]
        per_step = 0.5 * (err_gpp ** 2 + err_nee ** 2) * self.qc * mask.to(DTYPE)
        # masked steps count in T
        self.assertAlmostEqual(float(per_step.sum() / 3), masked, places=12)

    def test_sum_reduction(self) -> None:
        preds = _preds([2.0], [4.0], [2.0])
        loss = composite_loss(preds, tensor([[1.0, -1.0]]), tensor([1.0]), self.labels, _cfg(mse_reduction='sum'))
        self.assertAlmostEqual(10.0, float(loss), places=12)

    def test_errors(self) -> None:
        with self.assertRaises(DimensionError):
            composite_loss(self.preds, self.targets[:2], self.qc, self.labels, _cfg())
        with self.assertRaises(DataValidationError):
            composite_loss(self.preds, self.targets, self.qc, ('CRO', 'Dfb'), _cfg())
        with self.assertRaises(DataValidationError):
            composite_loss(self.preds, self.targets, tensor([1.0, 1.2, 0.0]), self.labels, _cfg())


class TestCompositeLossRandom(unittest.TestCase):

    @staticmethod
    def _draw(rng, n_steps: int):
        preds = FluxPrediction(*[torch.from_numpy(rng.normal(size=n_steps)) for _ in range(3)])
        targets = torch.from_numpy(rng.normal(size=(n_steps, 2)))
        qc = torch.from_numpy(rng.uniform(0.0, 1.0, size=n_steps))
        mask = torch.from_numpy(rng.uniform(size=n_steps) < 0.8)
        return preds, targets, qc, mask

    def test_decomposition(self) -> None:
        rng = member_rng(3, 0)
        labels = [(_i, _k) for _i in ('GRA', 'ENF') for _k in ('Dfb', 'Cfa')]
        for _ in range(1000):
            preds, targets, qc, mask = self._draw(rng, int(rng.integers(1, 7)))
            cfg = _cfg(alpha=float(rng.uniform(0.0, 1.0)), mse_reduction=str(rng.choice(['mean', 'sum'])))
            igbp, koppen = labels[int(rng.integers(len(labels)))]
            loss = composite_loss(preds, targets, qc, (igbp, koppen), cfg, mask=mask)
            data = weighted_mse_term(preds, targets, qc, w_window=cfg.w_igbp[igbp] * cfg.w_koppen[koppen],
                                     mask=mask, reduction=cfg.mse_reduction)
            self.assertLessEqual(abs(float(loss) - (float(data) + cfg.alpha * float(flux_penalty(preds)))), 1e-12)

    def test_balanced_classes_are_neutral(self) -> None:
        rng = member_rng(3, 1)
        balanced = LossConfig().with_class_weights(['GRA', 'ENF', 'SAV'] * 4, ['Dfb', 'Cfa'] * 6)
        unweighted = LossConfig(class_weight_mode='uniform').with_class_weights(['GRA', 'ENF', 'SAV'],
                                                                              ['Dfb', 'Cfa'])
        self.assertEqual({'ENF': 1.0, 'GRA': 1.0, 'SAV': 1.0}, balanced.w_igbp)
        for _ in range(50):
            preds, targets, qc, mask = self._draw(rng, 5)
            labels = (str(rng.choice(['GRA', 'ENF', 'SAV'])), str(rng.choice(['Dfb', 'Cfa'])))
            self.assertEqual(float(composite_loss(preds, targets, qc, labels, unweighted, mask=mask)),
                             float(composite_loss(preds, targets, qc, labels, balanced, mask=mask)))

    def test_grad_check_random_points(self) -> None:
        rng = member_rng(3, 2)
        n_steps = 4
        for _ in range(20):
            _, targets, qc, mask = self._draw(rng, n_steps)

            def f(v: torch.Tensor, targets=targets, qc=qc, mask=mask) -> torch.Tensor:
                preds = FluxPrediction(v[:n_steps], v[n_steps:2 * n_steps], v[2 * n_steps:])
                return composite_loss(preds, targets, qc, ('ENF', 'Cfa'), _cfg(alpha=0.1), mask=mask)

            self.assertLess(grad_check(f, torch.from_numpy(rng.normal(size=3 * n_steps))), 1e-4)
