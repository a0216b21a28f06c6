import unittest

import torch

from modules.partial.encoding import TaskEmbedding
from modules.partial.normalization import ModulationGenerator, ModulationParams, apply_film, generate_modulation
from utils.autodiff import DTYPE, concat, grad_check, mul, sum_all, tensor
from utils.errors import DimensionError
from utils.train import member_rng


class TestFilm(unittest.TestCase):

    def test_apply_film(self) -> None:
        x = tensor([2.0, -1.0])
        self.assertEqual([2.0, -1.0], apply_film(x, tensor([1.0, 1.0]), tensor([0.0, 0.0])).tolist())
        self.assertEqual([2.0, -3.0], apply_film(x, tensor([0.5, 2.0]), tensor([1.0, -1.0])).tolist())
        with self.assertRaises(DimensionError):
            apply_film(x, tensor([1.0]), tensor([0.0, 0.0]))

    def test_grad_check(self) -> None:
        gamma, beta = tensor([0.5, 2.0, -1.0]), tensor([1.0, 0.0, 3.0])
        self.assertLess(grad_check(lambda _x: sum_all(apply_film(_x, gamma, beta)), tensor([0.2, 1.0, -2.0])), 1e-6)

    def test_grad_check_random_points(self) -> None:
        rng = member_rng(2, 0)
        for _ in range(20):
            at = torch.from_numpy(rng.choice([-1.0, 1.0], size=9) * rng.uniform(0.5, 2.0, size=9))
            self.assertLess(grad_check(lambda _v: sum_all(mul(apply_film(_v[:3], _v[3:6], _v[6:]), _v[:3])), at), 1e-4)

    def test_identity_params(self) -> None:
        mod = ModulationParams.identity(3, 4)
        self.assertTrue(mod.is_identity())
        self.assertEqual(3, mod.d_in)
        self.assertEqual(4, mod.h_dim)


class TestModulationGenerator(unittest.TestCase):

    def test_identity_init(self) -> None:
        generator = ModulationGenerator(3, 2, 4, hidden=[5], init='identity')
        mod = generator(tensor([0.3, -1.0, 2.0]))
        self.assertTrue(mod.is_identity())
        self.assertEqual(2 * 2 + 2 * 4, generator.d_out)

    def test_near_identity_init(self) -> None:
        generator = ModulationGenerator(3, 2, 4, hidden=[4], init='near_identity', init_scale=1e-2,
                                        generator=torch.Generator().manual_seed(0))
        mod = generator(TaskEmbedding(z=tensor([1.0, -1.0, 0.5]), source_site='A', support_count=1))
        self.assertFalse(mod.is_identity())
        self.assertLess(float((mod.gamma1 - 1).abs().max()), 0.05)
        self.assertLess(float(mod.beta2.abs().max()), 0.05)

    def test_split_order(self) -> None:
        d, h = 2, 3
        generator = ModulationGenerator(2, d, h, hidden=[], init='identity')
        with torch.no_grad():
            generator.mlp.biases[-1].copy_(torch.arange(2 * d + 2 * h, dtype=DTYPE))
        mod = generate_modulation(generator, tensor([0.0, 0.0]))
        self.assertEqual([1.0, 2.0], mod.gamma1.tolist())
        self.assertEqual([2.0, 3.0], mod.beta1.tolist())
        self.assertEqual([5.0, 6.0, 7.0], mod.gamma2.tolist())
        self.assertEqual([7.0, 8.0, 9.0], mod.beta2.tolist())

    def test_grad_check_random_points(self) -> None:
        rng = member_rng(2, 1)
        for _ in range(20):
            generator = ModulationGenerator(3, 2, 2, hidden=[4], init='uniform',
                                            generator=torch.Generator().manual_seed(int(rng.integers(2 ** 31))))

            def f(z: torch.Tensor, generator=generator) -> torch.Tensor:
                mod = generate_modulation(generator, z)
                return sum_all(mul(concat(concat(mod.gamma1, mod.beta1), concat(mod.gamma2, mod.beta2)),
                                   tensor([1.0, -2.0, 0.5, 3.0, -1.0, 0.25, 2.0, -0.5])))

            self.assertLess(grad_check(f, torch.from_numpy(rng.normal(size=3))), 1e-4)
