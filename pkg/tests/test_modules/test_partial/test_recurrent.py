import math
import unittest

import torch

from modules.partial.recurrent import BiLstm, LstmCell, bilstm_encode, lstm_cell_step, lstm_forward
from utils.autodiff import DTYPE, add, grad_check, mean_all, sum_all, tensor
from utils.errors import DimensionError
from utils.train import member_rng


def _zero_cell(d_in: int, h_dim: int) -> LstmCell:
    cell = LstmCell(d_in, h_dim)
    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
    return cell


class TestLstmCell(unittest.TestCase):

    def test_parameters(self) -> None:
        cell = LstmCell(3, 4, generator=torch.Generator().manual_seed(0))
        self.assertEqual((16, 3), tuple(cell.input_weights.shape))
        self.assertEqual((16, 4), tuple(cell.recurrent_weights.shape))
        self.assertEqual((16,), tuple(cell.biases.shape))
        self.assertEqual(DTYPE, cell.biases.dtype)
        self.assertTrue(torch.equal(torch.ones(4, dtype=DTYPE), cell.biases[cell.gate_slice('f')].detach()))
        bound = 1.0 / math.sqrt(4)
        self.assertLessEqual(float(cell.input_weights.abs().max()), bound)
        self.assertEqual(slice(8, 12), cell.gate_slice('g'))

    def test_zero_step(self) -> None:
        cell = _zero_cell(2, 1)
        h, c = lstm_cell_step(cell, tensor([5.0, -3.0]), tensor([0.0]), tensor([0.0]))
        self.assertEqual([0.0], h.tolist())
        self.assertEqual([0.0], c.tolist())
        h, c = lstm_cell_step(cell, tensor([5.0, -3.0]), tensor([0.0]), tensor([2.0]))
        self.assertEqual([1.0], c.tolist())
        self.assertAlmostEqual(0.380797, float(h), places=6)

    def test_shape_errors(self) -> None:
        cell = LstmCell(2, 3)
        with self.assertRaises(DimensionError):
            lstm_cell_step(cell, tensor([1.0]), torch.zeros(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))
        with self.assertRaises(DimensionError):
            lstm_cell_step(cell, tensor([1.0, 2.0]), torch.zeros(2, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    def test_grad_check(self) -> None:
        cell = LstmCell(2, 3, generator=torch.Generator().manual_seed(3))
        h = torch.randn(3, generator=torch.Generator().manual_seed(4), dtype=DTYPE)
        c = torch.randn(3, generator=torch.Generator().manual_seed(5), dtype=DTYPE)
        error = grad_check(lambda _x: sum_all(lstm_cell_step(cell, _x, h, c)[0]), tensor([0.3, -0.7]))
        self.assertLess(error, 1e-4)

    def test_grad_check_random_points(self) -> None:
        rng = member_rng(1, 0)
        for _ in range(20):
            cell = LstmCell(2, 3, generator=torch.Generator().manual_seed(int(rng.integers(2 ** 31))))

            def f(v: torch.Tensor, cell=cell) -> torch.Tensor:
                h, c = lstm_cell_step(cell, v[:2], v[2:5], v[5:])
                return add(sum_all(h), mean_all(c))

            self.assertLess(grad_check(f, torch.from_numpy(rng.normal(size=8))), 1e-4)


class TestLstmForward(unittest.TestCase):

    def test_states(self) -> None:
        cell = LstmCell(2, 3, generator=torch.Generator().manual_seed(0))
        xs = torch.randn(5, 2, generator=torch.Generator().manual_seed(1), dtype=DTYPE)
        out = lstm_forward(cell, xs)
        self.assertEqual(5, len(out.hs))
        self.assertTrue(torch.equal(out.hs[-1], out.h))
        # same as a manual left fold
        h, c = torch.zeros(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE)
        for x_t in xs:
            h, c = lstm_cell_step(cell, x_t, h, c)
        self.assertTrue(torch.equal(h, out.h))
        self.assertTrue(torch.equal(c, out.c))

    def test_zero_params(self) -> None:
        out = lstm_forward(_zero_cell(2, 3), torch.randn(4, 2, dtype=DTYPE))
        self.assertTrue(all(bool((_h == 0).all()) for _h in out.hs))

    def test_errors(self) -> None:
        cell = LstmCell(2, 3)
        with self.assertRaises(DimensionError):
            lstm_forward(cell, [])
        with self.assertRaises(DimensionError):
            lstm_forward(cell, torch.zeros(2, dtype=DTYPE))

    def test_grad_check(self) -> None:
        cell = LstmCell(2, 2, generator=torch.Generator().manual_seed(7))
        xs = torch.randn(4, 2, generator=torch.Generator().manual_seed(8), dtype=DTYPE)
        self.assertLess(grad_check(lambda _x: sum_all(lstm_forward(cell, _x).h), xs), 1e-4)


class TestBiLstm(unittest.TestCase):

    def test_palindrome(self) -> None:
        model = BiLstm(2, 3, generator=torch.Generator().manual_seed(0))
        model.bwd.load_state_dict(model.fwd.state_dict())
        a, b = tensor([0.5, -1.0]), tensor([2.0, 0.1])
        out = bilstm_encode(model.fwd, model.bwd, [a, b, a])
        self.assertEqual((6,), tuple(out.shape))
        self.assertTrue(torch.equal(out[:3], out[3:]))

    def test_zero_params(self) -> None:
        model = BiLstm(2, 3)
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        self.assertTrue(torch.equal(torch.zeros(6, dtype=DTYPE), model(torch.randn(3, 2, dtype=DTYPE))))

    def test_directions(self) -> None:
        model = BiLstm(2, 3, generator=torch.Generator().manual_seed(1))
        xs = torch.randn(4, 2, generator=torch.Generator().manual_seed(2), dtype=DTYPE)
        out = model(xs)
        self.assertTrue(torch.equal(lstm_forward(model.fwd, xs).h, out[:3]))
        self.assertTrue(torch.equal(lstm_forward(model.bwd, xs.flip(0)).h, out[3:]))

    def test_grad_check_random_points(self) -> None:
        rng = member_rng(1, 1)
        for _ in range(20):
            model = BiLstm(2, 2, generator=torch.Generator().manual_seed(int(rng.integers(2 ** 31))))
            xs = torch.from_numpy(rng.normal(size=(3, 2)))
            self.assertLess(grad_check(lambda _x, model=model: sum_all(model(_x)), xs), 1e-4)
