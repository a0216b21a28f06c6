import math
import threading
import unittest

import torch

from utils.autodiff import DTYPE, ComputationTape, add, backward, clip_min, concat, grad_check, matmul, mean_all, \
    mul, sigmoid, stack, sub, sum_all, tanh, tensor
from utils.errors import DimensionError, FluxError, NonFiniteError
from utils.train import member_rng


class TestTensorOps(unittest.TestCase):

    def test_tensor(self) -> None:
        t = tensor([[1, 2], [3, 4]])
        self.assertEqual(DTYPE, t.dtype)
        self.assertFalse(t.requires_grad)
        self.assertTrue(tensor([1.0], requires_grad=True).requires_grad)
        with self.assertRaises(NonFiniteError):
            tensor([1.0, math.nan])
        with self.assertRaises(NonFiniteError):
            tensor([math.inf])

    def test_matmul(self) -> None:
        eye = tensor([[1, 0], [0, 1]])
        b = tensor([[3, 4], [5, 6]])
        self.assertTrue(torch.equal(b, matmul(eye, b)))
        self.assertEqual([[11.0]], matmul(tensor([[1, 2]]), tensor([[3], [4]])).tolist())
        self.assertEqual([3.0, 7.0], matmul(tensor([[1, 2], [3, 4]]), tensor([1, 1])).tolist())
        with self.assertRaises(DimensionError) as ctx:
            matmul(torch.ones(2, 3, dtype=DTYPE), torch.ones(2, 3, dtype=DTYPE))
        self.assertIn('[2, 3]', str(ctx.exception))

    def test_elementwise(self) -> None:
        self.assertEqual(0.5, float(sigmoid(tensor(0.0))))
        self.assertEqual(0.0, float(tanh(tensor(0.0))))
        self.assertEqual([0.0, 3.0], clip_min(tensor([-2, 3]), 0.0).tolist())
        self.assertEqual([3.0, 4.0], add(tensor([1, 2]), 2).tolist())
        self.assertEqual([2.0, 4.0], mul(2.0, tensor([1, 2])).tolist())
        # no broadcasting between non-scalar tensors
        with self.assertRaises(DimensionError):
            add(tensor([1, 2]), tensor([1, 2, 3]))
        with self.assertRaises(DimensionError):
            mul(tensor([[1, 2]]), tensor([1, 2]))

    def test_concat(self) -> None:
        self.assertEqual([1.0, 2.0, 3.0], concat(tensor([1, 2]), tensor([3]), axis=0).tolist())
        self.assertEqual((2, 5), tuple(concat(torch.ones(2, 2, dtype=DTYPE), torch.ones(2, 3, dtype=DTYPE),
                                              axis=1).shape))
        with self.assertRaises(DimensionError):
            concat(torch.ones(2, 2, dtype=DTYPE), torch.ones(3, 2, dtype=DTYPE), axis=1)
        with self.assertRaises(DimensionError):
            concat(torch.ones(2, dtype=DTYPE), torch.ones(2, 2, dtype=DTYPE))

    def test_stack_and_reductions(self) -> None:
        s = stack([tensor([1, 2]), tensor([3, 4])])
        self.assertEqual((2, 2), tuple(s.shape))
        self.assertEqual(10.0, float(sum_all(s)))
        self.assertEqual(2.5, float(mean_all(s)))
        self.assertEqual([2.0, 3.0], mean_all(s, axis=0).tolist())
        with self.assertRaises(DimensionError):
            stack([tensor([1, 2]), tensor([1])])


class TestBackward(unittest.TestCase):

    def test_simple_gradients(self) -> None:
        w = tensor([1, 2, 3], requires_grad=True)
        backward(sum_all(w))
        self.assertEqual([1.0, 1.0, 1.0], w.grad.tolist())

        w = tensor([1, 2], requires_grad=True)
        backward(sum_all(mul(w, w)))
        self.assertEqual([2.0, 4.0], w.grad.tolist())

        x = tensor(0.0, requires_grad=True)
        backward(mul(sigmoid(x), 2.0))
        self.assertAlmostEqual(0.5, float(x.grad), places=12)

    def test_accumulation(self) -> None:
        w = tensor([1, 2], requires_grad=True)
        backward(sum_all(w))
        backward(sum_all(w))
        self.assertEqual([2.0, 2.0], w.grad.tolist())

    def test_clip_min_subgradient(self) -> None:
        x = tensor([-1.0, 0.0, 2.0], requires_grad=True)
        backward(sum_all(clip_min(x, 0.0)))
        self.assertEqual([0.0, 0.0, 1.0], x.grad.tolist())

    def test_invalid_loss(self) -> None:
        w = tensor([1, 2], requires_grad=True)
        with self.assertRaises(DimensionError):
            backward(mul(w, w))
        with self.assertRaises(FluxError):
            backward(sum_all(tensor([1, 2])))


class TestComputationTape(unittest.TestCase):

    def test_records_in_order(self) -> None:
        x = tensor([1, 2], requires_grad=True)
        with ComputationTape() as tape:
            self.assertIs(tape, ComputationTape.active())
            loss = sum_all(tanh(mul(x, x)))
            self.assertEqual(['mul', 'tanh', 'sum'], tape.ops())
            # every input precedes the operation consuming it
            outputs = [_e.output for _e in tape.entries]
            self.assertIs(outputs[0], tape.entries[1].inputs[0])
            self.assertIs(outputs[1], tape.entries[2].inputs[0])
            backward(loss)
            self.assertEqual(0, len(tape))
        self.assertIsNone(ComputationTape.active())
        self.assertIsNotNone(x.grad)

    def test_no_recording_without_grad(self) -> None:
        with ComputationTape() as tape:
            with torch.no_grad():
                add(tensor([1.0]), 1.0)
            self.assertEqual(0, len(tape))

    def test_empty_tape(self) -> None:
        with ComputationTape() as tape:
            with self.assertRaises(FluxError):
                tape.backward(tensor(1.0, requires_grad=True))

    def test_thread_confinement(self) -> None:
        seen = []
        with ComputationTape():
            worker = threading.Thread(target=lambda: seen.append(ComputationTape.active()))
            worker.start()
            worker.join()
        self.assertEqual([None], seen)


class TestGradCheck(unittest.TestCase):

    def test_tanh(self) -> None:
        self.assertLess(grad_check(lambda _x: sum_all(tanh(_x)), tensor([0.0]), eps=1e-5), 1e-8)

    def test_mlp(self) -> None:
        g = torch.Generator().manual_seed(0)
        w1 = torch.randn(4, 3, generator=g, dtype=DTYPE)
        w2 = torch.randn(1, 4, generator=g, dtype=DTYPE)

        def f(x: torch.Tensor) -> torch.Tensor:
            return sum_all(matmul(w2, tanh(matmul(w1, x))))

        self.assertLess(grad_check(f, torch.randn(3, generator=g, dtype=DTYPE), eps=1e-5), 1e-4)

    def test_clip_min_interior(self) -> None:
        self.assertLess(grad_check(lambda _x: sum_all(clip_min(_x, 0.0)), tensor([1.0]), eps=1e-5), 1e-6)

    def test_non_scalar(self) -> None:
        with self.assertRaises(DimensionError):
            grad_check(lambda _x: mul(_x, _x), tensor([1.0, 2.0]))

    def test_random_points(self) -> None:
        rng = member_rng(0, 0)
        for _ in range(100):
            w = torch.from_numpy(rng.normal(size=(3, 4)))
            b = torch.from_numpy(rng.normal(size=3))

            def f(x: torch.Tensor, w=w, b=b) -> torch.Tensor:
                h = tanh(add(matmul(w, x), b))
                g = sigmoid(concat(h, x[:2], axis=0))
                return add(sum_all(mul(g, g)), mean_all(stack([sub(x, 0.5), mul(x, x)])))

            self.assertLess(grad_check(f, torch.from_numpy(rng.normal(size=4)), eps=1e-5), 1e-4)


class TestAlgebra(unittest.TestCase):

    def test_backward_linearity(self) -> None:
        rng = member_rng(0, 1)
        for _ in range(20):
            w = torch.from_numpy(rng.normal(size=(2, 3))).requires_grad_(True)
            x = torch.from_numpy(rng.normal(size=3))

            def loss_1() -> torch.Tensor:
                return sum_all(tanh(matmul(w, x)))

            def loss_2() -> torch.Tensor:
                return mean_all(mul(sigmoid(w), w))

            with ComputationTape() as tape:
                tape.backward(add(loss_1(), loss_2()))
            combined = w.grad.clone()
            separate = []
            for loss in (loss_1, loss_2):
                w.grad = None
                with ComputationTape() as tape:
                    tape.backward(loss())
                separate.append(w.grad.clone())
            self.assertLessEqual(float((combined - (separate[0] + separate[1])).abs().max()), 1e-12)

    def test_matmul_identity(self) -> None:
        rng = member_rng(0, 2)
        for _ in range(20):
            a = torch.from_numpy(rng.normal(size=(3, 4)))
            self.assertTrue(torch.equal(a, matmul(torch.eye(3, dtype=DTYPE), a)))
            self.assertTrue(torch.equal(a, matmul(a, torch.eye(4, dtype=DTYPE))))
