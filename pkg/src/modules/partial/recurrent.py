import math
from typing import List, NamedTuple, Optional, Sequence, Union

import torch
import torch.nn as nn
from torch import Tensor

from utils.autodiff import add, concat, matmul, mul, sigmoid, tanh, zeros
from utils.errors import DimensionError


class LstmCell(nn.Module):
    """
    LstmCell Class:
    Parameters of a single-layer LSTM. Gates are packed (row-wise) in the fixed order input (i), forget (f), cell (g),
    output (o), so that archived checkpoints are portable:
        - input_weights: [4H × D]
        - recurrent_weights: [4H × H]
        - biases: [4H]
    """
    GATE_ORDER = ('i', 'f', 'g', 'o')

    def __init__(self, d_in: int, h_dim: int, generator: Optional[torch.Generator] = None):
        """
        LstmCell class constructor.
        :param (int) d_in: input width D
        :param (int) h_dim: hidden (and cell) state width H
        :param (optional) generator: `torch.Generator` instance used for weight initialization
        """
        super(LstmCell, self).__init__()
        assert d_in >= 1 and h_dim >= 1, 'LSTM widths must be positive'
        self.d_in = d_in
        self.h_dim = h_dim
        self.input_weights = nn.Parameter(zeros(4 * h_dim, d_in))
        self.recurrent_weights = nn.Parameter(zeros(4 * h_dim, h_dim))
        self.biases = nn.Parameter(zeros(4 * h_dim))
        self.reset_parameters(generator=generator)

    def reset_parameters(self, generator: Optional[torch.Generator] = None) -> None:
        """
        Uniform initialization in [-1/sqrt(H), 1/sqrt(H)] for every tensor; forget-gate bias slice set to 1.0.
        :param (optional) generator: `torch.Generator` instance
        """
        bound = 1.0 / math.sqrt(self.h_dim)
        with torch.no_grad():
            for p in (self.input_weights, self.recurrent_weights, self.biases):
                p.uniform_(-bound, bound, generator=generator)
            self.biases[self.h_dim:2 * self.h_dim].fill_(1.0)

    def gate_slice(self, gate: str) -> slice:
        index = self.GATE_ORDER.index(gate)
        return slice(index * self.h_dim, (index + 1) * self.h_dim)

    def forward(self, x_t: Tensor, h: Tensor, c: Tensor) -> tuple:
        return lstm_cell_step(self, x_t, h, c)


class LstmOutput(NamedTuple):
    hs: List[Tensor]
    h: Tensor
    c: Tensor


def lstm_cell_step(p: LstmCell, x_t: Tensor, h: Tensor, c: Tensor) -> tuple:
    """
    One LSTM step:
        i, f, o = sigmoid(.), g = tanh(.)
        c' = f * c + i * g
        h' = o * tanh(c')
    :param (LstmCell) p: cell parameters
    :param (Tensor) x_t: input of shape [D]
    :param (Tensor) h: hidden state of shape [H]
    :param (Tensor) c: cell state of shape [H]
    :return: a tuple (h', c')
    """
    if tuple(x_t.shape) != (p.d_in,) or tuple(h.shape) != (p.h_dim,) or tuple(c.shape) != (p.h_dim,):
        raise DimensionError(f'lstm_cell_step: expected x_t [{p.d_in}], h/c [{p.h_dim}], got '
                             f'{list(x_t.shape)}, {list(h.shape)}, {list(c.shape)}')
    gates = add(add(matmul(p.input_weights, x_t), matmul(p.recurrent_weights, h)), p.biases)
    i = sigmoid(gates[p.gate_slice('i')])
    f = sigmoid(gates[p.gate_slice('f')])
    g = tanh(gates[p.gate_slice('g')])
    o = sigmoid(gates[p.gate_slice('o')])
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


def _as_steps(xs: Union[Tensor, Sequence[Tensor]]) -> List[Tensor]:
    if isinstance(xs, Tensor):
        if xs.dim() != 2:
            raise DimensionError(f'expected a [T × D] sequence, got {list(xs.shape)}')
        return list(xs.unbind(0))
    return list(xs)


def lstm_forward(p: LstmCell, xs: Union[Tensor, Sequence[Tensor]], h0: Optional[Tensor] = None,
                 c0: Optional[Tensor] = None) -> LstmOutput:
    """
    Left fold of :func:`lstm_cell_step` over the sequence.
    :param (LstmCell) p: cell parameters
    :param xs: a list of [D] tensors or a [T × D] tensor
    :param (optional) h0: initial hidden state (zeros if None)
    :param (optional) c0: initial cell state (zeros if None)
    :return: an `LstmOutput` with every hidden state and the final (h, c)
    """
    steps = _as_steps(xs)
    if not steps:
        raise DimensionError('lstm_forward: empty sequence')
    h = zeros(p.h_dim) if h0 is None else h0
    c = zeros(p.h_dim) if c0 is None else c0
    hs = []
    for x_t in steps:
        h, c = lstm_cell_step(p, x_t, h, c)
        hs.append(h)
    return LstmOutput(hs=hs, h=h, c=c)


def bilstm_encode(p_fwd: LstmCell, p_bwd: LstmCell, xs: Union[Tensor, Sequence[Tensor]]) -> Tensor:
    """
    Bidirectional encoding: final hidden state over :attr:`xs` concatenated with the final hidden state over the
    reversed :attr:`xs`.
    :return: a tensor of shape [H_fwd + H_bwd]
    """
    steps = _as_steps(xs)
    if not steps:
        raise DimensionError('bilstm_encode: empty sequence')
    h_fwd = lstm_forward(p_fwd, steps).h
    h_bwd = lstm_forward(p_bwd, steps[::-1]).h
    return concat(h_fwd, h_bwd, axis=0)


class BiLstm(nn.Module):
    """
    BiLstm Class:
    Single-layer bidirectional LSTM returning the concatenated final states of both directions.
    """

    def __init__(self, d_in: int, h_dim: int, generator: Optional[torch.Generator] = None):
        """
        BiLstm class constructor.
        :param (int) d_in: input width
        :param (int) h_dim: hidden width per direction (output width is 2 * h_dim)
        :param (optional) generator: `torch.Generator` instance used for weight initialization
        """
        super(BiLstm, self).__init__()
        self.fwd = LstmCell(d_in, h_dim, generator=generator)
        self.bwd = LstmCell(d_in, h_dim, generator=generator)
        self.d_out = 2 * h_dim

    def forward(self, xs: Union[Tensor, Sequence[Tensor]]) -> Tensor:
        return bilstm_encode(self.fwd, self.bwd, xs)
