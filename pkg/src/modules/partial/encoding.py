import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
from torch import Tensor

from modules.partial.recurrent import BiLstm
from utils.autodiff import DTYPE, add, concat, matmul, mean_all, stack, tanh, zeros
from utils.errors import DataValidationError, DimensionError


class Mlp(nn.Module):
    """
    Mlp Class:
    Multi-Layer Perceptron of alternating affine + tanh layers; the output layer is affine only. Layer k maps
    widths[k] to widths[k+1] through `weights[k]` ([widths[k+1] × widths[k]]) and `biases[k]` ([widths[k+1]]).
    """

    def __init__(self, widths: Sequence[int], generator: Optional[torch.Generator] = None):
        """
        Mlp class constructor.
        :param (Sequence) widths: layer widths, input first, output last (at least 2 entries)
        :param (optional) generator: `torch.Generator` instance used for weight initialization
        """
        super(Mlp, self).__init__()
        widths = [int(_w) for _w in widths]
        assert len(widths) >= 2 and all(_w >= 1 for _w in widths), f'invalid MLP widths: {widths}'
        self.widths = widths
        self.weights = nn.ParameterList([nn.Parameter(zeros(_o, _i)) for _i, _o in zip(widths[:-1], widths[1:])])
        self.biases = nn.ParameterList([nn.Parameter(zeros(_o)) for _o in widths[1:]])
        self.reset_parameters(generator=generator)

    def reset_parameters(self, generator: Optional[torch.Generator] = None) -> None:
        with torch.no_grad():
            for w, b in zip(self.weights, self.biases):
                bound = 1.0 / math.sqrt(w.shape[1])
                w.uniform_(-bound, bound, generator=generator)
                b.uniform_(-bound, bound, generator=generator)

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_out(self) -> int:
        return self.widths[-1]

    def forward(self, z: Tensor) -> Tensor:
        return mlp_forward(self, z)


def mlp_forward(p: Mlp, z: Tensor) -> Tensor:
    """
    :param (Mlp) p: MLP parameters
    :param (Tensor) z: input vector of shape [widths[0]]
    :return: output vector of shape [widths[-1]]
    """
    if tuple(z.shape) != (p.d_in,):
        raise DimensionError(f'mlp_forward: expected input [{p.d_in}], got {list(z.shape)}')
    n_layers = len(p.weights)
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = add(matmul(w, z), b)
        if k < n_layers - 1:
            z = tanh(z)
    return z


@dataclass(frozen=True)
class TaskEmbedding:
    z: Tensor
    source_site: str
    support_count: int

    def __post_init__(self):
        assert self.support_count >= 1, 'a task embedding needs at least one support window'


def encoder_inputs(window, use_targets: bool = True) -> Tensor:
    """
    Build the per-step encoder input of a support window: its (normalized) drivers, optionally followed by the
    observed (gpp, nee) targets and the step validity flag. Missing targets enter as 0 with flag 0.
    :param window: a `datasets.flux_sites.TimeSeriesWindow` instance
    :param (bool) use_targets: set to False to feed drivers only
    :return: a tensor of shape [T × D] or [T × (D + 3)]
    """
    if not use_targets:
        return window.drivers
    valid = window.mask.to(DTYPE).unsqueeze(1)
    return concat(concat(window.drivers, window.targets, axis=1), valid, axis=1)


class TaskEncoder(nn.Module):
    """
    TaskEncoder Class:
    BiLSTM over each support window followed by an affine projection of the mean window encoding to the embedding
    width E.
    """

    def __init__(self, d_in: int, h_dim: int, e_dim: int, use_targets: bool = True,
                 generator: Optional[torch.Generator] = None):
        """
        TaskEncoder class constructor.
        :param (int) d_in: number of drivers D
        :param (int) h_dim: BiLSTM hidden width per direction
        :param (int) e_dim: embedding width E
        :param (bool) use_targets: whether support windows also feed their observed targets (see `encoder_inputs`)
        :param (optional) generator: `torch.Generator` instance used for weight initialization
        """
        super(TaskEncoder, self).__init__()
        self.use_targets = use_targets
        self.d_in = d_in
        self.e_dim = e_dim
        self.bilstm = BiLstm(d_in + 3 if use_targets else d_in, h_dim, generator=generator)
        self.projection_weights = nn.Parameter(zeros(e_dim, self.bilstm.d_out))
        self.projection_bias = nn.Parameter(zeros(e_dim))
        bound = 1.0 / math.sqrt(self.bilstm.d_out)
        with torch.no_grad():
            self.projection_weights.uniform_(-bound, bound, generator=generator)
            self.projection_bias.uniform_(-bound, bound, generator=generator)

    def forward(self, support: Sequence) -> TaskEmbedding:
        return encode_task(self, support)


def encode_task(encoder: TaskEncoder, support: Sequence) -> TaskEmbedding:
    """
    Compute the task embedding of a support set: each window goes through the BiLSTM, window encodings are averaged
    elementwise and the mean is projected to the embedding width.
    :param (TaskEncoder) encoder: encoder parameters
    :param (Sequence) support: nonempty sequence of `TimeSeriesWindow` objects, all of the same site
    :return: a `TaskEmbedding` instance
    """
    if len(support) == 0:
        raise DataValidationError('encode_task: empty support set')
    sites = {_w.site_id for _w in support}
    if len(sites) > 1:
        raise DataValidationError(f'encode_task: support mixes sites {sorted(sites)}')
    encodings = [encoder.bilstm(encoder_inputs(_w, encoder.use_targets)) for _w in support]
    pooled = mean_all(stack(encodings), axis=0)
    z = add(matmul(encoder.projection_weights, pooled), encoder.projection_bias)
    return TaskEmbedding(z=z, source_site=sites.pop(), support_count=len(support))
