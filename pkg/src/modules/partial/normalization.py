from dataclasses import dataclass
from typing import Optional, Sequence, Union

import torch
import torch.nn as nn
from torch import Tensor

from modules.partial.encoding import Mlp, TaskEmbedding, mlp_forward
from utils.autodiff import DTYPE, add, mul
from utils.errors import DimensionError


def apply_film(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """
    Feature-wise linear modulation: gamma * x + beta (elementwise).
    :param (Tensor) x: features
    :param (Tensor) gamma: scale, same shape as :attr:`x`
    :param (Tensor) beta: shift, same shape as :attr:`x`
    :return: the modulated features
    """
    if tuple(x.shape) != tuple(gamma.shape) or tuple(x.shape) != tuple(beta.shape):
        raise DimensionError(f'apply_film: shapes of x {list(x.shape)}, gamma {list(gamma.shape)} and beta '
                             f'{list(beta.shape)} differ')
    return add(mul(gamma, x), beta)


@dataclass(frozen=True)
class ModulationParams:
    """
    ModulationParams Class:
    FiLM parameters of the decoder: (gamma1, beta1) act on every input step [D], (gamma2, beta2) on every hidden
    state [H] that feeds the flux heads.
    """
    gamma1: Tensor
    beta1: Tensor
    gamma2: Tensor
    beta2: Tensor

    @property
    def d_in(self) -> int:
        return self.gamma1.shape[0]

    @property
    def h_dim(self) -> int:
        return self.gamma2.shape[0]

    @staticmethod
    def identity(d_in: int, h_dim: int) -> 'ModulationParams':
        return ModulationParams(gamma1=torch.ones(d_in, dtype=DTYPE), beta1=torch.zeros(d_in, dtype=DTYPE),
                                gamma2=torch.ones(h_dim, dtype=DTYPE), beta2=torch.zeros(h_dim, dtype=DTYPE))

    def is_identity(self) -> bool:
        return bool((self.gamma1 == 1).all() and (self.beta1 == 0).all() and (self.gamma2 == 1).all() and
                    (self.beta2 == 0).all())


class ModulationGenerator(nn.Module):
    """
    ModulationGenerator Class:
    MLP mapping a task embedding to the raw modulation vector [γ1 raw (D) | β1 (D) | γ2 raw (H) | β2 (H)].
    Supported initializations of the output layer:
        - 'identity': zero weights and biases, so the generator starts at identity FiLM
        - 'near_identity': default uniform init scaled by `init_scale`, so FiLM starts close to the identity while
          gradients reach the encoder from the very first step
        - 'uniform': default uniform init
    """

    INIT_MODES = ('identity', 'near_identity', 'uniform')

    def __init__(self, e_dim: int, d_in: int, h_dim: int, hidden: Sequence[int] = (64,), init: str = 'near_identity',
                 init_scale: float = 1e-2, generator: Optional[torch.Generator] = None):
        """
        ModulationGenerator class constructor.
        :param (int) e_dim: embedding width E
        :param (int) d_in: decoder input width D
        :param (int) h_dim: decoder hidden width H
        :param (Sequence) hidden: hidden layer widths of the MLP
        :param (str) init: one of `ModulationGenerator.INIT_MODES`
        :param (float) init_scale: output-layer scale of the 'near_identity' init
        :param (optional) generator: `torch.Generator` instance used for weight initialization
        """
        super(ModulationGenerator, self).__init__()
        assert init in self.INIT_MODES, f'init must be one of {self.INIT_MODES}'
        self.d_in = d_in
        self.h_dim = h_dim
        self.mlp = Mlp([e_dim, *hidden, 2 * d_in + 2 * h_dim], generator=generator)
        with torch.no_grad():
            if init == 'identity':
                self.mlp.weights[-1].zero_()
                self.mlp.biases[-1].zero_()
            elif init == 'near_identity':
                self.mlp.weights[-1].mul_(init_scale)
                self.mlp.biases[-1].mul_(init_scale)

    @property
    def d_out(self) -> int:
        return self.mlp.d_out

    def forward(self, z: Union[TaskEmbedding, Tensor]) -> ModulationParams:
        return generate_modulation(self, z)


def generate_modulation(generator: ModulationGenerator, z: Union[TaskEmbedding, Tensor]) -> ModulationParams:
    """
    Run the generator and split its output (order-preserving) into (γ1, β1, γ2, β2); scales are 1 + raw so that a
    zero generator output yields identity modulation.
    :param (ModulationGenerator) generator: generator parameters
    :param z: a `TaskEmbedding` instance or its embedding vector
    :return: a `ModulationParams` instance
    """
    z = z.z if isinstance(z, TaskEmbedding) else z
    raw = mlp_forward(generator.mlp, z)
    d, h = generator.d_in, generator.h_dim
    return ModulationParams(
        gamma1=add(1.0, raw[0:d]),
        beta1=raw[d:2 * d],
        gamma2=add(1.0, raw[2 * d:2 * d + h]),
        beta2=raw[2 * d + h:],
    )
