from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Union

import torch
import torch.nn as nn
from torch import Tensor

from modules.partial.encoding import Mlp, mlp_forward
from modules.partial.normalization import ModulationParams, apply_film
from modules.partial.recurrent import LstmCell, lstm_forward
from utils.autodiff import clip_min, stack
from utils.errors import DimensionError


@dataclass(frozen=True)
class FluxPrediction:
    """
    FluxPrediction Class:
    Per-timestep (gpp, reco, nee) of one window, each a [T] tensor in gC m-2 d-1. Training-path predictions are raw;
    after `clip()` gpp and reco are non-negative and `gpp_clipped` / `reco_clipped` flag the steps that were raised
    to zero. nee is never clipped.
    """
    gpp: Tensor
    reco: Tensor
    nee: Tensor
    gpp_clipped: Optional[Tensor] = None
    reco_clipped: Optional[Tensor] = None

    HEADS = ('gpp', 'reco', 'nee')

    def __post_init__(self):
        lengths = {self.gpp.shape[0], self.reco.shape[0], self.nee.shape[0]}
        if len(lengths) != 1:
            raise DimensionError(f'FluxPrediction: heads disagree on length ({sorted(lengths)})')

    def __len__(self) -> int:
        return self.gpp.shape[0]

    @property
    def clipped(self) -> bool:
        return self.gpp_clipped is not None

    def head(self, name: str) -> Tensor:
        assert name in self.HEADS, f'unknown head "{name}"'
        return getattr(self, name)

    def clip(self) -> 'FluxPrediction':
        """
        Inference post-processing: clip gpp and reco at 0 (idempotent).
        :return: a new `FluxPrediction` instance
        """
        gpp_flags = self.gpp < 0
        reco_flags = self.reco < 0
        if self.clipped:
            gpp_flags = gpp_flags | self.gpp_clipped
            reco_flags = reco_flags | self.reco_clipped
        return FluxPrediction(gpp=clip_min(self.gpp, 0.0), reco=clip_min(self.reco, 0.0), nee=self.nee,
                              gpp_clipped=gpp_flags, reco_clipped=reco_flags)

    def detach(self) -> 'FluxPrediction':
        return replace(self, gpp=self.gpp.detach(), reco=self.reco.detach(), nee=self.nee.detach())

    @staticmethod
    def mean(predictions: Sequence['FluxPrediction']) -> 'FluxPrediction':
        """
        Elementwise mean of raw (unclipped) predictions of the same window.
        :param (Sequence) predictions: nonempty sequence of unclipped `FluxPrediction` objects
        :return: an unclipped `FluxPrediction` instance
        """
        assert len(predictions) > 0, 'nothing to average'
        assert not any(_p.clipped for _p in predictions), 'average raw predictions, then clip'
        return FluxPrediction(*[torch.stack([_p.head(_h) for _p in predictions]).mean(dim=0)
                                for _h in FluxPrediction.HEADS])


class FluxHeads(nn.Module):
    """
    FluxHeads Class:
    Three independent heads (gpp, reco, nee), each an `Mlp` of widths [H, *hidden, 1] (affine when hidden is empty).
    """

    def __init__(self, h_dim: int, hidden: Sequence[int] = (), generator: Optional[torch.Generator] = None):
        """
        FluxHeads class constructor.
        :param (int) h_dim: decoder hidden width H
        :param (Sequence) hidden: hidden widths of every head
        :param (optional) generator: `torch.Generator` instance used for weight initialization
        """
        super(FluxHeads, self).__init__()
        self.h_dim = h_dim
        self.gpp = Mlp([h_dim, *hidden, 1], generator=generator)
        self.reco = Mlp([h_dim, *hidden, 1], generator=generator)
        self.nee = Mlp([h_dim, *hidden, 1], generator=generator)

    def forward(self, hs: Sequence[Tensor]) -> FluxPrediction:
        return FluxPrediction(*[stack([mlp_forward(getattr(self, _name), _h)[0] for _h in hs])
                                for _name in FluxPrediction.HEADS])


def window_drivers(window_or_drivers) -> Tensor:
    return window_or_drivers if isinstance(window_or_drivers, Tensor) else window_or_drivers.drivers


def forward_decode(decoder: LstmCell, heads: FluxHeads, mod: Optional[ModulationParams],
                   window: Union[Tensor, object]) -> FluxPrediction:
    """
    Modulated decode of one window (training path, no clipping): every input step is FiLM-modulated with
    (γ1, β1) before the LSTM, every hidden state with (γ2, β2) before the flux heads.
    :param (LstmCell) decoder: decoder LSTM parameters
    :param (FluxHeads) heads: flux heads
    :param (optional) mod: modulation parameters; None stands for identity modulation
    :param window: a `TimeSeriesWindow` or its [T × D] driver matrix
    :return: an unclipped `FluxPrediction` instance
    """
    xs = window_drivers(window)
    if mod is None:
        mod = ModulationParams.identity(decoder.d_in, decoder.h_dim)
    if mod.d_in != decoder.d_in or mod.h_dim != decoder.h_dim:
        raise DimensionError(f'forward_decode: modulation widths (D={mod.d_in}, H={mod.h_dim}) do not match the '
                             f'decoder (D={decoder.d_in}, H={decoder.h_dim})')
    if xs.dim() != 2 or xs.shape[0] < 1:
        raise DimensionError(f'forward_decode: expected a nonempty [T × D] window, got {list(xs.shape)}')
    steps: List[Tensor] = [apply_film(_x, mod.gamma1, mod.beta1) for _x in xs.unbind(0)]
    hs = [apply_film(_h, mod.gamma2, mod.beta2) for _h in lstm_forward(decoder, steps).hs]
    return heads(hs)
