from typing import Optional

import torch
import torch.nn as nn
from torch import Tensor

from modules.ifaces import IFluxModule
from modules.partial.decoding import FluxHeads, FluxPrediction, forward_decode, window_drivers
from modules.partial.recurrent import LstmCell
from utils.autodiff import DTYPE, concat
from utils.config import TamRlConfig
from utils.errors import DataValidationError


class CtLstm(nn.Module, IFluxModule):
    """
    CtLstm Class:
    Plain LSTM baseline whose every input step is the driver vector concatenated with the static one-hot encoding of
    the site's labels (IGBP block, then Köppen block, in the order of the configured vocabularies).
    """

    ModelName = 'ctlstm'

    def __init__(self, config: TamRlConfig, generator: Optional[torch.Generator] = None,
                 log_level: Optional[str] = None):
        """
        CtLstm class constructor.
        :param (TamRlConfig) config: resolved model configuration (static_onehot=True, label vocabularies set)
        :param (optional) generator: `torch.Generator` instance used for weight initialization
        :param (optional) log_level: CommandLineLogger's log level
        """
        nn.Module.__init__(self)
        IFluxModule.__init__(self, config=config, log_level=log_level)
        if not config.static_onehot or not config.igbp_labels or not config.koppen_labels:
            raise DataValidationError('CtLstm needs static_onehot=True and both label vocabularies')
        self.igbp_labels = list(config.igbp_labels)
        self.koppen_labels = list(config.koppen_labels)
        self.decoder = LstmCell(config.input_dim, config.hidden_dim, generator=generator)
        self.heads = FluxHeads(config.hidden_dim, config.head_hidden, generator=generator)

    @property
    def static_dim(self) -> int:
        return len(self.igbp_labels) + len(self.koppen_labels)

    def static_onehot(self, igbp: str, koppen: str) -> Tensor:
        """
        :return: a [K_igbp + K_koppen] tensor with exactly one 1.0 in each block
        """
        return static_onehot(igbp, koppen, self.igbp_labels, self.koppen_labels)

    def inputs(self, window, onehot: Optional[Tensor] = None) -> Tensor:
        drivers = window_drivers(window)
        if onehot is None:
            onehot = self.static_onehot(window.igbp, window.koppen)
        return concat(drivers, onehot.unsqueeze(0).expand(drivers.shape[0], -1), axis=1)

    def forward(self, window, onehot: Optional[Tensor] = None) -> FluxPrediction:
        """
        Training-path decode (no clipping).
        :param window: a `TimeSeriesWindow` (or its driver matrix when :attr:`onehot` is given)
        :param (optional) onehot: static encoding; derived from the window's labels if None
        :return: an unclipped `FluxPrediction` instance
        """
        return forward_decode(self.decoder, self.heads, None, self.inputs(window, onehot))


def static_onehot(igbp: str, koppen: str, igbp_labels, koppen_labels) -> Tensor:
    """
    One-hot static features: IGBP block then Köppen block.
    :raises DataValidationError: for labels outside the vocabularies
    """
    if igbp not in igbp_labels:
        raise DataValidationError(f'unknown IGBP label "{igbp}" (known: {list(igbp_labels)})')
    if koppen not in koppen_labels:
        raise DataValidationError(f'unknown Köppen label "{koppen}" (known: {list(koppen_labels)})')
    onehot = torch.zeros(len(igbp_labels) + len(koppen_labels), dtype=DTYPE)
    onehot[list(igbp_labels).index(igbp)] = 1.0
    onehot[len(igbp_labels) + list(koppen_labels).index(koppen)] = 1.0
    return onehot


def predict_ct_lstm(model: CtLstm, window, onehot: Optional[Tensor] = None) -> FluxPrediction:
    """
    Inference with the CT-LSTM baseline: decode over drivers ++ static one-hot, then clipping of gpp and reco.
    """
    with torch.no_grad():
        return model(window, onehot).clip()
