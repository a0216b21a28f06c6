from typing import Optional

import torch
import torch.nn as nn

from modules.ifaces import IFluxModule
from modules.partial.decoding import FluxHeads, FluxPrediction, forward_decode
from modules.partial.recurrent import LstmCell
from utils.config import TamRlConfig


class TamLstm(nn.Module, IFluxModule):
    """
    TamLstm Class:
    The decoder-only component of TAM-RL: an LSTM over the (unmodulated) drivers followed by the three flux heads.
    Trained alone in the first stage, it provides the decoder and heads TAM-RL starts its joint training from.
    """

    ModelName = 'tamlstm'

    def __init__(self, config: TamRlConfig, generator: Optional[torch.Generator] = None,
                 log_level: Optional[str] = None):
        """
        TamLstm class constructor.
        :param (TamRlConfig) config: resolved model configuration
        :param (optional) generator: `torch.Generator` instance used for weight initialization
        :param (optional) log_level: CommandLineLogger's log level
        """
        nn.Module.__init__(self)
        IFluxModule.__init__(self, config=config, log_level=log_level)
        self.decoder = LstmCell(config.driver_dim, config.hidden_dim, generator=generator)
        self.heads = FluxHeads(config.hidden_dim, config.head_hidden, generator=generator)

    def forward(self, window) -> FluxPrediction:
        """
        Training-path decode (identity modulation, no clipping).
        :param window: a `TimeSeriesWindow` or its [T × D] driver matrix
        :return: an unclipped `FluxPrediction` instance
        """
        return forward_decode(self.decoder, self.heads, None, window)


def predict_tamlstm(model: TamLstm, window) -> FluxPrediction:
    """
    Inference with the decoder-only model: identity-modulated decode, then clipping of gpp and reco.
    """
    with torch.no_grad():
        return model(window).clip()
