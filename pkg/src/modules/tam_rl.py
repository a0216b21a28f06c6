from typing import List, Optional, Sequence

import torch
import torch.nn as nn

from modules.ifaces import IFluxModule
from modules.partial.decoding import FluxHeads, FluxPrediction, forward_decode
from modules.partial.encoding import TaskEmbedding, TaskEncoder, encode_task
from modules.partial.normalization import ModulationGenerator, ModulationParams, generate_modulation
from modules.partial.recurrent import LstmCell
from modules.tam_lstm import TamLstm
from utils.checkpoints import load_module_state
from utils.config import TamRlConfig
from utils.errors import DataValidationError
from utils.pytorch import named_tensors


class TamRl(nn.Module, IFluxModule):
    """
    TamRl Class:
    Task-aware modulated regression: a BiLSTM task encoder summarizes a site's support windows into an embedding z,
    an MLP generator turns z into FiLM parameters (γ1, β1, γ2, β2), and the LSTM decoder (with its three flux heads)
    runs modulated at its input and at every hidden state. Archive namespaces: encoder/, generator/, decoder/, heads/.
    """

    ModelName = 'tamrl'

    def __init__(self, config: TamRlConfig, generator: Optional[torch.Generator] = None,
                 log_level: Optional[str] = None):
        """
        TamRl class constructor.
        :param (TamRlConfig) config: resolved model configuration (modulation=True)
        :param (optional) generator: `torch.Generator` instance used for weight initialization
        :param (optional) log_level: CommandLineLogger's log level
        """
        nn.Module.__init__(self)
        IFluxModule.__init__(self, config=config, log_level=log_level)
        if not config.modulation:
            raise DataValidationError('TamRl needs model.modulation=True')
        d, h = config.driver_dim, config.hidden_dim
        self.encoder = TaskEncoder(d, config.encoder_hidden, config.embedding_dim,
                                   use_targets=config.encoder_uses_targets, generator=generator)
        self.generator = ModulationGenerator(config.embedding_dim, d, h, hidden=config.generator_hidden,
                                             init=config.generator_init, init_scale=config.generator_init_scale,
                                             generator=generator)
        self.decoder = LstmCell(d, h, generator=generator)
        self.heads = FluxHeads(h, config.head_hidden, generator=generator)

    @classmethod
    def from_pretrained(cls, pretrained: TamLstm, config: Optional[TamRlConfig] = None,
                        generator: Optional[torch.Generator] = None, log_level: Optional[str] = None) -> 'TamRl':
        """
        Build a TAM-RL model whose decoder and heads start from a trained TAMLSTM; encoder and generator are freshly
        initialized.
        :param (TamLstm) pretrained: the stage-one model
        :param (optional) config: model configuration (defaults to the pretrained one with modulation enabled)
        :param (optional) generator: `torch.Generator` instance used for encoder/generator initialization
        :param (optional) log_level: CommandLineLogger's log level
        :return: a new `TamRl` instance
        """
        config = config or pretrained.config.resolve(modulation=True, static_onehot=False)
        model = cls(config, generator=generator, log_level=log_level)
        tensors = named_tensors(pretrained)
        load_module_state(model.decoder, tensors, prefix='decoder/')
        load_module_state(model.heads, tensors, prefix='heads/')
        return model

    def embed(self, support: Sequence) -> TaskEmbedding:
        return encode_task(self.encoder, support)

    def modulation(self, support: Sequence) -> ModulationParams:
        return generate_modulation(self.generator, self.embed(support))

    def decode(self, mod: Optional[ModulationParams], window) -> FluxPrediction:
        return forward_decode(self.decoder, self.heads, mod, window)

    def forward(self, support: Sequence, windows: Sequence) -> List[FluxPrediction]:
        """
        Training-path forward of one episode: one modulation from the support set, shared by every query window.
        :param (Sequence) support: support windows of one site
        :param (Sequence) windows: query windows of the same site
        :return: a list of unclipped `FluxPrediction` objects, one per query window
        """
        mod = self.modulation(support)
        return [self.decode(mod, _w) for _w in windows]


def _check_same_site(site_id: str, support: Sequence, windows: Sequence) -> None:
    if len(support) == 0:
        raise DataValidationError('zero-shot prediction needs a nonempty support set')
    foreign = sorted({_w.site_id for _w in [*support, *windows]} - {site_id})
    if foreign:
        raise DataValidationError(f'support/windows of site "{site_id}" include windows of {foreign}')


def predict_zero_shot(model: TamRl, site, support: Sequence, window) -> FluxPrediction:
    """
    Zero-shot inference for one window of an unseen site: encode the support set, generate the modulation, decode and
    clip gpp and reco at 0. No gradient is recorded and no parameter changes.
    :param (TamRl) model: trained model
    :param site: the `SiteTask` the window belongs to
    :param (Sequence) support: support windows of the same site
    :param window: the `TimeSeriesWindow` to predict
    :return: a clipped `FluxPrediction` instance
    """
    return predict_zero_shot_windows(model, site, support, [window])[0]


def predict_zero_shot_windows(model: TamRl, site, support: Sequence, windows: Sequence,
                              clip: bool = True) -> List[FluxPrediction]:
    """
    Same as `predict_zero_shot` for many windows of one site, sharing a single modulation.
    :param (bool) clip: set to False to get raw predictions (e.g. to average ensemble members before clipping)
    """
    _check_same_site(site.site_id, support, windows)
    with torch.no_grad():
        mod = model.modulation(support)
        predictions = [model.decode(mod, _w) for _w in windows]
    return [_p.clip() for _p in predictions] if clip else predictions
