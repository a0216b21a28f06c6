"""
Two-stage TAM-RL training and ensembles.
    Stage 1 (pretrain): the decoder LSTM and flux heads alone (TAMLSTM), identity modulation, windows in mini-batches.
    Stage 2 (joint):    encoder + generator + decoder + heads, one episode per site per epoch (site order reshuffled
                        every epoch); the support set yields the modulation, the loss is taken on the query windows.
The CT-LSTM baseline is trained like stage 1 over drivers and the static one-hot labels. Every member of an ensemble
owns its generators (derived from its seed) so members are fully independent and reproducible.
"""
import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import torch
from torch import Tensor

from datasets.flux_sites import SiteTask, TimeSeriesWindow
from datasets.samplers import Episode, EpisodeSampler
from modules.ct_lstm import CtLstm
from modules.ifaces import IFluxModule
from modules.partial.decoding import FluxPrediction, forward_decode
from modules.tam_lstm import TamLstm
from modules.tam_rl import TamRl, predict_zero_shot_windows
from utils.autodiff import ComputationTape, backward, mean_all, stack
from utils.command_line_logger import CommandLineLogger
from utils.config import TamRlConfig, TrainRunConfig
from utils.dep_free import get_tqdm, progress_disabled
from utils.errors import DataValidationError
from utils.losses import LossConfig, window_loss
from utils.string import to_human_duration
from utils.train import STREAM_CT_INIT, STREAM_CT_ORDER, STREAM_JOINT_EPISODES, STREAM_JOINT_INIT, \
    STREAM_MODEL_INIT, STREAM_PRETRAIN_ORDER, OptimizerState, Stopwatch, TrainingLog, adam_step, get_optimizer, \
    member_generator, member_rng

MODEL_KINDS = ('tamlstm', 'ctlstm', 'tamrl')
_logger = CommandLineLogger(name='train_tamrl')


def _training_windows(sites: Sequence[SiteTask]) -> List[TimeSeriesWindow]:
    windows = [_w for _s in sites for _w in _s.windows]
    if not windows:
        raise DataValidationError('training needs a nonempty set of training windows')
    return windows


def _maybe_checkpoint(model: IFluxModule, checkpoint_dir: Optional[str], every: int, stage: str, epoch: int,
                      seed: int) -> None:
    if checkpoint_dir is None or every <= 0 or epoch % every != 0:
        return
    model.save(os.path.join(checkpoint_dir, f'{model.ModelName}_epoch{epoch:04d}.h5'), stage=stage, epoch=epoch,
               seed=seed)


def _step(state: OptimizerState, loss_fn: Callable[[], Tensor]) -> float:
    """
    One optimization step: zero the gradients, record and back-propagate the loss, then update.
    :return: the loss value
    """
    state.zero_grad()
    with ComputationTape():
        loss = loss_fn()
        backward(loss)
    adam_step(state)
    return float(loss.detach())


def fit_windows(stage: str, model: IFluxModule, decode: Callable[[TimeSeriesWindow], FluxPrediction],
                windows: Sequence[TimeSeriesWindow], state: OptimizerState, loss_cfg: LossConfig, epochs: int,
                batch_windows: int, rng: np.random.Generator, member: int = 0, seed: int = 0,
                log: Optional[TrainingLog] = None, checkpoint_dir: Optional[str] = None, checkpoint_every: int = 0,
                logger: Optional[CommandLineLogger] = None) -> List[float]:
    """
    Window-level training loop shared by stage 1 and the CT-LSTM baseline: every epoch visits all windows once, in
    shuffled mini-batches; the batch loss is the mean of the per-window composite losses.
    :return: the per-epoch mean loss history
    """
    logger = logger or _logger
    log = log or TrainingLog(logger=logger)
    history = []
    tqdm = get_tqdm()
    for epoch in range(1, epochs + 1):
        watch = Stopwatch()
        order = rng.permutation(len(windows))
        losses = []
        batches = [order[_i:_i + batch_windows] for _i in range(0, len(order), batch_windows)]
        for batch in tqdm(batches, desc=f'{stage}[{member}] {epoch}/{epochs}', leave=False,
                          disable=progress_disabled(logger.logger)):
            batch_windows_ = [windows[int(_i)] for _i in batch]
            losses.append(_step(state, lambda: mean_all(stack([window_loss(decode(_w), _w, loss_cfg)
                                                               for _w in batch_windows_]))))
        history.append(float(np.mean(losses)))
        log.log(stage, member, epoch, history[-1], watch.lap())
        _maybe_checkpoint(model, checkpoint_dir, checkpoint_every, stage, epoch, seed)
    return history


def pretrain_decoder(sites: Sequence[SiteTask], config: TamRlConfig, loss_cfg: LossConfig, train_cfg: TrainRunConfig,
                     seed: Optional[int] = None, member: int = 0, model: Optional[Union[TamLstm, TamRl]] = None,
                     log: Optional[TrainingLog] = None, checkpoint_dir: Optional[str] = None,
                     logger: Optional[CommandLineLogger] = None) -> Union[TamLstm, TamRl]:
    """
    Stage 1: train the decoder and flux heads with identity modulation, without any task-specific information.
    :param (Sequence) sites: training `SiteTask` objects
    :param (TamRlConfig) config: resolved model configuration
    :param (LossConfig) loss_cfg: loss configuration (class weights already fitted on the training sites)
    :param (TrainRunConfig) train_cfg: optimization settings (pretrain_epochs, batch_windows, lr_pretrain, clip_norm)
    :param (optional) seed: member seed (defaults to train_cfg.seed)
    :param (int) member: ensemble member index (for logging)
    :param (optional) model: train this model's decoder/ and heads/ in place (a `TamLstm` is created if None); any
                             other component is left untouched
    :param (optional) log: TrainingLog instance receiving one record per epoch
    :param (optional) checkpoint_dir: directory of intermediate checkpoints
    :param (optional) logger: CommandLineLogger instance
    :return: the trained model
    """
    seed = train_cfg.seed if seed is None else seed
    windows = _training_windows(sites)
    if model is None:
        model = TamLstm(config.resolve(modulation=False, static_onehot=False),
                        generator=member_generator(seed, STREAM_MODEL_INIT))
    state = get_optimizer(model, lr=train_cfg.lr_pretrain, clip_norm=train_cfg.clip_norm,
                          prefixes=('decoder/', 'heads/'))
    fit_windows('pretrain', model, lambda _w: forward_decode(model.decoder, model.heads, None, _w), windows, state,
                loss_cfg, epochs=train_cfg.pretrain_epochs, batch_windows=train_cfg.batch_windows,
                rng=member_rng(seed, STREAM_PRETRAIN_ORDER), member=member, seed=seed, log=log,
                checkpoint_dir=checkpoint_dir, checkpoint_every=train_cfg.checkpoint_every, logger=logger)
    return model


def pretrain_ct_lstm(sites: Sequence[SiteTask], config: TamRlConfig, loss_cfg: LossConfig, train_cfg: TrainRunConfig,
                     seed: Optional[int] = None, member: int = 0, log: Optional[TrainingLog] = None,
                     checkpoint_dir: Optional[str] = None, logger: Optional[CommandLineLogger] = None) -> CtLstm:
    """
    Train the CT-LSTM baseline (drivers plus static one-hot labels) with the stage-1 loop and settings.
    :param (TamRlConfig) config: resolved model configuration holding both label vocabularies
    :return: the trained `CtLstm` model
    """
    seed = train_cfg.seed if seed is None else seed
    windows = _training_windows(sites)
    model = CtLstm(config.resolve(modulation=False, static_onehot=True),
                   generator=member_generator(seed, STREAM_CT_INIT))
    onehots = {}

    def _decode(w: TimeSeriesWindow) -> FluxPrediction:
        if w.labels not in onehots:
            onehots[w.labels] = model.static_onehot(*w.labels)
        return model(w, onehots[w.labels])

    state = get_optimizer(model, lr=train_cfg.lr_pretrain, clip_norm=train_cfg.clip_norm)
    fit_windows('ctlstm', model, _decode, windows, state, loss_cfg, epochs=train_cfg.pretrain_epochs,
                batch_windows=train_cfg.batch_windows, rng=member_rng(seed, STREAM_CT_ORDER), member=member, seed=seed,
                log=log, checkpoint_dir=checkpoint_dir, checkpoint_every=train_cfg.checkpoint_every, logger=logger)
    return model


def episode_loss(model: TamRl, episode: Episode, loss_cfg: LossConfig) -> Tensor:
    """
    :return: mean composite loss over the query windows, decoded with the modulation of the support set
    """
    predictions = model(episode.support, episode.query)
    return mean_all(stack([window_loss(_p, _w, loss_cfg) for _p, _w in zip(predictions, episode.query)]))


def joint_train(sites: Sequence[SiteTask], init: TamLstm, config: Optional[TamRlConfig], loss_cfg: LossConfig,
                train_cfg: TrainRunConfig, seed: Optional[int] = None, member: int = 0,
                log: Optional[TrainingLog] = None, checkpoint_dir: Optional[str] = None,
                logger: Optional[CommandLineLogger] = None) -> TamRl:
    """
    Stage 2: episodic joint training of encoder, generator, decoder and heads, starting from a stage-1 model.
    :param (Sequence) sites: training `SiteTask` objects (sites with too few windows are skipped)
    :param (TamLstm) init: the stage-1 model (decoder and heads are copied)
    :param (optional) config: model configuration (defaults to the stage-1 one with modulation enabled)
    :param (LossConfig) loss_cfg: loss configuration
    :param (TrainRunConfig) train_cfg: settings (joint_epochs, episodes_per_epoch, support_size, query_size, lr_joint,
                                       clip_norm)
    :return: the trained `TamRl` model
    :raises DimensionError: if :attr:`init` does not match the configured widths
    """
    logger = logger or _logger
    seed = train_cfg.seed if seed is None else seed
    if config is not None:
        config = config.resolve(modulation=True, static_onehot=False)
    model = TamRl.from_pretrained(init, config=config, generator=member_generator(seed, STREAM_JOINT_INIT))
    log = log or TrainingLog(logger=logger)
    rng = member_rng(seed, STREAM_JOINT_EPISODES)
    sampler = EpisodeSampler(sites, support_size=train_cfg.support_size, rng=rng, query_size=train_cfg.query_size,
                             logger=logger)
    n_episodes = train_cfg.episodes_per_epoch or len(sampler)
    state = get_optimizer(model, lr=train_cfg.lr_joint, clip_norm=train_cfg.clip_norm)
    tqdm = get_tqdm()
    for epoch in range(1, train_cfg.joint_epochs + 1):
        watch = Stopwatch()
        episodes = itertools.islice(itertools.chain.from_iterable(iter(sampler) for _ in itertools.count()),
                                    n_episodes)
        losses = []
        for episode in tqdm(episodes, total=n_episodes, desc=f'joint[{member}] {epoch}/{train_cfg.joint_epochs}',
                            leave=False, disable=progress_disabled(logger.logger)):
            losses.append(_step(state, lambda: episode_loss(model, episode, loss_cfg)))
            logger.debug(f'[joint] member={member} epoch={epoch} site={episode.site_id} loss={losses[-1]:.6f}')
        log.log('joint', member, epoch, float(np.mean(losses)), watch.lap())
        _maybe_checkpoint(model, checkpoint_dir, train_cfg.checkpoint_every, 'joint', epoch, seed)
    return model


#
# --------------
# Ensembles
# -------------
#

@dataclass
class EnsembleMember:
    seed: Optional[int] = None
    tamlstm: Optional[TamLstm] = None
    ctlstm: Optional[CtLstm] = None
    tamrl: Optional[TamRl] = None

    def model(self, kind: str) -> Optional[IFluxModule]:
        assert kind in MODEL_KINDS, f'unknown model kind "{kind}"'
        return getattr(self, kind)


def member_dir(root: str, member: int) -> str:
    return os.path.join(root, f'member_{member:02d}')


def train_member(sites: Sequence[SiteTask], config: TamRlConfig, loss_cfg: LossConfig, train_cfg: TrainRunConfig,
                 seed: int, member: int = 0, kinds: Sequence[str] = MODEL_KINDS, out_dir: Optional[str] = None,
                 log: Optional[TrainingLog] = None, logger: Optional[CommandLineLogger] = None) -> EnsembleMember:
    """
    Train every requested model of one ensemble member. TAM-RL needs TAMLSTM (its stage 1). When :attr:`out_dir` is
    given, final models are archived as <out_dir>/member_XX/<kind>.h5.
    """
    logger = logger or _logger
    if 'tamrl' in kinds and 'tamlstm' not in kinds:
        raise DataValidationError('training TAM-RL requires its TAMLSTM stage')
    folder = member_dir(out_dir, member) if out_dir is not None else None
    watch = Stopwatch()
    result = EnsembleMember(seed=seed)
    if 'tamlstm' in kinds:
        result.tamlstm = pretrain_decoder(sites, config, loss_cfg, train_cfg, seed=seed, member=member, log=log,
                                          checkpoint_dir=folder, logger=logger)
    if 'ctlstm' in kinds:
        result.ctlstm = pretrain_ct_lstm(sites, config, loss_cfg, train_cfg, seed=seed, member=member, log=log,
                                         checkpoint_dir=folder, logger=logger)
    if 'tamrl' in kinds:
        result.tamrl = joint_train(sites, result.tamlstm, config, loss_cfg, train_cfg, seed=seed, member=member,
                                   log=log, checkpoint_dir=folder, logger=logger)
    if folder is not None:
        for kind in kinds:
            result.model(kind).save(os.path.join(folder, f'{kind}.h5'), seed=seed, member=member)
    logger.info(f'member {member} (seed={seed}) trained {", ".join(kinds)} in {to_human_duration(watch.lap())}')
    return result


def train_ensemble(sites: Sequence[SiteTask], config: TamRlConfig, loss_cfg: LossConfig, train_cfg: TrainRunConfig,
                   kinds: Sequence[str] = MODEL_KINDS, out_dir: Optional[str] = None,
                   log: Optional[TrainingLog] = None, workers: int = 1,
                   logger: Optional[CommandLineLogger] = None) -> List[EnsembleMember]:
    """
    Train `train_cfg.ensemble_size` independent members (both stages per member, seeds from
    `train_cfg.member_seeds()`).
    :param (int) workers: members trained concurrently (each owns its parameters, optimizer and generators)
    :return: list of `EnsembleMember` objects in member order
    :raises DataValidationError: on duplicate seeds
    """
    seeds = train_cfg.member_seeds()
    log = log or TrainingLog(logger=logger)

    def _train(k: int) -> EnsembleMember:
        return train_member(sites, config, loss_cfg, train_cfg, seed=seeds[k], member=k, kinds=kinds,
                            out_dir=out_dir, log=log, logger=logger)

    if workers <= 1:
        return [_train(_k) for _k in range(len(seeds))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train, range(len(seeds))))


def load_member(root: str, member: int, kinds: Sequence[str] = MODEL_KINDS) -> EnsembleMember:
    """
    Load the archived models of one member from <root>/member_XX/<kind>.h5.
    """
    classes = {'tamlstm': TamLstm, 'ctlstm': CtLstm, 'tamrl': TamRl}
    result = EnsembleMember()
    for kind in kinds:
        setattr(result, kind, classes[kind].load(os.path.join(member_dir(root, member), f'{kind}.h5')))
    return result


class FluxEnsemble:
    """
    FluxEnsemble Class:
    Mean ensemble of trained models of one kind. Member predictions are averaged elementwise on raw outputs, then gpp
    and reco are clipped at 0 (or, with `clip_after_mean=False`, members are clipped before averaging).
    """

    def __init__(self, models: Sequence[IFluxModule], clip_after_mean: bool = True):
        if not models:
            raise DataValidationError('FluxEnsemble needs at least one member')
        names = {_m.ModelName for _m in models}
        if len(names) != 1:
            raise DataValidationError(f'FluxEnsemble members must share one model kind, got {sorted(names)}')
        self.models = list(models)
        self.kind = names.pop()
        self.clip_after_mean = clip_after_mean

    def __len__(self) -> int:
        return len(self.models)

    def _raw(self, model: IFluxModule, site: SiteTask, support: Sequence[TimeSeriesWindow],
             windows: Sequence[TimeSeriesWindow]) -> List[FluxPrediction]:
        if isinstance(model, TamRl):
            return predict_zero_shot_windows(model, site, support, windows, clip=False)
        with torch.no_grad():
            return [model(_w) for _w in windows]

    def predict(self, site: SiteTask, support: Sequence[TimeSeriesWindow],
                windows: Sequence[TimeSeriesWindow]) -> List[FluxPrediction]:
        """
        :param (SiteTask) site: the (held-out) site
        :param (Sequence) support: support windows (only used by TAM-RL members)
        :param (Sequence) windows: windows to predict
        :return: one clipped `FluxPrediction` per window
        """
        per_member = [self._raw(_m, site, support, windows) for _m in self.models]
        results = []
        for i in range(len(windows)):
            members = [_preds[i] for _preds in per_member]
            if not self.clip_after_mean:
                clipped = [_p.clip() for _p in members]
                members = [FluxPrediction(_p.gpp, _p.reco, _p.nee) for _p in clipped]
            results.append(FluxPrediction.mean(members).clip())
        return results


def ensembles_of(members: Sequence[EnsembleMember], clip_after_mean: bool = True) -> Dict[str, FluxEnsemble]:
    """
    :return: model kind -> `FluxEnsemble` over the members holding that kind
    """
    return {_kind: FluxEnsemble([_m.model(_kind) for _m in members], clip_after_mean=clip_after_mean)
            for _kind in MODEL_KINDS if members and all(_m.model(_kind) is not None for _m in members)}
