import os
import threading
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn.utils import clip_grad_norm_
from torch.optim import Adam

from utils.command_line_logger import CommandLineLogger
from utils.errors import DimensionError, NonFiniteError
from utils.pytorch import archive_key

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class OptimizerState:
    """
    OptimizerState Class:
    Adam state of one training stage (a thin, named view over `torch.optim.Adam`): per-parameter first and second
    moment buffers, the step counter and the hyper-parameters lr, β1=0.9, β2=0.999, ε=1e-8.
    """

    def __init__(self, named_parameters: Dict[str, nn.Parameter], lr: float, clip_norm: Optional[float] = None):
        """
        OptimizerState class constructor.
        :param (dict) named_parameters: archive key -> parameter (all updated by this state)
        :param (float) lr: learning rate
        :param (optional) clip_norm: global gradient-norm bound applied before every step (None to disable)
        """
        self.named_parameters = dict(named_parameters)
        self.lr = lr
        self.clip_norm = clip_norm
        self.optimizer = Adam(list(self.named_parameters.values()), lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)

    @property
    def step(self) -> int:
        steps = [int(self.optimizer.state[_p]['step']) for _p in self.named_parameters.values()
                 if 'step' in self.optimizer.state[_p]]
        return max(steps, default=0)

    def moments(self, name: str) -> Tuple[Optional[torch.Tensor], Optional[torch.Tensor]]:
        """
        :return: the (first, second) moment buffers of parameter :attr:`name` (None before the first step)
        """
        state = self.optimizer.state[self.named_parameters[name]]
        return state.get('exp_avg'), state.get('exp_avg_sq')

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=True)


def get_optimizer(model: nn.Module, lr: float, clip_norm: Optional[float] = None,
                  prefixes: Optional[Tuple[str, ...]] = None) -> OptimizerState:
    """
    Get an Adam `OptimizerState` for the trainable parameters of :attr:`model`.
    :param (nn.Module) model: the model
    :param (float) lr: learning rate
    :param (optional) clip_norm: global gradient-norm bound
    :param (optional) prefixes: only train parameters whose archive key starts with one of these (e.g. ("decoder/",
                                "heads/")); all parameters if None
    :return: an `OptimizerState` instance
    """
    named = {archive_key(_n): _p for _n, _p in model.named_parameters() if _p.requires_grad}
    if prefixes is not None:
        named = {_k: _p for _k, _p in named.items() if _k.startswith(tuple(prefixes))}
    return OptimizerState(named, lr=lr, clip_norm=clip_norm)


def adam_step(state: OptimizerState) -> float:
    """
    One Adam update (bias-corrected) of every parameter of :attr:`state` from its accumulated `.grad`, after clipping
    the global gradient norm at `state.clip_norm`. Parameters without a gradient are left untouched.
    :param (OptimizerState) state: optimizer state
    :return: the global gradient norm before clipping
    :raises NonFiniteError: if a gradient holds NaN/Inf (names the parameter; nothing is updated)
    :raises DimensionError: if a gradient's shape differs from its parameter's
    """
    grads = []
    for name, parameter in state.named_parameters.items():
        if parameter.grad is None:
            continue
        if parameter.grad.shape != parameter.shape:
            raise DimensionError(f'gradient of "{name}" has shape {tuple(parameter.grad.shape)}, '
                                 f'parameter has {tuple(parameter.shape)}')
        if not bool(torch.isfinite(parameter.grad).all()):
            raise NonFiniteError(f'non-finite gradient for parameter "{name}"')
        grads.append(parameter)
    if not grads:
        return 0.0
    max_norm = state.clip_norm if state.clip_norm is not None else float('inf')
    norm = float(clip_grad_norm_(grads, max_norm=max_norm))
    state.optimizer.step()
    return norm


#
# --------------
# Seeding
# -------------
#

STREAM_MODEL_INIT = 0
STREAM_PRETRAIN_ORDER = 1
STREAM_JOINT_INIT = 2
STREAM_JOINT_EPISODES = 3
STREAM_CT_INIT = 4
STREAM_CT_ORDER = 5


def _stream_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(stream)]).generate_state(1, dtype=np.uint64)[0])


def member_generator(seed: int, stream: int) -> torch.Generator:
    """
    :return: a `torch.Generator` owned by one (member seed, stream) pair, used for weight initialization
    """
    return torch.Generator().manual_seed(_stream_seed(seed, stream))


def member_rng(seed: int, stream: int) -> np.random.Generator:
    """
    :return: a numpy generator owned by one (member seed, stream) pair, used for data order and episode draws
    """
    return np.random.default_rng(_stream_seed(seed, stream))


#
# --------------
# Metrics log
# -------------
#

class TrainingLog:
    """
    TrainingLog Class:
    Per-epoch training records, one plain-text line each:
        stage=<stage> member=<k> epoch=<e> loss=<mean loss> wall=<seconds>
    appended to `filepath` (if given) and echoed to the logger at info level.
    """

    def __init__(self, filepath: Optional[str] = None, logger: Optional[CommandLineLogger] = None):
        self.filepath = filepath
        self.logger = logger or CommandLineLogger(name=self.__class__.__name__)
        self.records: List[dict] = []
        self._lock = threading.Lock()
        if filepath is not None:
            os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)

    @staticmethod
    def format(stage: str, member: int, epoch: int, loss: float, wall: float) -> str:
        return f'stage={stage} member={member} epoch={epoch} loss={loss:.8f} wall={wall:.3f}'

    def log(self, stage: str, member: int, epoch: int, loss: float, wall: float) -> str:
        line = self.format(stage, member, epoch, loss, wall)
        with self._lock:
            self.records.append({'stage': stage, 'member': member, 'epoch': epoch, 'loss': loss, 'wall': wall})
            self.logger.info(line)
            if self.filepath is not None:
                with open(self.filepath, 'a') as fp:
                    fp.write(line + '\n')
        return line

    def history(self, stage: str, member: Optional[int] = None) -> List[float]:
        return [_r['loss'] for _r in self.records
                if _r['stage'] == stage and (member is None or _r['member'] == member)]


class Stopwatch:
    def __init__(self):
        self.start = time.perf_counter()

    def lap(self) -> float:
        now = time.perf_counter()
        elapsed, self.start = now - self.start, now
        return elapsed
