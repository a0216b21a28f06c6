import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import yaml

from utils.errors import DataValidationError
from utils.losses import LossConfig

DEFAULT_CONFIG_PATH = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..', 'configs', 'default.yaml'))


class _Section:
    """
    Mixin of the configuration dataclasses: `DefaultConfiguration` mirrors the dataclass defaults (and the matching
    section of `configs/default.yaml`); `from_dict` fills missing keys from it and rejects unknown keys.
    """

    @classmethod
    def DefaultConfiguration(cls) -> dict:
        # noinspection PyArgumentList
        return asdict(cls())

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]], section: str = ''):
        values = dict(values or {})
        known = {_f.name for _f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise DataValidationError(f'unknown key(s) in config section "{section or cls.__name__}": {unknown}')
        try:
            return cls(**values)
        except TypeError as e:
            raise DataValidationError(f'invalid config section "{section or cls.__name__}": {e}') from e

    def to_dict(self) -> dict:
        # noinspection PyDataclass
        return asdict(self)


@dataclass
class DataConfig(_Section):
    """
    DataConfig Class:
    Windowing, splitting and synthetic-generation settings.
    """
    window: int = 45
    stride: int = 15
    holdout_fraction: float = 0.25
    stratify_by: Optional[str] = None
    synth_sites: int = 32
    synth_days: int = 400
    synth_noise_sd: float = 0.1

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise DataValidationError('data.window and data.stride must be >= 1')
        if not 0.0 < self.holdout_fraction < 1.0:
            raise DataValidationError(f'data.holdout_fraction must lie in (0, 1), got {self.holdout_fraction}')
        if self.stratify_by not in (None, 'igbp', 'koppen'):
            raise DataValidationError('data.stratify_by must be null, "igbp" or "koppen"')


@dataclass
class TamRlConfig(_Section):
    """
    TamRlConfig Class:
    Network widths of TAM-RL and its baselines. `driver_dim` (D) is taken from the data when left null. The
    generator emits D + D + H + H values (γ1 raw, β1, γ2 raw, β2). `modulation=False` yields the decoder-only
    TAMLSTM; `static_onehot=True` yields the CT-LSTM, whose input width grows by the two label vocabularies.
    The default `generator_init='near_identity'` starts FiLM close to, not exactly at, the identity (output layer
    scaled by `generator_init_scale`); use 'identity' for an exact match with the stage-1 decoder.
    """
    driver_dim: Optional[int] = None
    hidden_dim: int = 64
    encoder_hidden: int = 32
    embedding_dim: int = 32
    generator_hidden: List[int] = field(default_factory=lambda: [64])
    head_hidden: List[int] = field(default_factory=list)
    modulation: bool = True
    static_onehot: bool = False
    encoder_uses_targets: bool = True
    generator_init: str = 'near_identity'
    generator_init_scale: float = 1e-2
    igbp_labels: List[str] = field(default_factory=list)
    koppen_labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        widths = [self.hidden_dim, self.encoder_hidden, self.embedding_dim, *self.generator_hidden, *self.head_hidden]
        if self.driver_dim is not None:
            widths.append(self.driver_dim)
        if any(int(_w) < 1 for _w in widths):
            raise DataValidationError(f'model widths must be positive, got {widths}')
        if self.generator_init not in ('identity', 'near_identity', 'uniform'):
            raise DataValidationError(f'model.generator_init "{self.generator_init}" is not supported')
        if self.modulation and self.static_onehot:
            raise DataValidationError('model.modulation and model.static_onehot are mutually exclusive')

    @property
    def input_dim(self) -> int:
        assert self.driver_dim is not None, 'driver_dim has not been resolved'
        return self.driver_dim + (self.static_dim if self.static_onehot else 0)

    @property
    def static_dim(self) -> int:
        return len(self.igbp_labels) + len(self.koppen_labels)

    @property
    def generator_widths(self) -> List[int]:
        return [self.embedding_dim, *self.generator_hidden, 2 * self.input_dim + 2 * self.hidden_dim]

    def resolve(self, **overrides) -> 'TamRlConfig':
        """
        :return: a copy with the given fields replaced (e.g. driver_dim, label vocabularies, variant flags)
        """
        return TamRlConfig(**{**self.to_dict(), **overrides})


@dataclass
class TrainRunConfig(_Section):
    """
    TrainRunConfig Class:
    Optimization and ensemble settings. Member k uses `seeds[k]` if given, else `seed + k`.
    """
    seed: int = 0
    pretrain_epochs: int = 30
    joint_epochs: int = 30
    batch_windows: int = 16
    episodes_per_epoch: Optional[int] = None
    support_size: int = 3
    query_size: int = 4
    lr_pretrain: float = 1e-3
    lr_joint: float = 5e-4
    clip_norm: float = 5.0
    ensemble_size: int = 10
    seeds: Optional[List[int]] = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise DataValidationError('train.ensemble_size must be >= 1')
        if self.support_size < 1 or self.query_size < 1 or self.batch_windows < 1:
            raise DataValidationError('train.support_size, train.query_size and train.batch_windows must be >= 1')
        if self.pretrain_epochs < 0 or self.joint_epochs < 0 or self.checkpoint_every < 0:
            raise DataValidationError('epoch counts and train.checkpoint_every must be >= 0')
        if self.clip_norm <= 0 or self.lr_pretrain <= 0 or self.lr_joint <= 0:
            raise DataValidationError('learning rates and train.clip_norm must be positive')
        if self.seeds is not None and len(self.seeds) != self.ensemble_size:
            raise DataValidationError(f'train.seeds lists {len(self.seeds)} seeds for an ensemble of '
                                      f'{self.ensemble_size}')

    def member_seeds(self) -> List[int]:
        seeds = list(self.seeds) if self.seeds is not None else [self.seed + _k for _k in range(self.ensemble_size)]
        if len(set(seeds)) != len(seeds):
            raise DataValidationError(f'ensemble seeds must be distinct, got {seeds}')
        return seeds


@dataclass
class EvalConfig(_Section):
    """
    EvalConfig Class:
    Inference and evaluation settings.
    """
    support_size: int = 3
    support_selection: str = 'spaced'
    strict_qc: bool = False
    reference_model: str = 'ctlstm'
    pooled: bool = False
    clip_after_mean: bool = True

    def __post_init__(self):
        if self.support_size < 1:
            raise DataValidationError('eval.support_size must be >= 1')
        if self.support_selection not in ('spaced', 'first'):
            raise DataValidationError('eval.support_selection must be "spaced" or "first"')
        if self.reference_model not in ('tamrl', 'tamlstm', 'ctlstm'):
            raise DataValidationError('eval.reference_model must be one of "tamrl", "tamlstm", "ctlstm"')


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: TamRlConfig = field(default_factory=TamRlConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainRunConfig = field(default_factory=TrainRunConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    SECTIONS = {'data': DataConfig, 'model': TamRlConfig, 'train': TrainRunConfig, 'eval': EvalConfig}
    LOSS_KEYS = ('alpha', 'class_weight_mode', 'nee_convention', 'mse_reduction')

    def to_dict(self) -> dict:
        loss = {_k: getattr(self.loss, _k) for _k in self.LOSS_KEYS}
        return {'data': self.data.to_dict(), 'model': self.model.to_dict(), 'loss': loss,
                'train': self.train.to_dict(), 'eval': self.eval.to_dict()}

    @staticmethod
    def from_dict(values: Optional[dict]) -> 'RunConfig':
        values = dict(values or {})
        unknown = sorted(set(values) - {*RunConfig.SECTIONS, 'loss'})
        if unknown:
            raise DataValidationError(f'unknown config section(s): {unknown}')
        loss_values = dict(values.get('loss') or {})
        unknown = sorted(set(loss_values) - set(RunConfig.LOSS_KEYS))
        if unknown:
            raise DataValidationError(f'unknown key(s) in config section "loss": {unknown}')
        sections = {_name: _cls.from_dict(values.get(_name), section=_name)
                    for _name, _cls in RunConfig.SECTIONS.items()}
        return RunConfig(loss=LossConfig(**loss_values), **sections)


def load_config(filepath: Optional[str] = None) -> RunConfig:
    """
    Load a run configuration from a YAML file; missing keys take their default values.
    :param (optional) filepath: path to the YAML file (None for `configs/default.yaml`, or built-in defaults if that
                                file is not present)
    :return: a `RunConfig` instance
    """
    if filepath is None:
        if not os.path.exists(DEFAULT_CONFIG_PATH):
            return RunConfig()
        filepath = DEFAULT_CONFIG_PATH
    if not os.path.isfile(filepath):
        raise DataValidationError(f'config file not found: {filepath}')
    with open(filepath) as yaml_fp:
        try:
            values = yaml.safe_load(yaml_fp)
        except yaml.YAMLError as e:
            raise DataValidationError(f'config file {filepath} is not valid YAML: {e}') from e
    if values is not None and not isinstance(values, dict):
        raise DataValidationError(f'config file {filepath} must hold a mapping of sections')
    return RunConfig.from_dict(values)


def save_config(filepath: str, config: RunConfig) -> None:
    with open(filepath, 'w') as yaml_fp:
        yaml.safe_dump(config.to_dict(), yaml_fp, sort_keys=False)
