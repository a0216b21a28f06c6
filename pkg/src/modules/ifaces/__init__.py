import abc
from typing import Optional, Type, TypeVar

import torch

from utils.checkpoints import load_archive, load_module_state, save_module
from utils.command_line_logger import CommandLineLogger
from utils.config import TamRlConfig
from utils.errors import DataValidationError
from utils.ifaces import Configurable
from utils.pytorch import get_total_params, parameters_checksum
from utils.string import to_human_readable

M = TypeVar('M', bound='IFluxModule')


class IFluxModule(Configurable, metaclass=abc.ABCMeta):
    """
    IFluxModule Class/Interface:
    Common interface of the flux models (`TamLstm`, `CtLstm`, `TamRl`): a `TamRlConfig`, a named logger, parameter
    counting and checksums, and checkpoint archiving. Implementing classes also derive from `torch.nn.Module` and
    must call `IFluxModule.__init__` after `nn.Module.__init__`.
    """

    ModelName: str = None

    def __init__(self, config: TamRlConfig, log_level: Optional[str] = None):
        """
        IFluxModule class constructor.
        :param (TamRlConfig) config: resolved model configuration (driver_dim set)
        :param (optional) log_level: CommandLineLogger's log level
        """
        if config.driver_dim is None:
            raise DataValidationError(f'{self.__class__.__name__}: model.driver_dim has not been resolved')
        self._configuration = config
        self._nparams = None
        self.logger = CommandLineLogger(log_level=log_level, name=self.__class__.__name__)

    @property
    def config(self) -> TamRlConfig:
        return self._configuration

    @property
    def nparams(self) -> int:
        """
        Get the total numbers of parameters of this model.
        :return: an `int` object
        """
        if not self._nparams:
            # noinspection PyTypeChecker
            self._nparams = get_total_params(self)
        return self._nparams

    @property
    def nparams_hr(self) -> str:
        return to_human_readable(self.nparams)

    def checksum(self, prefix: Optional[str] = None) -> str:
        """
        :param (optional) prefix: restrict to a component namespace (e.g. 'encoder/')
        :return: SHA-256 digest of the parameters (see `utils.pytorch.parameters_checksum`)
        """
        # noinspection PyTypeChecker
        return parameters_checksum(self, prefix=prefix)

    #
    # --------------
    # Configurable
    # -------------
    #

    def configuration(self) -> dict:
        return {**self._configuration.to_dict(), 'nparams': self.nparams, 'nparams_hr': self.nparams_hr}

    def load_configuration(self, configuration: dict) -> None:
        config = TamRlConfig.from_dict(configuration, section='model')
        if config != self._configuration:
            raise DataValidationError(f'{self.__class__.__name__}: configuration cannot change after construction')

    #
    # --------------
    # Checkpoints
    # -------------
    #

    def save(self, filepath: str, **attrs) -> None:
        """
        Archive the parameters of this model along with its name and configuration.
        :param (str) filepath: archive path
        :param attrs: extra metadata (e.g. seed, stage, epoch)
        """
        # noinspection PyTypeChecker
        save_module(filepath, self, attrs={'model': self.ModelName, 'config': self._configuration.to_dict(), **attrs})
        self.logger.debug(f'saved {self.ModelName} ({self.nparams_hr} params) to {filepath}')

    @classmethod
    def load(cls: Type[M], filepath: str, log_level: Optional[str] = None) -> M:
        """
        Rebuild a model from its archive.
        :param (str) filepath: archive path
        :param (optional) log_level: CommandLineLogger's log level
        :return: a new instance of the calling class
        """
        tensors, attrs = load_archive(filepath)
        if attrs.get('model') != cls.ModelName:
            raise DataValidationError(f'{filepath} holds a "{attrs.get("model")}" model, not "{cls.ModelName}"')
        # noinspection PyArgumentList
        model = cls(TamRlConfig.from_dict(attrs['config'], section='model'), generator=torch.Generator(),
                    log_level=log_level)
        # noinspection PyTypeChecker
        load_module_state(model, tensors)
        return model
