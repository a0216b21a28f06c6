import abc


class Configurable(metaclass=abc.ABCMeta):
    """
    Configurable Interface:
    Models whose widths and variant flags come from the `model` section of a run configuration. The configuration is
    archived with the parameters so that a checkpoint can rebuild its model.
    """

    @abc.abstractmethod
    def load_configuration(self, configuration: dict) -> None:
        """
        Check a `model` section (as found in a checkpoint or a YAML file) against the configuration this instance was
        built with.
        :param (dict) configuration: the `model` section
        :raises DataValidationError: if the two differ
        """
        raise NotImplementedError

    @abc.abstractmethod
    def configuration(self) -> dict:
        """
        :return: the `model` section of this instance, plus its parameter counts
        """
        raise NotImplementedError


class Reproducible(metaclass=abc.ABCMeta):
    _seed = None

    @staticmethod
    @abc.abstractmethod
    def manual_seed(seed: int) -> int:
        """
        Seed the global random state of every library the pipeline draws from.
        :param (int) seed: base seed of the run
        :return: the seed in effect
        """
        raise NotImplementedError
