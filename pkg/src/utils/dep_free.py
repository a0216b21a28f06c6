import logging
from typing import Type

from tqdm.auto import tqdm


def get_tqdm() -> Type[tqdm]:
    """
    Get the correct Tqdm class for showing progress (`tqdm.auto` picks the notebook widget inside Jupyter and the
    console bar elsewhere).
    :return: a `tqdm` class
    """
    return tqdm


def progress_disabled(logger: logging.Logger) -> bool:
    """
    :return: True if progress bars should be hidden, i.e. the logger is quieter than info
    """
    return logger.getEffectiveLevel() > logging.INFO
