import random

import numpy as np
import torch

from utils.ifaces import Reproducible


class ManualSeedReproducible(Reproducible):
    """
    ManualSeedReproducible Class:
    Seeds the global generators (python, numpy, torch) and switches torch to deterministic float64 CPU kernels. Model
    initialization, data order and episodes use their own per-member generators (see `utils.train`); the global seed
    only covers library code that draws from the global state.
    """

    @staticmethod
    def manual_seed(seed: int) -> int:
        torch.manual_seed(seed)
        np.random.seed(seed % 2 ** 32)
        random.seed(seed)
        torch.use_deterministic_algorithms(True)
        torch.set_default_dtype(torch.float64)
        Reproducible._seed = seed
        return seed
