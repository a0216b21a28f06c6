import hashlib
from typing import Dict, Optional

import numpy as np
from prettytable import PrettyTable
from torch import Tensor
from torch.nn import Module

from utils.string import to_human_readable


def archive_key(parameter_name: str) -> str:
    """
    Map a `named_parameters()` name to its archive key (e.g. 'encoder.bilstm.fwd.biases' ->
    'encoder/bilstm/fwd/biases').
    """
    return parameter_name.replace('.', '/')


def named_tensors(model: Module) -> Dict[str, Tensor]:
    """
    Get every parameter of :attr:`model` keyed by its archive key, in sorted key order.
    :param (Module) model: an nn.Module instance
    :return: a dict archive key -> detached tensor
    """
    tensors = {archive_key(_n): _p.detach() for _n, _p in model.named_parameters()}
    return {_k: tensors[_k] for _k in sorted(tensors)}


def parameters_checksum(model: Module, prefix: Optional[str] = None) -> str:
    """
    SHA-256 digest over the names, shapes and little-endian float64 bytes of every parameter of :attr:`model`.
    :param (Module) model: an nn.Module instance
    :param (optional) prefix: restrict the digest to parameters whose archive key starts with this prefix
    :return: the hex digest as a `str`
    """
    digest = hashlib.sha256()
    for key, value in named_tensors(model).items():
        if prefix is not None and not key.startswith(prefix):
            continue
        array = np.ascontiguousarray(value.cpu().numpy(), dtype='<f8')
        digest.update(key.encode('utf-8'))
        digest.update(str(list(array.shape)).encode('utf-8'))
        digest.update(array.tobytes())
    return digest.hexdigest()


def get_total_params(model: Module, print_table: bool = False) -> int:
    """
    Get total number of trainable parameters of given nn.Module.
    :param model: model to count parameters for
    :param print_table: if True also prints counts per top-level component
    :return: total number of parameters
    """
    counts = {}
    for name, parameter in model.named_parameters():
        if parameter.requires_grad:
            component = name.split('.', 1)[0]
            counts[component] = counts.get(component, 0) + parameter.numel()
    total_count = sum(counts.values())

    if print_table:
        table = PrettyTable()
        table.field_names = ["Component", "Count", "Percentage"]
        for component, count in counts.items():
            table.add_row([component, to_human_readable(count), '%.2f %%' % (100.0 * count / max(total_count, 1))])
        print(table)
        print(f"Total Trainable Params: {to_human_readable(total_count)}")
    return total_count
