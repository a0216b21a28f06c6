"""
Checkpoint archive: a flat HDF5 file of key -> little-endian float64 datasets (the dataset header carries the shape),
keys following the parameter naming of the model ('encoder/bilstm/fwd/input_weights', 'decoder/biases',
'heads/gpp/weights/0', ...). File-level attributes hold YAML-encoded metadata (model name, configuration).
"""
import os
from typing import Any, Dict, Optional, Tuple

import h5py
import numpy as np
import torch
import yaml
from torch import Tensor
from torch.nn import Module

from utils.autodiff import DTYPE
from utils.errors import DimensionError, PipelineStateError
from utils.pytorch import named_tensors


def save_archive(filepath: str, tensors: Dict[str, Tensor], attrs: Optional[Dict[str, Any]] = None) -> None:
    """
    Write :attr:`tensors` (in sorted key order) and :attr:`attrs` to an HDF5 archive, replacing any existing file. No
    object carries a timestamp, so equal contents give byte-identical files.
    :param (str) filepath: output path (parent directories are created)
    :param (dict) tensors: archive key -> tensor
    :param (optional) attrs: metadata values (YAML-serializable)
    """
    os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)
    if os.path.exists(filepath):
        os.remove(filepath)
    fcpl = h5py.h5p.create(h5py.h5p.FILE_CREATE)
    fcpl.set_obj_track_times(False)
    gcpl = h5py.h5p.create(h5py.h5p.GROUP_CREATE)
    gcpl.set_obj_track_times(False)
    with h5py.File(h5py.h5f.create(os.fsencode(filepath), h5py.h5f.ACC_TRUNC, fcpl=fcpl)) as h5_fp:
        for key in sorted(tensors):
            parts = key.split('/')
            for depth in range(1, len(parts)):
                group = '/'.join(parts[:depth])
                if group not in h5_fp:
                    h5py.h5g.create(h5_fp.id, group.encode(), gcpl=gcpl)
            array = np.ascontiguousarray(tensors[key].detach().cpu().numpy(), dtype='<f8')
            h5_fp.create_dataset(key, data=array, dtype='<f8', track_times=False)
        for name, value in sorted((attrs or {}).items()):
            h5_fp.attrs[name] = yaml.safe_dump(value, sort_keys=True)


def load_archive(filepath: str) -> Tuple[Dict[str, Tensor], Dict[str, Any]]:
    """
    Read an archive written by `save_archive`.
    :param (str) filepath: archive path
    :return: a tuple (tensors, attrs)
    """
    if not os.path.isfile(filepath):
        raise PipelineStateError(f'checkpoint not found: {filepath}')
    tensors = {}
    with h5py.File(filepath, 'r') as h5_fp:
        def _collect(name: str, obj) -> None:
            if isinstance(obj, h5py.Dataset):
                tensors[name] = torch.from_numpy(np.asarray(obj[()], dtype=np.float64)).to(DTYPE)

        h5_fp.visititems(_collect)
        attrs = {_k: yaml.safe_load(_v) for _k, _v in h5_fp.attrs.items()}
    return {_k: tensors[_k] for _k in sorted(tensors)}, attrs


def save_module(filepath: str, model: Module, attrs: Optional[Dict[str, Any]] = None) -> None:
    save_archive(filepath, named_tensors(model), attrs=attrs)


def load_module_state(model: Module, tensors: Dict[str, Tensor], prefix: str = '') -> None:
    """
    Copy archived tensors into the parameters of :attr:`model`. Every parameter (under :attr:`prefix`) must be present
    with its exact shape; archive entries outside the model are an error too.
    :param (Module) model: target module
    :param (dict) tensors: archive key -> tensor
    :param (str) prefix: archive key prefix of the module's parameters (e.g. 'decoder/')
    """
    expected = {prefix + _k: _p for _k, _p in named_tensors(model).items()}
    given = {_k: _v for _k, _v in tensors.items() if _k.startswith(prefix)}
    missing, unexpected = sorted(set(expected) - set(given)), sorted(set(given) - set(expected))
    if missing or unexpected:
        raise DimensionError(f'checkpoint does not match the model: missing {missing}, unexpected {unexpected}')
    with torch.no_grad():
        for key, parameter in expected.items():
            if tuple(parameter.shape) != tuple(given[key].shape):
                raise DimensionError(f'checkpoint entry {key}: shape {list(given[key].shape)} does not match model '
                                     f'shape {list(parameter.shape)}')
            parameter.copy_(given[key])
