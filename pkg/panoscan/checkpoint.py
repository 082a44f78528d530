"""The ``.npz`` container shared by checkpoints and feature sidecars."""
from __future__ import annotations

import os
from collections.abc import Mapping

import numpy as np

from panoscan.diffcore import Array
from panoscan.diffcore import ParameterSet
from panoscan.errors import CheckpointIncompatibleError
from panoscan.errors import DataError

FORMAT = 'panoscan-ckpt-v1'
FORMAT_KEY = '__format__'


def save_arrays(path: str, arrays: Mapping[str, Array]) -> None:
    if FORMAT_KEY in arrays:
        raise CheckpointIncompatibleError(f'{FORMAT_KEY} is a reserved name')
    tmp = f'{path}.tmp'
    try:
        with open(tmp, 'wb') as f:
            np.savez(
                f,
                **{FORMAT_KEY: np.array(FORMAT)},
                **{
                    name: np.ascontiguousarray(value, dtype=np.float64)
                    for name, value in arrays.items()
                },
            )
        os.replace(tmp, path)
    except OSError as e:
        raise DataError(f'cannot write {path}: {e}')


def load_arrays(path: str) -> dict[str, Array]:
    try:
        with np.load(path, allow_pickle=False) as npz:
            contents = {name: npz[name] for name in npz.files}
    except (OSError, ValueError) as e:
        raise CheckpointIncompatibleError(f'cannot read {path}: {e}')
    header = contents.pop(FORMAT_KEY, None)
    if header is None or str(header) != FORMAT:
        raise CheckpointIncompatibleError(
            '{} is not a {} container (header {!r})'.format(
                path, FORMAT, None if header is None else str(header),
            ),
        )
    return {
        name: np.asarray(value, dtype=np.float64)
        for name, value in contents.items()
    }


def save_checkpoint(
        path: str,
        policy_params: ParameterSet,
        assessor_params: ParameterSet,
) -> None:
    arrays = {}
    for prefix, params in (('policy', policy_params), ('assessor', assessor_params)):
        for name, value in params.arrays().items():
            arrays[f'{prefix}/{name}'] = value
    save_arrays(path, arrays)


def load_checkpoint(
        path: str,
        policy_params: ParameterSet,
        assessor_params: ParameterSet,
) -> None:
    """Loads values into freshly built parameter sets, checking shapes."""
    arrays = load_arrays(path)
    for prefix, params in (('policy', policy_params), ('assessor', assessor_params)):
        params.load_arrays({
            name.split('/', 1)[1]: value
            for name, value in arrays.items()
            if name.startswith(f'{prefix}/')
        })
