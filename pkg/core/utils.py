import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import IoError


def atomic_write_bytes(path, data):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f'.{path.name}.', dir=path.parent)
        try:
            with os.fdopen(fd, 'wb') as handle:
                handle.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f'Cannot write {path}: {exc}') from exc
    return path


def atomic_write_text(path, text):
    return atomic_write_bytes(path, text.encode('utf-8'))


def vector_digest(values):
    data = np.ascontiguousarray(values, dtype='<f8')
    return hashlib.sha256(data.tobytes()).digest()


def read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f'Cannot read {path}: {exc}') from exc
