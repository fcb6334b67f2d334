import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FormatError, IoError, ShapeError
from .utils import atomic_write_bytes, read_bytes

logger = logging.getLogger(__name__)

MAGIC = b'DLTR'
VERSION = 1
HEADER = struct.Struct('<4sIQQ32s')
RECORD = struct.Struct('<IQ')
T_OFFSET = 16
NO_DIGEST = bytes(32)


@dataclass(frozen=True)
class SamplingSchedule:
    samples_per_epoch: int = 1
    start_epoch: int = 0
    end_epoch: int = 1
    include_init: bool = False

    def __post_init__(self):
        if self.samples_per_epoch < 1:
            raise ConfigError(f'samples_per_epoch must be >= 1, got {self.samples_per_epoch}')
        if self.start_epoch < 0 or self.start_epoch >= self.end_epoch:
            raise ConfigError(f'sampling window [{self.start_epoch}, {self.end_epoch}) is empty')

    def offsets(self, steps_per_epoch):
        k = self.samples_per_epoch
        return sorted({
            (i + 1) * steps_per_epoch // k - 1 for i in range(k)
            if (i + 1) * steps_per_epoch // k >= 1
        })

    def expected_samples(self, steps_per_epoch, epochs):
        window = max(0, min(self.end_epoch, epochs) - self.start_epoch)
        return window * len(self.offsets(steps_per_epoch)) + int(self.include_init)


def due(schedule, epoch, step_in_epoch, steps_per_epoch):
    if not schedule.start_epoch <= epoch < schedule.end_epoch:
        return False
    return step_in_epoch in schedule.offsets(steps_per_epoch)


@dataclass(frozen=True)
class SnapshotMeta:
    epoch: int
    global_step: int


class TrajectoryStore:
    """Append-only snapshot file; one writer, readers after the writer closes."""

    def __init__(self, path, n=None, t=0, metadata=None, init_digest=NO_DIGEST):
        self.path = Path(path)
        self.n = n
        self.t = t
        self.metadata = list(metadata or [])
        self.init_digest = init_digest
        self._handle = None

    @classmethod
    def create(cls, path, init_digest=None):
        store = cls(path, init_digest=init_digest or NO_DIGEST)
        try:
            store.path.parent.mkdir(parents=True, exist_ok=True)
            store._handle = open(store.path, 'w+b')
        except OSError as exc:
            raise IoError(f'Cannot create trajectory {store.path}: {exc}') from exc
        return store

    @classmethod
    def open(cls, path):
        raw = read_bytes(path)
        n, t, digest = _parse_header(raw, path)
        metadata = []
        stride = RECORD.size + 8 * n
        for index in range(t):
            epoch, step = RECORD.unpack_from(raw, HEADER.size + index * stride)
            metadata.append(SnapshotMeta(epoch, step))
        return cls(path, n=n, t=t, metadata=metadata, init_digest=digest)

    def record(self, meta, w):
        if self._handle is None:
            raise IoError(f'{self.path} is not open for writing')
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 1:
            raise ShapeError(f'snapshot must be a flat vector, got shape {w.shape}')
        try:
            if self.n is None:
                self.n = w.shape[0]
                self._handle.write(HEADER.pack(MAGIC, VERSION, self.n, 0, self.init_digest))
            elif w.shape[0] != self.n:
                raise ShapeError(f'snapshot has {w.shape[0]} parameters, trajectory holds {self.n}')
            self._handle.seek(0, 2)
            self._handle.write(RECORD.pack(meta.epoch, meta.global_step))
            self._handle.write(w.astype('<f8').tobytes())
            self.t += 1
            self._handle.seek(T_OFFSET)
            self._handle.write(struct.pack('<Q', self.t))
            self._handle.flush()
        except OSError as exc:
            raise IoError(f'Cannot append to {self.path}: {exc}') from exc
        self.metadata.append(meta)
        logger.debug('Recorded snapshot %d (epoch=%d, step=%d)', self.t, meta.epoch, meta.global_step)

    def close(self):
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    def load_all(self):
        """Snapshots as the columns of an n x t matrix, in record order."""
        if self._handle is not None:
            raise IoError(f'{self.path} is still open for writing')
        raw = read_bytes(self.path)
        n, t, _ = _parse_header(raw, self.path)
        if t == 0:
            return np.zeros((n, 0))
        rows = np.ndarray(
            shape=(t, n), dtype='<f8', buffer=raw,
            offset=HEADER.size + RECORD.size, strides=(RECORD.size + 8 * n, 8),
        )
        return np.array(rows.T, dtype=np.float64, order='F')


def _parse_header(raw, path):
    if len(raw) < HEADER.size:
        raise FormatError(f'{path}: truncated trajectory header')
    magic, version, n, t, digest = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f'{path}: bad magic {magic!r}')
    if version != VERSION:
        raise FormatError(f'{path}: unsupported trajectory version {version}')
    expected = HEADER.size + t * (RECORD.size + 8 * n)
    if len(raw) != expected:
        raise FormatError(f'{path}: {len(raw)} bytes, header announces {expected}')
    return n, t, digest


def load_trajectory(path):
    store = TrajectoryStore.open(path)
    return store, store.load_all()


PARAMS_MAGIC = b'DLPV'
PARAMS_HEADER = struct.Struct('<4sIQ')


def save_param_vector(w, path):
    w = np.asarray(w, dtype='<f8')
    if w.ndim != 1:
        raise ShapeError(f'parameter vector must be flat, got shape {w.shape}')
    return atomic_write_bytes(path, PARAMS_HEADER.pack(PARAMS_MAGIC, VERSION, w.shape[0]) + w.tobytes())


def load_param_vector(path):
    raw = read_bytes(path)
    if len(raw) < PARAMS_HEADER.size:
        raise FormatError(f'{path}: truncated parameter header')
    magic, version, n = PARAMS_HEADER.unpack_from(raw)
    if magic != PARAMS_MAGIC:
        raise FormatError(f'{path}: bad magic {magic!r}')
    if version != VERSION:
        raise FormatError(f'{path}: unsupported parameter file version {version}')
    if len(raw) != PARAMS_HEADER.size + 8 * n:
        raise FormatError(f'{path}: {len(raw)} bytes do not match n={n}')
    return np.frombuffer(raw, dtype='<f8', offset=PARAMS_HEADER.size).astype(np.float64)
