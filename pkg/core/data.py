import gzip
import logging
import struct
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import FormatError, LabelError
from .utils import atomic_write_bytes, read_bytes

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
NOISE_MAGIC = b'DLNZ'
NOISE_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.inputs.shape[0] < 1:
            raise FormatError('dataset is empty')
        if self.labels.shape != (self.inputs.shape[0],):
            raise FormatError(f'{self.labels.shape[0]} labels for {self.inputs.shape[0]} samples')
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise LabelError(f'labels must lie in [0, {self.num_classes})')
        if not np.all(np.isfinite(self.inputs)):
            raise FormatError('dataset inputs contain non-finite values')

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class NoiseRecord:
    fraction: float
    corrupted_mask: np.ndarray
    seed: int
    labels: np.ndarray

    @property
    def size(self):
        return self.corrupted_mask.shape[0]


def _open_idx(path):
    raw = read_bytes(path)
    if str(path).endswith('.gz'):
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f'{path}: not a valid gzip stream') from exc
    return raw


def _idx_header(raw, path, magic, dims):
    size = 4 * (1 + dims)
    if len(raw) < size:
        raise FormatError(f'{path}: truncated IDX header ({len(raw)} bytes)')
    values = struct.unpack(f'>{1 + dims}I', raw[:size])
    if values[0] != magic:
        raise FormatError(f'{path}: magic 0x{values[0]:08x}, expected 0x{magic:08x}')
    return values[1:], size


def load_idx(images_path, labels_path, num_classes=10, flatten=True):
    images_raw = _open_idx(images_path)
    labels_raw = _open_idx(labels_path)
    (count, rows, cols), offset = _idx_header(images_raw, images_path, IMAGES_MAGIC, 3)
    (label_count,), label_offset = _idx_header(labels_raw, labels_path, LABELS_MAGIC, 1)
    if count != label_count:
        raise FormatError(f'{count} images but {label_count} labels')
    pixels = count * rows * cols
    if len(images_raw) - offset != pixels:
        raise FormatError(f'{images_path}: expected {pixels} pixel bytes, found {len(images_raw) - offset}')
    if len(labels_raw) - label_offset != count:
        raise FormatError(f'{labels_path}: expected {count} label bytes, found {len(labels_raw) - label_offset}')
    images = np.frombuffer(images_raw, dtype=np.uint8, offset=offset).astype(np.float64) / 255.0
    images = images.reshape(count, rows * cols) if flatten else images.reshape(count, 1, rows, cols)
    labels = np.frombuffer(labels_raw, dtype=np.uint8, offset=label_offset).astype(np.int64)
    if count and labels.max() >= num_classes:
        raise FormatError(f'{labels_path}: label {labels.max()} outside [0, {num_classes})')
    logger.info('Loaded %d IDX samples (%dx%d) from %s', count, rows, cols, images_path)
    return Dataset(images, labels, num_classes)


def synthetic_blobs(num_classes, per_class, dim, spread, seed):
    if min(num_classes, per_class, dim) < 1:
        raise ValueError('num_classes, per_class and dim must all be >= 1')
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(num_classes, dim))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    noise = rng.normal(0.0, 1.0, size=(labels.shape[0], dim))
    inputs = centers[labels] + spread * noise
    return Dataset(inputs, labels, num_classes)


def subset(ds, limit):
    if limit is None or limit >= len(ds):
        return ds
    return Dataset(ds.inputs[:limit], ds.labels[:limit], ds.num_classes)


def train_test_split(ds, test_size, seed):
    order = np.random.default_rng(seed).permutation(len(ds))
    test_idx = np.sort(order[:test_size])
    train_idx = np.sort(order[test_size:])
    return (
        Dataset(ds.inputs[train_idx], ds.labels[train_idx], ds.num_classes),
        Dataset(ds.inputs[test_idx], ds.labels[test_idx], ds.num_classes),
    )


def normalize(train, test=None):
    axes = (0,) if train.inputs.ndim == 2 else (0, 2, 3)
    mean = train.inputs.mean(axis=axes, keepdims=True)
    std = train.inputs.std(axis=axes, keepdims=True)
    std = np.where(std > 0, std, 1.0)
    train = replace(train, inputs=(train.inputs - mean) / std)
    if test is None:
        return train
    return train, replace(test, inputs=(test.inputs - mean) / std)


def corrupt_labels(ds, fraction, seed):
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f'fraction must lie in [0, 1], got {fraction}')
    size = len(ds)
    count = int(np.floor(fraction * size + 0.5))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(size, size=count, replace=False))
    resampled = rng.integers(0, ds.num_classes, size=count, dtype=np.int64)
    mask = np.zeros(size, dtype=bool)
    mask[chosen] = True
    record = NoiseRecord(float(fraction), mask, int(seed), resampled)
    logger.info('Corrupted %d/%d labels (fraction=%.3f, seed=%d)', count, size, fraction, seed)
    return apply_noise_record(ds, record), record


def apply_noise_record(ds, record):
    if record.size != len(ds):
        raise FormatError(f'noise record covers {record.size} samples, dataset has {len(ds)}')
    labels = ds.labels.copy()
    labels[record.corrupted_mask] = record.labels
    return Dataset(ds.inputs, labels, ds.num_classes)


def save_noise_record(record, path):
    header = NOISE_MAGIC + struct.pack('<IQdQ', NOISE_VERSION, record.size, record.fraction, record.seed)
    bits = np.packbits(record.corrupted_mask, bitorder='little').tobytes()
    labels = record.labels.astype('<u4').tobytes()
    return atomic_write_bytes(path, header + bits + labels)


def load_noise_record(path):
    raw = read_bytes(path)
    if len(raw) < 32 or raw[:4] != NOISE_MAGIC:
        raise FormatError(f'{path}: not a noise record')
    version, size, fraction, seed = struct.unpack('<IQdQ', raw[4:32])
    if version != NOISE_VERSION:
        raise FormatError(f'{path}: unsupported noise record version {version}')
    nbytes = (size + 7) // 8
    if len(raw) < 32 + nbytes:
        raise FormatError(f'{path}: truncated mask')
    mask = np.unpackbits(np.frombuffer(raw, dtype=np.uint8, count=nbytes, offset=32),
                         count=size, bitorder='little').astype(bool)
    count = int(mask.sum())
    if len(raw) != 32 + nbytes + 4 * count:
        raise FormatError(f'{path}: expected {count} resampled labels')
    labels = np.frombuffer(raw, dtype='<u4', offset=32 + nbytes).astype(np.int64)
    return NoiseRecord(fraction, mask, seed, labels)


def batches(ds, batch_size, shuffle_seed, epoch):
    if batch_size < 1:
        raise ValueError(f'batch_size must be >= 1, got {batch_size}')
    order = epoch_permutation(len(ds), shuffle_seed, epoch)
    for start in range(0, len(ds), batch_size):
        idx = order[start:start + batch_size]
        yield ds.inputs[idx], ds.labels[idx]


def epoch_permutation(size, shuffle_seed, epoch):
    return np.random.default_rng([shuffle_seed, epoch]).permutation(size)

