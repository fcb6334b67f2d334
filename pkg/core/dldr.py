"""Trajectory PCA through the t x t Gram matrix.

For n parameters and t snapshots the work is O(t^3 + t^2 n) and the extra
memory O(n t + t^2 + n d); nothing of size n x n is ever allocated.
"""
import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import subspace_angles

from .exceptions import DegenerateTrajectory, DimensionError, FormatError, ShapeError
from .utils import atomic_write_bytes, read_bytes

logger = logging.getLogger(__name__)

MAGIC = b'DLBS'
VERSION = 1
HEADER = struct.Struct('<4sIQQ')
DIGEST_SIZE = 32
DROP_RATIO = 1e-10
GRAM_BLOCK_ROWS = 4096


@dataclass(frozen=True)
class SubspaceBasis:
    P: np.ndarray
    mean: np.ndarray
    sigmas: np.ndarray
    variance_ratios: np.ndarray
    spectrum: np.ndarray = None
    init_digest: bytes = bytes(DIGEST_SIZE)

    @property
    def n(self):
        return self.P.shape[0]

    @property
    def effective_d(self):
        return self.P.shape[1]


def center(samples):
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] < 2:
        raise DegenerateTrajectory(f'need at least 2 snapshots, got shape {samples.shape}')
    mean = samples.mean(axis=1)
    return mean, samples - mean[:, None]


def _pairwise_sum(parts):
    while len(parts) > 1:
        merged = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            merged.append(parts[-1])
        parts = merged
    return parts[0]


def gram_matrix(W, block_rows=GRAM_BLOCK_ROWS):
    """W^T W summed over fixed row blocks in a fixed pairwise order."""
    parts = [
        W[start:start + block_rows].T @ W[start:start + block_rows]
        for start in range(0, W.shape[0], block_rows)
    ]
    gram = _pairwise_sum(parts)
    return 0.5 * (gram + gram.T)


def explained_variance(sigmas):
    """Share of variance per component, largest first; the ratios sum to 1."""
    sq = np.sort(np.square(np.asarray(sigmas, dtype=np.float64)))[::-1]
    total = sq.sum()
    if total <= 0:
        raise DegenerateTrajectory('all singular values are zero')
    return sq / total


def trajectory_spectrum(samples):
    """Variance ratios of all t components, largest first, without any back-lift."""
    _, W = center(samples)
    eigvals = np.clip(np.linalg.eigvalsh(gram_matrix(W)), 0.0, None)
    return explained_variance(np.sqrt(eigvals))


def _fix_signs(V):
    pivots = np.abs(V).argmax(axis=0)
    signs = np.sign(V[pivots, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _orthonormalize(rows):
    for i in range(rows.shape[0]):
        for j in range(i):
            rows[i] -= (rows[j] @ rows[i]) * rows[j]
        rows[i] /= np.linalg.norm(rows[i])
    return rows


def extract_basis(samples, d, init_digest=None):
    samples = np.asarray(samples, dtype=np.float64)
    t = samples.shape[1] if samples.ndim == 2 else 0
    if d < 1 or d > t:
        raise DimensionError(f'd={d} must lie in [1, t={t}]')
    mean, W = center(samples)
    if not np.any(W):
        raise DegenerateTrajectory(f'all {t} snapshots are identical')

    eigvals, eigvecs = np.linalg.eigh(gram_matrix(W))
    eigvals = np.clip(eigvals[::-1], 0.0, None)
    eigvecs = _fix_signs(eigvecs[:, ::-1])
    if eigvals[0] <= 0:
        raise DegenerateTrajectory('trajectory has no variance')
    spectrum = explained_variance(np.sqrt(eigvals))

    keep = int(np.count_nonzero(eigvals[:d] >= DROP_RATIO * eigvals[0]))
    if keep < d:
        logger.info('Dropped %d near-zero components, effective_d=%d', d - keep, keep)
    sigmas = np.sqrt(eigvals[:keep])
    # rows of U^T; back-lift u_i = W v_i / sigma_i
    rows = eigvecs[:, :keep].T @ W.T
    rows /= sigmas[:, None]
    del W
    rows = _orthonormalize(rows)

    basis = SubspaceBasis(
        P=rows.T,
        mean=mean,
        sigmas=sigmas,
        variance_ratios=spectrum[:keep],
        spectrum=spectrum,
        init_digest=init_digest or bytes(DIGEST_SIZE),
    )
    logger.info(
        'Extracted basis n=%d d=%d from t=%d snapshots, captured variance %.6f',
        basis.n, keep, t, float(spectrum[:keep].sum()),
    )
    return basis


def _check_length(vector, size, what):
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (size,):
        raise ShapeError(f'{what} has shape {vector.shape}, expected ({size},)')
    return vector


def project(basis, g):
    return basis.P.T @ _check_length(g, basis.n, 'gradient')


def lift(basis, s):
    return basis.P @ _check_length(s, basis.effective_d, 'subspace step')


def residual_ratio(basis, delta):
    """||(I - P P^T) delta|| / ||delta||, without forming P P^T."""
    delta = _check_length(delta, basis.n, 'displacement')
    norm = np.linalg.norm(delta)
    if norm == 0:
        return 0.0
    return float(np.linalg.norm(delta - lift(basis, project(basis, delta))) / norm)


def principal_angles(A, B):
    return subspace_angles(np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64))


def save_basis(basis, path):
    columns = np.asarray(basis.P, dtype='<f8').T
    payload = [
        HEADER.pack(MAGIC, VERSION, basis.n, basis.effective_d),
        basis.mean.astype('<f8').tobytes(),
        basis.sigmas.astype('<f8').tobytes(),
        basis.variance_ratios.astype('<f8').tobytes(),
        np.ascontiguousarray(columns).tobytes(),
    ]
    if any(basis.init_digest):
        payload.append(basis.init_digest)
    return atomic_write_bytes(path, b''.join(payload))


def load_basis(path):
    raw = read_bytes(path)
    if len(raw) < HEADER.size:
        raise FormatError(f'{path}: truncated basis header')
    magic, version, n, d = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f'{path}: bad magic {magic!r}')
    if version != VERSION:
        raise FormatError(f'{path}: unsupported basis version {version}')
    body = 8 * (n + 2 * d + n * d)
    if len(raw) not in (HEADER.size + body, HEADER.size + body + DIGEST_SIZE):
        raise FormatError(f'{path}: {len(raw)} bytes do not match n={n}, d={d}')
    values = np.frombuffer(raw, dtype='<f8', count=body // 8, offset=HEADER.size).astype(np.float64)
    mean = values[:n]
    sigmas = values[n:n + d]
    ratios = values[n + d:n + 2 * d]
    P = values[n + 2 * d:].reshape(d, n).T
    digest = raw[HEADER.size + body:] or bytes(DIGEST_SIZE)
    return SubspaceBasis(P=P, mean=mean, sigmas=sigmas, variance_ratios=ratios, init_digest=digest)
