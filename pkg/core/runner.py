"""Experiment orchestration: baseline training with sampling, basis extraction,
projected retraining and label-noise sweeps.

Each ``cmd_*`` function is a pure function of its config and seeds up to the
wall-clock columns, and returns the artifacts it wrote so the management
commands can record them in the run ledger.
"""
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as datasets
from .dldr import extract_basis, load_basis, residual_ratio, save_basis, trajectory_spectrum
from .exceptions import (
    ConfigError, DivergenceError, FormatError, LineSearchFailed, ShapeError, SubspaceViolation,
)
from .metrics import MetricsRow, StepRow, emit_metrics, emit_steps, emit_table
from .nn import BatchObjective, backward, evaluate, init_params, parameter_count
from .optim import AdamState, LineSearchConfig, PBfgsState, SgdState, adam_step, pbfgs_step, psgd_step, sgd_step
from .reports import export_workbook
from .trajectory import (
    SnapshotMeta, TrajectoryStore, due, load_param_vector, load_trajectory, save_param_vector,
)
from .utils import atomic_write_text, read_bytes, vector_digest

logger = logging.getLogger(__name__)

CONFINEMENT_TOLERANCE = 1e-6
CLEAN_TEST_ASSUMPTION = 'test labels are never corrupted; label noise touches the training split only'

INIT_FILE = 'w0.dlpv'
FINAL_FILE = 'w_final.dlpv'
PROJECTED_FILE = 'w_projected.dlpv'
TRAJECTORY_FILE = 'trajectory.dltr'
BASIS_FILE = 'basis.dlbs'
NOISE_FILE = 'noise.dlnz'
BASELINE_METRICS = 'baseline_metrics.csv'
PROJECTED_METRICS = 'projected_metrics.csv'
STEPS_FILE = 'pbfgs_steps.csv'
SPECTRUM_FILE = 'spectrum.csv'
NOISE_SUMMARY = 'noise_summary.csv'
RUN_FILE = 'run.json'

SPECTRUM_HEADER = ('component', 'variance_ratio', 'cumulative_ratio')
NOISE_HEADER = ('fraction', 'd', 'psgd_final', 'sgd_final', 'sgd_best')


@dataclass
class RunResult:
    summary: dict
    artifacts: list = field(default_factory=list)
    w: np.ndarray = None
    rows: list = field(default_factory=list)

    def add(self, kind, path):
        self.artifacts.append((kind, str(path)))
        return path


def _ms(start):
    return int(round((time.perf_counter() - start) * 1000))


def _check_finite(loss, phase, epoch):
    if not math.isfinite(loss):
        raise DivergenceError(f'{phase} loss became {loss} in epoch {epoch}')


def _update_run_file(output_dir, section, payload):
    path = Path(output_dir) / RUN_FILE
    existing = {}
    if path.exists():
        try:
            existing = json.loads(read_bytes(path).decode('utf-8'))
        except ValueError as exc:
            raise FormatError(f'{path}: not valid JSON') from exc
    existing[section] = payload
    return atomic_write_text(path, json.dumps(existing, indent=2, sort_keys=True) + '\n')


def build_datasets(config):
    """Training and clean test split for ``config``, normalized on the training statistics."""
    spec = config.model
    source = config.dataset
    if source.kind == 'idx':
        for key in ('train_images', 'train_labels', 'test_images', 'test_labels'):
            if getattr(source, key) is None:
                raise ConfigError(f"dataset.{key} is required when dataset.kind=idx")
        flat = spec.conv_stem is None
        train = datasets.load_idx(source.train_images, source.train_labels, source.num_classes, flatten=flat)
        test = datasets.load_idx(source.test_images, source.test_labels, source.num_classes, flatten=flat)
        train = datasets.subset(train, source.limit)
        test = datasets.subset(test, source.test_limit)
    else:
        blobs = datasets.synthetic_blobs(
            source.num_classes, source.per_class + source.test_per_class, source.dim, source.spread,
            config.seeds.data,
        )
        train, test = datasets.train_test_split(blobs, source.num_classes * source.test_per_class, config.seeds.data)
    if train.num_classes != spec.num_classes:
        raise ConfigError(
            f'model.layer_dims ends with {spec.num_classes} outputs, dataset.num_classes is {train.num_classes}'
        )
    if source.normalize:
        train, test = datasets.normalize(train, test)
    logger.info('Datasets ready: %d train, %d test samples', len(train), len(test))
    return train, test


def _noisy_train(config, train, output_dir, noise_path=None):
    """Apply (or create) the shared label-noise record; the test split stays clean."""
    if config.noise.fraction is None:
        return train, None
    if noise_path is not None:
        record = datasets.load_noise_record(noise_path)
        return datasets.apply_noise_record(train, record), Path(noise_path)
    train, record = datasets.corrupt_labels(train, config.noise.fraction, config.seeds.noise)
    path = datasets.save_noise_record(record, Path(output_dir) / NOISE_FILE)
    return train, path


def _evaluate_row(spec, w, train, test, phase, epoch, wall_ms, **extras):
    train_loss, train_acc = evaluate(spec, w, train.inputs, train.labels)
    test_loss, test_acc = evaluate(spec, w, test.inputs, test.labels)
    _check_finite(train_loss, phase, epoch)
    return MetricsRow(phase, epoch, train_loss, train_acc, test_loss, test_acc, wall_ms, **extras)


def train_baseline(config, train, test, w0, store=None):
    """SGD (or Adam) over ``config.baseline.epochs`` epochs, recording snapshots into ``store``.

    Returns (w_final, rows); rows[0] is the evaluation of w0 (epoch 0),
    rows[e] the evaluation after epoch e.
    """
    spec = config.model
    cfg = config.baseline
    schedule = config.sampling
    if cfg.optimizer == 'adam':
        state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay, schedule=cfg.schedule)
        step = adam_step
    else:
        state = SgdState(cfg.lr, cfg.momentum, cfg.weight_decay, cfg.schedule)
        step = sgd_step
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    started = time.perf_counter()
    w = w0.copy()
    if store is not None and schedule.include_init:
        store.record(SnapshotMeta(0, 0), w)
    rows = [_evaluate_row(spec, w, train, test, 'baseline', 0, 0)]
    global_step = 0
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        batches = datasets.batches(train, cfg.batch_size, config.seeds.data, epoch)
        for index, (inputs, labels) in enumerate(batches):
            loss, g = backward(spec, w, inputs, labels)
            _check_finite(loss, 'baseline', epoch + 1)
            w = step(w, g, state)
            global_step += 1
            if store is not None and due(schedule, epoch, index, steps_per_epoch):
                store.record(SnapshotMeta(epoch, global_step), w)
        row = _evaluate_row(spec, w, train, test, 'baseline', epoch + 1, _ms(started))
        rows.append(row)
        logger.info(
            'baseline epoch %d/%d: train_loss=%.4f test_acc=%.4f',
            epoch + 1, cfg.epochs, row.train_loss, row.test_acc,
        )
    return w, rows


def train_projected(config, basis, train, test, w0):
    """P-SGD or P-BFGS from ``w0`` inside span(basis.P).

    Returns (w_final, rows, steps); ``steps`` is empty for P-SGD.
    """
    spec = config.model
    cfg = config.projected
    started = time.perf_counter()
    w = w0.copy()
    rows = [_evaluate_row(spec, w, train, test, 'projected', 0, 0)]
    steps = []
    if cfg.optimizer == 'pbfgs':
        state = PBfgsState.initial(basis.effective_d)
        search = LineSearchConfig(cfg.c, cfg.beta, cfg.max_backtracks)
    else:
        state = SgdState(cfg.lr, cfg.momentum, cfg.weight_decay, cfg.schedule)

    for epoch in range(cfg.epochs):
        alphas = []
        backtracks = 0
        for inputs, labels in datasets.batches(train, cfg.batch_size, config.seeds.data, epoch):
            if cfg.optimizer == 'psgd':
                state.epoch = epoch
                loss, g = backward(spec, w, inputs, labels)
                _check_finite(loss, 'projected', epoch + 1)
                w = psgd_step(w, g, basis, state)
                continue
            objective = BatchObjective(spec, inputs, labels)
            w, state, metrics = pbfgs_step(objective, w, basis, state, search)
            _check_finite(metrics.loss, 'projected', epoch + 1)
            if metrics.skipped_step and state.k == 1:
                raise LineSearchFailed(
                    f'no acceptable step from the initial point after {metrics.evals} evaluations',
                    evals=metrics.evals,
                )
            steps.append(StepRow(
                state.k - 1, epoch, metrics.loss, metrics.alpha, metrics.evals, metrics.decrease,
                metrics.skipped_step, metrics.skipped_update,
            ))
            backtracks += metrics.evals - 1
            if not metrics.skipped_step:
                alphas.append(metrics.alpha)
        extras = {}
        if cfg.optimizer == 'pbfgs':
            extras = {
                'alpha': float(np.mean(alphas)) if alphas else 0.0,
                'backtracks': backtracks,
                'skipped_updates': state.skipped_updates,
            }
        row = _evaluate_row(spec, w, train, test, 'projected', epoch + 1, _ms(started), **extras)
        rows.append(row)
        logger.info(
            '%s epoch %d/%d: train_loss=%.4f test_acc=%.4f',
            cfg.optimizer, epoch + 1, cfg.epochs, row.train_loss, row.test_acc,
        )

    ratio = residual_ratio(basis, w - w0)
    if ratio > CONFINEMENT_TOLERANCE:
        raise SubspaceViolation(f'projected run left the subspace: residual ratio {ratio:.3e}')
    return w, rows, steps


def _sampling_end_acc(config, rows):
    end = min(config.sampling.end_epoch, config.baseline.epochs)
    return rows[end].test_acc


def cmd_train(config):
    output_dir = Path(config.output_dir)
    spec = config.model
    result = RunResult(summary={})
    train, test = build_datasets(config)
    train, noise_path = _noisy_train(config, train, output_dir)
    if noise_path is not None:
        result.add('noise', noise_path)

    started = time.perf_counter()
    w0 = init_params(spec, config.seeds.init)
    digest = vector_digest(w0)
    result.add('init', save_param_vector(w0, output_dir / INIT_FILE))

    trajectory_path = output_dir / TRAJECTORY_FILE
    with TrajectoryStore.create(trajectory_path, init_digest=digest) as store:
        w, rows = train_baseline(config, train, test, w0, store)
        t = store.t
    result.add('trajectory', trajectory_path)
    if t < config.d:
        logger.warning('Trajectory holds t=%d snapshots, fewer than subspace.d=%d', t, config.d)

    result.add('final', save_param_vector(w, output_dir / FINAL_FILE))
    result.add('metrics', emit_metrics(rows, output_dir / BASELINE_METRICS))
    trained = rows[1:] or rows
    result.summary = {
        'n': parameter_count(spec),
        't': t,
        'final_loss': rows[-1].train_loss,
        'final_acc': rows[-1].test_acc,
        'best_acc': max(row.test_acc for row in trained),
        'sampling_end_acc': _sampling_end_acc(config, rows),
        'init_digest': digest.hex(),
        'wall_ms': _ms(started),
    }
    result.add('summary', _update_run_file(output_dir, 'train', {
        'config': config.as_dict(),
        'assumption': CLEAN_TEST_ASSUMPTION,
        'noise_fraction': config.noise.fraction,
        **result.summary,
    }))
    result.w = w
    result.rows = rows
    logger.info('train finished: final_acc=%.4f t=%d', result.summary['final_acc'], t)
    return result


def cmd_extract(trajectory_path, d, output_dir=None):
    trajectory_path = Path(trajectory_path)
    output_dir = Path(output_dir) if output_dir is not None else trajectory_path.parent
    started = time.perf_counter()
    store, samples = load_trajectory(trajectory_path)
    basis = extract_basis(samples, d, init_digest=store.init_digest)
    del samples
    result = RunResult(summary={})
    result.add('basis', save_basis(basis, output_dir / BASIS_FILE))
    rows = _spectrum_rows(basis.spectrum)
    result.add('spectrum', emit_table(SPECTRUM_HEADER, rows, output_dir / SPECTRUM_FILE))
    result.summary = {
        'n': basis.n,
        't': store.t,
        'd': d,
        'effective_d': basis.effective_d,
        'captured_variance': float(basis.variance_ratios.sum()),
        'wall_ms': _ms(started),
    }
    result.add('summary', _update_run_file(output_dir, 'extract', result.summary))
    result.rows = rows
    return result


def _spectrum_rows(ratios):
    cumulative = np.cumsum(ratios)
    return [(index + 1, float(ratio), float(total)) for index, (ratio, total) in enumerate(zip(ratios, cumulative))]


def cmd_spectrum(trajectory_path, output_dir=None, excel=None):
    trajectory_path = Path(trajectory_path)
    output_dir = Path(output_dir) if output_dir is not None else trajectory_path.parent
    _, samples = load_trajectory(trajectory_path)
    rows = _spectrum_rows(trajectory_spectrum(samples))
    result = RunResult(summary={'t': len(rows), 'top_ratio': rows[0][1]}, rows=rows)
    result.add('spectrum', emit_table(SPECTRUM_HEADER, rows, output_dir / SPECTRUM_FILE))
    if excel is not None:
        result.add('excel', export_workbook(excel, {'Spectre': (SPECTRUM_HEADER, rows)}))
    return result


def cmd_ptrain(config, basis_path=None, init_path=None, noise_path=None, output_dir=None):
    source_dir = Path(config.output_dir)
    output_dir = Path(output_dir) if output_dir is not None else source_dir
    basis = load_basis(basis_path or source_dir / BASIS_FILE)
    w0 = load_param_vector(init_path or source_dir / INIT_FILE)
    n = parameter_count(config.model)
    if basis.n != n:
        raise ShapeError(f'basis has n={basis.n} rows, model has n={n} parameters')
    if w0.shape[0] != n:
        raise ShapeError(f'initial point has {w0.shape[0]} parameters, model has n={n}')
    if any(basis.init_digest) and basis.init_digest != vector_digest(w0):
        raise FormatError('initial point does not match the w_0 recorded with the trajectory')

    train, test = build_datasets(config)
    if config.noise.fraction is not None and noise_path is None:
        noise_path = source_dir / NOISE_FILE
    train, _ = _noisy_train(config, train, output_dir, noise_path)

    started = time.perf_counter()
    w, rows, steps = train_projected(config, basis, train, test, w0)
    result = RunResult(summary={}, w=w, rows=rows)
    result.add('final', save_param_vector(w, output_dir / PROJECTED_FILE))
    result.add('metrics', emit_metrics(rows, output_dir / PROJECTED_METRICS))
    if config.projected.optimizer == 'pbfgs':
        result.add('steps', emit_steps(steps, output_dir / STEPS_FILE))
    result.summary = {
        'optimizer': config.projected.optimizer,
        'd': basis.effective_d,
        'final_loss': rows[-1].train_loss,
        'final_acc': rows[-1].test_acc,
        'residual_ratio': residual_ratio(basis, w - w0),
        'skipped_updates': sum(step.skipped_update for step in steps),
        'skipped_steps': sum(step.skipped_step for step in steps),
        'wall_ms': _ms(started),
    }
    result.add('summary', _update_run_file(output_dir, 'ptrain', result.summary))
    logger.info('ptrain finished: final_acc=%.4f', result.summary['final_acc'])
    return result


def cmd_noise(config, fractions=None, d_values=None, excel=None):
    """Label-noise table: P-SGD final against SGD final and SGD best, per fraction and d."""
    if fractions is None:
        fractions = [config.noise.fraction if config.noise.fraction is not None else 0.0]
    d_values = list(d_values or config.noise.d_values or [config.d])
    root = Path(config.output_dir)
    result = RunResult(summary={})
    table = []
    for fraction in fractions:
        run_dir = root / f'noise-{fraction:g}'
        noisy = replace(
            config,
            noise=replace(config.noise, fraction=float(fraction)),
            projected=replace(config.projected, optimizer='psgd'),
            output_dir=run_dir,
        )
        baseline = cmd_train(noisy)
        result.artifacts.extend(baseline.artifacts)
        for d in d_values:
            sub_dir = run_dir / f'd{d}'
            extracted = cmd_extract(run_dir / TRAJECTORY_FILE, d, sub_dir)
            projected = cmd_ptrain(
                noisy, basis_path=sub_dir / BASIS_FILE, init_path=run_dir / INIT_FILE,
                noise_path=run_dir / NOISE_FILE, output_dir=sub_dir,
            )
            result.artifacts.extend(extracted.artifacts + projected.artifacts)
            table.append((
                float(fraction), d, projected.summary['final_acc'],
                baseline.summary['final_acc'], baseline.summary['best_acc'],
            ))
            logger.info('noise %.2f d=%d: psgd=%.4f sgd=%.4f best=%.4f', *table[-1])
    result.add('noise_summary', emit_table(NOISE_HEADER, table, root / NOISE_SUMMARY))
    if excel is not None:
        result.add('excel', export_workbook(excel, {'Bruit': (NOISE_HEADER, table)}))
    result.rows = table
    result.summary = {'rows': [dict(zip(NOISE_HEADER, row)) for row in table]}
    return result
