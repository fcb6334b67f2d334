import csv
import shutil
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.config import build_config
from core.data import apply_noise_record, load_noise_record
from core.dldr import load_basis, residual_ratio
from core.exceptions import ConfigError, DimensionError, DivergenceError, FormatError, ShapeError
from core.metrics import mask_wall_clock, read_metrics
from core.nn import parameter_count
from core.runner import (
    build_datasets, cmd_extract, cmd_noise, cmd_ptrain, cmd_spectrum, cmd_train,
)
from core.trajectory import TrajectoryStore, load_param_vector, save_param_vector
from core.utils import vector_digest

TINY = {
    'model.layer_dims': '8,16,3',
    'dataset.num_classes': '3',
    'dataset.per_class': '20',
    'dataset.test_per_class': '10',
    'dataset.dim': '8',
    'dataset.spread': '0.5',
    'seeds.init': '1',
    'seeds.data': '2',
    'seeds.noise': '3',
    'baseline.lr': '0.05',
    'baseline.epochs': '3',
    'baseline.batch_size': '16',
    'subspace.d': '2',
    'projected.lr': '0.05',
    'projected.epochs': '2',
    'projected.batch_size': '16',
}


def tiny_config(output_dir, **overrides):
    values = dict(TINY)
    values.update({key.replace('__', '.'): value for key, value in overrides.items()})
    return build_config(values, default_output_dir=output_dir)


class RunnerTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp)


class DatasetBuildTests(RunnerTestCase):
    def test_synthetic_split_is_clean_and_normalized(self):
        train, test = build_datasets(tiny_config(self.tmp))
        self.assertEqual((len(train), len(test)), (60, 30))
        np.testing.assert_allclose(train.inputs.mean(axis=0), 0.0, atol=1e-12)

    def test_class_count_must_match_model(self):
        with self.assertRaises(ConfigError):
            build_datasets(tiny_config(self.tmp, dataset__num_classes='4'))


class TrainTests(RunnerTestCase):
    def test_outputs(self):
        config = tiny_config(self.tmp / 'run')
        result = cmd_train(config)
        self.assertEqual(result.summary['t'], 3)
        rows = read_metrics(self.tmp / 'run' / 'baseline_metrics.csv')
        self.assertEqual([row.epoch for row in rows], [0, 1, 2, 3])
        self.assertTrue(all(row.phase == 'baseline' for row in rows))
        self.assertLess(rows[-1].train_loss, rows[0].train_loss)
        w0 = load_param_vector(self.tmp / 'run' / 'w0.dlpv')
        self.assertEqual(w0.shape, (parameter_count(config.model),))
        store = TrajectoryStore.open(self.tmp / 'run' / 'trajectory.dltr')
        self.assertEqual(store.init_digest, vector_digest(w0))
        self.assertEqual([meta.epoch for meta in store.metadata], [0, 1, 2])
        self.assertEqual(result.summary['sampling_end_acc'], rows[3].test_acc)
        kinds = [kind for kind, _ in result.artifacts]
        self.assertEqual(kinds, ['init', 'trajectory', 'final', 'metrics', 'summary'])

    def test_two_epochs_one_sample_each(self):
        result = cmd_train(tiny_config(self.tmp, baseline__epochs='2'))
        self.assertEqual(result.summary['t'], 2)

    def test_include_init_and_several_samples(self):
        config = tiny_config(self.tmp, sampling__samples_per_epoch='2', sampling__include_init='1')
        cmd_train(config)
        store = TrajectoryStore.open(self.tmp / 'trajectory.dltr')
        self.assertEqual(store.t, 7)
        self.assertEqual(store.metadata[0].global_step, 0)
        self.assertEqual([meta.global_step for meta in store.metadata[1:3]], [2, 4])

    def test_same_seeds_same_files(self):
        cmd_train(tiny_config(self.tmp / 'a'))
        cmd_train(tiny_config(self.tmp / 'b'))
        for name in ('trajectory.dltr', 'w_final.dlpv'):
            self.assertEqual((self.tmp / 'a' / name).read_bytes(), (self.tmp / 'b' / name).read_bytes())
        a = (self.tmp / 'a' / 'baseline_metrics.csv').read_text()
        b = (self.tmp / 'b' / 'baseline_metrics.csv').read_text()
        self.assertEqual(mask_wall_clock(a), mask_wall_clock(b))

    def test_divergence_is_reported(self):
        with self.assertRaises(DivergenceError):
            cmd_train(tiny_config(self.tmp, baseline__lr='1e300'))


class ExtractTests(RunnerTestCase):
    def setUp(self):
        super().setUp()
        cmd_train(tiny_config(self.tmp))
        self.trajectory = self.tmp / 'trajectory.dltr'

    def test_basis_and_spectrum(self):
        result = cmd_extract(self.trajectory, 2)
        basis = load_basis(self.tmp / 'basis.dlbs')
        self.assertEqual(basis.effective_d, result.summary['effective_d'])
        self.assertEqual(basis.init_digest, vector_digest(load_param_vector(self.tmp / 'w0.dlpv')))
        with open(self.tmp / 'spectrum.csv', newline='') as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ['component', 'variance_ratio', 'cumulative_ratio'])
        self.assertEqual(len(rows), 4)
        self.assertAlmostEqual(float(rows[-1][2]), 1.0, places=12)

    def test_d_above_t(self):
        with self.assertRaisesMessage(DimensionError, 't=3'):
            cmd_extract(self.trajectory, 4)

    def test_spectrum_report(self):
        result = cmd_spectrum(self.trajectory, excel=self.tmp / 'spectrum.xlsx')
        self.assertEqual(len(result.rows), 3)
        self.assertTrue((self.tmp / 'spectrum.xlsx').exists())


class ProjectedTests(RunnerTestCase):
    def setUp(self):
        super().setUp()
        self.config = tiny_config(self.tmp)
        cmd_train(self.config)
        cmd_extract(self.tmp / 'trajectory.dltr', 2)

    def test_psgd(self):
        result = cmd_ptrain(self.config)
        rows = read_metrics(self.tmp / 'projected_metrics.csv')
        self.assertEqual([row.epoch for row in rows], [0, 1, 2])
        self.assertIsNone(rows[-1].alpha)
        self.assertLess(rows[-1].train_loss, rows[0].train_loss)
        self.assertLessEqual(result.summary['residual_ratio'], 1e-6)
        w0 = load_param_vector(self.tmp / 'w0.dlpv')
        w = load_param_vector(self.tmp / 'w_projected.dlpv')
        self.assertLessEqual(residual_ratio(load_basis(self.tmp / 'basis.dlbs'), w - w0), 1e-6)
        self.assertFalse((self.tmp / 'pbfgs_steps.csv').exists())

    def test_pbfgs(self):
        config = tiny_config(self.tmp, projected__optimizer='pbfgs', projected__batch_size='32')
        result = cmd_ptrain(config)
        rows = read_metrics(self.tmp / 'projected_metrics.csv')
        self.assertIsNotNone(rows[1].alpha)
        self.assertIsNotNone(rows[1].skipped_updates)
        with open(self.tmp / 'pbfgs_steps.csv', newline='') as handle:
            steps = list(csv.DictReader(handle))
        self.assertEqual(len(steps), 2 * 2)
        self.assertTrue(all(0 < float(step['alpha']) <= 1 for step in steps if step['skipped_step'] == '0'))
        self.assertLessEqual(result.summary['residual_ratio'], 1e-6)

    def test_basis_from_another_model(self):
        other = tiny_config(self.tmp, model__layer_dims='8,10,3')
        with self.assertRaises(ShapeError):
            cmd_ptrain(other)

    def test_foreign_initial_point(self):
        w0 = load_param_vector(self.tmp / 'w0.dlpv')
        path = save_param_vector(w0 + 1.0, self.tmp / 'other.dlpv')
        with self.assertRaises(FormatError):
            cmd_ptrain(self.config, init_path=path)

    def test_deterministic(self):
        cmd_ptrain(self.config, output_dir=self.tmp / 'x')
        cmd_ptrain(self.config, output_dir=self.tmp / 'y')
        self.assertEqual(
            (self.tmp / 'x' / 'w_projected.dlpv').read_bytes(), (self.tmp / 'y' / 'w_projected.dlpv').read_bytes(),
        )


class NoiseTests(RunnerTestCase):
    def test_sweep_shares_one_record(self):
        config = tiny_config(self.tmp)
        result = cmd_noise(config, fractions=[0.5], d_values=[2], excel=self.tmp / 'noise.xlsx')
        self.assertEqual(len(result.rows), 1)
        fraction, d, psgd_final, sgd_final, sgd_best = result.rows[0]
        self.assertEqual((fraction, d), (0.5, 2))
        self.assertGreaterEqual(sgd_best, sgd_final)
        self.assertTrue(0.0 <= psgd_final <= 1.0)
        run_dir = self.tmp / 'noise-0.5'
        record = load_noise_record(run_dir / 'noise.dlnz')
        self.assertEqual(int(record.corrupted_mask.sum()), 30)
        train, _ = build_datasets(replace(config, output_dir=run_dir))
        self.assertEqual(apply_noise_record(train, record).labels.shape, (60,))
        with open(self.tmp / 'noise_summary.csv', newline='') as handle:
            self.assertEqual(next(csv.reader(handle)), ['fraction', 'd', 'psgd_final', 'sgd_final', 'sgd_best'])

    def test_same_seeds_same_summary(self):
        first = cmd_noise(tiny_config(self.tmp / 'a'), fractions=[0.3], d_values=[2])
        second = cmd_noise(tiny_config(self.tmp / 'b'), fractions=[0.3], d_values=[2])
        self.assertEqual(first.rows, second.rows)
