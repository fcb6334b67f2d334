import shutil
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

from django.contrib.auth import get_user_model
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase
from django.urls import reverse

from core.models import ExperimentRun, Log

CONFIG = '''# tiny synthetic run
model.layer_dims=8,16,3
dataset.num_classes=3
dataset.per_class=20
dataset.test_per_class=10
dataset.dim=8
dataset.spread=0.5
baseline.lr=0.05
baseline.epochs=3
baseline.batch_size=16
subspace.d=2
projected.lr=0.05
projected.epochs=2
projected.batch_size=16
'''


class CommandTests(TestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp)
        self.config = self.tmp / 'tiny.cfg'
        self.config.write_text(CONFIG, encoding='utf-8')
        self.out = self.tmp / 'out'

    def call(self, *args):
        stdout = StringIO()
        call_command(*args, stdout=stdout)
        return stdout.getvalue()

    def test_full_chain(self):
        self.call('train', '--config', str(self.config), '--out', str(self.out), '--seed', '4')
        self.call('extract', '--config', str(self.config), '--out', str(self.out), '--seed', '4')
        output = self.call('ptrain', '--config', str(self.config), '--out', str(self.out), '--seed', '4')
        self.assertIn('ptrain finished', output)
        self.assertTrue((self.out / 'projected_metrics.csv').exists())

        runs = ExperimentRun.objects.order_by('pk')
        self.assertEqual([run.command for run in runs], ['train', 'extract', 'ptrain'])
        self.assertTrue(all(run.status == ExperimentRun.Status.SUCCEEDED for run in runs))
        train = runs[0]
        self.assertEqual(train.seeds, {'init': 4, 'data': 4, 'noise': 4})
        self.assertEqual(train.summary['t'], 3)
        written = Log.objects.filter(run=train, action='WRITE').values_list('target_type', flat=True)
        self.assertIn('trajectory', list(written))
        self.assertTrue(Log.objects.filter(run=train, action='FINISH').exists())

    def test_d_above_t_exits_with_config_code(self):
        self.call('train', '--config', str(self.config), '--out', str(self.out))
        with self.assertRaises(CommandError) as ctx:
            self.call('extract', '--trajectory', str(self.out / 'trajectory.dltr'), '--d', '9')
        self.assertEqual(ctx.exception.returncode, 2)
        run = ExperimentRun.objects.get(command='extract')
        self.assertEqual(run.status, ExperimentRun.Status.FAILED)
        self.assertEqual(run.exit_code, 2)
        self.assertIn('t=3', run.error)

    def test_unknown_key(self):
        self.config.write_text(CONFIG + 'baseline.lrate=0.1\n', encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            self.call('train', '--config', str(self.config))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('baseline.lrate', str(ctx.exception))

    def test_zero_batch_size_is_a_config_error(self):
        self.config.write_text(CONFIG.replace('baseline.batch_size=16', 'baseline.batch_size=0'), encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            self.call('train', '--config', str(self.config), '--out', str(self.out))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('baseline.batch_size', str(ctx.exception))
        self.assertEqual(ExperimentRun.objects.get().status, ExperimentRun.Status.FAILED)

    def test_unexpected_error_still_closes_the_run(self):
        with mock.patch('core.management.commands.train.cmd_train', side_effect=RuntimeError('boom')):
            with self.assertRaises(RuntimeError):
                self.call('train', '--config', str(self.config), '--out', str(self.out))
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, ExperimentRun.Status.FAILED)
        self.assertEqual(run.exit_code, 1)
        self.assertEqual(run.error, 'boom')
        self.assertTrue(Log.objects.filter(run=run, action='FAIL').exists())

    def test_missing_trajectory(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('spectrum', '--trajectory', str(self.tmp / 'absent.dltr'))
        self.assertEqual(ctx.exception.returncode, 3)

    def test_spectrum_and_noise(self):
        self.call('train', '--config', str(self.config), '--out', str(self.out))
        output = self.call('spectrum', '--trajectory', str(self.out / 'trajectory.dltr'))
        self.assertEqual(len([line for line in output.splitlines() if line.strip().startswith(('1 ', '2 ', '3 '))]), 3)
        output = self.call(
            'noise', '--config', str(self.config), '--out', str(self.tmp / 'sweep'),
            '--fraction', '0.2', '--d', '2', '--excel', str(self.tmp / 'noise.xlsx'),
        )
        self.assertTrue((self.tmp / 'sweep' / 'noise_summary.csv').exists())
        self.assertTrue((self.tmp / 'noise.xlsx').exists())
        self.assertIn('0.2,2,', output)


class AdminTests(TestCase):
    def test_run_ledger_pages(self):
        admin = get_user_model().objects.create_superuser('admin', 'admin@example.com', 'admin123')
        self.client.force_login(admin)
        run = ExperimentRun.objects.create(command=ExperimentRun.Command.TRAIN, output_dir='runs/tiny')
        Log.objects.create(run=run, action='WRITE', target_type='trajectory', target_id='runs/tiny/trajectory.dltr')
        response = self.client.get(reverse('admin:core_experimentrun_changelist'))
        self.assertEqual(response.status_code, 200)
        response = self.client.get(reverse('admin:core_experimentrun_change', args=[run.pk]))
        self.assertContains(response, 'trajectory.dltr')
        self.assertEqual(str(run), f'train #{run.pk} (En cours)')
