import shutil
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from core.config import build_config, load_config
from core.exceptions import ConfigError
from core.nn import ConvStem


class ConfigTests(SimpleTestCase):
    def test_defaults(self):
        config = build_config({})
        self.assertEqual(config.model.layer_dims, (784, 64, 10))
        self.assertEqual(config.baseline.lr, 0.1)
        self.assertEqual(config.baseline.batch_size, 128)
        self.assertEqual(config.sampling.end_epoch, config.baseline.epochs)
        self.assertEqual(config.d, 20)
        self.assertEqual(config.projected.schedule, ((30, 0.1),))
        self.assertIsNone(config.noise.fraction)

    def test_optimizer_dependent_defaults(self):
        config = build_config({'baseline.optimizer': 'adam', 'projected.optimizer': 'pbfgs'})
        self.assertEqual(config.baseline.lr, 0.001)
        self.assertEqual(config.projected.batch_size, 512)

    def test_parsed_values(self):
        config = build_config({
            'model.layer_dims': '18,4,3',
            'model.conv_stem': '2,3,1',
            'model.input_shape': '1,5,5',
            'baseline.schedule': '15:0.5, 5:0.1',
            'sampling.include_init': 'yes',
            'noise.d_values': '5,10',
        })
        self.assertEqual(config.model.conv_stem, ConvStem(2, 3, 1))
        self.assertEqual(config.baseline.schedule, ((5, 0.1), (15, 0.5)))
        self.assertTrue(config.sampling.include_init)
        self.assertEqual(config.noise.d_values, (5, 10))

    def test_errors_name_the_key(self):
        with self.assertRaisesMessage(ConfigError, 'baseline.lrate'):
            build_config({'baseline.lrate': '0.1'})
        with self.assertRaisesMessage(ConfigError, 'baseline.epochs'):
            build_config({'baseline.epochs': 'ten'})
        with self.assertRaisesMessage(ConfigError, 'dataset.kind'):
            build_config({'dataset.kind': 'cifar'})
        with self.assertRaises(ConfigError):
            build_config({'noise.fraction': '1.5'})
        with self.assertRaises(ConfigError):
            build_config({'projected.optimizer': 'lbfgs'})

    def test_bounds_name_the_key(self):
        for key, value in (
            ('baseline.batch_size', '0'),
            ('projected.batch_size', '0'),
            ('baseline.epochs', '-1'),
            ('dataset.per_class', '0'),
            ('dataset.test_per_class', '0'),
            ('seeds.noise', '-3'),
        ):
            with self.subTest(key=key), self.assertRaisesMessage(ConfigError, key):
                build_config({key: value})
        with self.assertRaisesMessage(ConfigError, 'seeds.init'):
            build_config({}).with_overrides(seed=-1)

    def test_overrides(self):
        config = build_config({'seeds.init': '1', 'seeds.data': '2'}).with_overrides(d=7, seed=9, output_dir='/tmp/x')
        self.assertEqual(config.d, 7)
        self.assertEqual((config.seeds.init, config.seeds.data, config.seeds.noise), (9, 9, 9))
        self.assertEqual(config.output_dir, Path('/tmp/x'))


class ConfigFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp)

    def test_paths_resolve_against_the_config_file(self):
        path = self.tmp / 'mnist.cfg'
        path.write_text(
            '# desk recipe\n'
            'dataset.train_images=data/train-images-idx3-ubyte\n'
            'dataset.train_labels=data/train-labels-idx1-ubyte\n'
            'subspace.d=15\n',
            encoding='utf-8',
        )
        config = load_config(path, runs_dir=self.tmp / 'runs')
        self.assertEqual(config.dataset.kind, 'idx')
        self.assertEqual(config.dataset.train_images, self.tmp / 'data' / 'train-images-idx3-ubyte')
        self.assertEqual(config.output_dir, self.tmp / 'runs' / 'mnist')
        self.assertEqual(config.d, 15)
        self.assertEqual(config.source, path)
        self.assertEqual(config.as_dict()['model']['layer_dims'], [784, 64, 10])

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(self.tmp / 'absent.cfg')
