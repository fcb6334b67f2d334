import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from dotenv import dotenv_values

from .exceptions import ConfigError
from .nn import ConvStem, ModelSpec
from .trajectory import SamplingSchedule

logger = logging.getLogger(__name__)


def _check_bounds(section, config, minimums):
    for name, minimum in minimums:
        value = getattr(config, name)
        if value < minimum:
            raise ConfigError(f'{section}.{name} must be >= {minimum}, got {value}')


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = 'synthetic'
    train_images: Path = None
    train_labels: Path = None
    test_images: Path = None
    test_labels: Path = None
    limit: int = 10000
    test_limit: int = None
    num_classes: int = 10
    per_class: int = 100
    test_per_class: int = 50
    dim: int = 784
    spread: float = 1.0
    normalize: bool = True

    def __post_init__(self):
        _check_bounds('dataset', self, (('per_class', 1), ('test_per_class', 1)))


@dataclass(frozen=True)
class Seeds:
    init: int = 0
    data: int = 0
    noise: int = 0

    def __post_init__(self):
        _check_bounds('seeds', self, (('init', 0), ('data', 0), ('noise', 0)))


@dataclass(frozen=True)
class BaselineConfig:
    optimizer: str = 'sgd'
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 128
    schedule: tuple = ()

    def __post_init__(self):
        _check_bounds('baseline', self, (('epochs', 0), ('batch_size', 1)))


@dataclass(frozen=True)
class ProjectedConfig:
    optimizer: str = 'psgd'
    lr: float = 1.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 40
    batch_size: int = 128
    schedule: tuple = ((30, 0.1),)
    c: float = 0.4
    beta: float = 0.55
    max_backtracks: int = 50

    def __post_init__(self):
        _check_bounds('projected', self, (('epochs', 0), ('batch_size', 1), ('max_backtracks', 1)))


@dataclass(frozen=True)
class NoiseConfig:
    fraction: float = None
    d_values: tuple = ()


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    seeds: Seeds = field(default_factory=Seeds)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    sampling: SamplingSchedule = None
    d: int = 20
    projected: ProjectedConfig = field(default_factory=ProjectedConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    output_dir: Path = Path('runs/default')
    source: Path = None

    def __post_init__(self):
        if self.sampling is None:
            object.__setattr__(self, 'sampling', SamplingSchedule(end_epoch=self.baseline.epochs))
        if self.d < 1:
            raise ConfigError(f'subspace.d must be >= 1, got {self.d}')
        if self.baseline.optimizer not in ('sgd', 'adam'):
            raise ConfigError(f'baseline.optimizer must be sgd or adam, got {self.baseline.optimizer!r}')
        if self.projected.optimizer not in ('psgd', 'pbfgs'):
            raise ConfigError(f'projected.optimizer must be psgd or pbfgs, got {self.projected.optimizer!r}')
        if self.noise.fraction is not None and not 0.0 <= self.noise.fraction <= 1.0:
            raise ConfigError(f'noise.fraction must lie in [0, 1], got {self.noise.fraction}')

    def with_overrides(self, output_dir=None, d=None, seed=None):
        config = self
        if output_dir is not None:
            config = replace(config, output_dir=Path(output_dir))
        if d is not None:
            config = replace(config, d=int(d))
        if seed is not None:
            config = replace(config, seeds=Seeds(int(seed), int(seed), int(seed)))
        return config

    def as_dict(self):
        data = asdict(self)
        return _jsonable(data)


def _jsonable(value):
    if isinstance(value, dict):
        return {key: _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, Path):
        return str(value)
    return value


def _int(raw):
    return int(raw)


def _float(raw):
    return float(raw)


def _bool(raw):
    lowered = raw.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f'not a boolean: {raw!r}')


def _ints(raw):
    return tuple(int(part) for part in raw.split(',') if part.strip())


def _floats(raw):
    return tuple(float(part) for part in raw.split(',') if part.strip())


def _schedule(raw):
    milestones = []
    for part in raw.split(','):
        if not part.strip():
            continue
        epoch, multiplier = part.split(':')
        milestones.append((int(epoch), float(multiplier)))
    return tuple(sorted(milestones))


def _text(raw):
    return raw.strip()


def _optional(parser):
    def parse(raw):
        return None if not raw.strip() else parser(raw)
    return parse


KEYS = {
    'model.layer_dims': ('model', 'layer_dims', _ints),
    'model.activation': ('model', 'activation', _text),
    'model.conv_stem': ('model', 'conv_stem', _optional(_ints)),
    'model.input_shape': ('model', 'input_shape', _optional(_ints)),
    'dataset.kind': ('dataset', 'kind', _text),
    'dataset.train_images': ('dataset', 'train_images', _optional(Path)),
    'dataset.train_labels': ('dataset', 'train_labels', _optional(Path)),
    'dataset.test_images': ('dataset', 'test_images', _optional(Path)),
    'dataset.test_labels': ('dataset', 'test_labels', _optional(Path)),
    'dataset.limit': ('dataset', 'limit', _optional(_int)),
    'dataset.test_limit': ('dataset', 'test_limit', _optional(_int)),
    'dataset.num_classes': ('dataset', 'num_classes', _int),
    'dataset.per_class': ('dataset', 'per_class', _int),
    'dataset.test_per_class': ('dataset', 'test_per_class', _int),
    'dataset.dim': ('dataset', 'dim', _int),
    'dataset.spread': ('dataset', 'spread', _float),
    'dataset.normalize': ('dataset', 'normalize', _bool),
    'seeds.init': ('seeds', 'init', _int),
    'seeds.data': ('seeds', 'data', _int),
    'seeds.noise': ('seeds', 'noise', _int),
    'baseline.optimizer': ('baseline', 'optimizer', _text),
    'baseline.lr': ('baseline', 'lr', _float),
    'baseline.momentum': ('baseline', 'momentum', _float),
    'baseline.weight_decay': ('baseline', 'weight_decay', _float),
    'baseline.epochs': ('baseline', 'epochs', _int),
    'baseline.batch_size': ('baseline', 'batch_size', _int),
    'baseline.schedule': ('baseline', 'schedule', _schedule),
    'sampling.samples_per_epoch': ('sampling', 'samples_per_epoch', _int),
    'sampling.start_epoch': ('sampling', 'start_epoch', _int),
    'sampling.end_epoch': ('sampling', 'end_epoch', _int),
    'sampling.include_init': ('sampling', 'include_init', _bool),
    'subspace.d': ('subspace', 'd', _int),
    'projected.optimizer': ('projected', 'optimizer', _text),
    'projected.lr': ('projected', 'lr', _float),
    'projected.momentum': ('projected', 'momentum', _float),
    'projected.weight_decay': ('projected', 'weight_decay', _float),
    'projected.epochs': ('projected', 'epochs', _int),
    'projected.batch_size': ('projected', 'batch_size', _int),
    'projected.schedule': ('projected', 'schedule', _schedule),
    'projected.c': ('projected', 'c', _float),
    'projected.beta': ('projected', 'beta', _float),
    'projected.max_backtracks': ('projected', 'max_backtracks', _int),
    'noise.fraction': ('noise', 'fraction', _optional(_float)),
    'noise.d_values': ('noise', 'd_values', _ints),
    'output_dir': (None, 'output_dir', _optional(Path)),
}


def parse_values(values):
    sections = {}
    for key, raw in values.items():
        if key not in KEYS:
            raise ConfigError(f'unknown config key {key!r}')
        section, name, parser = KEYS[key]
        try:
            parsed = parser(raw or '')
        except (TypeError, ValueError) as exc:
            raise ConfigError(f'invalid value for {key!r}: {raw!r} ({exc})') from exc
        sections.setdefault(section, {})[name] = parsed
    return sections


def build_config(values, base_dir=None, default_output_dir=None):
    sections = parse_values(values)
    base_dir = Path(base_dir) if base_dir is not None else None

    model = dict(sections.get('model', {}))
    model.setdefault('layer_dims', (784, 64, 10))
    if model.get('conv_stem') is not None:
        stem = model['conv_stem']
        if len(stem) != 3:
            raise ConfigError(f"invalid value for 'model.conv_stem': expected channels,kernel,stride")
        model['conv_stem'] = ConvStem(*stem)

    dataset = dict(sections.get('dataset', {}))
    for key in ('train_images', 'train_labels', 'test_images', 'test_labels'):
        path = dataset.get(key)
        if path is not None and base_dir is not None and not path.is_absolute():
            dataset[key] = base_dir / path
    if 'kind' not in dataset and dataset.get('train_images') is not None:
        dataset['kind'] = 'idx'
    if dataset.get('kind', 'synthetic') not in ('synthetic', 'idx'):
        raise ConfigError(f"invalid value for 'dataset.kind': {dataset['kind']!r}")

    baseline = dict(sections.get('baseline', {}))
    if baseline.get('optimizer') == 'adam':
        baseline.setdefault('lr', 0.001)
    baseline = BaselineConfig(**baseline)

    projected = dict(sections.get('projected', {}))
    if projected.get('optimizer') == 'pbfgs':
        projected.setdefault('batch_size', 512)

    sampling = dict(sections.get('sampling', {}))
    sampling.setdefault('end_epoch', baseline.epochs)

    output_dir = sections.get(None, {}).get('output_dir')
    if output_dir is None:
        output_dir = Path(default_output_dir or 'runs/default')
    elif base_dir is not None and not output_dir.is_absolute():
        output_dir = base_dir / output_dir

    try:
        return ExperimentConfig(
            model=ModelSpec(**model),
            dataset=DatasetConfig(**dataset),
            seeds=Seeds(**sections.get('seeds', {})),
            baseline=baseline,
            sampling=SamplingSchedule(**sampling),
            d=sections.get('subspace', {}).get('d', 20),
            projected=ProjectedConfig(**projected),
            noise=NoiseConfig(**sections.get('noise', {})),
            output_dir=output_dir,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, runs_dir=None):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f'config file {path} not found')
    values = dotenv_values(path, interpolate=False)
    default_output = Path(runs_dir) / path.stem if runs_dir is not None else None
    config = build_config(values, base_dir=path.parent, default_output_dir=default_output)
    logger.info('Loaded config %s', path)
    return replace(config, source=path)
