import csv
import io
from dataclasses import astuple, dataclass, fields

from .exceptions import FormatError
from .utils import atomic_write_text, read_bytes

HEADER = (
    'phase', 'epoch', 'train_loss', 'train_acc', 'test_loss', 'test_acc',
    'wall_ms', 'alpha', 'backtracks', 'skipped_updates',
)
STEP_HEADER = ('step', 'epoch', 'loss', 'alpha', 'evals', 'decrease', 'skipped_step', 'skipped_update')


@dataclass(frozen=True)
class MetricsRow:
    phase: str
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    wall_ms: int
    alpha: float = None
    backtracks: int = None
    skipped_updates: int = None

    def __post_init__(self):
        if self.phase not in ('baseline', 'projected'):
            raise ValueError(f'unknown phase {self.phase!r}')
        for name in ('train_acc', 'test_acc'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f'{name}={value} outside [0, 1]')


@dataclass(frozen=True)
class StepRow:
    step: int
    epoch: int
    loss: float
    alpha: float
    evals: int
    decrease: float
    skipped_step: bool
    skipped_update: bool


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return int(value)
    return value


def _render(header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(value) for value in astuple(row)])
    return buffer.getvalue()


def emit_metrics(rows, path):
    return atomic_write_text(path, _render(HEADER, rows))


def emit_steps(rows, path):
    return atomic_write_text(path, _render(STEP_HEADER, rows))


def emit_table(header, rows, path):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return atomic_write_text(path, buffer.getvalue())


def _parse(value, kind):
    if value == '':
        return None
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def read_metrics(path):
    text = read_bytes(path).decode('utf-8')
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != HEADER:
        raise FormatError(f'{path}: unexpected metrics header {header}')
    kinds = [field.type for field in fields(MetricsRow)]
    kinds = [{'str': str, 'int': int, 'float': float}.get(kind, kind) for kind in kinds]
    return [
        MetricsRow(*(_parse(value, kind) for value, kind in zip(line, kinds)))
        for line in reader
    ]


def mask_wall_clock(text):
    """Metrics CSV text with the wall_ms column blanked, for run-to-run comparison."""
    column = HEADER.index('wall_ms')
    lines = []
    for line in text.split('\n'):
        cells = line.split(',')
        if len(cells) == len(HEADER) and cells[column] != 'wall_ms':
            cells[column] = ''
        lines.append(','.join(cells))
    return '\n'.join(lines)
