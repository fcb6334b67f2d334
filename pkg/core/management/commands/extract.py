from pathlib import Path

from core.exceptions import ConfigError

from core.management.base import ExperimentCommand
from core.runner import TRAJECTORY_FILE, cmd_extract


class Command(ExperimentCommand):
    help = 'Extract a d-dimensional subspace basis from a sampled trajectory.'
    command_name = 'extract'

    def add_arguments(self, parser):
        self.add_config_arguments(parser, required=False)
        parser.add_argument('--trajectory', help='Trajectory file (defaults to <output_dir>/trajectory.dltr)')

    def run(self, options):
        config = None
        if options.get('config'):
            config = self.load_config(options)
        trajectory = options.get('trajectory')
        if trajectory is None:
            if config is None:
                raise ConfigError('Either --trajectory or --config is required.')
            trajectory = Path(config.output_dir) / TRAJECTORY_FILE
        d_values = options.get('d') or []
        d = d_values[0] if d_values else (config.d if config is not None else None)
        if d is None:
            raise ConfigError('--d is required without --config.')
        output_dir = options.get('out') or (config.output_dir if config is not None else None)
        return cmd_extract(trajectory, d, output_dir), config
