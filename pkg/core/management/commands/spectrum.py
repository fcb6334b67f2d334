from pathlib import Path

from core.exceptions import ConfigError

from core.management.base import ExperimentCommand
from core.runner import TRAJECTORY_FILE, cmd_spectrum


class Command(ExperimentCommand):
    help = 'Print the explained variance ratio of every trajectory component.'
    command_name = 'spectrum'

    def add_arguments(self, parser):
        self.add_config_arguments(parser, required=False)
        parser.add_argument('--trajectory', help='Trajectory file (defaults to <output_dir>/trajectory.dltr)')
        parser.add_argument('--excel', help='Also export the spectrum as .xlsx')

    def run(self, options):
        config = self.load_config(options) if options.get('config') else None
        trajectory = options.get('trajectory')
        if trajectory is None:
            if config is None:
                raise ConfigError('Either --trajectory or --config is required.')
            trajectory = Path(config.output_dir) / TRAJECTORY_FILE
        result = cmd_spectrum(trajectory, options.get('out'), options.get('excel'))
        for component, ratio, cumulative in result.rows:
            self.stdout.write(f'{component:4d}  {ratio:.6e}  {cumulative:.6f}')
        return result, config
