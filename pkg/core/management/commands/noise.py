from core.management.base import ExperimentCommand
from core.runner import cmd_noise


class Command(ExperimentCommand):
    help = 'Label-noise sweep: P-SGD final against SGD final and SGD best.'
    command_name = 'noise'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--fraction', type=float, action='append', help='Noise fraction (repeatable)')
        parser.add_argument('--excel', help='Also export the summary as .xlsx')

    def run(self, options):
        config = self.load_config(options)
        result = cmd_noise(
            config,
            fractions=options.get('fraction'),
            d_values=options.get('d'),
            excel=options.get('excel'),
        )
        for row in result.rows:
            self.stdout.write(','.join(str(value) for value in row))
        return result, config
