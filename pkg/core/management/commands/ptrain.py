from core.management.base import ExperimentCommand
from core.runner import cmd_ptrain


class Command(ExperimentCommand):
    help = 'Retrain from the stored w_0 inside the extracted subspace (P-SGD or P-BFGS).'
    command_name = 'ptrain'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)
        parser.add_argument('--basis', help='Basis file (defaults to <output_dir>/basis.dlbs)')
        parser.add_argument('--init', help='Initial point (defaults to <output_dir>/w0.dlpv)')
        parser.add_argument('--noise-record', help='Noise record (defaults to <output_dir>/noise.dlnz)')

    def run(self, options):
        config = self.load_config(options)
        result = cmd_ptrain(
            config,
            basis_path=options.get('basis'),
            init_path=options.get('init'),
            noise_path=options.get('noise_record'),
        )
        return result, config
