from core.management.base import ExperimentCommand
from core.runner import cmd_train


class Command(ExperimentCommand):
    help = 'Train the baseline from init_params(seeds.init) and sample its trajectory.'
    command_name = 'train'

    def add_arguments(self, parser):
        self.add_config_arguments(parser)

    def run(self, options):
        config = self.load_config(options)
        return cmd_train(config), config
