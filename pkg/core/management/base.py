import logging
from dataclasses import asdict

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.config import load_config
from core.exceptions import DldrError
from core.mixins import AuditLogMixin

logger = logging.getLogger(__name__)


class ExperimentCommand(AuditLogMixin, BaseCommand):
    """Base for the experiment commands: run ledger plus exit-code mapping."""

    command_name = None

    def add_config_arguments(self, parser, required=True):
        parser.add_argument('--config', required=required, help='Experiment config (key=value file)')
        parser.add_argument('--out', help='Output directory (overrides output_dir)')
        parser.add_argument('--d', type=int, action='append', help='Subspace dimension (overrides subspace.d)')
        parser.add_argument('--seed', type=int, help='Sets the init, data and noise seeds')

    def load_config(self, options):
        config = load_config(options['config'], runs_dir=settings.DLDR_RUNS_DIR)
        d_values = options.get('d') or []
        return config.with_overrides(
            output_dir=options.get('out'),
            d=d_values[0] if d_values else None,
            seed=options.get('seed'),
        )

    def run(self, options):
        raise NotImplementedError

    def handle(self, *args, **options):
        run = self.start_run(self.command_name, options.get('config') or '', options.get('out') or '')
        try:
            result, config = self.run(options)
        except DldrError as exc:
            self.fail_run(run, exc, exc.exit_code)
            logger.error('%s failed: %s', self.command_name, exc)
            raise CommandError(f'{exc.__class__.__name__}: {exc}', returncode=exc.exit_code) from exc
        except Exception as exc:
            self.fail_run(run, exc, 1)
            logger.exception('%s crashed', self.command_name)
            raise
        if config is not None:
            run.output_dir = str(config.output_dir)
            run.seeds = asdict(config.seeds)
            run.save(update_fields=['output_dir', 'seeds'])
        self.finish_run(run, result)
        for kind, path in result.artifacts:
            self.stdout.write(f'{kind}: {path}')
        self.stdout.write(self.style.SUCCESS(f'{self.command_name} finished (run #{run.pk})'))
        return None
