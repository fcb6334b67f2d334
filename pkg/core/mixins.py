import socket

from django.utils import timezone

from .models import ExperimentRun, Log


class AuditLogMixin:
    action_start = 'START'
    action_write = 'WRITE'
    action_finish = 'FINISH'
    action_fail = 'FAIL'

    def _log_action(self, run, action, target_type='', target_id='', details=None):
        Log.objects.create(
            run=run,
            action=action,
            target_type=target_type,
            target_id=str(target_id),
            details=details or {},
            host=socket.gethostname(),
        )

    def start_run(self, command, config_path='', output_dir='', seeds=None):
        run = ExperimentRun.objects.create(
            command=command,
            config_path=str(config_path or ''),
            output_dir=str(output_dir or ''),
            seeds=seeds,
        )
        self._log_action(run, self.action_start, 'ExperimentRun', run.pk)
        return run

    def finish_run(self, run, result):
        for kind, path in result.artifacts:
            self._log_action(run, self.action_write, kind, path)
        run.status = ExperimentRun.Status.SUCCEEDED
        run.summary = result.summary
        run.finished_at = timezone.now()
        run.save(update_fields=['status', 'summary', 'finished_at'])
        self._log_action(run, self.action_finish, 'ExperimentRun', run.pk)

    def fail_run(self, run, exc, exit_code):
        run.status = ExperimentRun.Status.FAILED
        run.error = str(exc)
        run.exit_code = exit_code
        run.finished_at = timezone.now()
        run.save(update_fields=['status', 'error', 'exit_code', 'finished_at'])
        self._log_action(
            run, self.action_fail, 'ExperimentRun', run.pk,
            {'error': exc.__class__.__name__, 'exit_code': exit_code},
        )
