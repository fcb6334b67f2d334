from django.db import models


class ExperimentRun(models.Model):
    class Command(models.TextChoices):
        TRAIN = 'train', 'Entrainement de reference'
        EXTRACT = 'extract', 'Extraction du sous-espace'
        PTRAIN = 'ptrain', 'Entrainement projete'
        NOISE = 'noise', 'Balayage bruit'
        SPECTRUM = 'spectrum', 'Spectre de trajectoire'

    class Status(models.TextChoices):
        RUNNING = 'RUNNING', 'En cours'
        SUCCEEDED = 'SUCCEEDED', 'Termine'
        FAILED = 'FAILED', 'Echec'

    command = models.CharField(max_length=20, choices=Command.choices)
    status = models.CharField(max_length=20, choices=Status.choices, default=Status.RUNNING)
    config_path = models.CharField(max_length=500, blank=True)
    output_dir = models.CharField(max_length=500, blank=True)
    seeds = models.JSONField(blank=True, null=True)
    summary = models.JSONField(blank=True, null=True)
    error = models.TextField(blank=True)
    exit_code = models.PositiveSmallIntegerField(default=0)
    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.command} #{self.pk} ({self.get_status_display()})"


class Log(models.Model):
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, null=True, blank=True, related_name='logs')
    action = models.CharField(max_length=255)
    target_type = models.CharField(max_length=100, blank=True)
    target_id = models.CharField(max_length=500, blank=True)
    details = models.JSONField(blank=True, null=True)
    host = models.CharField(max_length=255, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    def __str__(self):
        return f"{self.action} - {self.created_at:%Y-%m-%d %H:%M:%S}"
