from django.contrib import admin

from .models import ExperimentRun, Log


class LogInline(admin.TabularInline):
    model = Log
    extra = 0
    readonly_fields = ('action', 'target_type', 'target_id', 'details', 'host', 'created_at')


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('id', 'command', 'status', 'exit_code', 'output_dir', 'started_at', 'finished_at')
    list_filter = ('command', 'status')
    search_fields = ('config_path', 'output_dir')
    inlines = [LogInline]


admin.site.register(Log)
