from django.contrib import admin

from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('subcommand', 'seed', 'shards', 'status', 'created_at')
    list_filter = ('subcommand', 'status')
    readonly_fields = ('run_id', 'created_at')
