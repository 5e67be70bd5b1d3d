from django.contrib import admin
from .models import ExperimentRun

@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ("kind", "status", "row_count", "output_path", "started_at", "finished_at")
    search_fields = ("output_path",)
    list_filter = ("kind", "status", "started_at")
    readonly_fields = ("id", "started_at", "finished_at")
