from django.db import models
from django.utils import timezone
import uuid


class ExperimentRun(models.Model):
    """One CLI invocation and where its results went."""

    KIND_CHOICES = [
        ("simulate", "simulate"),
        ("theory", "theory"),
        ("nongaussian", "nongaussian"),
        ("sweep_sparsity", "sweep_sparsity"),
    ]
    STATUS_CHOICES = [
        ("running", "running"),
        ("complete", "complete"),
        ("failed", "failed"),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    kind = models.CharField(max_length=32, choices=KIND_CHOICES)
    config = models.JSONField(default=dict)
    output_path = models.CharField(max_length=1024)
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default="running")
    row_count = models.IntegerField(default=0)
    summary = models.JSONField(null=True, blank=True)  # aggregate metrics, or the failure message

    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ("-started_at",)

    def __str__(self):
        return f"{self.kind} run {self.id} ({self.status})"

    @classmethod
    def start(cls, kind, config, output_path):
        return cls.objects.create(kind=kind, config=config, output_path=str(output_path))

    def finish(self, row_count, summary=None):
        self.status = "complete"
        self.row_count = int(row_count)
        self.summary = summary
        self.finished_at = timezone.now()
        self.save(update_fields=["status", "row_count", "summary", "finished_at"])

    def fail(self, message):
        self.status = "failed"
        self.summary = {"error": str(message)}
        self.finished_at = timezone.now()
        self.save(update_fields=["status", "summary", "finished_at"])
