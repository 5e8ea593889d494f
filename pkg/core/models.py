from django.db import models
from django.utils import timezone

from core.choices import RunKind, RunStatus


# ══════════════════════════════════════════════
# MODELS
# ══════════════════════════════════════════════


class ExperimentRun(models.Model):
    """
    One invocation of a lab command.

    The registry is bookkeeping only; the files a run writes are the real
    artifacts and never depend on this table.
    """

    kind = models.CharField(max_length=20, choices=RunKind.choices, db_index=True)
    status = models.CharField(
        max_length=20,
        choices=RunStatus.choices,
        default=RunStatus.RUNNING,
    )
    seed = models.BigIntegerField(null=True, blank=True)
    config_json = models.JSONField(blank=True, null=True, help_text="Resolved run options")
    summary_json = models.JSONField(blank=True, null=True, help_text="Headline numbers of the run")
    output_path = models.CharField(max_length=1024, blank=True, default="")
    error_message = models.TextField(blank=True, default="")

    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.kind} #{self.pk} ({self.get_status_display()})"

    @property
    def duration_seconds(self):
        if self.finished_at is None or self.created_at is None:
            return None
        return (self.finished_at - self.created_at).total_seconds()

    def mark_succeeded(self, summary=None, output_path=""):
        self.status = RunStatus.SUCCEEDED
        self.summary_json = summary
        self.output_path = str(output_path or "")
        self.finished_at = timezone.now()
        self.save(update_fields=["status", "summary_json", "output_path", "finished_at"])

    def mark_failed(self, message):
        self.status = RunStatus.FAILED
        self.error_message = message
        self.finished_at = timezone.now()
        self.save(update_fields=["status", "error_message", "finished_at"])
