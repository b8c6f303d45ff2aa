from django.db import models
import uuid


class ExperimentRun(models.Model):
    SUBCOMMAND_CHOICES = (
        ('modulus', 'Modulus'),
        ('resolvent', 'Resolvent'),
        ('linear', 'Linear flow'),
        ('heat', 'Heat semigroup'),
        ('sde', 'SDE lab'),
        ('stability', 'Stability'),
        ('zvonkin', 'Zvonkin'),
        ('acceptance', 'Acceptance'),
    )
    STATUS_CHOICES = (
        ('PASSED', 'Passed'),
        ('FAILED', 'Failed'),
        ('ERROR', 'Error'),
    )
    run_id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    subcommand = models.CharField(max_length=20, choices=SUBCOMMAND_CHOICES)
    seed = models.BigIntegerField()
    shards = models.PositiveIntegerField(default=1)
    params = models.JSONField(default=dict)
    out_dir = models.CharField(max_length=1024)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='PASSED')
    summary = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.subcommand} seed={self.seed} ({self.status})"
