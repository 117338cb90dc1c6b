from django.db import models


class ExperimentRun(models.Model):
    """One invocation of the experiment pipeline over all repetitions"""

    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('partial', 'Partial'),  # some repetitions failed
        ('failed', 'Failed'),
    ]

    name = models.CharField(max_length=200, blank=True)
    config = models.JSONField()  # validated ExperimentConfigSerializer output
    master_seed = models.BigIntegerField(default=0)
    repetitions = models.PositiveIntegerField(default=1)
    output_dir = models.CharField(max_length=500)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='pending')

    # rows of the aggregate table: {method, metric, mean, sd, n}
    aggregate = models.JSONField(default=list, blank=True)
    theorem_passed = models.BooleanField(null=True, blank=True)
    error = models.TextField(blank=True)

    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.name or 'run'} #{self.pk} ({self.status})"


class RepetitionResult(models.Model):
    """Metrics and guarantee check of a single repetition"""

    STATUS_CHOICES = [
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    run = models.ForeignKey('ExperimentRun', on_delete=models.CASCADE, related_name='results')
    repetition = models.PositiveIntegerField()
    seed = models.BigIntegerField()
    status = models.CharField(max_length=20, choices=STATUS_CHOICES)

    metrics = models.JSONField(default=list, blank=True)  # one MetricReport row per method
    theorem = models.JSONField(default=dict, blank=True)  # method -> Theorem1Report.summary()
    notes = models.JSONField(default=list, blank=True)
    error = models.TextField(blank=True)

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['run', 'repetition']
        unique_together = ['run', 'repetition']

    def __str__(self):
        return f"run {self.run_id} rep {self.repetition} ({self.status})"
