import uuid

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                ("run_id", models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ("subcommand", models.CharField(choices=[("modulus", "Modulus"), ("resolvent", "Resolvent"), ("linear", "Linear flow"), ("heat", "Heat semigroup"), ("sde", "SDE lab"), ("stability", "Stability"), ("zvonkin", "Zvonkin"), ("acceptance", "Acceptance")], max_length=20)),
                ("seed", models.BigIntegerField()),
                ("shards", models.PositiveIntegerField(default=1)),
                ("params", models.JSONField(default=dict)),
                ("out_dir", models.CharField(max_length=1024)),
                ("status", models.CharField(choices=[("PASSED", "Passed"), ("FAILED", "Failed"), ("ERROR", "Error")], default="PASSED", max_length=20)),
                ("summary", models.TextField(blank=True)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
            ],
            options={
                "ordering": ["-created_at"],
            },
        ),
    ]
