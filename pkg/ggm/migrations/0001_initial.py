# Generated by Django 4.2.25 on 2026-10-16 09:12

from django.db import migrations, models
import uuid


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('kind', models.CharField(choices=[('simulate', 'simulate'), ('theory', 'theory'), ('nongaussian', 'nongaussian'), ('sweep_sparsity', 'sweep_sparsity')], max_length=32)),
                ('config', models.JSONField(default=dict)),
                ('output_path', models.CharField(max_length=1024)),
                ('status', models.CharField(choices=[('running', 'running'), ('complete', 'complete'), ('failed', 'failed')], default='running', max_length=16)),
                ('row_count', models.IntegerField(default=0)),
                ('summary', models.JSONField(blank=True, null=True)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ('-started_at',),
            },
        ),
    ]
