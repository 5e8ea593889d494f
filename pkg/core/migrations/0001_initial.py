# Generated by Django 6.0.2 on 2026-10-19 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('kind', models.CharField(choices=[('simulate', 'Simulate'), ('extract', 'Extract'), ('train_unsup', 'Train unsupervised detectors'), ('score', 'Score'), ('train_head', 'Train head'), ('evaluate', 'Evaluate'), ('grid', 'Grid'), ('qoe', 'QoE'), ('bench_latency', 'Latency benchmark'), ('explain', 'Explain')], db_index=True, max_length=20)),
                ('status', models.CharField(choices=[('running', 'Running'), ('succeeded', 'Succeeded'), ('failed', 'Failed')], default='running', max_length=20)),
                ('seed', models.BigIntegerField(blank=True, null=True)),
                ('config_json', models.JSONField(blank=True, help_text='Resolved run options', null=True)),
                ('summary_json', models.JSONField(blank=True, help_text='Headline numbers of the run', null=True)),
                ('output_path', models.CharField(blank=True, default='', max_length=1024)),
                ('error_message', models.TextField(blank=True, default='')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
    ]
