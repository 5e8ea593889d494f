"""
Run the experiment grids end to end.
Usage: python manage.py grid --experiment all --jobs 4 --out results/grid
"""

import logging
from pathlib import Path

from django.conf import settings

from core.choices import RunKind
from core.detectors import TransformerAEConfig
from lab import experiments
from lab.management.base import LabCommand
from lab.pipeline import PipelineConfig, run_pipeline

logger = logging.getLogger(__name__)

# experiments that reuse one base pipeline run
NEEDS_BASE = {"cross", "ablation", "unsupervised", "threshold", "latency", "projection"}


class Command(LabCommand):
    help = "Attack, window, cross-dataset, ablation, baseline, threshold, latency and QoE grids"
    run_kind = RunKind.GRID

    def add_arguments(self, parser):
        parser.add_argument(
            "--experiment", choices=[*experiments.EXPERIMENTS, "all"], default="all",
        )
        parser.add_argument("--jobs", type=int, default=settings.LAB_JOBS, help="Parallel grid points")
        parser.add_argument("--session-epochs", type=int, default=settings.LAB_SESSION_EPOCHS)
        parser.add_argument("--transformer-epochs", type=int, default=settings.LAB_TRANSFORMER_EPOCHS)
        parser.add_argument("--qoe-seeds", type=int, default=10)
        parser.add_argument("--latency-samples", type=int, default=1000)
        parser.add_argument("--out", default=str(Path(settings.LAB_RESULTS_DIR) / "grid"))

    def handle(self, *args, **options):
        cfg = PipelineConfig(
            session_epochs=options["session_epochs"],
            transformer=TransformerAEConfig(epochs=options["transformer_epochs"]),
            seed=options["seed"],
        )
        chosen = list(experiments.EXPERIMENTS) if options["experiment"] == "all" else [options["experiment"]]
        out_dir = Path(options["out"])
        provenance = {"pipeline": cfg.to_dict(), "seed": cfg.seed, "jobs": options["jobs"]}

        base = None
        if NEEDS_BASE.intersection(chosen):
            self.stdout.write("Training the base pipeline...")
            base = run_pipeline(cfg, n_jobs=options["jobs"])

        written = {}
        for name in chosen:
            logger.info(f"Grid experiment {name} started")
            written[name] = str(self.run_experiment(name, cfg, base, out_dir, provenance, options))
            logger.info(f"Grid experiment {name} finished")
            self.stdout.write(f"  ✓ {name} → {written[name]}")

        self.summary = written
        self.output_path = out_dir
        self.success(f"{len(written)} experiment(s) written to {out_dir}")

    def run_experiment(self, name, cfg, base, out_dir, provenance, options):
        if name == "attack":
            return experiments.write_result(out_dir, "attack_grid", experiments.attack_grid(cfg), provenance)
        if name == "window":
            rows = experiments.window_grid(cfg, n_jobs=options["jobs"])
            return experiments.write_result(out_dir, "window_grid", rows, provenance)
        if name == "cross":
            rows = experiments.cross_dataset(cfg, result=base)
            return experiments.write_result(out_dir, "cross_dataset", rows, provenance)
        if name == "ablation":
            return experiments.write_result(out_dir, "ablation", experiments.ablation(cfg, result=base), provenance)
        if name == "unsupervised":
            rows = experiments.unsupervised_comparison(cfg, result=base)
            return experiments.write_result(out_dir, "unsupervised", rows, provenance)
        if name == "threshold":
            rows = experiments.threshold_sweep(cfg, result=base)
            return experiments.write_result(out_dir, "threshold_sweep", rows, provenance)
        if name == "latency":
            rows = experiments.latency_bench(
                base.bundle, base.heads, base.dataset, num_samples=options["latency_samples"], seed=cfg.seed,
            )
            return experiments.write_result(out_dir, "latency", rows, provenance)
        if name == "projection":
            rows, explained = experiments.pca_projection(base)
            return experiments.write_result(out_dir, "pca", rows, provenance, {"explained_variance": explained})
        if name == "qoe":
            summary, series, ordering = experiments.qoe_sweep(seeds=range(cfg.seed, cfg.seed + options["qoe_seeds"]))
            experiments.write_result(out_dir, "qoe_rpe_rot_smoothed", series, provenance)
            return experiments.write_result(
                out_dir, "qoe", summary, provenance, {"rotation_ordering": ordering},
            )
        raise ValueError(f"unknown experiment {name}")
