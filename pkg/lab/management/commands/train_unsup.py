"""
Train the unsupervised detectors on REAL training windows and score every window.
Usage: python manage.py train_unsup --features results/features.csv --out results/detectors.joblib
"""

from pathlib import Path

from django.conf import settings

from core import artifacts
from core.choices import RunKind, SplitName
from core.detectors import MAHAL_SPACES, TransformerAEConfig
from lab.management.base import LabCommand
from lab.pipeline import PipelineConfig, WindowDataset, train_detectors


class Command(LabCommand):
    help = "Fit the transformer AE, statistical AE and Mahalanobis detector; write the score CSV"
    run_kind = RunKind.TRAIN_UNSUP

    def add_arguments(self, parser):
        results = Path(settings.LAB_RESULTS_DIR)
        parser.add_argument("--features", required=True, help="Feature CSV written by extract")
        parser.add_argument("--out", default=str(results / "detectors.joblib"), help="Detector bundle artifact")
        parser.add_argument("--scores-out", default=str(results / "scores.csv"))
        parser.add_argument("--mahal-space", choices=MAHAL_SPACES, default="latent")
        parser.add_argument("--shrinkage", type=float, default=1e-3)
        parser.add_argument("--transformer-epochs", type=int, default=settings.LAB_TRANSFORMER_EPOCHS)
        parser.add_argument("--stat-epochs", type=int, default=60)
        parser.add_argument("--min-windows", type=int, default=200)

    def handle(self, *args, **options):
        cfg = PipelineConfig(
            transformer=TransformerAEConfig(
                epochs=options["transformer_epochs"], min_windows=options["min_windows"],
            ),
            stat_epochs=options["stat_epochs"],
            mahal_space=options["mahal_space"],
            shrinkage=options["shrinkage"],
            seed=options["seed"],
        )
        dataset = WindowDataset.load(options["features"])
        if "split" not in dataset.frame:
            dataset = dataset.with_splits(cfg.split_spec)

        bundle = train_detectors(dataset, cfg)
        model_path = artifacts.save_model(self.out_path(options), "detectors", bundle, options["seed"])
        scores = bundle.score_frame(dataset)
        scores_path = artifacts.write_csv(self.out_path(options, "scores_out"), scores)

        self.summary = {
            "windows": len(dataset),
            "train_real": int((dataset.in_split(SplitName.TRAIN) & ~dataset.fake).sum()),
            "transformer_final_mse": bundle.transformer.final_mse,
        }
        self.output_path = model_path
        self.success(f"Detectors → {model_path}; scores ({len(scores)} rows) → {scores_path}")
