"""
Train a supervised head on fused anomaly triplets.
Usage: python manage.py train_head --scores results/scores.csv --head gbt --calibrate --out results/gbt.joblib
"""

from core import artifacts
from core.choices import HeadKind, RunKind
from lab.management.base import LabCommand
from lab.pipeline import SCORE_COLUMNS, parse_inputs, train_head


class Command(LabCommand):
    help = "Train the MLP or gradient-boosted head, optionally with Platt calibration"
    run_kind = RunKind.TRAIN_HEAD

    def add_arguments(self, parser):
        parser.add_argument("--scores", required=True)
        parser.add_argument("--head", choices=HeadKind.values, default=HeadKind.MLP.value)
        parser.add_argument("--calibrate", action="store_true", help="Fit a Platt calibrator on the validation split")
        parser.add_argument("--inputs", default="recon,stat,mahal", help="Comma-separated triplet components")
        parser.add_argument("--epochs", type=int, default=200, help="MLP epochs")
        parser.add_argument("--rounds", type=int, default=200, help="Maximum boosting rounds")
        parser.add_argument("--out", required=True)

    def handle(self, *args, **options):
        scores = artifacts.read_csv(options["scores"], required_columns=SCORE_COLUMNS)
        head = train_head(
            scores,
            options["head"],
            inputs=parse_inputs(options["inputs"]),
            use_calibration=options["calibrate"],
            seed=options["seed"],
            mlp_epochs=options["epochs"],
            gbt_rounds=options["rounds"],
        )
        out = artifacts.save_model(self.out_path(options), "head", head, options["seed"])

        self.summary = {
            "head": head.kind,
            "inputs": head.input_names,
            "calibrated": head.calibrator is not None,
        }
        self.output_path = out
        self.success(f"{head.kind} head on {', '.join(head.input_names)} → {out}")
