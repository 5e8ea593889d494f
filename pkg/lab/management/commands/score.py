"""
Score windows with a detector bundle, or score triplets with a trained head.
Usage: python manage.py score --model results/detectors.joblib --features results/features.csv --out scores.csv
"""

from django.core.management.base import CommandError

from core import artifacts
from core.choices import RunKind
from lab.management.base import LabCommand
from lab.pipeline import SCORE_COLUMNS, WindowDataset, prediction_frame


class Command(LabCommand):
    help = "Apply a model artifact; the artifact kind decides what is scored"
    run_kind = RunKind.SCORE

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True)
        parser.add_argument("--features", default=None, help="Feature CSV (detector bundles)")
        parser.add_argument("--scores", default=None, help="Score CSV (heads)")
        parser.add_argument("--threshold", type=float, default=0.5)
        parser.add_argument("--out", required=True)

    def handle(self, *args, **options):
        envelope = artifacts.load_model(options["model"])
        kind = envelope["kind"]

        if kind == "detectors":
            if not options["features"]:
                raise CommandError("a detector bundle needs --features")
            dataset = WindowDataset.load(options["features"])
            frame = envelope["payload"].score_frame(dataset)
        elif kind == "head":
            if not options["scores"]:
                raise CommandError("a head needs --scores")
            scores = artifacts.read_csv(options["scores"], required_columns=SCORE_COLUMNS)
            frame = prediction_frame(envelope["payload"], scores, options["threshold"])
        else:
            raise CommandError(f"cannot score with a {kind!r} artifact")

        out = artifacts.write_csv(self.out_path(options), frame)
        self.summary = {"kind": kind, "rows": len(frame)}
        self.output_path = out
        self.success(f"Scored {len(frame)} rows with {kind} artifact → {out}")
