"""
Exact Shapley attributions of a head over the fused triplet.
Usage: python manage.py explain --model results/gbt.joblib --scores results/scores.csv --out results/explain
"""

from pathlib import Path

from core import artifacts
from core.choices import RunKind, SplitName
from lab import experiments
from lab.management.base import LabCommand
from lab.pipeline import SCORE_COLUMNS


class Command(LabCommand):
    help = "Per-sample Shapley values, global importance and example explanations"
    run_kind = RunKind.EXPLAIN

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True, help="Head artifact")
        parser.add_argument("--scores", required=True)
        parser.add_argument("--background", type=int, default=100, help="Background rows from the training split")
        parser.add_argument("--max-samples", type=int, default=500)
        parser.add_argument("--split", choices=[*SplitName.values, "all"], default=SplitName.TEST.value)
        parser.add_argument("--out", required=True, help="Output directory")

    def handle(self, *args, **options):
        head = artifacts.load_model(options["model"], expected_kind="head")["payload"]
        scores = artifacts.read_csv(options["scores"], required_columns=SCORE_COLUMNS)
        split = None if options["split"] == "all" else options["split"]

        rows, ranking, examples = experiments.explain_head(
            head, scores, split=split, background_size=options["background"],
            max_samples=options["max_samples"], seed=options["seed"],
        )
        out_dir = Path(options["out"])
        artifacts.write_csv(out_dir / "shapley.csv", rows)
        artifacts.write_json(out_dir / "explain.json", {
            "global_mean_abs": ranking,
            "examples": examples,
            "provenance": {"model": options["model"], "scores": options["scores"], "seed": options["seed"]},
        })

        self.summary = {"samples": len(rows), "ranking": ranking}
        self.output_path = out_dir
        order = " > ".join(ranking)
        self.success(f"{len(rows)} explanations, importance {order} → {out_dir}")
