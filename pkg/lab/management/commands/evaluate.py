"""
Evaluate a trained head on one split of a score CSV.
Usage: python manage.py evaluate --model results/gbt.joblib --scores results/scores.csv --out results/eval
"""

from pathlib import Path

import pandas as pd

from core import artifacts
from core.choices import RunKind, SplitName
from lab.management.base import LabCommand
from lab.pipeline import SCORE_COLUMNS, evaluate_head


class Command(LabCommand):
    help = "Write metrics.json and metrics.csv for a head on a score file"
    run_kind = RunKind.EVALUATE

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True)
        parser.add_argument("--scores", required=True)
        parser.add_argument("--split", choices=[*SplitName.values, "all"], default=SplitName.TEST.value)
        parser.add_argument("--threshold", type=float, default=0.5)
        parser.add_argument("--out", required=True, help="Output directory")

    def handle(self, *args, **options):
        head = artifacts.load_model(options["model"], expected_kind="head")["payload"]
        scores = artifacts.read_csv(options["scores"], required_columns=SCORE_COLUMNS)
        split = None if options["split"] == "all" else options["split"]
        report = evaluate_head(head, scores, split=split, threshold=options["threshold"])

        out_dir = Path(options["out"])
        metrics = {"head": head.kind, "inputs": head.input_names, "split": options["split"], **report.to_dict()}
        artifacts.write_json(out_dir / "metrics.json", {
            "metrics": metrics,
            "provenance": {"model": options["model"], "scores": options["scores"], "seed": options["seed"]},
        })
        artifacts.write_csv(out_dir / "metrics.csv", pd.DataFrame([metrics]).drop(columns="inputs"))

        self.summary = report.to_dict()
        self.output_path = out_dir
        auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
        self.success(f"F1_FAKE={report.f1_fake:.4f}  F1_REAL={report.f1_real:.4f}  AUC={auc} → {out_dir}")
