"""
Per-sample inference latency of each scoring stage.
Usage: python manage.py bench_latency --detectors results/detectors.joblib --head results/gbt.joblib --features results/features.csv
"""

from pathlib import Path

from django.conf import settings

from core import artifacts
from core.choices import RunKind
from lab import experiments
from lab.management.base import LabCommand
from lab.pipeline import WindowDataset


class Command(LabCommand):
    help = "Warm per-sample median latency for every detector, every head and the fused path"
    run_kind = RunKind.BENCH_LATENCY

    def add_arguments(self, parser):
        parser.add_argument("--detectors", required=True, help="Detector bundle artifact")
        parser.add_argument("--head", dest="heads", action="append", default=None, help="Head artifact (repeatable)")
        parser.add_argument("--features", required=True)
        parser.add_argument("--samples", type=int, default=1000)
        parser.add_argument("--out", default=str(Path(settings.LAB_RESULTS_DIR) / "latency"))

    def handle(self, *args, **options):
        bundle = artifacts.load_model(options["detectors"], expected_kind="detectors")["payload"]
        heads = {}
        for path in options["heads"] or []:
            head = artifacts.load_model(path, expected_kind="head")["payload"]
            heads[head.kind if head.kind not in heads else Path(path).stem] = head
        dataset = WindowDataset.load(options["features"])

        rows = experiments.latency_bench(bundle, heads, dataset, num_samples=options["samples"], seed=options["seed"])
        provenance = {
            "detectors": options["detectors"], "heads": options["heads"] or [],
            "features": options["features"], "samples": options["samples"], "seed": options["seed"],
        }
        out = experiments.write_result(options["out"], "latency", rows, provenance)

        for row in rows.itertuples():
            self.stdout.write(f"  {row.module:<28} {row.median_ms:10.3f} ms")
        self.summary = dict(zip(rows["module"], rows["median_ms"]))
        self.output_path = out
        self.success(f"Latency report → {out}")
