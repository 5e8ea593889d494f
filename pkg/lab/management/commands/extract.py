"""
Turn telemetry directories into window features and per-epoch sequences.
Usage: python manage.py extract --in results/session_0 results/session_1 --out results/features.csv
"""

from pathlib import Path

from django.conf import settings

from core.choices import RunKind
from core.features import WindowConfig
from lab.management.base import LabCommand
from lab.pipeline import extract_dataset, load_telemetry, sequence_path


class Command(LabCommand):
    help = "Extract sliding-window features from one or more simulated sessions"
    run_kind = RunKind.EXTRACT

    def add_arguments(self, parser):
        parser.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="DIR",
                            help="Telemetry directories; windows never cross sessions")
        parser.add_argument("--window", type=int, default=10)
        parser.add_argument("--stride", type=int, default=5)
        parser.add_argument("--rolling-span", type=int, default=None)
        parser.add_argument("--baseline-span", type=int, default=100)
        parser.add_argument("--out", default=str(Path(settings.LAB_RESULTS_DIR) / "features.csv"))

    def handle(self, *args, **options):
        window = WindowConfig(
            window_len=options["window"],
            stride=options["stride"],
            rolling_span=options["rolling_span"],
            baseline_span=options["baseline_span"],
        )
        logs = [load_telemetry(path) for path in options["inputs"]]
        dataset = extract_dataset(logs, window)
        out = dataset.save(self.out_path(options))

        fake = int(dataset.fake.sum())
        self.summary = {"windows": len(dataset), "fake": fake, "sessions": len(logs)}
        self.output_path = out
        self.success(
            f"{len(dataset)} windows ({fake} FAKE) from {len(logs)} session(s) → {out} + {sequence_path(out).name}"
        )
