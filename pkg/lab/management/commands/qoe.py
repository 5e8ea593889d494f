"""
Trajectory error report for a ground-truth / estimate pair.
Usage: python manage.py qoe --gt gt.txt --spoof-level 50 --out results/qoe/report.json
"""

from pathlib import Path

import pandas as pd
from django.conf import settings

from core import artifacts
from core.choices import RunKind
from core.qoe import SPOOF_MASKS, SpoofConfig, qoe_report, read_tum, spoof, synthetic_head_trajectory, write_tum
from lab.management.base import LabCommand


class Command(LabCommand):
    help = "ATE / RPE report for an estimated or spoofed trajectory (TUM format)"
    run_kind = RunKind.QOE

    def add_arguments(self, parser):
        parser.add_argument("--gt", default=None, help="Ground-truth TUM file (synthetic head motion if omitted)")
        source = parser.add_mutually_exclusive_group()
        source.add_argument("--est", default=None, help="Estimated TUM file")
        source.add_argument("--spoof-level", type=int, choices=sorted(SPOOF_MASKS), default=None)
        parser.add_argument("--delta", type=int, default=1)
        parser.add_argument("--smooth", type=int, default=100)
        parser.add_argument("--max-dt", type=float, default=0.02)
        parser.add_argument("--sigma-t", type=float, default=0.05, help="Translation noise, metres")
        parser.add_argument("--sigma-r", type=float, default=2.0, help="Rotation noise, degrees")
        parser.add_argument("--poses", type=int, default=600, help="Length of the synthetic trajectory")
        parser.add_argument("--out", default=str(Path(settings.LAB_RESULTS_DIR) / "qoe" / "report.json"))

    def handle(self, *args, **options):
        gt = read_tum(options["gt"]) if options["gt"] else synthetic_head_trajectory(options["poses"], seed=options["seed"])
        out = self.out_path(options)

        level = options["spoof_level"]
        if options["est"]:
            est = read_tum(options["est"])
        else:
            level = level or 0
            est = spoof(gt, SpoofConfig(level, options["sigma_t"], options["sigma_r"], seed=options["seed"]))
            write_tum(out.with_name(f"{out.stem}_est.txt"), est)
            if not options["gt"]:
                write_tum(out.with_name(f"{out.stem}_gt.txt"), gt)

        report = qoe_report(gt, est, options["delta"], options["smooth"], options["max_dt"], spoof_level=level)
        artifacts.write_json(out, report)
        series = pd.DataFrame({
            "series": f"spoof_{level}" if level is not None else "estimate",
            "x": range(len(report["rpe_rot_smoothed"])),
            "y": report["rpe_rot_smoothed"],
        })
        artifacts.write_csv(out.with_suffix(".csv"), series)

        self.summary = {"ate": report["ate"], "rpe": report["rpe"], "spoof_level": level}
        self.output_path = out
        self.success(
            f"ATE rmse={report['ate']['rmse']:.4f} m  RPE trans={report['rpe']['trans_rmse']:.4f} m  "
            f"rot={report['rpe']['rot_rmse_deg']:.3f}° → {out}"
        )
