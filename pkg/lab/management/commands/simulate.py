"""
Simulate one load-balancing session with a misreporting switch.
Usage: python manage.py simulate --switches 4 --tau 0.48 --rho 0.01 --epsilon 1000 --out results/session
"""

from pathlib import Path

from django.conf import settings

from core.choices import AttackMode, RunKind
from core.simcore import AttackConfig, TrafficConfig, run_session
from lab.management.base import LabCommand
from lab.pipeline import save_telemetry


class Command(LabCommand):
    help = "Run the SDN session simulator and write telemetry.csv + metadata.json"
    run_kind = RunKind.SIMULATE

    def add_arguments(self, parser):
        parser.add_argument("--switches", type=int, default=4, help="Number of switches S")
        parser.add_argument("--tau", type=float, default=0.48, help="Target selection share of the compromised switch")
        parser.add_argument("--rho", type=float, default=0.01, help="Stealth percentile of fake reports")
        parser.add_argument("--epsilon", type=int, default=1000, help="Attack window in epochs")
        parser.add_argument("--epochs", type=int, default=settings.LAB_SESSION_EPOCHS)
        parser.add_argument("--compromised", type=int, default=0, help="Index of the compromised switch")
        parser.add_argument("--attack-start", type=int, default=None, help="First attack epoch (default: warm-up)")
        parser.add_argument("--warmup", type=int, default=100)
        parser.add_argument("--mode", choices=AttackMode.values, default=AttackMode.STEALTHY.value)
        parser.add_argument("--phi", type=float, default=None, help="Override the misreporting frequency")
        parser.add_argument("--session-interval", type=float, default=15.0)
        parser.add_argument("--workflow-rate", type=float, default=2500.0)
        parser.add_argument("--background-rate", type=float, default=50.0)
        parser.add_argument("--out", default=str(Path(settings.LAB_RESULTS_DIR) / "session"))

    def handle(self, *args, **options):
        attack = AttackConfig(
            num_switches=options["switches"],
            target_share=options["tau"],
            stealth_percentile=options["rho"],
            attack_window=options["epsilon"],
            compromised_switch=options["compromised"],
            attack_start=options["attack_start"],
            warmup=options["warmup"],
            mode=options["mode"],
            misreport_freq_override=options["phi"],
        )
        traffic = TrafficConfig(
            session_interval=options["session_interval"],
            workflow_rate=options["workflow_rate"],
            background_rate=options["background_rate"],
        )
        log = run_session(attack, traffic, options["epochs"], options["seed"])
        out_dir = save_telemetry(log, options["out"])

        self.summary = {
            "phi": attack.misreport_freq,
            "misreport_rate": log.misreport_rate(),
            "selection_share": log.selection_share(attack.compromised_switch),
        }
        self.output_path = out_dir
        self.success(
            f"φ={attack.misreport_freq:.4f}  misreport rate={self.summary['misreport_rate']:.4f}  "
            f"selection share={self.summary['selection_share']:.4f}  → {out_dir}"
        )
