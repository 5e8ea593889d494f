"""
Shared base for the lab management commands.

Adds the global ``--seed`` and ``--config`` flags, fills options from the
config file, records every invocation in the run registry and reports
failures as one JSON object on stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from decouple import Config, Csv, RepositoryEnv
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, handle_default_options
from django.db import DatabaseError, connections

from core.exceptions import LabError

logger = logging.getLogger(__name__)

# options every Django command carries; never part of run provenance
DJANGO_OPTIONS = {
    "verbosity", "settings", "pythonpath", "traceback", "no_color",
    "force_color", "skip_checks", "stdout", "stderr",
}


def lab_error_of(exc):
    if isinstance(exc, LabError):
        return exc
    if isinstance(exc.__cause__, LabError):
        return exc.__cause__
    return None


def error_report(exc, command: str) -> dict:
    lab_error = lab_error_of(exc)
    if lab_error is not None:
        return {"error": lab_error.code, "message": str(lab_error), "command": command}
    if isinstance(exc, CommandError):
        return {"error": "command_error", "message": str(exc), "command": command}
    return {"error": "internal_error", "message": f"{type(exc).__name__}: {exc}", "command": command}


class LabCommand(BaseCommand):
    run_kind = None
    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.add_argument("--seed", type=int, default=settings.LAB_SEED, help="Master RNG seed")
        parser.add_argument(
            "--config", default=None, metavar="FILE",
            help="key=value file with defaults for any flag of this command",
        )
        return parser

    # ──────────────────────────────────────────────
    # Options
    # ──────────────────────────────────────────────

    def apply_config_file(self, options: dict) -> dict:
        """
        Fill options still at their parser default from the config file.
        A flag passed explicitly with its default value counts as not passed.
        """
        path = options.get("config")
        if not path:
            return options
        if not Path(path).is_file():
            raise CommandError(f"config file {path} does not exist")
        repository = RepositoryEnv(path)
        file_config = Config(repository)

        parser = self.create_parser("manage.py", self.run_kind or "lab")
        resolved = dict(options)
        for action in parser._actions:
            if action.dest in DJANGO_OPTIONS or action.dest in ("help", "config"):
                continue
            if resolved.get(action.dest) != action.default:
                continue
            key = self._config_key(action, repository)
            if key is None:
                continue
            resolved[action.dest] = file_config(key, cast=self._config_cast(action))
            logger.debug(f"{action.dest} = {resolved[action.dest]!r} from {path}")
        return resolved

    @staticmethod
    def _config_key(action, repository):
        names = [action.dest] + [s.lstrip("-") for s in action.option_strings]
        for name in names:
            for variant in (name, name.replace("_", "-"), name.replace("-", "_")):
                if variant in repository.data:
                    return variant
        return None

    @staticmethod
    def _config_cast(action):
        if action.nargs == 0:
            return bool
        item = action.type or str
        if action.nargs in ("+", "*") or isinstance(action, argparse._AppendAction):
            return Csv(cast=item)
        return item

    @staticmethod
    def provenance(options: dict) -> dict:
        kept = {k: v for k, v in options.items() if k not in DJANGO_OPTIONS}
        return json.loads(json.dumps(kept, default=str))

    def out_path(self, options: dict, name: str = "out") -> Path:
        path = Path(options[name])
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    # ──────────────────────────────────────────────
    # Run registry
    # ──────────────────────────────────────────────

    def open_run(self, options: dict):
        from core.models import ExperimentRun

        try:
            return ExperimentRun.objects.create(
                kind=self.run_kind,
                seed=options.get("seed"),
                config_json=self.provenance(options),
            )
        except DatabaseError as e:
            logger.warning(f"Run registry unavailable, continuing without it: {e}")
            return None

    @staticmethod
    def close_run(run, summary=None, output_path="", error=None):
        if run is None:
            return
        try:
            if error is None:
                run.mark_succeeded(json.loads(json.dumps(summary, default=str)), output_path)
            else:
                run.mark_failed(str(error))
        except DatabaseError as e:
            logger.warning(f"Could not update run #{run.pk}: {e}")

    # ──────────────────────────────────────────────
    # Execution
    # ──────────────────────────────────────────────

    def execute(self, *args, **options):
        options = self.apply_config_file(options)
        self.summary = None
        self.output_path = ""
        run = self.open_run(options)
        try:
            output = super().execute(*args, **options)
        except LabError as e:
            self.close_run(run, error=e)
            raise CommandError(f"{e.code}: {e}") from e
        except Exception as e:
            self.close_run(run, error=e)
            raise
        self.close_run(run, self.summary, self.output_path)
        return output

    def run_from_argv(self, argv):
        command = argv[1] if len(argv) > 1 else str(self.run_kind)
        options = None
        try:
            # parser errors raise CommandError until the command line is parsed
            parser = self.create_parser(argv[0], command)
            options = parser.parse_args(argv[2:])
            cmd_options = vars(options)
            args = cmd_options.pop("args", ())
            handle_default_options(options)
            self._called_from_command_line = True
            self.execute(*args, **cmd_options)
        except Exception as e:
            if options is not None and getattr(options, "traceback", False):
                raise
            if lab_error_of(e) is None and not isinstance(e, CommandError):
                logger.error(f"{command} failed", exc_info=True)
            sys.stderr.write(json.dumps(error_report(e, command)) + "\n")
            sys.exit(2 if lab_error_of(e) is not None else 1)
        finally:
            connections.close_all()

    def success(self, message: str):
        self.stdout.write(self.style.SUCCESS(message))
