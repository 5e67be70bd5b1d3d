"""Shared plumbing for the experiment commands: settings defaults and the run registry."""

import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from ggm.exceptions import GGMError
from ggm.models import ExperimentRun

logger = logging.getLogger(__name__)


def int_list(value):
    """argparse type for comma-separated integers."""
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise ValueError(f"expected comma-separated integers, got {value!r}") from exc


class ExperimentCommand(BaseCommand):
    kind = None

    def add_common_arguments(self, parser):
        parser.add_argument("--seed", type=int, default=None, help="Base seed (default 0).")
        parser.add_argument("--threads", type=int, default=None,
                            help="Worker threads over repetitions (default SIM_THREADS).")

    def threads(self, options):
        return options["threads"] or settings.SIM_THREADS

    def output(self, options, default_name):
        out = options.get("out")
        return Path(out) if out else Path(settings.SIM_OUTPUT_DIR) / default_name

    def run_recorded(self, config, output_path, work):
        """
        Execute work() under an ExperimentRun. work returns (row_count, summary).
        Library errors become CommandError after the run is marked failed.
        """
        run = ExperimentRun.start(self.kind, config, output_path)
        try:
            rows, summary = work()
        except GGMError as exc:
            run.fail(exc)
            self.stderr.write(self.style.ERROR(f"✗ {self.kind} failed: {exc}"))
            raise CommandError(str(exc)) from exc
        except BaseException as exc:
            run.fail(repr(exc))
            raise
        run.finish(rows, summary)
        self.stdout.write(self.style.SUCCESS(f"✓ Wrote {rows} rows to {output_path} (run {run.id})"))
        return run
