"""Module to render benchmark, evaluation and synthetic-recovery reports"""

# Standard
import json
import logging
import os

# installed
import jinja2

# Own
import face_proposals.utils
from face_proposals import __version__

log = logging.getLogger(__name__)

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates")


def _fixed(value, digits=4):
    if value is None:
        return "n/a"
    return f"{value:.{digits}f}"


class ReportWriter(object):
    """Class to render the human-readable reports"""

    def __init__(self):
        self.jinja_env = jinja2.Environment(
            loader=jinja2.FileSystemLoader(TEMPLATE_DIR),
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
            undefined=jinja2.StrictUndefined,
        )
        self.jinja_env.filters["fixed"] = _fixed

    def render(self, template_name, **context):
        template = self.jinja_env.get_template(template_name)
        return template.render(
            git_commits=face_proposals.utils.get_git_commits(),
            version=__version__,
            **context,
        )

    def bench(self, bench_report):
        return self.render("bench.txt.j2", report=bench_report, runs=[bench_report.dense, bench_report.sparse])

    def evaluation(self, eval_report, unmatched_images=()):
        return self.render("eval.txt.j2", report=eval_report, unmatched_images=unmatched_images)

    def synth(self, synth_report):
        return self.render("synth.txt.j2", report=synth_report)

    def levels(self, plans):
        """plans: list of (name, PyramidConfig, [LevelGeometry]) for one image size"""
        return self.render("levels.txt.j2", plans=plans)


def write_records(records, path):
    """Machine-readable output, one JSON object per line"""
    with open(path, mode="w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
    log.info(f"Wrote {len(records)} record(s) to {path}")
