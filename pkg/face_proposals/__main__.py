#!/usr/bin/env python
"""Face proposals, the proposal stage of a cascaded face detector driven by face and facial part heatmaps."""

# Standard
import concurrent.futures
import logging
import os
import sys

# Installed
import click
from click.core import ParameterSource

# Own
import face_proposals.config
import face_proposals.evalbench
import face_proposals.image_io
import face_proposals.network
import face_proposals.proposals
import face_proposals.pyramid
import face_proposals.report
import face_proposals.utils
from face_proposals.config import ConfigError, RunConfig
from face_proposals.detector import ProposalDetector

EXIT_CRITERION_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

log = logging.getLogger(__name__)


@click.group(context_settings=dict(help_option_names=["-h", "--help"]))
@click.option("--env_file_path", type=click.Path(), help="dotenv file with FACE_PROPOSALS_* variables.")
@click.option("-v", "--verbose", is_flag=True, help="Log per-level details.")
@click.pass_context
def face_proposals_cli(ctx, env_file_path, verbose):
    try:
        config_values = face_proposals.config.Config(env_file_path=env_file_path)
        face_proposals.utils.setup_logging(config_values.LOG_LOCATION, verbose)
    except ValueError as e:
        raise click.UsageError(str(e), ctx)
    ctx.ensure_object(dict)
    ctx.obj["config_values"] = config_values


### OPTIONS ###
def _options(*decorators):
    def wrap(function):
        for decorator in reversed(decorators):
            function = decorator(function)
        return function

    return wrap


config_option = click.option(
    "--config", "config_path", type=click.Path(), help="YAML run configuration, same keys as the flags."
)
weights_option = click.option("--weights", type=click.Path(), help="Network weight file.")
templates_option = click.option("--templates", type=click.Path(), help="Part template file, 'part ax ay k' lines.")
output_option = click.option("-o", "--output", type=click.Path(), help="Output file.")

pyramid_options = _options(
    click.option("--scale-factor", type=float, help="Ratio between consecutive pyramid levels [0.79]."),
    click.option("--min-face", type=float, help="Smallest face size in pixels [12]."),
    click.option("--extra-layer/--no-extra-layer", default=False, help="Add a level at half the base scale."),
)

proposal_options = _options(
    click.option("--tau-face", type=float, help="Face heatmap threshold [0.6]."),
    click.option("--tau-part", type=float, help="Part heatmap threshold [0.7]."),
    click.option("--tau-iou", type=float, help="IoU for merging part boxes [0.3]."),
    click.option("--peak-radius", type=int, help="Peak suppression radius in heatmap cells [2]."),
    click.option("--face-nms-iou", type=float, help="IoU for suppressing face boxes [0.5]."),
    click.option("--cross-scale-nms-iou", type=float, help="IoU for the final suppression [0.7]."),
    click.option("--max-proposals", type=int, help="Proposals kept per image [20000]."),
    click.option("--parts/--no-parts", "use_parts", default=True, help="Infer faces from part heatmaps."),
)


def given_flags(ctx, **flags):
    """Flags given on the command line, click defaults left out"""
    return {
        name: value
        for name, value in flags.items()
        if value is not None and ctx.get_parameter_source(name) != ParameterSource.DEFAULT
    }


def run_settings(ctx, config_path, defaults=None, **flags):
    settings = dict(defaults or {})
    try:
        settings.update(
            face_proposals.config.merge_settings(ctx.obj["config_values"], config_path, **given_flags(ctx, **flags))
        )
    except ConfigError as e:
        raise click.UsageError(str(e), ctx)
    except OSError as e:
        log.error(f"Could not read config file {config_path}: {e}")
        ctx.exit(EXIT_IO)
    return settings


def run_config(ctx, settings, **pyramid_overrides):
    try:
        return RunConfig.from_settings(settings, **pyramid_overrides)
    except ConfigError as e:
        raise click.UsageError(str(e), ctx)


def load_weights(ctx, path):
    if not path:
        click.echo("No weights given, use --weights or FACE_PROPOSALS_WEIGHTS", err=True)
        ctx.exit(EXIT_USAGE)
    if not os.path.isfile(path):
        click.echo(f"Weight file not found: {path}", err=True)
        ctx.exit(EXIT_USAGE)
    try:
        return face_proposals.network.load_weights(path)
    except face_proposals.network.WeightFileError as e:
        click.echo(f"Unusable weight file {path}: {e}", err=True)
        ctx.exit(EXIT_USAGE)
    except OSError as e:
        log.error(f"Could not read weight file {path}: {e}")
        ctx.exit(EXIT_IO)


def load_templates(ctx, path, weights=None):
    if not path:
        return face_proposals.proposals.DEFAULT_TEMPLATES
    names = weights.class_names if weights is not None else face_proposals.network.DEFAULT_CLASS_NAMES
    try:
        return face_proposals.proposals.load_templates(path, names)
    except face_proposals.proposals.TemplateError as e:
        raise click.UsageError(str(e), ctx)
    except OSError as e:
        log.error(f"Could not read template file {path}: {e}")
        ctx.exit(EXIT_IO)


def write_text(ctx, text, path):
    """Write to path, or to stdout when no path is given"""
    if not path:
        click.echo(text, nl=False)
        return
    try:
        with open(path, mode="w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as e:
        log.error(f"Could not write {path}: {e}")
        ctx.exit(EXIT_IO)


# bench, levels and synth default to the sparse pyramid
SPARSE_DEFAULTS = {"scale_factor": 0.25, "extra_layer": True}


### DETECT ###
@face_proposals_cli.command()
@click.argument("images", nargs=-1, type=click.Path())
@config_option
@weights_option
@templates_option
@output_option
@pyramid_options
@proposal_options
@click.option("--workers", type=click.IntRange(min=1), help="Images processed in parallel.")
@click.pass_context
def detect(ctx, images, config_path, workers, **flags):
    """Write face proposals for IMAGES (binary PPM/PGM), one line per proposal"""
    settings = run_settings(ctx, config_path, **flags)
    cfg = run_config(ctx, settings)
    weights = load_weights(ctx, cfg.weights_path)
    templates = load_templates(ctx, cfg.templates_path, weights)
    detector = ProposalDetector(weights, cfg.pyramid, cfg.proposal, templates)
    workers = workers or ctx.obj["config_values"].WORKERS

    def process(path):
        try:
            image = face_proposals.image_io.load_image(path)
        except (OSError, face_proposals.image_io.ImageFormatError) as e:
            log.warning(f"Skipping unreadable image {path}: {e}")
            return path, None
        try:
            return path, detector.detect(image)
        except face_proposals.pyramid.PyramidError as e:
            log.warning(f"Skipping {path}: {e}")
            return path, None

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(process, images))

    lines = []
    for path, result in results:
        if result is not None:
            lines += [face_proposals.evalbench.format_detection(path, box) for box in result.proposals]
    write_text(ctx, "".join(f"{line}\n" for line in lines), cfg.output_path)

    skipped = sum(result is None for _, result in results)
    summary = f"{len(results) - skipped} image(s) processed, {len(lines)} proposal(s), {skipped} skipped"
    click.echo(summary, err=not cfg.output_path)
    face_proposals.utils.error_reporting(log)


### BENCH ###
@face_proposals_cli.command()
@click.argument("images", nargs=-1, type=click.Path())
@config_option
@weights_option
@templates_option
@output_option
@pyramid_options
@proposal_options
@click.option("--dense-scale-factor", type=float, default=0.79, show_default=True, help="Dense pyramid ratio.")
@click.option("--dense-no-parts", is_flag=True, help="Run the dense pyramid on face heatmaps only.")
@click.option("--annotations", type=click.Path(), help="Annotation file, enables recall and precision.")
@click.option("--iou-thresh", type=float, help="IoU for a true positive [0.5].")
@click.option("--repeats", type=click.IntRange(min=5), default=5, show_default=True, help="Timed runs.")
@click.pass_context
def bench(ctx, images, config_path, dense_scale_factor, dense_no_parts, repeats, **flags):
    """Compare a dense and a sparse pyramid on IMAGES: time, levels and workload"""
    settings = run_settings(ctx, config_path, SPARSE_DEFAULTS, **flags)
    sparse_cfg = run_config(ctx, settings)
    dense_cfg = run_config(ctx, settings, scale_factor=dense_scale_factor, extra_layer=False)
    weights = load_weights(ctx, sparse_cfg.weights_path)
    templates = load_templates(ctx, sparse_cfg.templates_path, weights)
    annotations = read_annotations(ctx, settings.get("annotations"))

    dense_proposal_cfg = None
    if dense_no_parts:
        dense_proposal_cfg = RunConfig.from_settings(dict(settings, use_parts=False)).proposal

    bench_report = face_proposals.evalbench.bench_pyramids(
        images,
        weights,
        dense_cfg.pyramid,
        sparse_cfg.pyramid,
        sparse_cfg.proposal,
        templates,
        annotations=annotations,
        iou_thresh=settings.get("iou_thresh", 0.5),
        repeats=repeats,
        dense_proposal_cfg=dense_proposal_cfg,
    )
    click.echo(face_proposals.report.ReportWriter().bench(bench_report), nl=False)
    if sparse_cfg.output_path:
        records = [bench_report.dense.as_record(), bench_report.sparse.as_record()]
        records.append({"workload_ratio": bench_report.workload_ratio, "skipped": list(bench_report.skipped)})
        write_records(ctx, records, sparse_cfg.output_path)
    face_proposals.utils.error_reporting(log)


@face_proposals_cli.command()
@click.option("--width", type=click.IntRange(min=1), required=True)
@click.option("--height", type=click.IntRange(min=1), required=True)
@config_option
@pyramid_options
@click.option("--dense-scale-factor", type=float, default=0.79, show_default=True, help="Dense pyramid ratio.")
@click.pass_context
def levels(ctx, width, height, config_path, dense_scale_factor, **flags):
    """Print the dense and sparse level lists of an image size and their workload ratio"""
    settings = run_settings(ctx, config_path, SPARSE_DEFAULTS, **flags)
    sparse_cfg = run_config(ctx, settings).pyramid
    dense_cfg = run_config(ctx, settings, scale_factor=dense_scale_factor, extra_layer=False).pyramid
    try:
        plans = [
            (name, cfg, face_proposals.pyramid.plan_levels(height, width, cfg))
            for name, cfg in (("dense", dense_cfg), ("sparse", sparse_cfg))
        ]
    except face_proposals.pyramid.PyramidError as e:
        raise click.UsageError(str(e), ctx)
    click.echo(face_proposals.report.ReportWriter().levels(plans), nl=False)
    dense_cells, sparse_cells = (face_proposals.pyramid.pyramid_workload(plan[2]) for plan in plans)
    ratio = sparse_cells / dense_cells
    click.echo(f"workload ratio sparse/dense {ratio:.4f}")


### EVAL ###
def read_annotations(ctx, path):
    if not path:
        return None
    try:
        return face_proposals.evalbench.load_annotations(path)
    except face_proposals.evalbench.AnnotationError as e:
        raise click.UsageError(str(e), ctx)
    except OSError as e:
        log.error(f"Could not read annotations {path}: {e}")
        ctx.exit(EXIT_IO)


def write_records(ctx, records, path):
    try:
        face_proposals.report.write_records(records, path)
    except OSError as e:
        log.error(f"Could not write {path}: {e}")
        ctx.exit(EXIT_IO)


@face_proposals_cli.command(name="eval")
@click.argument("detections", type=click.Path())
@config_option
@click.option("--annotations", type=click.Path(), help="Annotation file.")
@click.option("--iou-thresh", type=float, help="IoU for a true positive [0.5].")
@output_option
@click.pass_context
def evaluate(ctx, detections, config_path, **flags):
    """Recall and precision of a DETECTIONS file against an annotation file"""
    settings = run_settings(ctx, config_path, **flags)
    annotations = read_annotations(ctx, settings.get("annotations"))
    if annotations is None:
        raise click.UsageError("eval needs --annotations", ctx)
    iou_thresh = settings.get("iou_thresh", 0.5)
    try:
        detected = face_proposals.evalbench.load_detections(detections)
    except face_proposals.evalbench.AnnotationError as e:
        raise click.UsageError(str(e), ctx)
    except OSError as e:
        log.error(f"Could not read detections {detections}: {e}")
        ctx.exit(EXIT_IO)

    found, unmatched = {}, []
    for path, boxes in detected.items():
        key = face_proposals.evalbench.annotation_key(annotations, path)
        if key is None:
            log.warning(f"No annotations for detected image {path}")
            unmatched.append(path)
        else:
            found.setdefault(key, []).extend(boxes)

    # Annotated images without detections count with all their faces missed
    total = face_proposals.evalbench.EvalReport(iou_thresh=iou_thresh)
    records = []
    for image_path, truth in annotations.items():
        image_report = face_proposals.evalbench.evaluate(found.get(image_path, []), truth, iou_thresh)
        records.append(dict(image_report.as_record(), image=image_path))
        total = total + image_report

    click.echo(face_proposals.report.ReportWriter().evaluation(total, sorted(unmatched)), nl=False)
    if settings.get("output"):
        write_records(ctx, records + [dict(total.as_record(), image=None)], settings["output"])


### SYNTH ###
@face_proposals_cli.command()
@config_option
@templates_option
@output_option
@pyramid_options
@proposal_options
@click.option("--scenes", type=click.IntRange(min=1), help="Number of scenes [200].")
@click.option("--seed", type=int, help="Random seed [0].")
@click.option("--noise", type=click.FloatRange(0, 1), help="Background noise amplitude [0.3].")
@click.option("--width", type=click.IntRange(min=12), default=320, show_default=True, help="Scene width.")
@click.option("--height", type=click.IntRange(min=12), default=240, show_default=True, help="Scene height.")
@click.pass_context
def synth(ctx, config_path, width, height, **flags):
    """Plant random faces into heatmaps and check that the proposals recover them"""
    settings = run_settings(ctx, config_path, SPARSE_DEFAULTS, **flags)
    cfg = run_config(ctx, settings)
    templates = load_templates(ctx, cfg.templates_path)
    try:
        levels = face_proposals.pyramid.plan_levels(height, width, cfg.pyramid)
    except face_proposals.pyramid.PyramidError as e:
        raise click.UsageError(str(e), ctx)

    synth_report = face_proposals.evalbench.run_synthetic(
        settings.get("scenes", 200),
        settings.get("seed", 0),
        levels,
        height,
        width,
        cfg.proposal,
        noise=settings.get("noise", 0.3),
        templates=templates,
    )
    click.echo(face_proposals.report.ReportWriter().synth(synth_report), nl=False)
    if cfg.output_path:
        write_records(ctx, [outcome.as_record() for outcome in synth_report.outcomes], cfg.output_path)
    if not synth_report.success:
        ctx.exit(EXIT_CRITERION_FAILED)


### WEIGHTS ###
@face_proposals_cli.group()
@click.pass_context
def weights(ctx):
    """Create and inspect weight files"""
    pass


@weights.command(name="init")
@click.argument("path", type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--classes", type=click.IntRange(min=2), default=5, show_default=True, help="Output classes.")
@click.pass_context
def weights_init(ctx, path, seed, classes):
    """Write random weights to PATH; no trained weights are shipped"""
    try:
        face_proposals.network.save_weights(face_proposals.network.random_weights(seed, classes), path)
    except OSError as e:
        log.error(f"Could not write {path}: {e}")
        ctx.exit(EXIT_IO)
    log.info(f"Wrote random weights (seed {seed}, {classes} classes) to {path}")


@weights.command(name="info")
@click.argument("path", type=click.Path())
@click.pass_context
def weights_info(ctx, path):
    """Model size and layer table of a weight file"""
    network_weights = load_weights(ctx, path)
    click.echo(f"file size (bytes) {os.path.getsize(path)}")
    click.echo(f"parameters        {network_weights.parameter_count}")
    click.echo(f"classes           {' '.join(network_weights.class_names)}")
    for layer in network_weights.layers:
        spec = layer.spec
        click.echo(
            f"  {spec.name:<7} {spec.kind.name.lower():<8} k={spec.kernel} s={spec.stride} p={spec.pad} "
            f"{spec.in_channels}->{spec.out_channels} params={layer.parameter_count}"
        )


if __name__ == "__main__":
    sys.exit(face_proposals_cli())
