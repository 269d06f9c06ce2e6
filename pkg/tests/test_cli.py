import json
import os

import pytest
from click.testing import CliRunner

from face_proposals import network
from face_proposals.__main__ import face_proposals_cli


@pytest.fixture
def run_cli(get_env_file_path, monkeypatch):
    for name in ("WEIGHTS", "TEMPLATES", "OUTPUT"):
        monkeypatch.delenv(f"FACE_PROPOSALS_{name}", raising=False)

    def _method(*args):
        return CliRunner().invoke(face_proposals_cli, ["--env_file_path", get_env_file_path, *args])

    return _method


def test_weights_init_and_info(run_cli, tmp_path):
    path = os.path.join(tmp_path, "net.fpnw")
    result = run_cli("weights", "init", path, "--seed", "3")
    assert result.exit_code == 0, result.output
    assert network.dump_weights(network.load_weights(path)) == network.dump_weights(network.random_weights(3))

    result = run_cli("weights", "info", path)
    assert result.exit_code == 0, result.output
    assert f"file size (bytes) {os.path.getsize(path)}" in result.stdout
    assert f"parameters        {network.random_weights(3).parameter_count}" in result.stdout
    assert "classes           background face eye nose mouth" in result.stdout
    assert "conv1" in result.stdout


def test_detect_is_deterministic(run_cli, weights_file, ppm_file):
    image = ppm_file(height=40, width=48, seed=2)
    first = run_cli("detect", image, "--weights", weights_file)
    second = run_cli("detect", image, "--weights", weights_file, "--workers", "1")
    assert first.exit_code == 0, first.output
    assert first.stdout == second.stdout
    for line in first.stdout.splitlines():
        assert line.startswith(f"{image} ")
        assert len(line.rsplit(None, 6)) == 7
    assert "1 image(s) processed" in first.stderr


def test_detect_uniform_weights_propose_nothing(run_cli, uniform_weights_file, ppm_file):
    result = run_cli("detect", ppm_file(), "--weights", uniform_weights_file)
    assert result.exit_code == 0, result.output
    assert result.stdout == ""
    assert "1 image(s) processed, 0 proposal(s), 0 skipped" in result.stderr


def test_detect_to_output_file(run_cli, weights_file, ppm_file, tmp_path):
    output = os.path.join(tmp_path, "detections.txt")
    image = ppm_file(height=40, width=48, seed=2)
    result = run_cli("detect", image, "--weights", weights_file, "-o", output)
    assert result.exit_code == 0, result.output
    assert "1 image(s) processed" in result.stdout
    with open(output) as fh:
        assert fh.read() == run_cli("detect", image, "--weights", weights_file).stdout


def test_detect_skips_unreadable_images(run_cli, uniform_weights_file, ppm_file, tmp_path):
    broken = os.path.join(tmp_path, "broken.ppm")
    with open(broken, "wb") as fh:
        fh.write(b"P6\n4 4\n255\n\x00")
    missing = os.path.join(tmp_path, "missing.ppm")
    result = run_cli("detect", ppm_file(), broken, missing, "--weights", uniform_weights_file)
    assert result.exit_code == 0, result.output
    assert "1 image(s) processed, 0 proposal(s), 2 skipped" in result.stderr


def test_detect_without_weights(run_cli, ppm_file, tmp_path):
    result = run_cli("detect", ppm_file())
    assert result.exit_code == 2
    assert "No weights given" in result.stderr

    result = run_cli("detect", ppm_file(), "--weights", os.path.join(tmp_path, "nothing.fpnw"))
    assert result.exit_code == 2
    assert "Weight file not found" in result.stderr


def test_detect_corrupt_weights(run_cli, weights_file, ppm_file):
    with open(weights_file, "r+b") as fh:
        fh.write(b"XXXX")
    result = run_cli("detect", ppm_file(), "--weights", weights_file)
    assert result.exit_code == 2
    assert "Unusable weight file" in result.stderr


def test_config_file_and_flags(run_cli, uniform_weights_file, ppm_file, tmp_path):
    config_path = os.path.join(tmp_path, "run.yaml")
    with open(config_path, "w") as fh:
        fh.write(f"weights: {uniform_weights_file}\nscale_factor: 0.5\nuse_parts: false\n")
    result = run_cli("detect", ppm_file(), "--config", config_path, "--no-parts")
    assert result.exit_code == 0, result.output

    with open(config_path, "w") as fh:
        fh.write("scale_factr: 0.5\n")
    result = run_cli("detect", ppm_file(), "--config", config_path)
    assert result.exit_code == 2
    assert "Unknown key" in result.stderr


def test_invalid_flag_value(run_cli, uniform_weights_file, ppm_file):
    result = run_cli("detect", ppm_file(), "--weights", uniform_weights_file, "--scale-factor", "1.2")
    assert result.exit_code == 2


def test_eval(run_cli, annotations_file, tmp_path):
    annotations = annotations_file({"imgs/a.ppm": [(10, 10, 50, 50)], "imgs/b.ppm": [(0, 0, 20, 20)]})
    detections = os.path.join(tmp_path, "detections.txt")
    with open(detections, "w") as fh:
        fh.write("/data/imgs/a.ppm 10.0 10.0 50.0 50.0 0.9 1\n")
        fh.write("/data/imgs/b.ppm 0.0 0.0 20.0 20.0 0.8 2\n")
        fh.write("/data/imgs/c.ppm 0.0 0.0 20.0 20.0 0.8 2\n")
    records_path = os.path.join(tmp_path, "records.jsonl")

    result = run_cli("eval", detections, "--annotations", annotations, "-o", records_path)
    assert result.exit_code == 0, result.output
    assert "recall           1.0000" in result.stdout
    assert "precision        1.0000" in result.stdout
    assert "1 detected image(s) without annotations: /data/imgs/c.ppm" in result.stdout

    with open(records_path) as fh:
        records = [json.loads(line) for line in fh]
    assert [record["image"] for record in records] == ["imgs/a.ppm", "imgs/b.ppm", None]


def test_eval_needs_annotations(run_cli, tmp_path):
    detections = os.path.join(tmp_path, "detections.txt")
    open(detections, "w").close()
    result = run_cli("eval", detections)
    assert result.exit_code == 2


def test_levels(run_cli):
    result = run_cli("levels", "--width", "1280", "--height", "720", "--min-face", "10")
    assert result.exit_code == 0, result.output
    assert "[sparse] scale factor 0.25, min face 10.0, extra layer yes" in result.stdout
    assert "total 1747344 cells in 5 level(s)" in result.stdout
    assert "in 19 level(s)" in result.stdout
    ratio = float(result.stdout.rstrip().rsplit(None, 1)[-1])
    assert ratio <= 0.5


def test_levels_image_too_small(run_cli):
    result = run_cli("levels", "--width", "8", "--height", "8")
    assert result.exit_code == 2


def test_bench(run_cli, uniform_weights_file, ppm_file, tmp_path):
    records_path = os.path.join(tmp_path, "bench.jsonl")
    images = [ppm_file("a.ppm", height=48, width=64), ppm_file("b.ppm", height=48, width=64, seed=1)]
    result = run_cli("bench", *images, "--weights", uniform_weights_file, "-o", records_path)
    assert result.exit_code == 0, result.output
    assert "workload ratio sparse/dense" in result.stdout
    assert "5 runs after 1 warm-up" in result.stdout

    with open(records_path) as fh:
        records = [json.loads(line) for line in fh]
    assert len(records) == 3
    assert 0 < records[2]["workload_ratio"] < 1
    assert records[2]["skipped"] == []


def test_bench_repeats_minimum(run_cli, uniform_weights_file, ppm_file):
    result = run_cli("bench", ppm_file(), "--weights", uniform_weights_file, "--repeats", "2")
    assert result.exit_code == 2


def test_synth(run_cli, tmp_path):
    records_path = os.path.join(tmp_path, "synth.jsonl")
    args = ("synth", "--scenes", "20", "--seed", "11", "--noise", "0")
    first = run_cli(*args, "-o", records_path)
    second = run_cli(*args)
    assert first.exit_code == 0, first.output
    assert first.stdout == second.stdout
    assert "result           PASS" in first.stdout
    assert "rejected scenes  0" in first.stdout
    with open(records_path) as fh:
        assert len(fh.readlines()) == 20


def test_synth_failing_criterion(run_cli, tmp_path):
    # A single proposal per image cannot cover scenes holding several faces
    records_path = os.path.join(tmp_path, "synth.jsonl")
    result = run_cli("synth", "--scenes", "20", "--seed", "7", "--max-proposals", "1", "-o", records_path)
    assert result.exit_code == 1, result.output
    assert "result           FAIL" in result.stdout

    with open(records_path) as fh:
        records = [json.loads(line) for line in fh]
    assert all(record["proposals"] <= 1 for record in records)
    assert any(record["faces"] > 1 for record in records)


def test_detect_ignores_untemplated_part_class(run_cli, biased_weights, ppm_file, tmp_path):
    weights_path = os.path.join(tmp_path, "eight.fpnw")
    network.save_weights(biased_weights(5, num_classes=8), weights_path)
    result = run_cli("detect", ppm_file(height=40, width=40), "--weights", weights_path)
    assert result.exit_code == 0, result.output
    assert result.stdout == ""
    assert "1 image(s) processed, 0 proposal(s), 0 skipped" in result.stderr


def test_bench_skips_small_images(run_cli, uniform_weights_file, ppm_file):
    images = [ppm_file("a.ppm", height=48, width=64), ppm_file("tiny.ppm", height=10, width=10)]
    result = run_cli("bench", *images, "--weights", uniform_weights_file)
    assert result.exit_code == 0, result.output
    assert f"skipped 1 image(s): {images[1]}" in result.stdout
