"""End-to-end checks of the command line interface.

Every test drives ``microgest.cli.main`` in process and inspects the files
and output it produces, so the full synth -> train -> eval -> compress ->
estimate -> infer workflow stays wired together.
"""

import json
from collections import Counter

import numpy as np
import pytest

from microgest.cli import main
from microgest.compression import encoded_payload_size
from microgest.model import parse_arch
from microgest.model_io import (
    compressed_payload_size,
    load_compressed,
    load_dataset,
    load_model,
    load_model_meta,
)
from microgest.pipeline import GestureClass
from microgest.training import init_params


def run(capsys, argv):
    """Invoke the CLI and return (exit code, stdout, stderr)."""
    rc = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def run_json(capsys, argv):
    rc, out, err = run(capsys, list(argv) + ["--json"])
    assert rc == 0, err
    return json.loads(out)


@pytest.fixture(scope="module")
def gesture_setup(tmp_path_factory):
    """A synthetic gesture corpus plus a small trained classifier."""
    root = tmp_path_factory.mktemp("cli-gesture")
    data = root / "train.mgds"
    model = root / "model.mgnn"
    assert main(["synth", "--out", str(data), "--per-class", "8",
                 "--seed", "5"]) == 0
    assert main(["train", "--data", str(data), "--arch", "180-8relu-5softmax",
                 "--out", str(model), "--epochs", "40", "--seed", "1"]) == 0
    return root, data, model


@pytest.fixture(scope="module")
def phase_setup(tmp_path_factory):
    """A phase-labelled corpus plus a (barely) trained recurrent model."""
    root = tmp_path_factory.mktemp("cli-phase")
    data = root / "phases.mgds"
    model = root / "phases.mgnn"
    assert main(["synth", "--out", str(data), "--per-class", "2",
                 "--labels", "phase", "--seed", "9"]) == 0
    assert main(["train", "--data", str(data),
                 "--arch", "12-r10tanh-17softmax", "--out", str(model),
                 "--epochs", "3", "--seed", "2"]) == 0
    return root, data, model


# --- synth -------------------------------------------------------------------

def test_synth_writes_a_balanced_loadable_corpus(tmp_path, capsys):
    out = tmp_path / "ds.mgds"
    rc, _, _ = run(capsys, ["synth", "--out", out, "--per-class", "2",
                            "--seed", "0"])
    assert rc == 0
    ds = load_dataset(out)
    assert (ds.width, ds.height, ds.fps) == (3, 3, 40.0)
    counts = Counter(ann.label for ann in ds.annotations)
    assert counts == {int(c): 2 for c in GestureClass}


def test_synth_is_deterministic_per_seed(tmp_path, capsys):
    a, b, c = (tmp_path / n for n in ("a.mgds", "b.mgds", "c.mgds"))
    run(capsys, ["synth", "--out", a, "--per-class", "2", "--seed", "4"])
    run(capsys, ["synth", "--out", b, "--per-class", "2", "--seed", "4"])
    run(capsys, ["synth", "--out", c, "--per-class", "2", "--seed", "5"])
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_synth_json_echoes_the_configuration(tmp_path, capsys):
    payload = run_json(capsys, ["synth", "--out", tmp_path / "ds.mgds",
                                "--per-class", "2", "--seed", "0"])
    assert payload["config"]["per_class"] == 2
    assert payload["config"]["seed"] == 0


def test_synth_phase_labels_annotate_every_frame(tmp_path, capsys):
    out = tmp_path / "ph.mgds"
    rc, _, _ = run(capsys, ["synth", "--out", out, "--per-class", "1",
                            "--labels", "phase", "--seed", "1"])
    assert rc == 0
    ds = load_dataset(out)
    assert ds.label_kind == "phase"
    assert len(ds.annotations) == len(ds)


def test_synth_per_class_zero_gives_an_empty_corpus(tmp_path, capsys):
    out = tmp_path / "empty.mgds"
    rc, _, _ = run(capsys, ["synth", "--out", out, "--per-class", "0"])
    assert rc == 0
    ds = load_dataset(out)
    assert len(ds) == 0 and ds.annotations == []


# --- train -------------------------------------------------------------------

def test_train_saves_a_loadable_model_with_metadata(gesture_setup):
    _, _, model = gesture_setup
    spec, params = load_model(model)
    meta = load_model_meta(model)
    assert meta == {"arch": "180-8relu-5softmax", "seed": 1, "epochs": 40}
    assert spec.features == 180 and spec.output_size == 5
    # Storage rounds to float32, so loaded values are f32-representable.
    assert all(
        np.array_equal(lp.weights, lp.weights.astype(np.float32))
        for lp in params.layers
    )


def test_train_json_reports_loss_and_accuracy(tmp_path, gesture_setup, capsys):
    _, data, _ = gesture_setup
    payload = run_json(capsys, ["train", "--data", data,
                                "--arch", "180-6relu-5softmax",
                                "--out", tmp_path / "m.mgnn",
                                "--epochs", "2", "--seed", "0"])
    assert payload["candidates"] > 0
    assert np.isfinite(payload["final_loss"])
    assert 0.0 <= payload["train_accuracy"] <= 1.0
    assert 0.0 <= payload["val_accuracy"] <= 1.0


def test_train_with_zero_epochs_saves_the_initial_weights(
    tmp_path, gesture_setup, capsys
):
    _, data, _ = gesture_setup
    out = tmp_path / "init.mgnn"
    rc, _, _ = run(capsys, ["train", "--data", data,
                            "--arch", "180-8relu-5softmax", "--out", out,
                            "--epochs", "0", "--seed", "3"])
    assert rc == 0
    spec, params = load_model(out)
    fresh = init_params(parse_arch("180-8relu-5softmax"), 3)
    for got, want in zip(params.layers, fresh.layers):
        assert np.array_equal(got.weights, want.weights.astype(np.float32))
        assert np.array_equal(got.biases, want.biases.astype(np.float32))


def test_train_rejects_a_mismatched_feature_width(
    tmp_path, gesture_setup, capsys
):
    _, data, _ = gesture_setup
    rc, _, err = run(capsys, ["train", "--data", data, "--arch",
                              "90-5softmax", "--out", tmp_path / "m.mgnn"])
    assert rc == 1
    assert "features" in err


def test_train_fails_cleanly_on_an_empty_corpus(tmp_path, capsys):
    data = tmp_path / "empty.mgds"
    run(capsys, ["synth", "--out", data, "--per-class", "0"])
    rc, _, err = run(capsys, ["train", "--data", data,
                              "--arch", "180-8relu-5softmax",
                              "--out", tmp_path / "m.mgnn"])
    assert rc == 1
    assert "candidates" in err


def test_train_builds_recurrent_phase_models(phase_setup):
    _, _, model = phase_setup
    spec, _ = load_model(model)
    assert spec.layers[0].kind.value == "recurrent"
    assert spec.output_size == 17


# --- eval --------------------------------------------------------------------

def test_eval_prints_an_accuracy_summary(gesture_setup, capsys):
    _, data, model = gesture_setup
    rc, out, _ = run(capsys, ["eval", "--model", model, "--data", data])
    assert rc == 0
    assert "accuracy:" in out
    assert "->" in out  # per-class confusion lines


def test_eval_json_counts_are_consistent(gesture_setup, capsys):
    _, data, model = gesture_setup
    payload = run_json(capsys, ["eval", "--model", model, "--data", data])
    assert payload["total"] > 0
    assert payload["correct"] <= payload["total"]
    assert payload["accuracy"] == pytest.approx(
        payload["correct"] / payload["total"]
    )
    # Training data, so the tiny model should at least beat chance badly.
    assert payload["accuracy"] >= 0.5


def test_eval_phase_data_needs_a_seventeen_output_model(
    gesture_setup, phase_setup, capsys
):
    _, _, gesture_model = gesture_setup
    _, phase_data, _ = phase_setup
    rc, _, err = run(capsys, ["eval", "--model", gesture_model,
                              "--data", phase_data])
    assert rc == 1
    assert "17" in err


def test_eval_phase_model_runs_end_to_end(phase_setup, capsys):
    _, data, model = phase_setup
    rc, out, _ = run(capsys, ["eval", "--model", model, "--data", data])
    assert rc == 0
    assert "accuracy:" in out


# --- compress ----------------------------------------------------------------

def test_compress_writes_a_loadable_compressed_model(
    tmp_path, gesture_setup, capsys
):
    _, _, model = gesture_setup
    out = tmp_path / "model.mgcm"
    rc, _, _ = run(capsys, ["compress", "--model", model, "--out", out,
                            "--density", "0.4", "--clusters", "15"])
    assert rc == 0
    cm = load_compressed(out)
    assert set(cm.stage_sizes) == {"naive", "pruned_sparse", "encoded",
                                   "huffman"}
    assert compressed_payload_size(out) == encoded_payload_size(cm)


def test_compress_json_reports_stage_sizes(tmp_path, gesture_setup, capsys):
    _, _, model = gesture_setup
    payload = run_json(capsys, ["compress", "--model", model,
                                "--out", tmp_path / "m.mgcm",
                                "--density", "0.4", "--clusters", "15"])
    sizes = payload["stage_sizes"]
    assert sizes["pruned_sparse"] < sizes["naive"]
    assert payload["payload_bytes"] > 0
    assert payload["factor"] > 1.0
    assert payload["surviving_weights"] > 0


def test_compress_no_huffman_skips_that_stage(tmp_path, gesture_setup, capsys):
    _, _, model = gesture_setup
    out = tmp_path / "plain.mgcm"
    rc, _, _ = run(capsys, ["compress", "--model", model, "--out", out,
                            "--density", "0.4", "--clusters", "15",
                            "--no-huffman"])
    assert rc == 0
    cm = load_compressed(out)
    assert "huffman" not in cm.stage_sizes
    assert cm.huffman is False


def test_compress_accepts_a_cluster_list(tmp_path, gesture_setup, capsys):
    _, _, model = gesture_setup
    out = tmp_path / "list.mgcm"
    rc, _, _ = run(capsys, ["compress", "--model", model, "--out", out,
                            "--density", "0.4", "--clusters", "4,8"])
    assert rc == 0
    assert [layer.bits for layer in load_compressed(out).layers] == [2, 3]


def test_compress_rejects_a_wrong_length_cluster_list(
    tmp_path, gesture_setup, capsys
):
    _, _, model = gesture_setup
    rc, _, err = run(capsys, ["compress", "--model", model,
                              "--out", tmp_path / "bad.mgcm",
                              "--clusters", "4,8,16"])
    assert rc == 1 and err


def test_compress_with_retraining_runs_end_to_end(
    tmp_path, gesture_setup, capsys
):
    _, data, model = gesture_setup
    out = tmp_path / "retrained.mgcm"
    rc, _, _ = run(capsys, ["compress", "--model", model, "--out", out,
                            "--density", "0.4", "--clusters", "15",
                            "--retrain-data", data, "--retrain-epochs", "2"])
    assert rc == 0
    assert load_compressed(out).surviving_weights() > 0


# --- estimate ----------------------------------------------------------------

def test_estimate_arch_reports_exact_resource_numbers(capsys):
    payload = run_json(capsys, ["estimate", "--arch",
                                "12-9relu-9relu-r17softmax"])
    assert payload["weights"] == 631
    assert payload["parameters"] == 666
    assert payload["activation_time_us"] == pytest.approx(2980.0)
    assert payload["exec_time_us"] == pytest.approx(14338.0)
    assert payload["flash_bytes"] == 666 * 4
    assert payload["fits"] is True


def test_estimate_from_model_matches_the_arch_route(gesture_setup, capsys):
    _, _, model = gesture_setup
    via_model = run_json(capsys, ["estimate", "--model", model])
    via_arch = run_json(capsys, ["estimate", "--arch", "180-8relu-5softmax"])
    for key in ("weights", "parameters", "flash_bytes", "exec_time_us"):
        assert via_model[key] == via_arch[key]


def test_estimate_requires_exactly_one_source(gesture_setup, capsys):
    _, _, model = gesture_setup
    rc, _, err = run(capsys, ["estimate"])
    assert rc == 1 and "exactly one" in err
    rc, _, err = run(capsys, ["estimate", "--model", model,
                              "--arch", "180-8relu-5softmax"])
    assert rc == 1 and "exactly one" in err


def test_estimate_bytes_per_param_scales_flash(capsys):
    wide = run_json(capsys, ["estimate", "--arch", "180-8relu-5softmax"])
    narrow = run_json(capsys, ["estimate", "--arch", "180-8relu-5softmax",
                               "--bytes-per-param", "1"])
    assert wide["flash_bytes"] == 4 * narrow["flash_bytes"]


def test_estimate_config_file_overrides_timings(tmp_path, capsys):
    cfg = tmp_path / "board.cfg"
    cfg.write_text("mac_us = 1\n")
    payload = run_json(capsys, ["estimate", "--arch",
                                "12-9relu-9relu-r17softmax",
                                "--config", cfg])
    assert payload["exec_time_us"] == pytest.approx(631 * 1 + 2980)


# --- infer -------------------------------------------------------------------

def test_infer_reports_gesture_events(gesture_setup, capsys):
    _, data, model = gesture_setup
    rc, out, _ = run(capsys, ["infer", "--model", model, "--data", data,
                              "--mode", "ffnn-candidates"])
    assert rc == 0
    assert "event(s)" in out


def test_infer_json_event_schema(gesture_setup, capsys):
    _, data, model = gesture_setup
    payload = run_json(capsys, ["infer", "--model", model, "--data", data,
                                "--mode", "ffnn-candidates"])
    names = {c.name.lower() for c in GestureClass}
    assert len(payload["events"]) > 0
    for event in payload["events"]:
        assert event["name"] in names
        assert event["label"] == GestureClass[event["name"].upper()].value
        assert event["frame"] >= 0


def test_infer_rnn_mode_rejects_small_output_models(
    gesture_setup, phase_setup, capsys
):
    _, _, gesture_model = gesture_setup
    _, phase_data, _ = phase_setup
    rc, _, err = run(capsys, ["infer", "--model", gesture_model,
                              "--data", phase_data, "--mode", "rnn-phases"])
    assert rc == 1 and "17" in err


def test_infer_rnn_phase_mode_runs(phase_setup, capsys):
    _, data, model = phase_setup
    rc, out, _ = run(capsys, ["infer", "--model", model, "--data", data,
                              "--mode", "rnn-phases"])
    assert rc == 0
    assert "event(s)" in out


def test_infer_on_an_empty_stream_finds_nothing(
    tmp_path, gesture_setup, capsys
):
    _, _, model = gesture_setup
    empty = tmp_path / "empty.mgds"
    run(capsys, ["synth", "--out", empty, "--per-class", "0"])
    payload = run_json(capsys, ["infer", "--model", model, "--data", empty,
                                "--mode", "ffnn-candidates"])
    assert payload["events"] == []
