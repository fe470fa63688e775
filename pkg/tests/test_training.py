import math

import numpy as np
import pytest

from conftest import tiny_config
from tsfuse.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from tsfuse.cli import run_cli
from tsfuse.config import ConfigError, ExperimentConfig, load_config, parse_overrides
from tsfuse.model import PromptFusionModel
from tsfuse.training import (METRICS_HEADER, TrainingDiverged, anomaly_eval, build_model,
                             error_metrics, evaluate, prepare_data, run_ablation, train)

TRAINABLE_PREFIXES = ("patch_embed.", "fatm.", "head.")


# --- config ---------------------------------------------------------------------

def test_config_file_sections_and_overrides(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[experiment]\ntask = imputation\nlam = 0.2\nkernel_sizes = 3, 5\n"
                    "[backbone]\nlayers = 2\nd_model = 32\n[train]\nepochs = 7\n")
    cfg = load_config(path, parse_overrides(["epochs=9", "ablation=no_fatm,no_kdtp"]))
    assert cfg.task == "imputation" and cfg.lam == 0.2 and cfg.kernel_sizes == (3, 5)
    assert cfg.backbone.layers == 2 and cfg.backbone.d_model == 32
    assert cfg.epochs == 9 and cfg.ablation == ("no_fatm", "no_kdtp")


@pytest.mark.parametrize("pair", ["lam=1.5", "missing_rate=0", "few_shot_fraction=1.2",
                                  "alpha=1.0", "ablation=no_attention", "task=classify"])
def test_config_invariants(pair):
    with pytest.raises(ConfigError):
        load_config(None, parse_overrides([pair]))


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_overrides(["warmup=3"])
    with pytest.raises(ConfigError, match="bad value"):
        parse_overrides(["epochs=many"])
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.ini")
    assert parse_overrides(["few_shot_fraction=none"]) == {"few_shot_fraction": None}


def test_config_dict_round_trip():
    cfg = tiny_config(ablation=("no_llm",))
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


# --- training contract ----------------------------------------------------------------

def test_default_model_trainable_fraction_and_names():
    model = PromptFusionModel(ExperimentConfig(), "forecast the next values")
    trainable, total = model.param_counts()
    assert trainable / total < 0.5
    for name, p in model.named_parameters():
        assert p.frozen == name.startswith("backbone."), name
        if not p.frozen:
            assert name.startswith(TRAINABLE_PREFIXES), name


def test_training_keeps_backbone_bit_exact_and_descends():
    cfg = tiny_config(epochs=50)
    data = prepare_data(cfg)
    model = build_model(cfg, data)
    before = model.backbone_checksum()
    model, report = train(cfg, data, model)
    assert model.backbone_checksum() == before
    assert report.epoch_losses[-1] < report.epoch_losses[0]
    assert report.trainable_fraction == report.trainable_params / report.total_params


@pytest.mark.parametrize("task", ["imputation", "anomaly"])
def test_other_tasks_train_and_report(task):
    cfg = tiny_config(task=task, synth_length=900)
    model, report = train(cfg)
    report = evaluate(model, cfg, report=report)
    assert len(report.epoch_losses) == cfg.epochs
    assert math.isfinite(report.mae) and math.isfinite(report.mse)
    if task == "anomaly":
        assert report.precision is not None and report.threshold is not None


def test_encoder_only_variant_trains():
    cfg = tiny_config(arch="encoder_only")
    model, report = train(cfg)
    assert not model.backbone.causal
    assert all(math.isfinite(v) for v in report.epoch_losses)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    with pytest.raises(TrainingDiverged) as info:
        train(tiny_config(lr=1e200, epochs=5))
    assert 1 <= info.value.epoch <= 5
    assert f"epoch {info.value.epoch}" in str(info.value)


def test_few_shot_consumes_floor_of_training_steps():
    cfg = tiny_config(few_shot_fraction=0.5, epochs=1)
    data = prepare_data(cfg)
    full_train = math.floor(cfg.train_fraction * cfg.synth_length)
    assert data.train.length == math.floor(0.5 * full_train)
    _, report = train(cfg, data)
    assert report.train_steps == math.floor(0.5 * full_train)


def test_error_metrics_examples():
    y = np.random.default_rng(0).normal(size=(4, 5))
    assert error_metrics(y, y) == (0.0, 0.0)
    assert error_metrics(y + 1.0, y) == pytest.approx((1.0, 1.0), abs=1e-12)


def test_evaluate_empty_test_split():
    cfg = tiny_config(train_fraction=0.99, epochs=1)
    model, _ = train(cfg)
    with pytest.raises(ValueError, match="empty test split"):
        evaluate(model, cfg)


def test_evaluate_reports_naive_baseline():
    cfg = tiny_config(epochs=1)
    data = prepare_data(cfg)
    model, _ = train(cfg, data)
    report = evaluate(model, cfg, data)
    raw = data.full.values[0]
    errs = []
    for t in range(max(data.test_start, model.context), raw.size - cfg.horizon + 1, cfg.stride):
        errs.extend(raw[t:t + cfg.horizon] - raw[t - 1])
    assert report.baseline_mse == pytest.approx(np.mean(np.square(errs)), rel=1e-12)
    assert report.baseline_mae == pytest.approx(np.mean(np.abs(errs)), rel=1e-12)


def test_constant_series_predictions_near_constant(tmp_path):
    path = tmp_path / "flat.csv"
    path.write_text("value\n" + "\n".join(["5.0"] * 400) + "\n")
    cfg = tiny_config(task="anomaly", dataset=str(path), epochs=5)
    data = prepare_data(cfg)
    model, _ = train(cfg, data)
    ev = anomaly_eval(model, data, 0.99)
    assert np.abs(ev.predictions - 5.0).max() < 0.5


# --- ablations ------------------------------------------------------------------------

def test_ablation_structure():
    cfg = tiny_config(epochs=1, query="forecast daily demand")
    rows = run_ablation(cfg)
    assert [r.variant for r in rows] == ["full", "w/o FATM", "w/o KDTP", "w/o LLM"]
    by = {r.variant: r for r in rows}
    assert by["w/o LLM"].frozen_params == 0
    assert by["w/o KDTP"].prompt_text == "forecast daily demand"
    assert by["full"].prompt_text.startswith("Task: forecast daily demand")


def test_no_kdtp_with_empty_query_disables_prompt():
    cfg = tiny_config(ablation=("no_kdtp",), query="")
    model = build_model(cfg, prepare_data(cfg))
    assert model.t_p == 0 and model.prompt_embedding() is None
    out = model(np.zeros((2, 4, cfg.patch_len)))
    assert out.pred.shape == (2, 4, cfg.patch_len) and out.prompt_rows is None


def test_no_fatm_adds_one_mean_token():
    cfg = tiny_config(ablation=("no_fatm",))
    model = PromptFusionModel(cfg, "abcd")
    assert model.fatm is None and model.prefix_len == 5
    out = model(np.zeros((1, 3, cfg.patch_len)))
    assert out.prompt_rows is None


def test_no_llm_has_no_backbone():
    model = PromptFusionModel(tiny_config(ablation=("no_llm",)), "abc")
    assert model.backbone is None and model.backbone_checksum() is None
    trainable, total = model.param_counts()
    assert trainable == total


# --- checkpoints ------------------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg = tiny_config(epochs=1)
    model, _ = train(cfg)
    save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    a, b = dict(model.named_parameters()), dict(back.named_parameters())
    assert a.keys() == b.keys()
    for name in a:
        assert a[name].data.tobytes() == b[name].data.tobytes(), name
        assert a[name].frozen == b[name].frozen
    assert back.prompt_text == model.prompt_text
    np.testing.assert_array_equal(back.stats.mean, model.stats.mean)


def test_checkpoint_truncated(tmp_path):
    model = PromptFusionModel(tiny_config(), "p")
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch_names_parameter(tmp_path):
    save_checkpoint(PromptFusionModel(tiny_config(), "p"), tmp_path / "m.ckpt")
    other = PromptFusionModel(tiny_config(patch_len=8, stride=8), "p")
    with pytest.raises(CheckpointError, match="patch_embed.weight"):
        load_checkpoint(tmp_path / "m.ckpt", other)


def test_checkpoint_version_and_magic(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(PromptFusionModel(tiny_config(), "p"), path)
    raw = bytearray(path.read_bytes())
    raw[8] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
    path.write_bytes(b"NOTACKPT" + bytes(raw[8:]))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


# --- metrics CSV and CLI ------------------------------------------------------------------

@pytest.mark.parametrize("task", ["forecasting", "imputation", "anomaly"])
def test_metrics_csv_schema_stable(task):
    cfg = tiny_config(task=task, epochs=2, synth_length=900)
    model, report = train(cfg)
    evaluate(model, cfg, report=report)
    lines = report.to_csv().splitlines()
    assert lines[0].split(",") == METRICS_HEADER
    assert len(lines) == 3
    last = lines[-1].split(",")
    assert last[0] == task and last[5] and last[6] and last[9] == ""


def test_cli_gradcheck_and_usage_errors(capsys, tmp_path):
    assert run_cli(["gradcheck", "--points", "1"]) == 0
    assert run_cli(["train", "--no-such-flag"]) != 0
    assert run_cli(["train", "--config", str(tmp_path / "nope.ini")]) != 0
    assert run_cli([]) != 0
    err = capsys.readouterr().err
    assert "usage:" in err


def _cli_config(tmp_path, **changes):
    path = tmp_path / "tiny.ini"
    cfg = tiny_config(**changes)
    b = cfg.backbone
    path.write_text(f"[data]\nsynth_length = {cfg.synth_length}\ncontext_len = {cfg.context_len}\n"
                    f"horizon = {cfg.horizon}\n[train]\nepochs = {cfg.epochs}\nbatch = {cfg.batch}\n"
                    f"[backbone]\nlayers = {b.layers}\nheads = {b.heads}\nd_model = {b.d_model}\n"
                    f"d_ff = {b.d_ff}\nmax_seq = {b.max_seq}\n")
    return str(path)


def test_cli_train_few_shot_and_forecast(tmp_path, capsys):
    cfg_path = _cli_config(tmp_path)
    out = tmp_path / "run"
    assert run_cli(["train", "--config", cfg_path, "--few-shot", "0.5", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    expected = math.floor(0.5 * math.floor(0.7 * 480))
    assert f"training steps: {expected}" in text
    assert (out / "metrics.csv").read_text().startswith(",".join(METRICS_HEADER))
    assert run_cli(["forecast", "--checkpoint", str(out / "model.ckpt"), "--out", str(out)]) == 0
    assert (out / "forecast.svg").read_text().lstrip().startswith("<?xml")
    assert run_cli(["evaluate", "--checkpoint", str(out / "model.ckpt")]) == 0


def test_cli_detect_lists_tau_and_flags(tmp_path, capsys):
    cfg_path = _cli_config(tmp_path)
    assert run_cli(["detect", "--config", cfg_path, "--set", "synth_length=900",
                    "--alpha", "0.99", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "tau " in text and "flagged window starts:" in text
    assert (tmp_path / "anomaly.svg").exists()


def test_cli_impute_and_index(tmp_path, capsys):
    cfg_path = _cli_config(tmp_path)
    assert run_cli(["impute", "--config", cfg_path, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "imputation.svg").exists()
    docs = tmp_path / "docs"
    docs.mkdir()
    (docs / "a.txt").write_text("seasonal demand peaks in winter")
    (docs / "b.txt").write_text("")
    assert run_cli(["index", str(docs), "-o", str(tmp_path / "ix.json")]) == 0
    assert "indexed 1 documents (1 empty skipped)" in capsys.readouterr().out
    assert run_cli(["train", "--config", cfg_path, "--corpus", str(tmp_path / "ix.json"),
                    "--set", "epochs=1", "--out", str(tmp_path / "r")]) == 0
