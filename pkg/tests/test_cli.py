"""Command-line interface: config files, exit codes, artifacts on disk.

Commands run in process through main(argv) so exit codes and console
output can be asserted without spawning an interpreter per test. One
test exercises the installed console script itself.
"""

import json
import os
import re
import shutil
import subprocess

import numpy as np
import pytest
import uvicorn

from protoscope.backbone import BackboneConfig
from protoscope.checkpoint import load_checkpoint
from protoscope.cli import (apply_thread_limit, build_model_config,
                            build_train_config, load_config_file, main,
                            write_json)
from protoscope.errors import ConfigError
from protoscope.model import ModelConfig
from protoscope.synthetic import load_corpus
from protoscope.train import TrainConfig, evaluate, restore_model

TRAIN_TOML = """
[model]
channels = [8, 16]
protos_per_class = 2

[train]
epochs = 2
freeze_epochs = 1
batch_size = 16
seed = 3

[train.augment]
flip = false
max_rotate_deg = 0.0
max_brightness = 0.0
"""

SYNTH_TOML = """
[synth]
train_per_class = 2
val_per_class = 1
test_per_class = 1
ood_count = 2
"""


# -- configuration files -----------------------------------------------------


def test_toml_config_parsed(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text(TRAIN_TOML)
    cfg = load_config_file(str(path))
    assert cfg["train"]["epochs"] == 2
    assert cfg["train"]["augment"]["flip"] is False
    assert cfg["model"]["channels"] == [8, 16]


def test_json_config_parsed(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"train": {"epochs": 4}, "eval": {"split": "val"}}))
    cfg = load_config_file(str(path))
    assert cfg["train"]["epochs"] == 4
    assert cfg["eval"]["split"] == "val"


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("[optimizer]\nlr = 0.1\n")
    with pytest.raises(ConfigError, match=r"unknown section \[optimizer\]"):
        load_config_file(str(path))


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("[train]\nlr = 0.1\n")
    with pytest.raises(ConfigError, match=r"unknown key 'lr' in \[train\]"):
        load_config_file(str(path))


def test_unknown_augment_key_rejected(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("[train.augment]\nshear = 1.0\n")
    with pytest.raises(ConfigError, match=r"'shear' in \[train.augment\]"):
        load_config_file(str(path))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config_file(str(tmp_path / "nope.toml"))


def test_malformed_toml_rejected(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("[train\nepochs = 2\n")
    with pytest.raises(ConfigError, match="cfg.toml"):
        load_config_file(str(path))


def test_top_level_must_be_table(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("[1, 2, 3]")
    with pytest.raises(ConfigError, match="top level"):
        load_config_file(str(path))


def test_section_must_be_table(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"train": 3}))
    with pytest.raises(ConfigError, match=r"\[train\] must be a table"):
        load_config_file(str(path))


def test_empty_sections_reproduce_library_defaults():
    # the CLI must never train with different hyperparameters than the
    # library defaults just because no config file was given
    assert build_train_config({}) == TrainConfig().validate()
    names = ("a", "b", "c")
    assert build_model_config({}, names) == ModelConfig(
        class_names=names, backbone=BackboneConfig()).validate()


# -- thread limits ------------------------------------------------------------


@pytest.fixture()
def clean_env(monkeypatch):
    # swap in a plain dict so limit application cannot leak into the
    # real process environment
    monkeypatch.setattr(os, "environ", dict(os.environ))
    os.environ.pop("PROTOSCOPE_THREADS", None)


def test_thread_limit_default_is_noop(clean_env):
    assert apply_thread_limit(None) is None


def test_thread_limit_flag_applied(clean_env):
    assert apply_thread_limit(1) == 1


def test_thread_limit_env_var(clean_env):
    os.environ["PROTOSCOPE_THREADS"] = "1"
    assert apply_thread_limit(None) == 1


def test_thread_limit_flag_beats_env(clean_env):
    os.environ["PROTOSCOPE_THREADS"] = "7"
    assert apply_thread_limit(1) == 1


def test_thread_limit_env_garbage(clean_env):
    os.environ["PROTOSCOPE_THREADS"] = "many"
    with pytest.raises(ConfigError, match="not an integer"):
        apply_thread_limit(None)


def test_thread_limit_must_be_positive(clean_env):
    with pytest.raises(ConfigError, match=">= 1"):
        apply_thread_limit(0)


def test_thread_limit_error_exits_2(tmp_path, capsys):
    rc = main(["--threads", "0", "synth", "--out", str(tmp_path / "c")])
    assert rc == 2
    assert "configuration error" in capsys.readouterr().err


# -- argument parsing ----------------------------------------------------------


def test_missing_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    capsys.readouterr()


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--bogus"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_console_script_installed():
    exe = shutil.which("protoscope")
    assert exe, "console script not on PATH"
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("synth", "train", "eval", "dor", "interpret", "adjust",
                    "serve"):
        assert command in proc.stdout


def test_write_json_handles_numpy_scalars(tmp_path):
    path = tmp_path / "x.json"
    write_json(str(path), {"i": np.int64(3), "f": np.float32(0.5),
                           "a": np.arange(3)})
    data = json.loads(path.read_text())
    assert data == {"i": 3, "f": 0.5, "a": [0, 1, 2]}
    with pytest.raises(TypeError, match="not JSON serializable"):
        write_json(str(path), {"bad": object()})


# -- synth ----------------------------------------------------------------------


def test_synth_writes_corpus(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(SYNTH_TOML)
    out = tmp_path / "corpus"
    rc = main(["--config", str(cfg), "synth", "--out", str(out), "--seed", "1"])
    assert rc == 0
    corpus = load_corpus(out)
    assert len(corpus.split("train")) == 8
    assert len(corpus.split("ood")) == 2
    stdout = capsys.readouterr().out
    assert "corpus written" in stdout
    assert "train" in stdout


def test_synth_flags_override_config(tmp_path):
    config_dst = tmp_path / "from_config"
    flag_dst = tmp_path / "from_flag"
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(SYNTH_TOML + f'out_dir = "{config_dst}"\nseed = 5\n')

    rc = main(["--config", str(cfg), "synth", "--out", str(flag_dst),
               "--seed", "9"])
    assert rc == 0
    assert not config_dst.exists()
    with open(flag_dst / "spec.json") as f:
        assert json.load(f)["spec"]["seed"] == 9

    rc = main(["--config", str(cfg), "synth"])
    assert rc == 0
    with open(config_dst / "spec.json") as f:
        assert json.load(f)["spec"]["seed"] == 5


def test_synth_without_destination_exits_2(capsys):
    rc = main(["synth"])
    assert rc == 2
    assert "needs --out" in capsys.readouterr().err


# -- train ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_train(tmp_path_factory, micro_corpus):
    cfg = tmp_path_factory.mktemp("cfg") / "train.toml"
    cfg.write_text(TRAIN_TOML)
    out = tmp_path_factory.mktemp("cli_train")
    rc = main(["--config", str(cfg), "train",
               "--corpus", str(micro_corpus.root), "--out", str(out)])
    assert rc == 0
    runs = os.listdir(out)
    assert len(runs) == 1
    return out / runs[0]


def test_train_cli_run_directory(cli_train):
    assert re.fullmatch(r"\d{8}T\d{6}Z-seed3", cli_train.name)
    for name in ("effective_config.json", "history.json",
                 "best.ckpt", "last.ckpt"):
        assert (cli_train / name).exists()


def test_train_cli_effective_config(cli_train):
    with open(cli_train / "effective_config.json") as f:
        effective = json.load(f)
    assert effective["train"]["epochs"] == 2
    assert effective["train"]["augment"]["flip"] is False
    assert effective["model"]["protos_per_class"] == 2
    assert effective["model"]["backbone"]["channels"] == [8, 16]


def test_train_cli_history_and_checkpoints(cli_train):
    with open(cli_train / "history.json") as f:
        history = json.load(f)
    assert len(history) == 2
    best = load_checkpoint(str(cli_train / "best.ckpt"))
    assert best.extra["best_epoch"] in (0, 1)
    assert history[best.extra["best_epoch"]]["val_auroc"] >= 0.0


def test_train_cli_seed_flag_overrides_config(tmp_path, micro_corpus):
    cfg = tmp_path / "train.toml"
    cfg.write_text(TRAIN_TOML)
    out = tmp_path / "run"
    rc = main(["--config", str(cfg), "train", "--corpus",
               str(micro_corpus.root), "--out", str(out), "--seed", "9"])
    assert rc == 0
    run_dir = out / os.listdir(out)[0]
    assert run_dir.name.endswith("-seed9")
    with open(run_dir / "effective_config.json") as f:
        assert json.load(f)["train"]["seed"] == 9


def test_train_cli_missing_corpus_exits_1(tmp_path, capsys):
    rc = main(["train", "--corpus", str(tmp_path / "nowhere"),
               "--out", str(tmp_path / "run")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# -- eval -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def eval_out(trained_micro, tmp_path_factory):
    _, result, corpus = trained_micro
    out = tmp_path_factory.mktemp("eval_cli")
    rc = main(["eval", "--checkpoint", result.best_path,
               "--corpus", str(corpus.root), "--out", str(out)])
    assert rc == 0
    return out


def test_eval_cli_artifacts(eval_out, trained_micro):
    model, _, corpus = trained_micro
    for name in ("eval_meta.json", "metrics.json", "eval_dump.jsonl",
                 "metrics.csv", "table.txt"):
        assert (eval_out / name).exists()

    with open(eval_out / "eval_meta.json") as f:
        meta = json.load(f)
    assert meta["bank_version"] == model.bank.version()
    assert meta["split"] == "test"
    assert meta["class_names"] == list(corpus.class_names)

    with open(eval_out / "eval_dump.jsonl") as f:
        rows = [json.loads(line) for line in f if line.strip()]
    assert len(rows) == len(corpus.split("test"))

    # the dump was produced from the same tensors this process holds,
    # so the headline metric must agree exactly
    with open(eval_out / "metrics.json") as f:
        written = json.load(f)["metrics"]
    direct = evaluate(model, corpus.images("test"), corpus.labels("test"))
    assert written["macro_auroc"] == direct.metrics["macro_auroc"]
    assert written["kappa"] == direct.metrics["kappa"]


def test_eval_cli_tables(eval_out, trained_micro, capsys):
    _, _, corpus = trained_micro
    with open(eval_out / "metrics.csv") as f:
        lines = f.read().splitlines()
    assert lines[0] == "class,auroc,sensitivity,specificity,ppv"
    assert lines[1].split(",")[0] == corpus.class_names[0]
    assert lines[5].split(",")[0] == "macro"
    table = (eval_out / "table.txt").read_text()
    assert "macro" in table and "kappa" in table


def test_eval_cli_split_flag(trained_micro, tmp_path):
    _, result, corpus = trained_micro
    out = tmp_path / "eval_train"
    rc = main(["eval", "--checkpoint", result.best_path,
               "--corpus", str(corpus.root), "--out", str(out),
               "--split", "train"])
    assert rc == 0
    with open(out / "eval_dump.jsonl") as f:
        n = sum(1 for line in f if line.strip())
    assert n == len(corpus.split("train"))
    with open(out / "eval_meta.json") as f:
        assert json.load(f)["split"] == "train"


def test_eval_cli_missing_checkpoint_exits_1(trained_micro, tmp_path, capsys):
    _, _, corpus = trained_micro
    rc = main(["eval", "--checkpoint", str(tmp_path / "no.ckpt"),
               "--corpus", str(corpus.root), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# -- dor --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def dor_out(eval_out, tmp_path_factory):
    out = tmp_path_factory.mktemp("dor_cli")
    rc = main(["dor", "--dump", str(eval_out / "eval_dump.jsonl"),
               "--out", str(out)])
    assert rc == 0
    return out


def test_dor_cli_artifacts(dor_out, trained_micro):
    model, _, _ = trained_micro
    with open(dor_out / "dor.json") as f:
        payload = json.load(f)
    k = len(model.bank.class_names)
    n_protos = k * model.bank.per_class
    assert payload["bank_version"] == model.bank.version()
    assert payload["zero_nonsignificant"] is False
    assert len(payload["reports"]) == n_protos * k
    assert len(payload["summary"]) == n_protos
    assert all(v >= 0.0 for v in payload["summary"].values())

    with open(dor_out / "dor.csv") as f:
        lines = f.read().splitlines()
    assert len(lines) == 1 + n_protos * k
    assert lines[0].startswith("prototype,target_class,dor")


def test_dor_cli_prints_summary(eval_out, tmp_path, capsys):
    out = tmp_path / "dor"
    rc = main(["dor", "--dump", str(eval_out / "eval_dump.jsonl"),
               "--out", str(out), "--zero-nonsignificant"])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "prototypes significant for their own class" in stdout
    with open(out / "dor.json") as f:
        payload = json.load(f)
    assert payload["zero_nonsignificant"] is True
    # zeroed summary entries must correspond to non-significant own-class
    # reports and vice versa
    by_key = {(d["prototype"], d["target_class"]): d
              for d in payload["reports"]}
    per_class = payload["per_class"]
    for i, pid in enumerate(payload["summary"]):
        own = by_key[(pid, i // per_class)]
        if payload["summary"][pid] == 0.0:
            assert not own["significant"]
        else:
            assert own["significant"]


def test_dor_cli_requires_meta(eval_out, tmp_path, capsys):
    shutil.copy(eval_out / "eval_dump.jsonl", tmp_path / "eval_dump.jsonl")
    rc = main(["dor", "--dump", str(tmp_path / "eval_dump.jsonl"),
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "eval_meta.json" in capsys.readouterr().err


def test_dor_cli_empty_dump_exits_2(tmp_path, capsys):
    dump = tmp_path / "eval_dump.jsonl"
    dump.write_text("")
    rc = main(["dor", "--dump", str(dump), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "is empty" in capsys.readouterr().err


# -- interpret ----------------------------------------------------------------------


def test_interpret_cli_chosen_case(trained_micro, tmp_path, capsys):
    _, result, corpus = trained_micro
    cid = corpus.ids("test")[0]
    out = tmp_path / "interp"
    rc = main(["interpret", "--checkpoint", result.best_path,
               "--corpus", str(corpus.root), "--out", str(out),
               "--case", cid, "--top", "2"])
    assert rc == 0

    with open(out / f"{cid}.json") as f:
        record = json.load(f)
    assert record["case_id"] == cid
    assert len(record["top"]) == 2

    with open(out / "retrieval.json") as f:
        retrieval = json.load(f)
    assert 0.0 <= retrieval["accuracy"]["acc@1"]["macro"] <= 1.0
    assert retrieval["representatives"]

    with open(out / "localization.json") as f:
        loc = json.load(f)
    assert loc["hits"] <= loc["total"]
    assert loc["rate"] == pytest.approx(
        loc["hits"] / loc["total"] if loc["total"] else 0.0)

    stdout = capsys.readouterr().out
    assert cid in stdout
    assert "retrieval acc@1" in stdout


def test_interpret_cli_default_cases(trained_micro, tmp_path):
    _, result, corpus = trained_micro
    out = tmp_path / "interp"
    rc = main(["interpret", "--checkpoint", result.best_path,
               "--corpus", str(corpus.root), "--out", str(out)])
    assert rc == 0
    for cid in corpus.ids("test")[:3]:
        assert (out / f"{cid}.json").exists()


def test_interpret_cli_unknown_case_exits_1(trained_micro, tmp_path, capsys):
    _, result, corpus = trained_micro
    rc = main(["interpret", "--checkpoint", result.best_path,
               "--corpus", str(corpus.root), "--out", str(tmp_path / "o"),
               "--case", "test-nothing-9999"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# -- adjust -------------------------------------------------------------------------


def test_adjust_cli_round_trip(trained_micro, dor_out, tmp_path, capsys):
    model, result, _ = trained_micro
    out_ckpt = tmp_path / "adjusted.ckpt"
    rc = main(["adjust", "--checkpoint", result.best_path,
               "--dor", str(dor_out / "dor.json"), "--out", str(out_ckpt)])
    assert rc == 0
    assert "adjusted" in capsys.readouterr().out

    adjusted = load_checkpoint(str(out_ckpt))
    assert adjusted.extra["adjusted_from"] == model.bank.version()
    new_model = restore_model(adjusted)
    assert adjusted.extra["bank_version"] == new_model.bank.version()
    assert new_model.bank.w.values.shape == model.bank.w.values.shape
    assert np.all(new_model.bank.w.values >= 0.0)

    with open(str(out_ckpt) + ".adjustment.json") as f:
        report = json.load(f)
    assert report["bank_before"] == model.bank.version()
    assert report["bank_after"] == new_model.bank.version()
    assert len(report["deltas"]) == len(model.bank.class_names) * model.bank.per_class


def test_adjust_cli_stale_dor_exits_1(trained_micro, dor_out, tmp_path, capsys):
    _, result, _ = trained_micro
    with open(dor_out / "dor.json") as f:
        payload = json.load(f)
    payload["bank_version"] = "feedfacefeedface"
    stale = tmp_path / "dor.json"
    stale.write_text(json.dumps(payload))
    rc = main(["adjust", "--checkpoint", result.best_path,
               "--dor", str(stale), "--out", str(tmp_path / "a.ckpt")])
    assert rc == 1
    assert "different bank version" in capsys.readouterr().err
    assert not (tmp_path / "a.ckpt").exists()


# -- serve --------------------------------------------------------------------------


def test_serve_cli_builds_app(trained_micro, dor_out, tmp_path, monkeypatch):
    _, result, corpus = trained_micro
    calls = []
    monkeypatch.setattr(uvicorn, "run",
                        lambda app, host, port: calls.append((app, host, port)))
    cfg = tmp_path / "serve.toml"
    cfg.write_text('[serve]\nhost = "0.0.0.0"\nport = 1234\ntop_n = 2\n')

    rc = main(["--config", str(cfg), "serve",
               "--checkpoint", result.best_path,
               "--corpus", str(corpus.root),
               "--state", str(tmp_path / "state"),
               "--dor", str(dor_out / "dor.json"),
               "--port", "4321"])
    assert rc == 0
    assert len(calls) == 1
    app, host, port = calls[0]
    assert host == "0.0.0.0"
    assert port == 4321
    paths = {route.path for route in app.routes}
    assert {"/healthz", "/predict", "/prototypes"} <= paths
