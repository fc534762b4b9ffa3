import csv
import json

import numpy as np
import pytest

from gistnet.checkpoint import load_checkpoint
from gistnet.cli import main
from gistnet.config import RunConfig, apply_overrides, default_config_doc, load_run_config
from gistnet.errors import ConfigError, ParseError
from gistnet.experiments import build_model

SMALL = ["--data.synthetic.n_train=12", "--data.synthetic.n_test=8", "--data.synthetic.seed=2",
         "--train.batch_size=4", "--train.epochs=1", "--model.scale=0.25", "--eval.embed_samples=0",
         "--eval.saliency_samples=[0]"]



@pytest.fixture
def cfg_file(tmp_path):
    doc = default_config_doc(str(tmp_path / "out"), seed=1)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


# --- config


def test_seed_is_mandatory(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        load_run_config(None)
    assert load_run_config(None, ["--train.seed=3"]).train.seed == 3


def test_overrides_and_unknown_keys():
    doc = apply_overrides({"train": {"seed": 0}}, ["--train.lr=0.5", "model.arch=fovea"])
    assert doc == {"train": {"seed": 0, "lr": 0.5}, "model": {"arch": "fovea"}}
    with pytest.raises(ConfigError, match="unknown keys"):
        load_run_config(None, ["--train.seed=0", "--train.colour=red"])
    with pytest.raises(ConfigError):
        load_run_config(None, ["--train.seed=0", "--model.arch=resnet"])


def test_config_parse_error_names_line(tmp_path):
    (tmp_path / "bad.json").write_text('{\n "train": }')
    with pytest.raises(ParseError, match="line 2"):
        load_run_config(str(tmp_path / "bad.json"))


def test_missing_manifest_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_run_config(None, ["--train.seed=0", f"--data.train_manifest={tmp_path / 'nope.json'}"])


def test_paper_preset_and_round_trip():
    cfg = load_run_config(None, ["--train.seed=0"], preset="paper")
    assert cfg.model.preset == "paper" and cfg.num_classes() == 80
    assert cfg.train.lr == 1e-6
    again = load_run_config(None, [f"--{k}.{kk}={json.dumps(v)}" for k, sec in cfg.to_dict().items()
                                   if isinstance(sec, dict) for kk, v in sec.items() if not isinstance(v, dict)]
                            + ["--train.seed=0"])
    assert again.train == cfg.train


# --- exit codes


def test_exit_codes(tmp_path, cfg_file, capsys):
    assert main(["train", "--config", str(cfg_file)]) == 2  # no data yet
    assert "gen-data" in capsys.readouterr().err
    assert main(["train"]) == 1  # seed missing
    assert main(["nonsense"]) == 1
    assert main(["eval", "--config", str(cfg_file), "--bogus"]) == 1
    assert main(["eval", "--config", str(cfg_file), "--checkpoint", str(tmp_path / "none.gstn")]) == 1
    (tmp_path / "garbage.gstn").write_bytes(b"GSTN\x01")
    assert main(["eval", "--config", str(cfg_file), "--checkpoint", str(tmp_path / "garbage.gstn")]) == 2


def test_gradcheck_command(tmp_path, cfg_file):
    assert main(["gradcheck", "--config", str(cfg_file), "--max-entries=2"]) == 0
    doc = json.loads((tmp_path / "out" / "gradcheck.json").read_text())
    assert doc["passed"] and "GistNet" in doc["suites"] and "MaxPool2" in doc["suites"]


def test_gradcheck_failure_exit_3(tmp_path, cfg_file, monkeypatch, capsys):
    import gistnet.cli as cli

    real = cli.run_gradcheck

    def broken(seed, tol, entries):
        reps = real(seed, tol, entries, include_model=False)
        reps["Dense"].rows[0].max_rel_err = 1.0
        return reps

    monkeypatch.setattr(cli, "run_gradcheck", broken)
    assert main(["gradcheck", "--config", str(cfg_file)]) == 3
    assert "Dense:" in capsys.readouterr().err
    doc = json.loads((tmp_path / "out" / "gradcheck.json").read_text())
    assert not doc["passed"] and not doc["suites"]["Dense"]["passed"]


# --- end to end


def cli_args(cfg_file, *more):
    return ["--config", str(cfg_file), *SMALL, *more]


def test_gen_data_deterministic(tmp_path, cfg_file):
    assert main(["gen-data", *cli_args(cfg_file)]) == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "out" / "data" / "train" / "images").iterdir()}
    assert len(first) == 12
    assert main(["gen-data", *cli_args(cfg_file)]) == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "out" / "data" / "train" / "images").iterdir()}
    assert first == second


def test_zero_iteration_train_equals_init(tmp_path, cfg_file):
    assert main(["gen-data", *cli_args(cfg_file)]) == 0
    assert main(["train", *cli_args(cfg_file, "--train.epochs=0")]) == 0
    saved, _ = load_checkpoint(tmp_path / "out" / "checkpoints" / "gistnet.gstn")
    cfg = load_run_config(str(cfg_file), SMALL)
    _, init = build_model(cfg)
    for layer, p in init.items():
        for key, arr in p.items():
            assert saved[layer][key].tobytes() == arr.tobytes()
    rows = list(csv.reader((tmp_path / "out" / "gistnet_train_log.csv").open()))
    assert rows == [["iteration", "epoch", "loss", "batch_accuracy"]]


def test_train_eval_experiments_pipeline(tmp_path, cfg_file):
    out = tmp_path / "out"
    assert main(["gen-data", *cli_args(cfg_file)]) == 0
    for arch in ("gistnet", "fovea"):
        assert main(["train", *cli_args(cfg_file, f"--model.arch={arch}", "--train.checkpoint_every=2")]) == 0
    assert (out / "checkpoints" / "gistnet_iter0000002.gstn").is_file()
    log_rows = list(csv.DictReader((out / "gistnet_train_log.csv").open()))
    assert len(log_rows) == 3 and all(np.isfinite(float(r["loss"])) for r in log_rows)

    assert main(["eval", *cli_args(cfg_file, "--baseline", str(out / "checkpoints" / "fovea.gstn"))]) == 0
    report = json.loads((out / "eval" / "gistnet_report.json").read_text())
    assert report["n"] == 8
    # loading a checkpoint under a different architecture config is refused, unless forced
    assert main(["eval", *cli_args(cfg_file, "--model.scale=0.5")]) == 1

    assert main(["experiments", *cli_args(cfg_file)]) == 0
    exp = out / "experiments"
    blur = list(csv.DictReader((exp / "blur_sweep.csv").open()))
    assert len(blur) == 40
    assert {"report.json", "per_category.csv", "ratio_curve.svg", "summary.json",
            "saliency_0_gistnet_context.svg"} <= {p.name for p in exp.iterdir()}


def test_experiments_with_embeddings(tmp_path, cfg_file):
    out = tmp_path / "out"
    args = cli_args(cfg_file, "--data.synthetic.n_test=30", "--eval.embed_samples=30",
                    "--eval.tsne_perplexity=5", "--eval.tsne_iters=300", "--eval.blur_levels=3")
    assert main(["gen-data", *args]) == 0
    for arch in ("gistnet", "fovea"):
        assert main(["train", *args, f"--model.arch={arch}", "--train.epochs=0"]) == 0
    assert main(["experiments", *args]) == 0
    probe = json.loads((out / "experiments" / "probe.json").read_text())
    accs = [probe[s][part] for s in ("fovea", "periphery") for part in ("train", "test")]
    assert len(accs) == 4 and all(0 <= a <= 1 for a in accs)
    svg = (out / "experiments" / "tsne_periphery.svg").read_text()
    assert svg.count("<circle") == 30


def test_eval_overfit_sanity(tmp_path, cfg_file):
    """A model trained to memorise 50 scenes recovers them at evaluation time."""
    args = cli_args(cfg_file, "--data.synthetic.n_train=50", "--data.synthetic.fidelity=1.0",
                    "--train.batch_size=10", "--train.epochs=25", "--train.lr=0.001")
    assert main(["gen-data", *args]) == 0
    assert main(["train", *args]) == 0
    assert main(["eval", *args, "--split", "train"]) == 0
    report = json.loads((tmp_path / "out" / "eval" / "gistnet_report.json").read_text())
    assert report["topk"]["1"] >= 0.9
