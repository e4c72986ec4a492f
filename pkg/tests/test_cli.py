import re
import textwrap

import pytest

from xlstm_np.blocks import init_model, save_checkpoint
from xlstm_np.cli import main
from xlstm_np.config import ConfigError, load_run_config, run_config_from_dict
from xlstm_np.experiment import read_metrics, rng_streams, train

PARITY_TINY = """
[model]
embedding_dim = 16
num_blocks = 2
ratio = [0, 1]
[task]
kind = "parity"
max_len = 8
[train]
steps = 6
batch_size = 4
eval_interval = 3
eval_samples = 400
seed = 0
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(PARITY_TINY)
    return path


def test_unknown_key_is_named(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[task]\nkind = 'parity'\n[train]\nlearningrate = 0.1\n")
    assert main(["train", "--config", str(path)]) == 2
    assert "train.learningrate" in capsys.readouterr().err
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    assert info.value.key == "train.learningrate"


def test_unknown_table_and_bad_value():
    with pytest.raises(ConfigError):
        run_config_from_dict({"task": {"kind": "parity"}, "optim": {}})
    with pytest.raises(ConfigError):
        run_config_from_dict({"task": {"kind": "sorting"}})


def test_nns_config_sets_real_valued_interface():
    cfg = run_config_from_dict({"task": {"kind": "nns"}, "model": {"embedding_dim": 16}})
    assert cfg.model.input_dim == 3 and cfg.model.out_dim == 1


def test_equivcheck_rejects_zero_trials(capsys):
    assert main(["equivcheck", "--trials", "0"]) == 2


def test_equivcheck_reports_reproducible_worst_seed(capsys):
    assert main(["equivcheck", "--trials", "5", "--max-t", "12", "--max-d", "8"]) == 0
    first = capsys.readouterr().out
    seed = int(re.search(r"mlstm_parallel\s+worst \S+ at seed (\d+)", first).group(1))
    assert main(["equivcheck", "--trials", "1", "--seed", str(seed), "--max-t", "12", "--max-d", "8"]) == 0
    second = capsys.readouterr().out
    err = lambda text: re.search(r"mlstm_parallel\s+worst (\S+)", text).group(1)
    assert err(first) == err(second)


def test_gradcheck_exit_codes(tmp_path):
    path = tmp_path / "g.toml"
    path.write_text("[model]\nembedding_dim = 16\nnum_blocks = 2\nratio = [1, 1]\n"
                    "[task]\nkind = 'mqar'\nvocab_size = 12\ncontext = 16\nkv_pairs = 2\n")
    assert main(["gradcheck", "--config", str(path), "--max-t", "4"]) == 0
    assert main(["gradcheck", "--config", str(path), "--max-t", "4", "--threshold", "1e-12"]) == 1


def test_missing_checkpoint(tiny_config, tmp_path):
    assert main(["eval", "--config", str(tiny_config), "--checkpoint", str(tmp_path / "none.ckpt")]) != 0


def test_missing_arguments_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["train"])
    assert info.value.code == 2


def test_untrained_parity_model_is_at_chance(tiny_config, tmp_path, capsys):
    cfg = load_run_config(tiny_config)
    ckpt = tmp_path / "init.ckpt"
    save_checkpoint(ckpt, init_model(cfg.model, rng_streams(0)[0]), {"steps": 0})
    assert main(["eval", "--config", str(tiny_config), "--checkpoint", str(ckpt)]) == 0
    out = capsys.readouterr().out
    score = float(re.search(r"eval_scaled_accuracy = (\S+)", out).group(1))
    assert abs(score) <= 0.1


def test_train_writes_outputs(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(out), "--quiet"]) == 0
    rows = read_metrics(out / "metrics.csv")
    assert [r["step"] for r in rows] == ["3", "6"]
    assert (out / "model.ckpt").is_file()
    assert (out / "timing.csv").read_text().startswith("step,wall_seconds")
    assert main(["eval", "--config", str(tiny_config), "--checkpoint", str(out / "model.ckpt")]) == 0


def test_training_is_deterministic(tiny_config, tmp_path):
    cfg = load_run_config(tiny_config)
    train(cfg, tmp_path / "a")
    train(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    train(cfg.with_seed(1), tmp_path / "c")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "c" / "metrics.csv").read_bytes()


def test_target_metric_stops_early(tmp_path):
    text = PARITY_TINY.replace("seed = 0", "seed = 0\ntarget_metric = -1.0")
    path = tmp_path / "t.toml"
    path.write_text(textwrap.dedent(text))
    result = train(load_run_config(path))
    assert result.steps_run == 3
