import json
import unittest
from pathlib import Path

import pytest
from hydra import compose, initialize_config_dir
from omegaconf import OmegaConf

import molpretrain
from molpretrain.chem.io import bundled_corpus, write_lines
from molpretrain.cli import (
    EXIT_INPUT,
    MANIFEST_FILE,
    merge_config_file,
    read_config_text,
    run_command,
    to_config_text,
    translate_argv,
)
from molpretrain.errors import ConfigError

CONFIG_DIR = str(Path(molpretrain.__file__).parent / "configs")
TINY_OVERRIDES = [
    "hidden_size=8",
    "num_attention_heads=2",
    "num_hidden_layers=1",
    "intermediate_size=16",
    "batch_size=8",
    "base_batch_size=8",
    "max_steps=2",
    "eval_interval=1",
    "patience_steps=100",
    "holdout_rows=12",
    "deterministic=true",
]


def compose_config(*overrides: str):
    with initialize_config_dir(config_dir=CONFIG_DIR, version_base="1.1"):
        return compose("base", overrides=list(overrides))


class TestTranslateArgv(unittest.TestCase):
    def test_flags(self):
        args = ["pretrain", "--objective", "mtr", "--data", "train.csv", "--seed=3", "--deterministic"]
        self.assertEqual(
            translate_argv(args),
            ["command=pretrain", "objective=mtr", "in_path=train.csv", "seed=3", "deterministic=true"],
        )

    def test_experiment_kind(self):
        self.assertEqual(
            translate_argv(["experiment", "transfer", "reports=[a,b]", "--out-dir", "x"]),
            ["command=experiment", "experiment=transfer", "reports=[a,b]", "output_dir=x"],
        )

    def test_dashes_become_underscores(self):
        self.assertEqual(translate_argv(["--max-steps", "5"]), ["max_steps=5"])

    def test_hydra_flags_pass_through(self):
        self.assertEqual(translate_argv(["canonicalize", "--cfg", "job"]), ["command=canonicalize", "--cfg", "job"])

    def test_missing_value(self):
        with self.assertRaises(ConfigError):
            translate_argv(["pretrain", "--seed"])


class TestConfigText(unittest.TestCase):
    def test_rendering(self):
        text = to_config_text({"b": [1, 2], "a": None, "c": True, "d": "", "e": 0.5})
        self.assertEqual(text, "a=null\nb=[1,2]\nc=true\nd=''\ne=0.5\n")

    def test_unknown_key(self):
        cfg = compose_config()
        with self.assertRaises(ConfigError):
            merge_config_file(cfg, ["seed=1", "colour=blue"], [])

    def test_overrides_win(self):
        cfg = compose_config("seed=7")
        merged = merge_config_file(cfg, ["seed=1", "batch_size=4"], ["seed=7"])
        self.assertEqual(merged.seed, 7)
        self.assertEqual(merged.batch_size, 4)


def test_read_config_text(tmp_path):
    path = tmp_path / "config.txt"
    path.write_text("# saved run\nseed=3\n\nobjective=mtr\n")
    assert read_config_text(path) == ["seed=3", "objective=mtr"]
    path.write_text("seed 3\n")
    with pytest.raises(ConfigError):
        read_config_text(path)
    with pytest.raises(ConfigError):
        read_config_text(tmp_path / "missing.txt")


def test_command_groups_set_defaults():
    assert compose_config().strip_salts is False
    assert compose_config("command=embed").strip_salts is True
    assert compose_config("command=hpsearch").max_steps == 2000
    assert compose_config("command=hpsearch", "max_steps=7").max_steps == 7


def test_canonicalize_run(tmp_path, monkeypatch):
    raw = tmp_path / "raw.smi"
    raw.write_text("OCC\nC1CC\nc1ccccc1\nCC(C)(C)(C)C\nC(C)O\n")
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    monkeypatch.chdir(run_dir)
    code = run_command(compose_config("command=canonicalize", f"in_path={raw}"))
    assert code == 0
    canonical = (run_dir / "canonical.smi").read_text().splitlines()
    rejects = (run_dir / "rejects.csv").read_text().splitlines()
    assert len(canonical) + len(rejects) - 1 == 5
    assert canonical[0] == canonical[2]
    manifest = json.loads((run_dir / MANIFEST_FILE).read_text())
    assert manifest["exit_code"] == 0
    assert manifest["command"] == "canonicalize"
    assert set(manifest["inputs"]) == {"in_path"}
    assert {"canonical.smi", "rejects.csv"} <= set(manifest["outputs"])


def test_missing_input_exits_with_input_code(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code = run_command(compose_config("command=tokenize", f"in_path={tmp_path / 'absent.smi'}"))
    assert code == EXIT_INPUT
    assert json.loads((tmp_path / MANIFEST_FILE).read_text())["exit_code"] == EXIT_INPUT


def test_saved_config_reproduces_run(tmp_path, monkeypatch):
    raw = tmp_path / "raw.smi"
    write_lines(raw, bundled_corpus()[:20])
    first, second = tmp_path / "first", tmp_path / "second"
    first.mkdir()
    second.mkdir()
    monkeypatch.chdir(first)
    assert run_command(compose_config("command=descriptors", f"in_path={raw}", "seed=5")) == 0
    monkeypatch.chdir(second)
    cfg = compose_config(f"config_file={first / 'config.txt'}")
    assert run_command(cfg, [f"config_file={first / 'config.txt'}"]) == 0
    saved = json.loads((second / MANIFEST_FILE).read_text())
    assert saved["command"] == "descriptors"
    assert saved["seed"] == 5
    assert (first / "descriptors.csv").read_bytes() == (second / "descriptors.csv").read_bytes()


def test_split_command(tmp_path, monkeypatch):
    data = tmp_path / "set.csv"
    data.write_text("smiles,label\n" + "".join(f"{s},1\n" for s in bundled_corpus()[:50]))
    monkeypatch.chdir(tmp_path)
    assert run_command(compose_config("command=split", f"in_path={data}")) == 0
    summary = json.loads((tmp_path / "split_summary.json").read_text())
    assert summary["leakage_free"] is True
    assert sum(summary["sizes"].values()) == 50


def test_pretrain_command(tmp_path, monkeypatch):
    raw = tmp_path / "raw.smi"
    write_lines(raw, bundled_corpus()[:60])
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    monkeypatch.chdir(run_dir)
    cfg = compose_config("command=pretrain", f"in_path={raw}", *TINY_OVERRIDES)
    assert run_command(cfg) == 0
    assert (run_dir / "data" / "train.csv").is_file()
    assert (run_dir / "checkpoint" / "best" / "params.bin").is_file()
    saved = OmegaConf.create(json.loads((run_dir / MANIFEST_FILE).read_text())["config"])
    assert saved.max_steps == 2


if __name__ == "__main__":
    unittest.main()
