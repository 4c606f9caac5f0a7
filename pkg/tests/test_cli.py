import json
import os

import pytest

from ndphylo import __version__
from ndphylo.cli import build_parser, main
from ndphylo.config import Config
from ndphylo.imageio import read_manifest, write_manifest, DatasetManifest

TINY = 'n_sources = 3\nside = 48\nconfigs = ["A", "D"]\ntest_fraction = 0.34\n' \
       'val_fraction = 0.0\nfeature_mode = "levels"\nepochs = 5\n'


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.toml"
    cfg.write_text(TINY)
    out = d / "run"
    assert main(["pipeline", "--seed", "3", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def test_unknown_subcommand_and_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code != 0
    with pytest.raises(SystemExit) as e:
        main(["synth", "--no-such-flag"])
    assert e.value.code != 0


def test_eta_default_matches_config():
    args = build_parser().parse_args(["reconstruct", "--manifest", "m", "--model", "x"])
    assert args.eta is None and Config().eta == 0.7


def test_pipeline_outputs(tiny):
    _, out = tiny
    for name in ("manifest.jsonl", "model.json", "history.json", "forest.json", "forest.dot",
                 "report.json", "report.txt"):
        assert (out / name).exists(), name
    prov = json.loads((out / "report.json").read_text())["meta"]["provenance"]
    assert prov["seed"] == 3 and prov["version"] == __version__ and len(prov["config_hash"]) == 16
    assert json.loads((out / "model.json").read_text())["meta"]["provenance"] == prov
    assert json.loads((out / "forest.json").read_text())["provenance"] == prov
    assert read_manifest(out / "manifest.jsonl").meta["provenance"] == prov
    assert (out / "forest.dot").read_text().startswith(f"// ndphylo {__version__} seed=3")
    assert not [f for f in os.listdir(out) if ".tmp" in f]


def test_subcommands(tiny, tmp_path):
    cfg, out = tiny
    man = str(out / "manifest.jsonl")
    assert main(["extract", "--manifest", man, "--config", str(cfg), "--out", str(tmp_path)]) == 0
    index = json.loads((tmp_path / "residuals.json").read_text())["files"]
    assert len(index) == 3 * 2 * 5
    assert main(["cluster", "--manifest", man, "--config", str(cfg), "--out", str(tmp_path)]) == 0
    clusters = json.loads((tmp_path / "clusters.json").read_text())
    assert clusters["k"] >= 1 and len(clusters["labels"]) == 30
    assert main(["reconstruct", "--mode", "ipf", "--manifest", man, "--model",
                 str(out / "model.json"), "--config", str(cfg), "--out", str(tmp_path)]) == 0
    forest = json.loads((tmp_path / "forest.json").read_text())
    assert forest["mode"] == "ipf" and sum(len(t["nodes"]) for t in forest["trees"]) == 10


def test_evaluate_without_ground_truth(tiny, tmp_path, capsys):
    cfg, out = tiny
    man = read_manifest(out / "manifest.jsonl")
    bare = DatasetManifest(man.entries, [], man.meta)
    path = tmp_path / "bare.jsonl"
    write_manifest(bare, path)
    os.symlink(out / "images", tmp_path / "images")
    code = main(["evaluate", "--manifest", str(path), "--forest", str(out / "forest.json"),
                 "--out", str(tmp_path)])
    assert code == 2
    assert "ground_truth" in capsys.readouterr().err


def test_missing_file_is_an_error(tmp_path, capsys):
    assert main(["train", "--manifest", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_pipeline_deterministic(tiny, tmp_path):
    cfg, out = tiny
    again = tmp_path / "again"
    assert main(["pipeline", "--seed", "3", "--config", str(cfg), "--out", str(again)]) == 0
    for name in ("report.json", "model.json", "forest.json", "forest.dot", "manifest.jsonl"):
        assert (out / name).read_bytes() == (again / name).read_bytes(), name
