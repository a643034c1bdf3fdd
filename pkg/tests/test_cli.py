import json

import pytest
import yaml

from mantis.cli import build_parser, main

from conftest import tiny_config


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory, tiny_world):
    d = tmp_path_factory.mktemp("cli")
    pc = tiny_config().to_dict()
    p = d / "mantis.yaml"
    p.write_text(yaml.safe_dump({"data_dir": str(tiny_world), "pipeline": pc}))
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["blocklist", "--bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args(["attack", "--out", "x", "--n-ips", "5"])


def test_failures_exit_1(capsys, tmp_path):
    code, _, err = run(capsys, "--data-dir", tmp_path / "missing", "seeds", "--day", "2022-07-05")
    assert code == 1 and err.startswith("mantis seeds:")
    (tmp_path / "bad.yaml").write_text("pipeline: {nope: 1}\n")
    code, _, err = run(capsys, "--config", tmp_path / "bad.yaml", "seeds")
    assert code == 1 and "config error" in err


def test_stage_commands(capsys, cfg_file, tmp_path):
    code, out, _ = run(capsys, "--config", cfg_file, "seeds", "--out", tmp_path / "seeds.txt")
    assert code == 0 and (tmp_path / "seeds.txt").read_text().strip()
    assert (tmp_path / "seeds.txt.manifest.json").exists()
    code, out, _ = run(capsys, "--config", cfg_file, "expand", "--out", tmp_path / "g.csv")
    assert code == 0 and json.loads(out)["nodes"] > 0
    man = json.loads((tmp_path / "g.csv.manifest.json").read_text())
    assert man["stage"] == "expand" and len(man["output_sha256"]) == 64 and man["inputs_sha256"]
    code, out, _ = run(capsys, "--config", cfg_file, "featurize", "--out", tmp_path / "feat")
    assert code == 0 and (tmp_path / "feat" / "labels.csv").exists()
    code, out, _ = run(capsys, "--config", cfg_file, "train", "--epochs", 3, "--out", tmp_path / "m.npz")
    assert code == 0 and json.loads(out)["model_id"]


def test_blocklist_runs_are_byte_identical(capsys, cfg_file, tmp_path):
    outs = []
    for k in ("a", "b"):
        code, out, _ = run(capsys, "--config", cfg_file, "blocklist", "--out-dir", tmp_path / k)
        assert code == 0
        outs.append(json.loads(out))
    for key in ("blocklist", "manifest"):
        a, b = (open(o[key], "rb").read() for o in outs)
        assert a == b


def test_attack_and_explain(capsys, cfg_file, tmp_path):
    code, out, _ = run(capsys, "--config", cfg_file, "attack", "--n-ips", 1, "--rates", "0,0.1",
                       "--no-adversarial", "--out", tmp_path / "rob.csv")
    assert code == 0 and len((tmp_path / "rob.csv").read_text().splitlines()) == 3
    code, out, _ = run(capsys, "--config", cfg_file, "explain", "--nodes", 20, "--out", tmp_path / "imp.csv")
    assert code == 0 and (tmp_path / "imp.csv").read_text().startswith("bucket,group,score")


def test_ingest(capsys, tiny_world, tmp_path):
    code, out, _ = run(capsys, "ingest", tiny_world / "pdns.jsonl", "--out", tmp_path / "store.jsonl")
    assert code == 0 and json.loads(out)["rejected"] == 0


def test_predict_command(capsys, tiny_ensemble, long_world):
    _, _, ens, _, out = tiny_ensemble
    d = sorted(ens.encoders[-1].labeled_domains())[0]
    code, text, _ = run(capsys, "--data-dir", long_world, "predict", "--ensemble", out, "--domain", d,
                        "--domain", "nowhere-to-be-seen.example")
    rows = [json.loads(line) for line in text.splitlines()]
    assert code == 0 and rows[0]["domain"] == d and rows[1]["verdict"] == "no-visibility"
