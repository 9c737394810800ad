import json

import pytest
import yaml

from celora import config as cfgmod
from celora.cli import comm_table_rows, main
from celora.errors import ConfigError


BASE = {
    "seed": 3,
    "method": "ce-lora",
    "dataset": {"classes": 4, "samples": 120, "raw_dim": 6},
    "partition": {"clients": 2},
    "model": {"feature_dim": 8, "layers": 1, "rank": 2},
    "train": {"rounds": 1, "batch_size": 16},
}


def _write_cfg(tmp_path, raw=None, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw if raw is not None else BASE))
    return str(path)


# ---------------------------------------------------------------- config


def test_validate_fills_defaults():
    cfg = cfgmod.validate(BASE)
    assert cfg["similarity"]["gmm_components"] == 3
    assert cfg["similarity"]["n_probe"] == 256
    assert cfg["attack"]["steps"] == 200
    assert cfg["output"]["dir"] == "out"


def test_unknown_key_rejected_with_path():
    bad = dict(BASE, similarity={"gmm_comps": 3})
    with pytest.raises(ConfigError) as err:
        cfgmod.validate(bad)
    assert "similarity.gmm_comps" in str(err.value)


def test_missing_required_field():
    bad = {k: v for k, v in BASE.items() if k != "seed"}
    with pytest.raises(ConfigError) as err:
        cfgmod.validate(bad)
    assert "seed" in str(err.value)


def test_type_errors_name_the_field():
    bad = dict(BASE, train={"rounds": "five"})
    with pytest.raises(ConfigError) as err:
        cfgmod.validate(bad)
    assert "train.rounds" in str(err.value)


def test_csv_dataset_requires_path():
    bad = dict(BASE, dataset={"kind": "csv"})
    with pytest.raises(ConfigError):
        cfgmod.validate(bad)


def test_overrides_parse_yaml_scalars():
    cfg = cfgmod.validate(BASE)
    out = cfgmod.apply_overrides(
        cfg, ["train.learning_rate=0.1", "partition.clients=5", "similarity.include_self=true"]
    )
    assert out["train"]["learning_rate"] == 0.1
    assert out["partition"]["clients"] == 5
    assert out["similarity"]["include_self"] is True
    # the original is untouched
    assert cfg["partition"]["clients"] == 2


def test_overrides_are_revalidated():
    cfg = cfgmod.validate(BASE)
    with pytest.raises(ConfigError):
        cfgmod.apply_overrides(cfg, ["train.rounds=-1"])
    with pytest.raises(ConfigError):
        cfgmod.apply_overrides(cfg, ["train.rounds"])


def test_dump_load_roundtrip(tmp_path):
    cfg = cfgmod.validate(BASE)
    path = tmp_path / "dumped.yaml"
    cfgmod.dump(cfg, path)
    assert cfgmod.load(path) == cfg


# ---------------------------------------------------------------- comm-table


def test_comm_table_large_shape_ratio():
    cfg = cfgmod.validate(
        dict(BASE, comm_shape={"layers": 64, "d": 4096, "k": 4096, "rank": 8})
    )
    rows = {r["method"]: r for r in comm_table_rows(cfg)}
    assert rows["fedavg-lora"]["params_per_round"] == 4_194_304
    assert rows["ffa-lora"]["params_per_round"] == 2_097_152
    assert rows["ce-lora"]["params_per_round"] == 4_096
    assert rows["ce-lora"]["percent_of_fedavg"] == "0.10%"
    assert rows["ffa-lora"]["percent_of_fedavg"] == "50.00%"


def test_comm_table_falls_back_to_model_shape():
    cfg = cfgmod.validate(BASE)
    rows = {r["method"]: r for r in comm_table_rows(cfg)}
    # one 8x8 matrix at rank 2
    assert rows["fedavg-lora"]["params_per_round"] == 2 * (8 + 8)
    assert rows["ce-lora"]["params_per_round"] == 4


# ---------------------------------------------------------------- subcommands


def test_run_writes_artifacts(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path)
    out = tmp_path / "out"
    rc = main(["run", "--config", cfg_path, "--out-dir", str(out)])
    assert rc == 0
    assert (out / "effective_config.yaml").exists()
    lines = (out / "metrics.jsonl").read_text().strip().split("\n")
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert set(rec) == {"round", "clients", "uploaded_params", "weights"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rounds"] == 1
    assert summary["total_uploaded_params"] == 2 * 4  # two clients, one 2x2 core
    acc_lines = (out / "accuracy.csv").read_text().strip().split("\n")
    assert acc_lines[0] == "client_id,eval_accuracy"
    assert len(acc_lines) == 3
    printed = json.loads(capsys.readouterr().out.strip().split("\n")[-1])
    assert printed == summary


def test_run_rerun_from_effective_config_is_byte_identical(tmp_path):
    cfg_path = _write_cfg(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg_path, "--out-dir", str(out1)]) == 0
    assert main(["run", "--config", str(out1 / "effective_config.yaml"),
                 "--out-dir", str(out2)]) == 0
    assert (out1 / "metrics.jsonl").read_bytes() == (out2 / "metrics.jsonl").read_bytes()
    assert (out1 / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()


def test_run_set_and_seed_flags(tmp_path):
    cfg_path = _write_cfg(tmp_path)
    out = tmp_path / "out"
    rc = main(["run", "--config", cfg_path, "--out-dir", str(out),
               "--seed", "99", "--set", "train.rounds=2"])
    assert rc == 0
    eff = yaml.safe_load((out / "effective_config.yaml").read_text())
    assert eff["seed"] == 99
    assert eff["train"]["rounds"] == 2
    assert len((out / "metrics.jsonl").read_text().strip().split("\n")) == 2


def test_config_error_exit_code(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path, raw={"seed": 1})  # missing required sections
    assert main(["run", "--config", cfg_path]) == 2
    assert "config error" in capsys.readouterr().err


def test_bad_override_exit_code(tmp_path):
    cfg_path = _write_cfg(tmp_path)
    assert main(["run", "--config", cfg_path, "--set", "nope.x=1",
                 "--out-dir", str(tmp_path / "o")]) == 2


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_comm_table_command(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path, raw=dict(
        BASE, comm_shape={"layers": 64, "d": 4096, "k": 4096, "rank": 8}
    ))
    out = tmp_path / "out"
    assert main(["comm-table", "--config", cfg_path, "--out-dir", str(out)]) == 0
    text = capsys.readouterr().out
    assert "0.10%" in text
    csv_text = (out / "comm_table.csv").read_text()
    assert "ce-lora,4096,0.10%" in csv_text


def test_sweep_writes_rows(tmp_path):
    cfg_path = _write_cfg(tmp_path)
    out = tmp_path / "out"
    rc = main(["sweep", "--config", cfg_path, "--out-dir", str(out),
               "--axis", "alpha", "--values", "0.3,3.0"])
    assert rc == 0
    lines = (out / "sweep.csv").read_text().strip().split("\n")
    assert len(lines) == 3
    assert lines[1].startswith("alpha,0.3,ce-lora")
    assert all("ok" in line for line in lines[1:])


def test_sweep_continues_after_failure(tmp_path):
    cfg_path = _write_cfg(tmp_path)
    out = tmp_path / "out"
    # 600 clients cannot each get 2 samples out of 120: that value fails,
    # the other still runs, and the exit code reports partial failure
    rc = main(["sweep", "--config", cfg_path, "--out-dir", str(out),
               "--axis", "clients", "--values", "600,2"])
    assert rc == 1
    lines = (out / "sweep.csv").read_text().strip().split("\n")
    assert len(lines) == 3
    assert "failed" in lines[1]
    assert lines[2].endswith("ok")


def test_attack_command_csv_deterministic(tmp_path):
    cfg_path = _write_cfg(tmp_path, raw=dict(
        BASE,
        attack={"surfaces": ["ffa", "c_only"], "batch_sizes": [1],
                "steps": 5, "restarts": 1, "seeds": 1, "d": 4, "k": 2, "rank": 1},
    ))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["attack", "--config", cfg_path, "--out-dir", str(out)]) == 0
        outs.append((out / "attack.csv").read_bytes())
    assert outs[0] == outs[1]
    text = outs[0].decode()
    assert text.count("\n") == 3  # header + one row per surface
    assert "c_only" in text and "ffa" in text


def test_partition_dump(tmp_path):
    cfg_path = _write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["partition-dump", "--config", cfg_path, "--out-dir", str(out)]) == 0
    dump = json.loads((out / "partition.json").read_text())
    assert set(dump) == {"0", "1"}
    idx = sorted(i for shard in dump.values() for i in shard)
    assert idx == list(range(120))
