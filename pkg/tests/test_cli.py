import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from fjspt.cli import main
from fjspt.environment import verify_schedule
from fjspt.instance import load_instance
from fjspt.model import ModelConfig


def run_cli(*argv):
    return main(list(argv))


def test_generate_writes_count_and_manifest(tmp_path):
    out = tmp_path / "insts"
    assert run_cli("generate", "--n", "3", "--m", "2", "--v", "2",
                   "--count", "5", "--seed", "42", "--out-dir", str(out)) == 0
    files = sorted(out.glob("fjspt_*.json"))
    assert len(files) == 5
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "generate"
    assert manifest["seed"] == 42
    for path in files:
        inst = load_instance(path)
        assert (inst.n, inst.m, inst.v) == (3, 2, 2)


def test_generate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        run_cli("generate", "--n", "2", "--m", "2", "--v", "1",
                "--count", "3", "--seed", "7", "--out-dir", str(out))
    for fa in sorted(a.glob("fjspt_*.json")):
        fb = b / fa.name
        assert fa.read_bytes() == fb.read_bytes()


def test_env_seed_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("HGS_SEED", "99")
    out = tmp_path / "envseed"
    run_cli("generate", "--n", "1", "--m", "1", "--v", "1",
            "--count", "1", "--out-dir", str(out))
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 99


def _write_train_config(tmp_path, **overrides):
    cfg = dict(n=2, m=2, v=1, epochs=1, episodes_per_epoch=16, batch_size=8,
               refresh_period=20, lr=5e-3, seed=5, val_instances=2,
               val_period=16,
               checkpoint=str(tmp_path / "ckpt.json"),
               log=str(tmp_path / "log.csv"),
               model=dict(d_h=8, heads=2, d_z=4, d_ff=16, layers=2))
    cfg.update(overrides)
    path = tmp_path / "train.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


def test_train_solve_eval_pipeline(tmp_path):
    cfg_path, cfg = _write_train_config(tmp_path)
    assert run_cli("train", "--config", str(cfg_path)) == 0
    assert (tmp_path / "ckpt.json").exists()
    assert (tmp_path / "log.csv").exists()
    assert (tmp_path / "log.png").exists()
    manifest = json.loads((tmp_path / "ckpt.manifest.json").read_text())
    assert manifest["command"] == "train"

    # resume continues the Adam step counter
    steps_before = json.loads(
        (tmp_path / "ckpt.json").read_text())["store"]["step"]
    assert run_cli("train", "--config", str(cfg_path), "--resume") == 0
    steps_after = json.loads(
        (tmp_path / "ckpt.json").read_text())["store"]["step"]
    assert steps_after == 2 * steps_before

    inst_dir = tmp_path / "insts"
    run_cli("generate", "--n", "2", "--m", "2", "--v", "1", "--count", "3",
            "--seed", "3", "--out-dir", str(inst_dir))

    results = tmp_path / "results.csv"
    assert run_cli("eval", "--instances", str(inst_dir),
                   "--methods", "hgs,spt,lpt,fifo,ga",
                   "--checkpoint", str(tmp_path / "ckpt.json"),
                   "--ga-generations", "4",
                   "--out", str(results), "--seed", "1") == 0
    with results.open() as f:
        rows = list(csv.DictReader(f))
    assert set(r["method"] for r in rows) == {"hgs", "spt", "lpt", "fifo", "ga"}
    per_inst = [r for r in rows if not r["instance"].startswith("mean[")]
    mean_rows = [r for r in rows if r["instance"].startswith("mean[")]
    assert len(per_inst) == 3 * 5
    assert len(mean_rows) == 5
    # mean rows must equal the recomputed mean of the instance rows
    for mr in mean_rows:
        vals = [float(r["makespan"]) for r in per_inst
                if r["method"] == mr["method"]]
        assert float(mr["makespan"]) == pytest.approx(np.mean(vals))
    # the per-instance best method has gap 0
    for name in {r["instance"] for r in per_inst}:
        gaps = [float(r["gap_pct"]) for r in per_inst if r["instance"] == name]
        assert min(gaps) == 0.0
    assert (tmp_path / "results.png").exists()
    assert (tmp_path / "results.manifest.json").exists()


def test_eval_single_method_gap_zero(tmp_path):
    inst_dir = tmp_path / "insts"
    run_cli("generate", "--n", "2", "--m", "2", "--v", "1", "--count", "2",
            "--seed", "11", "--out-dir", str(inst_dir))
    results = tmp_path / "spt.csv"
    assert run_cli("eval", "--instances", str(inst_dir), "--methods", "spt",
                   "--out", str(results)) == 0
    with results.open() as f:
        rows = list(csv.DictReader(f))
    assert all(float(r["gap_pct"]) == 0.0 for r in rows)
    assert list(rows[0].keys()) == ["instance", "method", "makespan",
                                    "runtime_s", "gap_pct"]


def test_solve_outputs_schedule_and_svg(tmp_path):
    inst_dir = tmp_path / "insts"
    run_cli("generate", "--n", "1", "--m", "1", "--v", "1", "--count", "1",
            "--seed", "2", "--out-dir", str(inst_dir))
    inst_path = next(inst_dir.glob("fjspt_*.json"))
    csv_out = tmp_path / "sched.csv"
    svg_out = tmp_path / "sched.svg"
    assert run_cli("solve", "--instance", str(inst_path), "--method", "spt",
                   "--out", str(csv_out), "--out", str(svg_out)) == 0
    with csv_out.open() as f:
        rows = list(csv.DictReader(f))
    inst = load_instance(inst_path)
    assert len(rows) == inst.total_ops
    # SVG must parse as XML
    tree = ET.parse(svg_out)
    assert tree.getroot().tag.endswith("svg")


def test_solve_schedule_passes_checker(tmp_path):
    inst_dir = tmp_path / "insts"
    run_cli("generate", "--n", "3", "--m", "2", "--v", "2", "--count", "1",
            "--seed", "8", "--out-dir", str(inst_dir))
    inst_path = next(inst_dir.glob("fjspt_*.json"))
    csv_out = tmp_path / "sched.csv"
    assert run_cli("solve", "--instance", str(inst_path), "--method", "fifo",
                   "--out", str(csv_out)) == 0
    # rebuild the schedule from the CSV and validate timing columns
    inst = load_instance(inst_path)
    from fjspt.baselines import run_rule
    from fjspt.environment import final_schedule
    sched = final_schedule(run_rule(inst, "fifo"))
    assert verify_schedule(inst, sched) == []
    with csv_out.open() as f:
        rows = list(csv.DictReader(f))
    by_key = {(int(r["job"]) - 1, int(r["op"]) - 1): r for r in rows}
    for rec in sched.rows:
        row = by_key[(rec.job, rec.op)]
        assert int(row["start"]) == rec.start
        assert int(row["completion"]) == rec.completion


def test_errors_exit_nonzero_with_single_line(tmp_path, capsys):
    code = run_cli("solve", "--instance", str(tmp_path / "missing.json"),
                   "--method", "spt", "--out", str(tmp_path / "x.csv"))
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith("fjspt: error:")

    code = run_cli("eval", "--instances", str(tmp_path), "--methods", "hgs",
                   "--out", str(tmp_path / "r.csv"))
    assert code == 1

    inst_dir = tmp_path / "insts"
    run_cli("generate", "--n", "1", "--m", "1", "--v", "1", "--count", "1",
            "--seed", "1", "--out-dir", str(inst_dir))
    code = run_cli("solve", "--instance", str(next(inst_dir.glob("fjspt_*.json"))),
                   "--method", "nope", "--out", str(tmp_path / "x.csv"))
    assert code == 1


def test_checkpoint_model_config_round_trip(tmp_path):
    cfg_path, cfg = _write_train_config(tmp_path)
    run_cli("train", "--config", str(cfg_path))
    from fjspt.training import load_checkpoint
    store, model_cfg = load_checkpoint(tmp_path / "ckpt.json")
    assert model_cfg == ModelConfig(**cfg["model"])
