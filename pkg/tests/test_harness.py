"""Runner artifacts, reproducibility, budget ledgers, and the CLI surface."""

import hashlib
import json

import numpy as np
import pytest

from mhnes import cli, runner
from mhnes.config import ExperimentConfig


def tiny_config_dict(method="mhe_sample", out="runs/x", seeds=(0, 1)):
    return {
        "method": method,
        "data": {
            "classes": 3, "image_size": 16,
            "n_train": 96, "n_val": 48, "n_test": 48, "seed": 1,
        },
        "model": {
            "num_classes": 3, "num_heads": 2, "cells_per_head": 1, "nodes": 2,
            "ops": ["skip_connect", "max_pool_3x3", "avg_pool_3x3"],
            "backbone_width": 8, "head_width": 8,
        },
        "search": {
            "epochs": 2, "batch": 32, "warmstart_epochs": 1,
            "drnas_stage_epochs": 2, "drnas_warmstart_epochs": 1,
            "partial_k": 2, "drnas_stage2_k": 1, "eval_samples": 3,
        },
        "train": {"epochs": 2, "batch": 48},
        "seeds": list(seeds),
        "out_dir": out,
        "pool_size": 3,
    }


def strip_wall(csv_text):
    return ["," .join(line.split(",")[:-1]) for line in csv_text.splitlines()]


@pytest.fixture(scope="module")
def mhe_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mhe")
    cfg = ExperimentConfig.from_dict(tiny_config_dict(out=str(out / "run")))
    return cfg, runner.run(cfg)


class TestRunArtifacts:
    def test_layout(self, mhe_run):
        _, out = mhe_run
        assert (out / "metrics.csv").exists()
        assert (out / "config.json").exists()
        for seed in (0, 1):
            d = out / f"seed_{seed}"
            assert (d / "genotype.json").exists()
            assert (d / "budget.json").exists()
            assert (d / "manifest.json").exists()

    def test_manifest_hash_matches_stored_config(self, mhe_run):
        cfg, out = mhe_run
        stored = (out / "config.json").read_text()
        rehash = hashlib.sha256(stored.encode()).hexdigest()
        manifest = json.loads((out / "seed_0" / "manifest.json").read_text())
        assert manifest["config_hash"] == rehash == cfg.config_hash()

    def test_budget_executed_matches_planned(self, mhe_run):
        _, out = mhe_run
        for seed in (0, 1):
            b = json.loads((out / f"seed_{seed}" / "budget.json").read_text())
            assert b["executed"]["total_steps"] == b["planned"]["total_steps"]

    def test_aggregate_mean_is_arithmetic_mean_of_seed_rows(self, mhe_run):
        _, out = mhe_run
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        rows = [dict(zip(header, l.split(","))) for l in lines[1:]]
        seed_rows = [r for r in rows if r["seed"] not in ("mean", "std")]
        mean_rows = [r for r in rows if r["seed"] == "mean"]
        assert mean_rows, "aggregate rows missing"
        for mr in mean_rows:
            group = [
                r for r in seed_rows
                if r["split"] == mr["split"] and r["severity"] == mr["severity"]
            ]
            want = np.mean([float(r["nll"]) for r in group])
            assert abs(float(mr["nll"]) - want) < 1e-6

    def test_aggregates_are_last_rows(self, mhe_run):
        _, out = mhe_run
        lines = (out / "metrics.csv").read_text().strip().splitlines()[1:]
        seeds = [l.split(",")[1] for l in lines]
        first_agg = seeds.index("mean")
        assert all(s in ("mean", "std") for s in seeds[first_agg:])

    def test_rerun_identical_except_wall_clock(self, tmp_path):
        cfg1 = ExperimentConfig.from_dict(
            tiny_config_dict(out=str(tmp_path / "a"), seeds=(0,))
        )
        cfg2 = ExperimentConfig.from_dict(
            tiny_config_dict(out=str(tmp_path / "b"), seeds=(0,))
        )
        out1, out2 = runner.run(cfg1), runner.run(cfg2)
        a = strip_wall((out1 / "metrics.csv").read_text())
        b = strip_wall((out2 / "metrics.csv").read_text())
        assert a == b
        ga = (out1 / "seed_0" / "genotype.json").read_bytes()
        gb = (out2 / "seed_0" / "genotype.json").read_bytes()
        assert ga == gb

    def test_failing_seed_aborts_only_itself(self, tmp_path, monkeypatch):
        cfg = ExperimentConfig.from_dict(
            tiny_config_dict(out=str(tmp_path / "f"), seeds=(0, 1))
        )
        real = runner.run_seed

        def boom(config, bundle, seed, seed_dir):
            if seed == 1:
                raise RuntimeError("induced failure")
            return real(config, bundle, seed, seed_dir)

        monkeypatch.setattr(runner, "run_seed", boom)
        out = runner.run(cfg)
        m0 = json.loads((out / "seed_0" / "manifest.json").read_text())
        m1 = json.loads((out / "seed_1" / "manifest.json").read_text())
        assert "error" not in m0
        assert "induced failure" in m1["error"]
        rows = (out / "metrics.csv").read_text().strip().splitlines()[1:]
        assert all(r.split(",")[1] in ("0", "mean", "std") for r in rows)

    def test_mismatched_classes_rejected(self, tmp_path):
        d = tiny_config_dict(out=str(tmp_path / "m"))
        d["model"]["num_classes"] = 4
        d["data"]["classes"] = 3
        cfg = ExperimentConfig.from_dict(d)
        with pytest.raises(Exception, match="num_classes"):
            runner.run(cfg)

    def test_one_shot_method_writes_loadable_genotype(self, tmp_path):
        from mhnes.space import MultiHeadGenotype

        cfg = ExperimentConfig.from_dict(
            tiny_config_dict(method="randomnas", out=str(tmp_path / "rn"), seeds=(0,))
        )
        out = runner.run(cfg)
        geno = MultiHeadGenotype.load(out / "seed_0" / "genotype.json")
        geno.validate()

    def test_pool_method_writes_member_list(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            tiny_config_dict(method="nes_rs", out=str(tmp_path / "nes"), seeds=(0,))
        )
        out = runner.run(cfg)
        d = json.loads((out / "seed_0" / "genotype.json").read_text())
        assert len(d["members"]) == 2


class TestCli:
    def test_dataset_gen_then_inspect_counts_match(self, tmp_path, capsys):
        out = tmp_path / "d"
        assert cli.main(
            ["dataset", "gen", "--classes", "4", "--seed", "7",
             "--train", "40", "--val", "20", "--test", "20",
             "--out", str(out)]
        ) == 0
        gen_out = capsys.readouterr().out
        assert cli.main(["dataset", "inspect", str(out)]) == 0
        ins_out = capsys.readouterr().out
        for line in ("train: n=40", "val: n=20", "test: n=20"):
            assert line in gen_out and line in ins_out

    def test_missing_config_is_usage_error(self, capsys):
        assert cli.main(["search", "--config", "missing.cfg"]) == 1
        assert "not found" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self, capsys):
        assert cli.main(["dataset", "gen", "--wat", "3", "--out", "x"]) == 1

    def test_method_command_mismatch(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(tiny_config_dict(method="mhe_sample")))
        assert cli.main(["search", "--config", str(p)]) == 1
        assert "baseline" in capsys.readouterr().err

    def test_runtime_failure_exit_two(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(tiny_config_dict()))
        geno = tmp_path / "g.json"
        geno.write_text("{}")  # parseable JSON, invalid genotype
        code = cli.main(
            ["train", "--config", str(cfg), "--genotype", str(geno),
             "--out", str(tmp_path / "o")]
        )
        assert code == 2

    def test_report_matches_hand_merge(self, tmp_path, capsys):
        csv1 = tmp_path / "a.csv"
        header = runner.CSV_HEADER
        csv1.write_text(
            header + "\n"
            "drnas,0,3,test,0,0.500000,0.100000,0.020000,0.400000,100,10,1.0\n"
            "drnas,1,3,test,0,0.700000,0.200000,0.040000,0.500000,100,10,1.0\n"
            "drnas,mean,3,test,0,0.600000,0.150000,0.030000,0.450000,100,10,1.0\n"
        )
        csv2 = tmp_path / "b.csv"
        csv2.write_text(
            header + "\n"
            "nes_rs,0,3,test,0,0.800000,0.300000,0.050000,0.600000,200,99,1.0\n"
            "nes_rs,1,3,test,0,0.600000,0.100000,0.030000,0.500000,200,99,1.0\n"
        )
        assert cli.main(["report", "--csv", str(csv1), str(csv2)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out[0].startswith("method,M,")
        drnas = dict(zip(out[0].split(","), out[1].split(",")))
        assert drnas["method"] == "drnas"
        assert float(drnas["nll_mean"]) == pytest.approx(0.6)
        assert float(drnas["nll_std"]) == pytest.approx(np.std([0.5, 0.7]))
        nes = dict(zip(out[0].split(","), out[2].split(",")))
        assert float(nes["error_mean"]) == pytest.approx(0.2)

    def test_analyze_hamming_requires_inputs(self, capsys):
        assert cli.main(["analyze", "hamming", "--out", "x"]) == 1

    def test_no_subcommand_mutates_dataset_directory(self, tmp_path):
        dataset_dir = tmp_path / "data"
        assert cli.main(
            ["dataset", "gen", "--classes", "3", "--train", "96", "--val", "48",
             "--test", "48", "--seed", "2", "--out", str(dataset_dir)]
        ) == 0
        blob = (dataset_dir / "dataset.bin").read_bytes()
        d = tiny_config_dict(method="randomnas", out=str(tmp_path / "run"), seeds=(0,))
        d["data"] = {"classes": 3, "path": str(dataset_dir / "dataset.bin")}
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(d))
        assert cli.main(["dataset", "inspect", str(dataset_dir)]) == 0
        assert cli.main(["search", "--config", str(cfg_path)]) == 0
        assert (dataset_dir / "dataset.bin").read_bytes() == blob
        assert [p.name for p in dataset_dir.iterdir()] == ["dataset.bin"]
