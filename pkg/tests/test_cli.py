import json

import pytest

from evounroll.cli import main


def write_cfg(tmp_path, extra=""):
    path = tmp_path / "exp.cfg"
    path.write_text(
        "seed = 3\n"
        "dim = 2\n"
        "families = Sphere\n"
        "k_steps = 3\n"
        "pop_size = 6\n"
        "batch = 2\n"
        "tasks_per_batch = 2\n"
        "iterations = 2\n"
        "d_model = 8\n"
        "heads = 2\n"
        "budget = 200\n"
        "eval_seeds = 0,1\n"
        f"out_dir = {tmp_path / 'runs'}\n"
        + extra)
    return path


class TestCliFlow:
    def test_meta_train_then_evaluate_then_ecdf(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert main(["meta-train", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "checkpoint:" in out
        ckpt = [ln.split(": ", 1)[1] for ln in out.splitlines()
                if ln.startswith("checkpoint:")][0]
        assert main(["evaluate", ckpt, str(cfg)]) == 0
        run_dirs = [p for p in (tmp_path / "runs").iterdir()
                    if (p / "record.json").exists()]
        assert len(run_dirs) == 2
        assert main(["ecdf", str(tmp_path / "runs")]) == 0
        curve = json.loads((tmp_path / "runs" / "ecdf.json").read_text())
        assert set(curve) == {"targets", "evals", "values"}

    def test_verify_theory_passes(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert main(["verify-theory", str(cfg)]) == 0
        reports = json.loads(capsys.readouterr().out)
        assert all(r["passed"] for r in reports)
        assert (tmp_path / "runs" / "theory_report.json").exists()

    def test_ablate_smoke(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, extra="ablation_iterations = 1\nbudget = 300\n"
                                        "eval_seeds = 0\n")
        assert main(["ablate", "no-softgate", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "no-softgate" in out
        assert "sign test" in out


class TestCliErrors:
    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("nonsense = 1\n")
        assert main(["verify-theory", str(path)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_ablation_variant_exits_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert main(["ablate", "no-such-variant", str(cfg)]) == 2

    def test_budget_too_small_exits_2(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, extra="budget = 50\n")
        assert main(["meta-train", str(cfg)]) == 0
        ckpt = str(tmp_path / "runs")
        import glob
        ckpts = glob.glob(str(tmp_path / "runs" / "*" / "checkpoint.ckpt"))
        assert main(["evaluate", ckpts[0], str(cfg)]) == 2
        assert "minimum feasible" in capsys.readouterr().err
