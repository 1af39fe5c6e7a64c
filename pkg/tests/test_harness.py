import json

import numpy as np
import pytest

from evounroll.benchmarks import ObjectiveFunction
from evounroll.checkpoint import load_checkpoint, save_checkpoint
from evounroll.config import (config_hash, default_config, parse_config_text,
                               read_config, write_config)
from evounroll.ecdf import compute_ecdf, log_spaced_targets
from evounroll.errors import ConfigError, ContractError, ParseError
from evounroll.harness import (ablation_patch, eval_one_baseline, eval_one_solver,
                                make_suite, min_feasible_budget, per_step_cost,
                                run_eval, run_id_for, sign_test_p, smooth_suite)
from evounroll.meta import MetaConfig, init_params
from evounroll.records import (TRAJECTORY_COLUMNS, RunRecord,
                                check_budget_accounting, load_record,
                                read_trajectory_csv, save_record,
                                write_trajectory_csv)
from evounroll.solver import InnerConfig
from evounroll.tensor import ParamStore, Tensor


def tiny_cfg(**kw):
    cfg = default_config()
    cfg.update({"dim": 2, "k_steps": 4, "pop_size": 6, "batch": 2,
                "tasks_per_batch": 2, "iterations": 2, "budget": 300,
                "eval_seeds": (0, 1), "d_model": 8, "heads": 2,
                "ablation_iterations": 2})
    cfg.update(kw)
    return cfg


def tiny_blocks(cfg):
    meta = MetaConfig(seed=cfg["seed"], dim=cfg["dim"], d_model=cfg["d_model"],
                      heads=cfg["heads"], pop_size=cfg["pop_size"],
                      batch=cfg["batch"], inner=InnerConfig(k_steps=cfg["k_steps"]),
                      sharing=cfg["sharing"], operator_mode=cfg["operator_mode"])
    return init_params(meta)


class TestConfig:
    def test_round_trip_exact(self, tmp_path):
        cfg = tiny_cfg(gamma=0.037, families={"Sphere": 0.25, "Rastrigin": 0.75})
        path = tmp_path / "run.cfg"
        write_config(cfg, path)
        again = read_config(path)
        assert again == cfg

    def test_unknown_key_names_key_and_line(self):
        with pytest.raises(ParseError, match=r"<string>:2.*'foo'"):
            parse_config_text("seed = 1\nfoo = 2\n")

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text("# header\n\nseed = 9  # trailing\n")
        assert cfg["seed"] == 9

    def test_bad_value_reports_line(self):
        with pytest.raises(ParseError, match=":1"):
            parse_config_text("seed = notanint")

    def test_missing_equals_rejected(self):
        with pytest.raises(ParseError):
            parse_config_text("seed 3")

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("families = Quadratic")

    def test_hash_stable_and_sensitive(self):
        a = tiny_cfg()
        b = tiny_cfg()
        assert config_hash(a) == config_hash(b)
        b["gamma"] = 0.123
        assert config_hash(a) != config_hash(b)

    def test_gate_override_none_round_trip(self, tmp_path):
        cfg = tiny_cfg(gate_override=0.5)
        write_config(cfg, tmp_path / "c.cfg")
        assert read_config(tmp_path / "c.cfg")["gate_override"] == 0.5
        cfg2 = tiny_cfg()
        write_config(cfg2, tmp_path / "d.cfg")
        assert read_config(tmp_path / "d.cfg")["gate_override"] is None


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        store = ParamStore()
        rng = np.random.default_rng(0)
        store.add("block0.embed.w", Tensor(rng.standard_normal((3, 4))))
        store.add("block0.ln.gain", Tensor(np.ones(4)), trainable=False)
        path = tmp_path / "model.ckpt"
        save_checkpoint(store, path, config_hash=tiny_cfg() and "abc123")
        loaded, chash = load_checkpoint(path)
        assert chash == "abc123"
        assert loaded.paths() == store.paths()
        for p in store.paths():
            assert loaded[p].data.tobytes() == store[p].data.tobytes()
            assert loaded.trainable(p) == store.trainable(p)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ParseError, match="magic"):
            load_checkpoint(path)


class TestTrajectoryCsv:
    def test_golden_column_order(self, tmp_path):
        rows = [{"step": 0, "best_fit": 1.0, "mean_fit": 2.0, "gate_mean": 0.5,
                 "lambda_ssm": 0.4, "lambda_attn": 0.6, "residual_norm": 0.1}]
        path = tmp_path / "t.csv"
        write_trajectory_csv(path, rows)
        header = path.read_text().splitlines()[0]
        assert header == "step,best_fit,mean_fit,gate_mean,lambda_ssm,lambda_attn,residual_norm"

    def test_round_trip(self, tmp_path):
        rows = [{"step": i, "best_fit": 1.0 / (i + 1), "mean_fit": 2.0,
                 "gate_mean": 0.5, "lambda_ssm": 0.25, "lambda_attn": 0.75,
                 "residual_norm": float(i)} for i in range(3)]
        path = tmp_path / "t.csv"
        write_trajectory_csv(path, rows)
        assert read_trajectory_csv(path) == rows

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("step,who,knows\n1,2,3\n")
        with pytest.raises(ParseError, match="columns"):
            read_trajectory_csv(path)


class TestRunRecords:
    def test_record_round_trip(self, tmp_path):
        rec = RunRecord(run_id="abc", algorithm="evounroll", function="Sphere:2:1:0.0:1:0",
                        f_opt=0.0, seed=3, budget=100, eval_count=96,
                        final_best=0.25, wall_time=0.5, config_hash="ff",
                        progress=[(6, 10.0), (96, 0.25)])
        save_record(rec, tmp_path / "record.json")
        loaded = load_record(tmp_path / "record.json")
        assert loaded.as_dict() == rec.as_dict()

    def test_budget_accounting_guards(self):
        rec = RunRecord(run_id="x", algorithm="a", function="f", f_opt=0.0,
                        seed=0, budget=10, eval_count=12, final_best=1.0,
                        wall_time=0.0, config_hash="h")
        with pytest.raises(ContractError):
            check_budget_accounting(rec)


class TestEcdf:
    def test_single_record_hits_everything_immediately(self):
        rec = RunRecord(run_id="a", algorithm="x", function="f", f_opt=0.0,
                        seed=0, budget=50, eval_count=50, final_best=0.0,
                        wall_time=0.0, config_hash="h", progress=[(1, 0.0)])
        curve = compute_ecdf([rec], np.array([1.0, 0.1, 0.01]))
        assert np.all(curve.values == 1.0)

    def test_no_record_hits_anything(self):
        rec = RunRecord(run_id="a", algorithm="x", function="f", f_opt=0.0,
                        seed=0, budget=50, eval_count=50, final_best=99.0,
                        wall_time=0.0, config_hash="h", progress=[(1, 99.0)])
        curve = compute_ecdf([rec], np.array([1.0, 0.1]))
        assert np.all(curve.values == 0.0)

    def test_hand_built_two_record_fixture(self):
        rec_a = RunRecord(run_id="a", algorithm="x", function="f", f_opt=0.0,
                          seed=0, budget=100, eval_count=100, final_best=0.5,
                          wall_time=0.0, config_hash="h",
                          progress=[(10, 50.0), (20, 5.0), (60, 0.5)])
        rec_b = RunRecord(run_id="b", algorithm="x", function="f", f_opt=0.0,
                          seed=1, budget=100, eval_count=100, final_best=0.05,
                          wall_time=0.0, config_hash="h",
                          progress=[(10, 80.0), (50, 8.0), (100, 0.05)])
        curve = compute_ecdf([rec_a, rec_b], np.array([10.0, 1.0, 0.1]))
        assert curve.evals.tolist() == [10, 20, 50, 60, 100]
        assert curve.values.tolist() == [0.0, 1 / 6, 2 / 6, 3 / 6, 5 / 6]

    def test_monotone_in_budget(self):
        rng = np.random.default_rng(0)
        recs = []
        for i in range(5):
            errs = np.sort(rng.uniform(0, 100, 6))[::-1]
            evals = np.sort(rng.choice(np.arange(1, 200), 6, replace=False))
            recs.append(RunRecord(
                run_id=str(i), algorithm="x", function="f", f_opt=0.0, seed=i,
                budget=200, eval_count=200, final_best=errs[-1], wall_time=0.0,
                config_hash="h", progress=list(zip(evals.tolist(), errs.tolist()))))
        curve = compute_ecdf(recs, log_spaced_targets(100, 0.1, 7))
        assert np.all(np.diff(curve.values) >= 0)
        assert np.all((curve.values >= 0) & (curve.values <= 1))

    def test_mixed_budgets_rejected(self):
        rec_a = RunRecord(run_id="a", algorithm="x", function="f", f_opt=0.0,
                          seed=0, budget=100, eval_count=100, final_best=0.5,
                          wall_time=0.0, config_hash="h", progress=[(1, 1.0)])
        rec_b = RunRecord(run_id="b", algorithm="x", function="f", f_opt=0.0,
                          seed=0, budget=200, eval_count=200, final_best=0.5,
                          wall_time=0.0, config_hash="h", progress=[(1, 1.0)])
        with pytest.raises(ContractError):
            compute_ecdf([rec_a, rec_b], np.array([1.0]))

    def test_empty_records_rejected(self):
        with pytest.raises(ContractError):
            compute_ecdf([], np.array([1.0]))


class TestEvalRuns:
    def test_budget_accounting_matches_documented_example(self):
        # K = 10, pop 16: 2 candidate + 1 post-update evaluations per step
        # makes 480 per unroll.
        assert per_step_cost(16, 1, 2, False) * 10 == 480
        cfg = tiny_cfg(k_steps=10, pop_size=16, eval_batch=1, budget=2000,
                       d_model=8)
        _, blocks = tiny_blocks(cfg)
        f = make_suite(cfg)[0]
        rec = eval_one_solver(f, seed=0, blocks=blocks, cfg=cfg)
        # every evaluation is accounted: the counter never exceeds the
        # budget and the leftover cannot fund another step or restart
        assert rec.eval_count <= 2000
        assert 2000 - rec.eval_count < 48
        check_budget_accounting(rec)

    def test_minimum_budget_error_prints_minimum(self):
        cfg = tiny_cfg(budget=20)
        _, blocks = tiny_blocks(cfg)
        f = make_suite(cfg)[0]
        needed = min_feasible_budget(cfg["pop_size"], 1, 2, cfg["k_steps"], False)
        with pytest.raises(ConfigError, match=str(needed)):
            eval_one_solver(f, seed=0, blocks=blocks, cfg=cfg)

    def test_rerun_reproduces_final_best_bit_exactly(self):
        cfg = tiny_cfg()
        _, blocks = tiny_blocks(cfg)
        f = make_suite(cfg)[0]
        rec1 = eval_one_solver(f, seed=5, blocks=blocks, cfg=cfg)
        rec2 = eval_one_solver(f, seed=5, blocks=blocks, cfg=cfg)
        assert repr(rec1.final_best) == repr(rec2.final_best)
        assert rec1.progress == rec2.progress
        assert rec1.run_id == rec2.run_id

    def test_run_directory_layout(self, tmp_path):
        cfg = tiny_cfg()
        _, blocks = tiny_blocks(cfg)
        f = make_suite(cfg)[0]
        rec = eval_one_solver(f, seed=1, blocks=blocks, cfg=cfg, out_dir=tmp_path)
        run_dir = tmp_path / rec.run_id
        assert (run_dir / "config.txt").exists()
        assert (run_dir / "trajectory.csv").exists()
        assert (run_dir / "record.json").exists()
        rows = read_trajectory_csv(run_dir / "trajectory.csv")
        assert rows[0]["step"] == 0
        assert load_record(run_dir / "record.json").run_id == rec.run_id

    def test_csv_bit_identical_across_reruns(self, tmp_path):
        cfg = tiny_cfg()
        _, blocks = tiny_blocks(cfg)
        f = make_suite(cfg)[0]
        rec1 = eval_one_solver(f, seed=2, blocks=blocks, cfg=cfg,
                               out_dir=tmp_path / "a")
        rec2 = eval_one_solver(f, seed=2, blocks=blocks, cfg=cfg,
                               out_dir=tmp_path / "b")
        csv1 = (tmp_path / "a" / rec1.run_id / "trajectory.csv").read_bytes()
        csv2 = (tmp_path / "b" / rec2.run_id / "trajectory.csv").read_bytes()
        assert csv1 == csv2

    def test_baseline_budget_exact_and_schema(self, tmp_path):
        cfg = tiny_cfg(budget=200)
        f = make_suite(cfg)[0]
        rec = eval_one_baseline(f, seed=0, algorithm="DE", cfg=cfg,
                                out_dir=tmp_path)
        assert rec.eval_count == 200
        rows = read_trajectory_csv(tmp_path / rec.run_id / "trajectory.csv")
        assert set(rows[0]) == set(TRAJECTORY_COLUMNS)
        assert np.isnan(rows[0]["gate_mean"])

    def test_run_eval_fans_over_suite_and_seeds(self):
        cfg = tiny_cfg(eval_seeds=(7,), families={"Sphere": 1.0})
        store, _ = tiny_blocks(cfg)
        records = run_eval(store, cfg)
        assert len(records) == 1
        assert records[0].seed == 7

    def test_run_eval_parallel_matches_serial(self):
        cfg = tiny_cfg(eval_seeds=(0, 1), families={"Sphere": 1.0})
        store, _ = tiny_blocks(cfg)
        serial = run_eval(store, dict(cfg, workers=1))
        threaded = run_eval(store, dict(cfg, workers=4))
        assert [r.run_id for r in serial] == [r.run_id for r in threaded]
        assert [r.final_best for r in serial] == [r.final_best for r in threaded]


class TestAblationPlumbing:
    def test_patches(self):
        cfg = tiny_cfg()
        assert ablation_patch(cfg, "no-proxygrad")["gate_override"] == 0.0
        assert ablation_patch(cfg, "no-softgate")["gate_override"] == 0.5
        assert ablation_patch(cfg, "no-mamba")["operator_mode"] == "ff"
        assert ablation_patch(cfg, "shared")["sharing"] == "shared"
        assert ablation_patch(cfg, "full") == cfg
        with pytest.raises(ConfigError):
            ablation_patch(cfg, "no-such")

    def test_sign_test_exact_values(self):
        assert sign_test_p(10, 10) == pytest.approx(1.0 / 1024.0)
        assert sign_test_p(0, 10) == 1.0
        assert sign_test_p(8, 10) == pytest.approx((45 + 10 + 1) / 1024.0)

    def test_smooth_suite_families(self):
        suite = smooth_suite(tiny_cfg())
        assert [f.family for f in suite] == ["Sphere", "Ellipsoidal",
                                             "Rosenbrock", "BentCigar"]

    def test_run_ids_distinguish_algorithms(self):
        cfg = tiny_cfg()
        a = run_id_for(cfg, 0, "desc", "evounroll")
        b = run_id_for(cfg, 0, "desc", "DE")
        assert a != b
