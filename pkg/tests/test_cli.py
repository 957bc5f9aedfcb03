import os
import subprocess
import sys
from pathlib import Path

from pal import formats

FIXTURE = Path(__file__).parent / "fixtures" / "mini"


def run_pal(*args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "pal", *map(str, args)],
        capture_output=True, text=True, env=env,
    )


def select_args(out, state_out=None, budget=None):
    args = [
        "select",
        "--gt", FIXTURE / "gt.txt",
        "--labelled-dump", FIXTURE / "labelled_dump.txt",
        "--unlabelled-dump", FIXTURE / "unlabelled_dump.txt",
        "--embeddings", FIXTURE / "embeddings.bin",
        "--state", FIXTURE / "state.txt",
        "--config", FIXTURE / "config.json",
        "--out", out,
    ]
    if state_out is not None:
        args += ["--state-out", state_out]
    if budget is not None:
        args += ["--budget", budget]
    return args


class TestSelect:
    def test_matches_committed_golden(self, tmp_path):
        out = tmp_path / "manifest.txt"
        res = run_pal(*select_args(out))
        assert res.returncode == 0, res.stderr
        assert out.read_bytes() == (FIXTURE / "golden_manifest.txt").read_bytes()

    def test_repeat_runs_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        assert run_pal(*select_args(a)).returncode == 0
        assert run_pal(*select_args(b)).returncode == 0
        assert a.read_bytes() == b.read_bytes()

    def test_zero_budget_empty_manifest(self, tmp_path):
        out = tmp_path / "manifest.txt"
        res = run_pal(*select_args(out, budget=0))
        assert res.returncode == 0, res.stderr
        manifest = formats.load_selection_manifest(out)
        assert manifest.total_selected == 0

    def test_state_out_updates_pools(self, tmp_path):
        out = tmp_path / "manifest.txt"
        state_out = tmp_path / "state2.txt"
        res = run_pal(*select_args(out, state_out=state_out))
        assert res.returncode == 0, res.stderr
        before = formats.load_round_state(FIXTURE / "state.txt")
        after = formats.load_round_state(state_out)
        manifest = formats.load_selection_manifest(out)
        assert after.round == before.round + 1
        assert after.labelled == before.labelled | manifest.selected_ids()

    def test_corrupt_dump_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("#schema detections 1\n#classes c0,c1,c2,c3\ndetection image_id=0\n")
        args = select_args(tmp_path / "m.txt")
        args[args.index("--labelled-dump") + 1] = bad
        res = run_pal(*args)
        assert res.returncode == 2
        assert "data error" in res.stderr


class TestMatchTrainScore:
    def test_missing_proposals_flag_is_usage_error(self, tmp_path):
        res = run_pal(
            "match", "--detections", FIXTURE / "labelled_dump.txt",
            "--out", tmp_path / "f.txt",
        )
        assert res.returncode == 1
        assert "--proposals" in res.stderr

    def test_pipeline_match_train_score(self, tmp_path):
        lab_features = tmp_path / "lab_features.txt"
        res = run_pal(
            "match", "--gt", FIXTURE / "gt.txt",
            "--detections", FIXTURE / "labelled_dump.txt",
            "--proposals", FIXTURE / "labelled_dump.txt",
            "--config", FIXTURE / "config.json",
            "--out", lab_features,
        )
        assert res.returncode == 0, res.stderr
        _, _, records = formats.load_features(lab_features)
        assert records and all(det.tp_label is not None for det in records)

        models = tmp_path / "models.txt"
        res = run_pal("train-clc", "--features", lab_features, "--config", FIXTURE / "config.json", "--out", models)
        assert res.returncode == 0, res.stderr

        # unlabelled pool: same stages without ground truth, re-consumed as-is
        unl_features = tmp_path / "unl_features.txt"
        res = run_pal(
            "match",
            "--detections", FIXTURE / "unlabelled_dump.txt",
            "--proposals", FIXTURE / "unlabelled_dump.txt",
            "--config", FIXTURE / "config.json",
            "--out", unl_features,
        )
        assert res.returncode == 0, res.stderr

        scores = tmp_path / "scores.txt"
        res = run_pal("score", "--features", unl_features, "--models", models, "--out", scores)
        assert res.returncode == 0, res.stderr
        classes, parsed = formats.load_instance_scores(scores)
        assert classes == ("c0", "c1", "c2", "c3")
        _, _, unl_records = formats.load_features(unl_features)
        assert len(parsed) == len(unl_records)

    def test_train_clc_without_labels_is_data_error(self, tmp_path):
        features = tmp_path / "f.txt"
        res = run_pal(
            "match",
            "--detections", FIXTURE / "unlabelled_dump.txt",
            "--proposals", FIXTURE / "unlabelled_dump.txt",
            "--out", features,
        )
        assert res.returncode == 0, res.stderr
        res = run_pal("train-clc", "--features", features, "--out", tmp_path / "m.txt")
        assert res.returncode == 2
        assert "tp_label" in res.stderr


class TestSimulateAndReport:
    SIM_ARGS = (
        "simulate", "--strategy", "pal", "--rounds", "2", "--budget", "6",
        "--seed", "3", "--images", "40", "--classes", "4", "--initial", "10",
    )

    def test_fixed_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        assert run_pal(*self.SIM_ARGS, "--out", a).returncode == 0
        assert run_pal(*self.SIM_ARGS, "--out", b).returncode == 0
        assert a.read_bytes() == b.read_bytes()

    def test_rounds_recorded(self, tmp_path):
        out = tmp_path / "report.txt"
        res = run_pal(*self.SIM_ARGS, "--out", out)
        assert res.returncode == 0, res.stderr
        from pal.simulator import load_campaign_report

        rep = load_campaign_report(out)
        assert [row.round for row in rep.rows] == [0, 1, 2]

    def test_strategy_all_produces_three_curves(self, tmp_path):
        out = tmp_path / "report.txt"
        res = run_pal(
            "simulate", "--strategy", "all", "--rounds", "1", "--budget", "5",
            "--seed", "3", "--images", "30", "--classes", "3", "--initial", "8",
            "--out", out,
        )
        assert res.returncode == 0, res.stderr
        from pal.simulator import load_campaign_report

        rep = load_campaign_report(out)
        assert {row.strategy for row in rep.rows} == {"random", "entropy", "pal"}

    def test_pal_threads_validated(self, tmp_path):
        res = run_pal(*self.SIM_ARGS, "--out", tmp_path / "r.txt", env_extra={"PAL_THREADS": "zero"})
        assert res.returncode == 1
        assert "PAL_THREADS" in res.stderr

    def test_parallel_all_matches_serial(self, tmp_path):
        args = (
            "simulate", "--strategy", "all", "--rounds", "1", "--budget", "5",
            "--seed", "3", "--images", "30", "--classes", "3", "--initial", "8",
        )
        serial, parallel = tmp_path / "serial.txt", tmp_path / "parallel.txt"
        assert run_pal(*args, "--out", serial).returncode == 0
        res = run_pal(*args, "--out", parallel, env_extra={"PAL_THREADS": "3"})
        assert res.returncode == 0, res.stderr
        assert serial.read_bytes() == parallel.read_bytes()

    def test_report_prints_table(self, tmp_path):
        out = tmp_path / "report.txt"
        assert run_pal(*self.SIM_ARGS, "--out", out).returncode == 0
        res = run_pal("report", "--in", out)
        assert res.returncode == 0
        assert "strategy pal" in res.stdout
        assert "rare_share" in res.stdout

    def test_dump_dir_emits_round_artifacts(self, tmp_path):
        out = tmp_path / "report.txt"
        dumps = tmp_path / "rounds"
        res = run_pal(*self.SIM_ARGS, "--dump-dir", dumps, "--out", out)
        assert res.returncode == 0, res.stderr
        pal_dir = dumps / "pal"
        assert (pal_dir / "ground_truth.txt").exists()
        assert (pal_dir / "round_1" / "manifest.txt").exists()
        formats.load_selection_manifest(pal_dir / "round_1" / "manifest.txt")
        formats.load_detection_dump(pal_dir / "round_1" / "unlabelled_dump.txt")


def test_usage_error_on_unknown_command():
    res = run_pal("frobnicate")
    assert res.returncode == 1
