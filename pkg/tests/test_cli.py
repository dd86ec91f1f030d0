"""Command-line workflows: files in, files out, exit codes, determinism."""

import json

import pytest

from conftest import EXAMPLE_RULES
from kgrules import cli
from kgrules import verify as verify_mod

ORACLE_TRAIN = [
    "e_g\tcooperatesWith\te_u",
    "e_d\tinternAt\te_g",
    "e_d\tstudentAt\te_u",
    "e_u\tcooperatesWith\te_g",
]


@pytest.fixture
def files(tmp_path):
    """Worked-example splits on disk plus an output directory."""
    paths = {
        "train": tmp_path / "train.tsv",
        "rules": tmp_path / "rules.tsv",
        "test": tmp_path / "test.tsv",
        "queries": tmp_path / "queries.tsv",
        "out": tmp_path / "out",
    }
    paths["train"].write_text("\n".join(ORACLE_TRAIN) + "\n")
    paths["rules"].write_text("\n".join(EXAMPLE_RULES) + "\n")
    paths["test"].write_text("e_d\twf\te_g\n")
    paths["queries"].write_text("wf\te_d\ttail\n")
    return {k: str(v) for k, v in paths.items()}


def run(*argv) -> int:
    return cli.main(list(argv))


class TestConfidences:
    def test_recomputes_counts_and_drops_unsupported(self, files, capsys):
        code = run(
            "confidences",
            "--train", files["train"],
            "--rules", files["rules"],
            "--out", files["out"],
        )
        assert code == 0
        lines = open(files["out"] + "/confidences.tsv").read().splitlines()
        assert lines == [
            "0.000000\t0\t1\twf(X,Y) <= internAt(X,Y)",
            "0.000000\t0\t1\twf(X,Y) <= studentAt(X,A), cooperatesWith(A,Y)",
        ]
        err = capsys.readouterr().err
        assert "dropped (no predictions)" in err
        assert "locIn" in err

    def test_second_pass_is_byte_identical(self, files):
        run(
            "confidences",
            "--train", files["train"],
            "--rules", files["rules"],
            "--out", files["out"],
        )
        first = open(files["out"] + "/confidences.tsv", "rb").read()
        code = run(
            "confidences",
            "--train", files["train"],
            "--rules", files["out"] + "/confidences.tsv",
            "--out", files["out"] + "2",
        )
        assert code == 0
        second = open(files["out"] + "2/confidences.tsv", "rb").read()
        assert first == second

    def test_missing_rules_flag(self, files, capsys):
        code = run("confidences", "--train", files["train"], "--out", files["out"])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestApply:
    def test_worked_example_candidates(self, files):
        code = run(
            "apply",
            "--train", files["train"],
            "--rules", files["rules"],
            "--queries", files["queries"],
            "--out", files["out"],
        )
        assert code == 0
        content = open(files["out"] + "/ranked.tsv").read()
        assert content == "wf\te_d\ttail\te_g\t0.64,0.41\n"

    def test_coverage_stop_trims_confidence_lists(self, files):
        """With top-x candidates covered h deep, weaker rules are skipped."""
        code = run(
            "apply",
            "--train", files["train"],
            "--rules", files["rules"],
            "--queries", files["queries"],
            "--h", "1",
            "--top-x", "1",
            "--out", files["out"],
        )
        assert code == 0
        content = open(files["out"] + "/ranked.tsv").read()
        assert content == "wf\te_d\ttail\te_g\t0.64\n"

    def test_test_split_generates_both_directions(self, files):
        code = run(
            "apply",
            "--train", files["train"],
            "--rules", files["rules"],
            "--test", files["test"],
            "--out", files["out"],
        )
        assert code == 0
        lines = open(files["out"] + "/ranked.tsv").read().splitlines()
        directions = {line.split("\t")[2] for line in lines}
        assert directions == {"tail", "head"}

    def test_unknown_anchor_warns_and_yields_nothing(self, files, capsys):
        with open(files["queries"], "w") as fh:
            fh.write("wf\tnobody\ttail\n")
        code = run(
            "apply",
            "--train", files["train"],
            "--rules", files["rules"],
            "--queries", files["queries"],
            "--out", files["out"],
        )
        assert code == 0
        assert open(files["out"] + "/ranked.tsv").read() == ""
        assert "unknown relation or anchor" in capsys.readouterr().err

    def test_worker_count_does_not_change_output(self, files):
        with open(files["queries"], "w") as fh:
            fh.write("wf\te_d\ttail\nwf\te_g\thead\nwf\te_u\ttail\n")
        outputs = []
        for i, workers in enumerate(("1", "3")):
            out = files["out"] + str(i)
            run(
                "apply",
                "--train", files["train"],
                "--rules", files["rules"],
                "--queries", files["queries"],
                "--workers", workers,
                "--out", out,
            )
            outputs.append(open(out + "/ranked.tsv", "rb").read())
        assert outputs[0] == outputs[1]

    def test_repeat_runs_are_byte_identical(self, files):
        blobs = []
        for i in range(2):
            out = files["out"] + str(i)
            run(
                "apply",
                "--train", files["train"],
                "--rules", files["rules"],
                "--test", files["test"],
                "--strategy", "noisy-or",
                "--out", out,
            )
            blobs.append(open(out + "/ranked.tsv", "rb").read())
        assert blobs[0] == blobs[1]


class TestEval:
    def eval_args(self, files, out, *extra):
        return (
            "eval",
            "--train", files["train"],
            "--test", files["test"],
            "--out", out,
            *extra,
        )

    def test_worked_example_is_solved(self, files, capsys):
        code = run(*self.eval_args(files, files["out"], "--rules", files["rules"]))
        assert code == 0
        metrics = dict(
            line.split("\t") for line in open(files["out"] + "/metrics.tsv").read().splitlines()
        )
        assert metrics["mrr"] == "1.000000"
        assert metrics["hits@1"] == "1.000000"
        assert metrics["n_queries"] == "2"
        assert "all" in capsys.readouterr().out

    def test_report_files_written(self, files):
        run(*self.eval_args(files, files["out"], "--rules", files["rules"]))
        per_rel = open(files["out"] + "/per-relation.tsv").read().splitlines()
        assert len(per_rel) == 2
        assert all(line.startswith("wf\t") for line in per_rel)
        report = open(files["out"] + "/report.txt").read()
        assert report.splitlines()[0].startswith("slice")
        snapshot = json.load(open(files["out"] + "/config.resolved.json"))
        assert snapshot["command"] == "eval"
        assert snapshot["seed"] == 42

    def test_dump_reranking_matches_fused_run(self, files):
        run(
            "apply",
            "--train", files["train"],
            "--rules", files["rules"],
            "--test", files["test"],
            "--out", files["out"] + "-apply",
        )
        run(*self.eval_args(files, files["out"] + "-fused", "--rules", files["rules"]))
        code = run(
            *self.eval_args(
                files,
                files["out"] + "-dump",
                "--ranked", files["out"] + "-apply/ranked.tsv",
            )
        )
        assert code == 0
        fused = open(files["out"] + "-fused/metrics.tsv", "rb").read()
        dumped = open(files["out"] + "-dump/metrics.tsv", "rb").read()
        assert fused == dumped

    def test_needs_rules_or_ranked(self, files, capsys):
        code = run(*self.eval_args(files, files["out"]))
        assert code == 2
        assert "needs --rules" in capsys.readouterr().err

    def test_missing_file_reports_cleanly(self, files, capsys):
        code = run(
            *self.eval_args(
                files, files["out"], "--rules", files["rules"] + ".missing"
            )
        )
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestTuneH:
    @pytest.fixture
    def tuning_files(self, tmp_path):
        """One strong rule against five weak ones; truth sides with the many."""
        train = ["e0\tstrong\te1"] + [f"e0\tweak{i}\te2" for i in range(5)]
        rules = ["0.9\t0\t0\th(X,Y) <= strong(X,Y)"] + [
            f"0.5\t0\t0\th(X,Y) <= weak{i}(X,Y)" for i in range(5)
        ]
        paths = {
            "train": tmp_path / "train.tsv",
            "rules": tmp_path / "rules.tsv",
            "valid": tmp_path / "valid.tsv",
            "out": tmp_path / "out",
        }
        paths["train"].write_text("\n".join(train) + "\n")
        paths["rules"].write_text("\n".join(rules) + "\n")
        paths["valid"].write_text("e0\th\te2\n")
        return {k: str(v) for k, v in paths.items()}

    def test_grid_search_writes_table(self, tuning_files):
        code = run(
            "tune-h",
            "--train", tuning_files["train"],
            "--rules", tuning_files["rules"],
            "--valid", tuning_files["valid"],
            "--out", tuning_files["out"],
        )
        assert code == 0
        lines = open(tuning_files["out"] + "/h-table.tsv").read().splitlines()
        assert "h\ttail\t4" in lines
        assert "h\thead\t1" in lines

    def test_k_token_means_all_rules(self, tuning_files):
        run(
            "tune-h",
            "--train", tuning_files["train"],
            "--rules", tuning_files["rules"],
            "--valid", tuning_files["valid"],
            "--grid", "1,k",
            "--out", tuning_files["out"],
        )
        lines = open(tuning_files["out"] + "/h-table.tsv").read().splitlines()
        assert f"h\ttail\t{2**31 - 1}" in lines

    def test_table_feeds_the_star_strategy(self, tuning_files, tmp_path):
        run(
            "tune-h",
            "--train", tuning_files["train"],
            "--rules", tuning_files["rules"],
            "--valid", tuning_files["valid"],
            "--out", tuning_files["out"],
        )
        queries = tmp_path / "queries.tsv"
        queries.write_text("h\te0\ttail\n")
        code = run(
            "apply",
            "--train", tuning_files["train"],
            "--rules", tuning_files["rules"],
            "--queries", str(queries),
            "--strategy", "noisy-or-top-h-star",
            "--h-table", tuning_files["out"] + "/h-table.tsv",
            "--out", tuning_files["out"] + "-apply",
        )
        assert code == 0
        lines = open(tuning_files["out"] + "-apply/ranked.tsv").read().splitlines()
        # with h* = 4 the five weak rules outrank the one strong rule
        assert lines[0].split("\t")[3] == "e2"


class TestConfigFile:
    def test_config_provides_defaults_flags_override(self, files, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps({"train": files["train"], "rules": files["rules"], "seed": 7})
        )
        code = run(
            "apply",
            "--config", str(config),
            "--queries", files["queries"],
            "--seed", "11",
            "--out", files["out"],
        )
        assert code == 0
        snapshot = json.load(open(files["out"] + "/config.resolved.json"))
        assert snapshot["seed"] == 11
        assert snapshot["train"] == files["train"]

    def test_unknown_config_key_rejected(self, files, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"trian": files["train"]}))
        code = run("apply", "--config", str(config), "--out", files["out"])
        assert code == 2
        assert "unknown config keys" in capsys.readouterr().err


class TestVerifyCommand:
    def test_all_checks_pass(self, capsys):
        code = run("verify")
        out = capsys.readouterr().out
        assert code == 0
        lines = [line for line in out.splitlines() if line]
        assert len(lines) == len(verify_mod.CHECKS)
        assert all("PASS" in line for line in lines)

    def test_failing_check_sets_exit_code(self, monkeypatch, capsys):
        failed = verify_mod.CheckResult(
            name="injected", instances=1, max_deviation=1.0, passed=False, detail="boom"
        )
        monkeypatch.setattr(cli.verify_mod, "run_checks", lambda seed: [failed])
        assert run("verify") == 1
        assert "FAIL" in capsys.readouterr().out

    def test_crashing_check_reports_failure(self):
        def explode(rng):
            raise RuntimeError("kaput")

        results = verify_mod.run_checks(checks=[("explosive", explode)])
        assert len(results) == 1
        assert not results[0].passed
        assert "kaput" in results[0].detail
        assert "FAIL" in verify_mod.format_result(results[0])
