import os

import pytest

from rmtune.cli import main
from rmtune.control import LoopConfig, write_loop_config
from rmtune.metrics import SLOSpec, write_slos
from rmtune.rmconfig import write_config
from rmtune.simulator import read_schedule, simulate
from rmtune.workload import Workload, write_trace
from tests.conftest import make_config, make_job, make_tenant


def staggered_workload(n_jobs=6, window=30.0):
    jobs = tuple(make_job(f"A-j{i}", "A", float(i), 1, 2.0) for i in range(n_jobs))
    return Workload(jobs=jobs, horizon=window)


@pytest.fixture
def inputs(tmp_path):
    """Standard single-tenant input files for the CLI."""
    paths = {
        "trace": str(tmp_path / "trace.txt"),
        "config": str(tmp_path / "config.txt"),
        "slos": str(tmp_path / "slos.txt"),
        "loop": str(tmp_path / "loop.txt"),
        "out": str(tmp_path / "out"),
    }
    write_trace(staggered_workload(), paths["trace"])
    write_config(make_config({"A": make_tenant(max_limit=4)}, capacity=4),
                 paths["config"])
    write_slos([SLOSpec(tenant="A", metric="AJR")], paths["slos"])
    write_loop_config(LoopConfig(window_length=30.0, max_iterations=20),
                      paths["loop"])
    return paths


def read_lines(path):
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


class TestSimulate:
    def test_artifacts_and_exit_code(self, inputs, capsys):
        rc = main(["simulate", "--trace", inputs["trace"],
                   "--config", inputs["config"], "--out", inputs["out"]])
        assert rc == 0
        for name in ("schedule.txt", "summary.csv", "allocation.png"):
            path = os.path.join(inputs["out"], name)
            assert os.path.isfile(path) and os.path.getsize(path) > 0
        out = capsys.readouterr().out
        assert "simulated 6 jobs / 6 tasks" in out
        lines = read_lines(os.path.join(inputs["out"], "summary.csv"))
        assert lines[0].startswith("#summary v1 capacity=4")
        assert lines[1] == "tenant,completed_jobs,avg_job_response,preemptions"
        assert lines[2] == "A,6,2,0"

    def test_no_plot(self, inputs):
        rc = main(["simulate", "--trace", inputs["trace"],
                   "--config", inputs["config"], "--out", inputs["out"],
                   "--no-plot"])
        assert rc == 0
        assert not os.path.exists(os.path.join(inputs["out"], "allocation.png"))

    def test_missing_trace_is_input_error(self, inputs, capsys):
        rc = main(["simulate", "--trace", inputs["trace"] + ".nope",
                   "--config", inputs["config"], "--out", inputs["out"]])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_malformed_config_is_input_error(self, tmp_path, inputs, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("#rmconfig v1\nnot an assignment\n")
        rc = main(["simulate", "--trace", inputs["trace"],
                   "--config", str(bad), "--out", inputs["out"]])
        assert rc == 2
        err = capsys.readouterr().err
        assert "error:" in err and "bad.txt:2" in err

    def test_env_vars_supply_paths(self, inputs, monkeypatch):
        monkeypatch.setenv("RMTUNE_TRACE", inputs["trace"])
        monkeypatch.setenv("RMTUNE_CONFIG", inputs["config"])
        monkeypatch.setenv("RMTUNE_OUT", inputs["out"])
        assert main(["simulate", "--no-plot"]) == 0
        assert os.path.isfile(os.path.join(inputs["out"], "schedule.txt"))

    def test_flags_beat_env_vars(self, inputs, tmp_path, monkeypatch):
        env_out = str(tmp_path / "env_out")
        monkeypatch.setenv("RMTUNE_TRACE", inputs["trace"])
        monkeypatch.setenv("RMTUNE_CONFIG", inputs["config"])
        monkeypatch.setenv("RMTUNE_OUT", env_out)
        assert main(["simulate", "--out", inputs["out"], "--no-plot"]) == 0
        assert os.path.isfile(os.path.join(inputs["out"], "schedule.txt"))
        assert not os.path.exists(env_out)


class TestEvaluate:
    def test_qs_table(self, inputs, capsys):
        assert main(["simulate", "--trace", inputs["trace"],
                     "--config", inputs["config"], "--out", inputs["out"],
                     "--no-plot"]) == 0
        rc = main(["evaluate",
                   "--schedule", os.path.join(inputs["out"], "schedule.txt"),
                   "--slos", inputs["slos"], "--window", "0,30",
                   "--out", inputs["out"]])
        assert rc == 0
        lines = read_lines(os.path.join(inputs["out"], "qs.csv"))
        assert lines[0].startswith("#qs v1")
        assert lines[1] == "tenant,metric,value"
        assert lines[2] == "A,AJR,2"
        assert "A/AJR=2" in capsys.readouterr().out

    def test_bad_window_is_input_error(self, inputs, capsys):
        assert main(["simulate", "--trace", inputs["trace"],
                     "--config", inputs["config"], "--out", inputs["out"],
                     "--no-plot"]) == 0
        rc = main(["evaluate",
                   "--schedule", os.path.join(inputs["out"], "schedule.txt"),
                   "--slos", inputs["slos"], "--window", "bogus",
                   "--out", inputs["out"]])
        assert rc == 2
        assert "window" in capsys.readouterr().err


class TestOptimize:
    def test_converged_run_writes_artifacts(self, inputs, capsys):
        rc = main(["optimize", "--trace", inputs["trace"],
                   "--config", inputs["config"], "--slos", inputs["slos"],
                   "--loop", inputs["loop"], "--out", inputs["out"]])
        assert rc == 0  # plateau start: nothing better exists, so it converges
        for name in ("journal.csv", "final_config.txt", "qs_table.csv",
                     "journal.png"):
            path = os.path.join(inputs["out"], name)
            assert os.path.isfile(path) and os.path.getsize(path) > 0
        assert "converged" in capsys.readouterr().out
        lines = read_lines(os.path.join(inputs["out"], "qs_table.csv"))
        assert lines[0] == "#qstable v1 status=converged"
        assert lines[1] == "iteration,accepted,A/AJR"
        assert lines[2] == "0,1,2"

    def test_max_iterations_exit_code(self, inputs, tmp_path):
        loop = str(tmp_path / "loop0.txt")
        write_loop_config(LoopConfig(window_length=30.0, max_iterations=0), loop)
        rc = main(["optimize", "--trace", inputs["trace"],
                   "--config", inputs["config"], "--slos", inputs["slos"],
                   "--loop", loop, "--out", inputs["out"], "--no-plot"])
        assert rc == 3

    def test_deterministic_rerun(self, inputs, tmp_path):
        out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
        for out in (out_a, out_b):
            rc = main(["optimize", "--trace", inputs["trace"],
                       "--config", inputs["config"], "--slos", inputs["slos"],
                       "--loop", inputs["loop"], "--out", out,
                       "--seed", "7", "--no-plot"])
            assert rc == 0
        for name in ("journal.csv", "final_config.txt", "qs_table.csv"):
            with open(os.path.join(out_a, name), "rb") as fa, \
                    open(os.path.join(out_b, name), "rb") as fb:
                assert fa.read() == fb.read()

    def test_seed_flag_changes_candidates(self, inputs, tmp_path):
        journals = []
        for seed in ("1", "2"):
            out = str(tmp_path / f"s{seed}")
            main(["optimize", "--trace", inputs["trace"],
                  "--config", inputs["config"], "--slos", inputs["slos"],
                  "--loop", inputs["loop"], "--out", out,
                  "--seed", seed, "--no-plot"])
            with open(os.path.join(out, "journal.csv"), encoding="utf-8") as f:
                journals.append(f.read())
        assert journals[0] != journals[1]


class TestModelCommands:
    def test_fit_then_generate_then_simulate(self, inputs, tmp_path, capsys):
        rc = main(["fit", "--trace", inputs["trace"], "--out", inputs["out"]])
        assert rc == 0
        model = os.path.join(inputs["out"], "model.txt")
        assert os.path.isfile(model)
        assert "fitted 1 tenant models from 6 jobs" in capsys.readouterr().out

        rc = main(["generate", "--model", model, "--horizon", "50",
                   "--seed", "3", "--out", inputs["out"]])
        assert rc == 0
        trace = os.path.join(inputs["out"], "trace.txt")
        assert os.path.isfile(trace)

        rc = main(["simulate", "--trace", trace, "--config", inputs["config"],
                   "--out", str(tmp_path / "sim2"), "--no-plot"])
        assert rc == 0

    def test_generate_is_seed_deterministic(self, inputs, tmp_path):
        assert main(["fit", "--trace", inputs["trace"],
                     "--out", inputs["out"]]) == 0
        model = os.path.join(inputs["out"], "model.txt")
        traces = []
        for out in ("g1", "g2"):
            assert main(["generate", "--model", model, "--horizon", "40",
                         "--seed", "9", "--out", str(tmp_path / out)]) == 0
            with open(tmp_path / out / "trace.txt", encoding="utf-8") as f:
                traces.append(f.read())
        assert traces[0] == traces[1]

    def test_fit_with_too_few_jobs_fails_cleanly(self, tmp_path, capsys):
        trace = str(tmp_path / "tiny.txt")
        write_trace(Workload(jobs=(make_job("A-j0", "A", 0.0, 1, 1.0),),
                             horizon=10.0), trace)
        rc = main(["fit", "--trace", trace, "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestProvision:
    def test_capacity_table(self, inputs, capsys):
        rc = main(["provision", "--trace", inputs["trace"],
                   "--config", inputs["config"], "--slos", inputs["slos"],
                   "--capacities", "2,4,8", "--out", inputs["out"]])
        assert rc == 0
        lines = read_lines(os.path.join(inputs["out"], "provision.csv"))
        assert lines[0] == "#provision v1 slos=1"
        assert lines[1] == "capacity,feasible,utilization,A/AJR"
        assert len(lines) == 5
        assert all(line.split(",")[1] == "1" for line in lines[2:])
        assert os.path.isfile(os.path.join(inputs["out"], "provision.png"))
        assert "3 feasible" in capsys.readouterr().out

    def test_bad_capacities_is_input_error(self, inputs, capsys):
        rc = main(["provision", "--trace", inputs["trace"],
                   "--config", inputs["config"], "--slos", inputs["slos"],
                   "--capacities", "a,b", "--out", inputs["out"]])
        assert rc == 2
        assert "capacities" in capsys.readouterr().err


class TestValidate:
    def _schedules(self, tmp_path):
        w = staggered_workload()
        fast = simulate(w, make_config({"A": make_tenant(max_limit=4)},
                                       capacity=4))
        slow = simulate(w, make_config({"A": make_tenant(max_limit=1)},
                                       capacity=4))
        from rmtune.simulator import write_schedule
        pred, obs = str(tmp_path / "pred.txt"), str(tmp_path / "obs.txt")
        write_schedule(fast, pred)
        write_schedule(slow, obs)
        return pred, obs

    def test_error_table(self, tmp_path, capsys):
        pred, obs = self._schedules(tmp_path)
        out = str(tmp_path / "out")
        rc = main(["validate", "--predicted", pred, "--observed", obs,
                   "--out", out])
        assert rc == 0
        lines = read_lines(os.path.join(out, "errors.csv"))
        assert lines[0] == "#validation v1 jobs=6"
        assert lines[1] == "tenant,rae,rse"
        assert lines[2].startswith("A,")
        assert os.path.isfile(os.path.join(out, "errors.png"))
        assert "A: RAE=" in capsys.readouterr().out

    def test_identical_schedules_have_zero_error(self, tmp_path):
        pred, _ = self._schedules(tmp_path)
        out = str(tmp_path / "out")
        rc = main(["validate", "--predicted", pred, "--observed", pred,
                   "--out", out, "--no-plot"])
        assert rc == 0
        lines = read_lines(os.path.join(out, "errors.csv"))
        assert lines[2] == "A,0,0"

    def test_job_set_mismatch_is_input_error(self, tmp_path, capsys):
        pred, obs = self._schedules(tmp_path)
        extra = simulate(
            Workload(jobs=staggered_workload().jobs
                     + (make_job("A-extra", "A", 6.0, 1, 2.0),), horizon=30.0),
            make_config({"A": make_tenant(max_limit=4)}, capacity=4))
        from rmtune.simulator import write_schedule
        extra_path = str(tmp_path / "extra.txt")
        write_schedule(extra, extra_path)
        rc = main(["validate", "--predicted", pred, "--observed", extra_path,
                   "--out", str(tmp_path / "out"), "--no-plot"])
        assert rc == 2
        err = capsys.readouterr().err
        assert "job sets differ" in err and "A-extra" in err


class TestRoundTripThroughCli:
    def test_schedule_written_by_cli_reads_back(self, inputs):
        assert main(["simulate", "--trace", inputs["trace"],
                     "--config", inputs["config"], "--out", inputs["out"],
                     "--no-plot"]) == 0
        schedule = read_schedule(os.path.join(inputs["out"], "schedule.txt"))
        assert schedule.capacity == 4
        assert len(schedule.completed_jobs()) == 6
