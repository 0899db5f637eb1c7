import pytest

from shieldchain.harness import (
    BenchResult,
    ScenarioConfig,
    measure_breakdown,
    read_report,
    run_scenario,
    write_report,
)
from shieldchain.phases import PhaseTimings
from shieldchain.tee import CostModel

# scaled-down cost model keeps unit tests quick; acceptance uses the default
FAST_COST = CostModel(world_switch_us=0, open_session_us=8000,
                      close_session_us=2000, per_kib_copy_us=0)


class TestRunScenario:
    def test_baseline_smoke(self):
        r = run_scenario(ScenarioConfig(scenario="baseline", clients=1,
                                        duration_s=1.5, workload="write", seed=3))
        assert r.throughput_tps > 0
        assert r.committed > 0
        assert r.invalid == 0
        assert all(r.validity)
        assert r.endorse_failures == 0

    def test_committed_conservation(self):
        r = run_scenario(ScenarioConfig(scenario="baseline", clients=2,
                                        duration_s=1.5, workload="write", seed=4))
        assert sum(r.per_client_committed) == r.committed
        assert r.ledger_valid_total == r.committed

    def test_count_mode_deterministic_per_client_counts(self):
        cfg = dict(scenario="baseline", clients=2, txs_per_client=12,
                   duration_s=999.0, workload="mixed", read_fraction=0.4, seed=5)
        r1 = run_scenario(ScenarioConfig(**cfg))
        r2 = run_scenario(ScenarioConfig(**cfg))
        assert r1.per_client_committed == r2.per_client_committed == [12, 12]

    def test_shielded_local_fast_cost(self):
        r = run_scenario(ScenarioConfig(scenario="shielded-local", clients=1,
                                        duration_s=1.5, workload="write", seed=6,
                                        cost_model=FAST_COST))
        assert r.committed > 0
        assert all(r.validity)
        assert r.mean_phases.b_us > 5000  # open-session dominates

    def test_two_peers_two_clients(self):
        r = run_scenario(ScenarioConfig(scenario="baseline", clients=2, peers=2,
                                        txs_per_client=8, duration_s=999.0,
                                        workload="write", seed=7))
        assert r.committed == 16
        assert r.invalid == 0

    def test_scenario_ordering(self):
        base = run_scenario(ScenarioConfig(scenario="baseline", clients=1,
                                           duration_s=1.5, seed=8))
        local = run_scenario(ScenarioConfig(scenario="shielded-local", clients=1,
                                            duration_s=1.5, seed=8,
                                            cost_model=FAST_COST))
        remote = run_scenario(ScenarioConfig(scenario="shielded-remote", clients=1,
                                             duration_s=1.5, seed=8,
                                             cost_model=FAST_COST,
                                             net_latency_us=3000))
        assert base.throughput_tps >= local.throughput_tps >= remote.throughput_tps

    def test_cost_sensitivity(self):
        slow = CostModel(world_switch_us=0, open_session_us=16000,
                         close_session_us=2000, per_kib_copy_us=0)
        shielded_fast = run_scenario(ScenarioConfig(
            scenario="shielded-local", clients=1, duration_s=1.5, seed=9,
            cost_model=FAST_COST))
        shielded_slow = run_scenario(ScenarioConfig(
            scenario="shielded-local", clients=1, duration_s=1.5, seed=9,
            cost_model=slow))
        # doubling open_session_us must show up almost fully in the latency
        delta_ms = shielded_slow.mean_latency_ms - shielded_fast.mean_latency_ms
        assert delta_ms > 4.0
        # the baseline path has no secure world, so the model cannot matter
        base_fast = run_scenario(ScenarioConfig(scenario="baseline", clients=1,
                                                txs_per_client=20, seed=9,
                                                cost_model=FAST_COST))
        base_slow = run_scenario(ScenarioConfig(scenario="baseline", clients=1,
                                                txs_per_client=20, seed=9,
                                                cost_model=slow))
        assert base_slow.mean_phases.b_us == base_fast.mean_phases.b_us == 0.0

    def test_mixed_workload_runs_both_functions(self):
        r = run_scenario(ScenarioConfig(scenario="baseline", clients=1,
                                        txs_per_client=30, duration_s=999.0,
                                        workload="mixed", read_fraction=0.5,
                                        seed=10))
        assert r.committed == 30


class TestMeasureBreakdown:
    def test_shares_sum_to_one(self):
        rep = measure_breakdown(ScenarioConfig(
            scenario="shielded-local", clients=1, duration_s=1.5, seed=11,
            cost_model=FAST_COST))
        assert sum(rep.shares.values()) == pytest.approx(1.0, abs=1e-9)
        assert rep.shares["B"] > 0.3

    def test_baseline_rejected(self):
        with pytest.raises(ValueError):
            measure_breakdown(ScenarioConfig(scenario="baseline"))


class TestReports:
    def _result(self, **kw):
        defaults = dict(
            scenario="baseline", clients=2, workload="write", duration_s=1.5,
            committed=10, invalid=1, per_client_committed=[5, 5],
            throughput_tps=6.6667, p50_ms=11.25, p95_ms=14.5, p99_ms=15.125,
            mean_phases=PhaseTimings(a_us=1.5, b_us=2.25, j_us=3.125),
            validity=[True] * 10 + [False])
        defaults.update(kw)
        return BenchResult(**defaults)

    def test_single_run_one_header_one_row(self, tmp_path):
        path = str(tmp_path / "report.csv")
        write_report(self._result(), path)
        lines = open(path).read().strip().split("\n")
        assert len(lines) == 2
        assert lines[0].startswith("scenario,clients,workload,throughput_tps,")
        assert lines[0].count("phase_") == 14
        assert ",phase_F_us," not in lines[0]

    def test_append_does_not_repeat_header(self, tmp_path):
        path = str(tmp_path / "report.csv")
        write_report(self._result(), path)
        write_report(self._result(clients=4), path)
        lines = open(path).read().strip().split("\n")
        assert len(lines) == 3
        assert sum(1 for l in lines if l.startswith("scenario,")) == 1

    def test_round_trip_parse(self, tmp_path):
        path = str(tmp_path / "report.csv")
        result = self._result()
        write_report(result, path)
        rows = read_report(path)
        assert len(rows) == 1
        row = rows[0]
        assert row["scenario"] == result.scenario
        assert row["clients"] == result.clients
        assert row["workload"] == result.workload
        assert row["throughput_tps"] == result.throughput_tps
        assert row["p50_ms"] == result.p50_ms
        assert row["p95_ms"] == result.p95_ms
        assert row["p99_ms"] == result.p99_ms
        assert row["committed"] == result.committed
        assert row["invalid"] == result.invalid
        phases = result.mean_phases.as_dict()
        for letter, value in phases.items():
            assert row[f"phase_{letter}_us"] == value


class TestConfigValidation:
    def test_bad_scenario(self):
        with pytest.raises(ValueError):
            ScenarioConfig(scenario="sgx")

    def test_bad_workload(self):
        with pytest.raises(ValueError):
            ScenarioConfig(workload="append")

    def test_bad_read_fraction(self):
        with pytest.raises(ValueError):
            ScenarioConfig(read_fraction=1.5)
