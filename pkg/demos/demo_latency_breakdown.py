"""Walkthrough: where a shielded invocation spends its time.

Runs the instrumented breakdown twice, without and with session caching,
and prints the per-phase table. Phase B (context init + TEEC-style session
open) dominates in the per-invocation-lifecycle mode and all but vanishes
once sessions are cached.
"""

from shieldchain.harness import ScenarioConfig, measure_breakdown
from shieldchain.phases import PHASE_LETTERS


def show(title: str, session_cache: bool, n_txs: int) -> None:
    cfg = ScenarioConfig(scenario="shielded-local", clients=1,
                         txs_per_client=n_txs, duration_s=999.0,
                         workload="write", seed=7, session_cache=session_cache)
    report = measure_breakdown(cfg)
    result = report.result
    print(f"\n{title}")
    print(f"  throughput {result.throughput_tps:.1f} tx/s, "
          f"mean latency {result.mean_latency_ms:.1f} ms")
    phases = report.mean_phases.as_dict()
    for letter in PHASE_LETTERS:
        bar = "#" * max(1, round(report.shares[letter] * 60)) \
            if phases[letter] > 0 else ""
        print(f"  {letter} {phases[letter]:10.1f}us {report.shares[letter]*100:6.2f}% {bar}")
    print(f"  phase-B share: {report.shares['B']:.3f}")


def main() -> None:
    show("per-invocation sessions (the default, and the bottleneck)",
         session_cache=False, n_txs=40)
    # more iterations here so the one-time session open amortizes away
    show("cached sessions (open once, reuse)", session_cache=True, n_txs=200)


if __name__ == "__main__":
    main()
