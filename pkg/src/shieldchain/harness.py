"""Benchmark harness: scenario bring-up, closed-loop clients, reports.

Three scenarios compare the execution paths:

* baseline       - chaincode runs in-process at the wrapper; no wire, no
                   secure world;
* shielded-local - chaincode behind the wire protocol and the simulated
                   secure world, proxy on loopback;
* shielded-remote - same, plus injected one-way network latency on every
                   wrapper<->proxy frame.

Clients are closed-loop: each sends its next proposal only after the
previous transaction committed, mirroring how the latency figures are
defined. Ordering, commit and notification always run over real loopback
TCP so the compared paths differ only in how execution is reached.
"""

import csv
import hashlib
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field

from . import keys
from .chaincode import builtin_registry
from .ledger import Ledger
from .netconfig import derive_seed
from .orderer import BatchConfig, Orderer, OrdererServer
from .peer import EndorsementPolicy, Peer, PeerIdentity, PeerServer
from .phases import PhaseTimings, join_phases, mean_phases
from .proxy import ProxyConfig, ProxyServer
from .tee import CostModel, SecureWorld, make_ta_payload, sign_ta
from .txn import (
    Transaction,
    TransactionProposal,
    read_response,
    write_proposal,
    write_transaction,
)
from .wire import Connection, Reader, ServiceMsg, Writer, TX_ID_LEN
from .wrapper import LocalExecutor, ProxyChannel, Wrapper

logger = logging.getLogger(__name__)

SCENARIOS = ("baseline", "shielded-local", "shielded-remote")
WORKLOADS = ("read", "write", "mixed")

COFFEE_UUID = b"\xc0\xff\xee" + b"\x00" * 13
COFFEE_HANDLER = "coffee"
ECHO_UUID = b"\xec\xc0" + b"\x00" * 14
ECHO_HANDLER = "echo"


class HarnessError(Exception):
    pass


@dataclass
class ScenarioConfig:
    scenario: str = "baseline"
    clients: int = 1
    duration_s: float = 30.0
    txs_per_client: int | None = None
    workload: str = "write"
    read_fraction: float = 0.5
    peers: int = 1
    trusted_threads: int = 4
    cost_model: CostModel = field(default_factory=CostModel)
    seed: int = 0
    net_latency_us: int = 1000
    session_cache: bool = False
    malicious_writes: bool = False
    max_block_txs: int = 10
    batch_timeout_ms: int = 8
    proposal_timeout_s: float = 60.0

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.workload not in WORKLOADS:
            raise ValueError(f"workload must be one of {WORKLOADS}")
        if self.clients < 1 or self.peers < 1:
            raise ValueError("clients and peers must be >= 1")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise ValueError("read_fraction must be within [0, 1]")


@dataclass
class BenchResult:
    scenario: str
    clients: int
    workload: str
    duration_s: float
    committed: int
    invalid: int
    per_client_committed: list[int]
    throughput_tps: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    mean_phases: PhaseTimings
    validity: list[bool]
    mean_latency_ms: float = 0.0
    endorse_failures: int = 0
    # conservation probe: valid flags summed over the first peer's chain
    ledger_valid_total: int = 0
    ledger_height: int = 0


def _percentile(sorted_values: list[float], q: float) -> float:
    if not sorted_values:
        return 0.0
    idx = min(len(sorted_values) - 1, max(0, round(q * (len(sorted_values) - 1))))
    return sorted_values[idx]


@dataclass
class _PeerRuntime:
    peer_id: str
    peer: Peer
    server: PeerServer
    ledger: Ledger
    secure_world: SecureWorld | None = None
    proxy: ProxyServer | None = None
    channel: ProxyChannel | None = None


class LocalNetwork:
    """Everything a scenario needs, running in-process over loopback."""

    def __init__(self, cfg: ScenarioConfig) -> None:
        self.cfg = cfg
        self.peer_ids = [f"p{i}" for i in range(cfg.peers)]
        self.client_ids = [f"c{i}" for i in range(cfg.clients)]
        peer_seeds = {p: derive_seed(cfg.seed, f"peer/{p}") for p in self.peer_ids}
        self.client_seeds = {c: derive_seed(cfg.seed, f"client/{c}")
                             for c in self.client_ids}
        peer_keys = {p: keys.public_bytes(keys.signing_key_from_seed(s))
                     for p, s in peer_seeds.items()}
        client_keys = {c: keys.public_bytes(keys.signing_key_from_seed(s))
                       for c, s in self.client_seeds.items()}
        policy = EndorsementPolicy(frozenset(self.peer_ids), 1)
        build_key = keys.signing_key_from_seed(derive_seed(cfg.seed, "build"))
        build_pub = keys.public_bytes(build_key)
        latency = cfg.net_latency_us if cfg.scenario == "shielded-remote" else 0

        self.peers: list[_PeerRuntime] = []
        try:
            for pid in self.peer_ids:
                ledger = Ledger()
                world = proxy = channel = None
                if cfg.scenario == "baseline":
                    local = LocalExecutor(builtin_registry())
                    local.install(COFFEE_UUID, COFFEE_HANDLER)
                    wrapper = Wrapper(ledger.snapshot, local=local)
                else:
                    world = SecureWorld(build_pub, cost_model=cfg.cost_model,
                                        capacity=cfg.trusted_threads)
                    world.install_ta(sign_ta(COFFEE_UUID,
                                             make_ta_payload(COFFEE_HANDLER),
                                             build_key))
                    proxy = ProxyServer(world, ProxyConfig(
                        session_cache=cfg.session_cache,
                        malicious_writes=cfg.malicious_writes,
                        send_latency_us=latency))
                    proxy_addr = proxy.start()
                    channel = ProxyChannel(proxy_addr, send_latency_us=latency,
                                           timeout_s=cfg.proposal_timeout_s)
                    wrapper = Wrapper(ledger.snapshot, channel=channel)
                peer = Peer(PeerIdentity.from_seed(pid, peer_seeds[pid]), wrapper,
                            ledger, policy, peer_keys, client_keys)
                server = PeerServer(peer)
                server.start()
                self.peers.append(_PeerRuntime(pid, peer, server, ledger,
                                               secure_world=world, proxy=proxy,
                                               channel=channel))

            self.orderer = Orderer(BatchConfig(cfg.max_block_txs, cfg.batch_timeout_ms))
            self.orderer_server = OrdererServer(
                self.orderer, [rt.server.address for rt in self.peers])
            self.orderer_server.start()
        except Exception:
            self.close()
            raise

    def peer_for_client(self, idx: int) -> _PeerRuntime:
        return self.peers[idx % len(self.peers)]

    def close(self) -> None:
        if hasattr(self, "orderer_server"):
            self.orderer_server.close()
        for rt in getattr(self, "peers", []):
            if rt.channel is not None:
                rt.channel.close()
            if rt.proxy is not None:
                rt.proxy.close()
            if rt.server is not None:
                rt.server.close()


def _client_tx_id(seed: int, client_id: str, n: int) -> bytes:
    return hashlib.sha256(f"{seed}/{client_id}/{n}".encode()).digest()[:TX_ID_LEN]


@dataclass
class _TxRecord:
    tx_id: bytes
    latency_s: float
    valid: bool


def _client_loop(cfg: ScenarioConfig, idx: int, net: LocalNetwork,
                 barrier: threading.Barrier, records: list[_TxRecord],
                 failures: list[int]) -> None:
    client_id = net.client_ids[idx]
    signing_key = keys.signing_key_from_seed(net.client_seeds[client_id])
    home = net.peer_for_client(idx)
    rng = random.Random(cfg.seed * 1_000_003 + idx)
    user = f"user{idx}".encode()

    peer_conn = Connection.dial(home.server.address)
    w = Writer()
    w.str_field(client_id)
    peer_conn.send_frame(ServiceMsg.CLIENT_HELLO, w.getvalue())
    orderer_conn = Connection.dial(net.orderer_server.address)

    try:
        barrier.wait(timeout=60)
        deadline = time.monotonic() + cfg.duration_s
        n = 0
        while True:
            if cfg.txs_per_client is not None:
                if n >= cfg.txs_per_client:
                    return
            elif time.monotonic() >= deadline:
                return
            if cfg.workload == "read":
                function, args = "query", (user,)
            elif cfg.workload == "write":
                function, args = "record", (user, b"1")
            else:
                if rng.random() < cfg.read_fraction:
                    function, args = "query", (user,)
                else:
                    function, args = "record", (user, b"1")
            tx_id = _client_tx_id(cfg.seed, client_id, n)
            n += 1
            proposal = TransactionProposal(
                tx_id, COFFEE_UUID, function, args, client_id).signed(signing_key)
            t0 = time.perf_counter()

            pw = Writer()
            write_proposal(pw, proposal)
            peer_conn.send_frame(ServiceMsg.PROPOSAL_SUBMIT, pw.getvalue())
            msg_type, payload = peer_conn.recv_frame(cfg.proposal_timeout_s)
            if msg_type == ServiceMsg.SERVICE_ERROR:
                failures[idx] += 1
                continue
            if msg_type != ServiceMsg.PROPOSAL_RESPONSE:
                raise HarnessError(f"unexpected frame {msg_type:#04x}")
            r = Reader(payload)
            response = read_response(r)
            r.finish()

            tx = Transaction(tx_id, proposal, (response,),
                             response.readset, response.writeset)
            tw = Writer()
            write_transaction(tw, tx)
            orderer_conn.send_frame(ServiceMsg.TX_SUBMIT, tw.getvalue())
            ack_type, _ = orderer_conn.recv_frame(cfg.proposal_timeout_s)
            if ack_type != ServiceMsg.TX_ACK:
                failures[idx] += 1
                continue

            while True:
                note_type, note = peer_conn.recv_frame(cfg.proposal_timeout_s)
                if note_type != ServiceMsg.COMMIT_NOTICE:
                    continue
                nr = Reader(note)
                noted_tx = nr.raw(TX_ID_LEN)
                valid = nr.boolean()
                nr.u64()
                nr.finish()
                if noted_tx == tx_id:
                    break
            records.append(_TxRecord(tx_id, time.perf_counter() - t0, valid))
    finally:
        peer_conn.close()
        orderer_conn.close()


def run_scenario(cfg: ScenarioConfig) -> BenchResult:
    """Run one scenario to completion and aggregate committed transactions."""
    net = LocalNetwork(cfg)
    try:
        barrier = threading.Barrier(cfg.clients + 1)
        per_client: list[list[_TxRecord]] = [[] for _ in range(cfg.clients)]
        failures = [0] * cfg.clients
        errors: list[BaseException] = []

        def run_client(i: int) -> None:
            try:
                _client_loop(cfg, i, net, barrier, per_client[i], failures)
            except BaseException as exc:  # surfaced after join
                errors.append(exc)
                barrier.abort()

        threads = [threading.Thread(target=run_client, args=(i,), daemon=True)
                   for i in range(cfg.clients)]
        for t in threads:
            t.start()
        try:
            barrier.wait(timeout=60)
        except threading.BrokenBarrierError:
            for t in threads:
                t.join(timeout=5)
            raise HarnessError(
                f"client failed during startup: {errors[0]!r}" if errors
                else "client startup timed out") from (errors[0] if errors else None)
        t_start = time.perf_counter()
        for t in threads:
            t.join()
        duration = time.perf_counter() - t_start
        if errors:
            raise HarnessError(f"client failed: {errors[0]!r}") from errors[0]

        all_records = [rec for recs in per_client for rec in recs]
        committed_lat = sorted(rec.latency_s * 1000 for rec in all_records if rec.valid)
        committed = len(committed_lat)
        invalid = sum(1 for rec in all_records if not rec.valid)
        ledger = net.peers[0].ledger
        ledger_valid_total = sum(sum(block.validity or ())
                                 for block in ledger.chain.blocks)
        ledger_height = ledger.height

        samples = []
        for i, recs in enumerate(per_client):
            home = net.peer_for_client(i)
            for rec in recs:
                wp = home.peer.phase_sink.pop(rec.tx_id, None)
                if wp is None:
                    continue
                pp = home.proxy.pop_phases(rec.tx_id) if home.proxy else None
                samples.append(join_phases(wp, pp))

        return BenchResult(
            scenario=cfg.scenario,
            clients=cfg.clients,
            workload=cfg.workload,
            duration_s=duration,
            committed=committed,
            invalid=invalid,
            per_client_committed=[sum(1 for r in recs if r.valid)
                                  for recs in per_client],
            throughput_tps=committed / duration if duration > 0 else 0.0,
            p50_ms=_percentile(committed_lat, 0.50),
            p95_ms=_percentile(committed_lat, 0.95),
            p99_ms=_percentile(committed_lat, 0.99),
            mean_phases=mean_phases(samples),
            validity=[rec.valid for rec in all_records],
            mean_latency_ms=(sum(committed_lat) / committed) if committed else 0.0,
            endorse_failures=sum(failures),
            ledger_valid_total=ledger_valid_total,
            ledger_height=ledger_height,
        )
    finally:
        net.close()


@dataclass
class BreakdownReport:
    mean_phases: PhaseTimings
    shares: dict[str, float]
    result: BenchResult


def measure_breakdown(cfg: ScenarioConfig) -> BreakdownReport:
    """Instrumented run reporting each phase's mean and share of total."""
    if cfg.scenario == "baseline":
        raise ValueError("breakdown requires a shielded scenario")
    result = run_scenario(cfg)
    total = result.mean_phases.total_us()
    shares = {
        letter: (value / total if total > 0 else 0.0)
        for letter, value in result.mean_phases.as_dict().items()
    }
    return BreakdownReport(result.mean_phases, shares, result)


# --- CSV reports ------------------------------------------------------------

_PHASE_COLS = [f"phase_{letter}_us" for letter in
               ("A", "B", "C", "D", "E", "G", "H", "I", "J", "K", "L", "M", "N", "O")]
REPORT_COLUMNS = (["scenario", "clients", "workload", "throughput_tps",
                   "p50_ms", "p95_ms", "p99_ms"] + _PHASE_COLS
                  + ["committed", "invalid"])


def write_report(result: BenchResult, path: str) -> None:
    """Append one CSV row; the header is written only for a fresh file."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    phases = result.mean_phases.as_dict()
    row = {
        "scenario": result.scenario,
        "clients": result.clients,
        "workload": result.workload,
        "throughput_tps": repr(result.throughput_tps),
        "p50_ms": repr(result.p50_ms),
        "p95_ms": repr(result.p95_ms),
        "p99_ms": repr(result.p99_ms),
        "committed": result.committed,
        "invalid": result.invalid,
    }
    for letter, value in phases.items():
        row[f"phase_{letter}_us"] = repr(value)
    with open(path, "a", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        if fresh:
            writer.writeheader()
        writer.writerow(row)


def read_report(path: str) -> list[dict]:
    """Parse a report back into typed rows (inverse of write_report)."""
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        for raw in csv.DictReader(f):
            row: dict = {
                "scenario": raw["scenario"],
                "clients": int(raw["clients"]),
                "workload": raw["workload"],
                "throughput_tps": float(raw["throughput_tps"]),
                "p50_ms": float(raw["p50_ms"]),
                "p95_ms": float(raw["p95_ms"]),
                "p99_ms": float(raw["p99_ms"]),
                "committed": int(raw["committed"]),
                "invalid": int(raw["invalid"]),
            }
            for col in _PHASE_COLS:
                row[col] = float(raw[col])
            rows.append(row)
    return rows


# --- standing network (net up) ----------------------------------------------


class NetworkRuntime:
    """A standing shielded network brought up from a NetworkDescription."""

    def __init__(self, desc) -> None:
        self.desc = desc
        build_key = keys.signing_key_from_seed(desc.build_signing_seed())
        build_pub = desc.build_public_key()
        peer_keys = desc.peer_keys()
        client_keys = desc.client_keys()
        policy = desc.policy()
        self.peers: list[_PeerRuntime] = []
        try:
            for pid in desc.peer_ids:
                ledger = Ledger()
                world = SecureWorld(build_pub, cost_model=desc.cost,
                                    capacity=desc.trusted_threads,
                                    ta_decryption_key=desc.ta_encryption_key())
                world.install_ta(sign_ta(COFFEE_UUID, make_ta_payload(COFFEE_HANDLER),
                                         build_key))
                world.install_ta(sign_ta(ECHO_UUID, make_ta_payload(ECHO_HANDLER),
                                         build_key))
                proxy = ProxyServer(world, ProxyConfig(
                    listen=desc.proxy_listen.get(pid, ("127.0.0.1", 0)),
                    session_cache=desc.session_cache))
                proxy_addr = proxy.start()
                channel = ProxyChannel(proxy_addr)
                wrapper = Wrapper(ledger.snapshot, channel=channel)
                peer = Peer(PeerIdentity.from_seed(pid, desc.peer_signing_seed(pid)),
                            wrapper, ledger, policy, peer_keys, client_keys)
                server = PeerServer(peer, desc.peer_listen.get(pid, ("127.0.0.1", 0)))
                server.start()
                self.peers.append(_PeerRuntime(pid, peer, server, ledger,
                                               secure_world=world, proxy=proxy,
                                               channel=channel))
            self.orderer = Orderer(BatchConfig(desc.max_block_txs,
                                               desc.batch_timeout_ms))
            self.orderer_server = OrdererServer(
                self.orderer, [rt.server.address for rt in self.peers],
                listen=desc.orderer_listen)
            self.orderer_server.start()
        except Exception:
            self.close()
            raise

    def close(self) -> None:
        if hasattr(self, "orderer_server"):
            self.orderer_server.close()
        for rt in self.peers:
            if rt.channel is not None:
                rt.channel.close()
            if rt.proxy is not None:
                rt.proxy.close()
            if rt.server is not None:
                rt.server.close()
