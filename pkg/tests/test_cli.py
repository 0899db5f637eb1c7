import contextlib
import io
import random
import re
import signal
import subprocess
import sys
import time

import pytest

from shieldchain import cli, keys
from shieldchain.harness import NetworkRuntime
from shieldchain.netconfig import (
    NetworkDescription,
    default_description,
    format_network_file,
    parse_address,
    parse_cost_spec,
    parse_network_file,
)
from shieldchain.tee import CostModel
from shieldchain.wire import Connection, ServiceMsg, Writer

BUILD_SEED_HEX = "11" * 32
BUILD_PUB_HEX = keys.public_bytes(
    keys.signing_key_from_seed(bytes.fromhex(BUILD_SEED_HEX))).hex()


def run_cli(argv):
    out = io.StringIO()
    err = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main(argv)
    return code, out.getvalue(), err.getvalue()


class TestNetconfig:
    def test_cost_spec_parsing(self):
        cost = parse_cost_spec("world_switch_us=5,open_session_us=6")
        assert cost.world_switch_us == 5
        assert cost.open_session_us == 6
        assert cost.close_session_us == CostModel().close_session_us

    def test_cost_spec_rejects_unknown(self):
        with pytest.raises(ValueError):
            parse_cost_spec("magic=1")

    def test_parse_address(self):
        assert parse_address("127.0.0.1:7050") == ("127.0.0.1", 7050)
        with pytest.raises(ValueError):
            parse_address("no-port")

    def test_network_file_round_trip(self, tmp_path):
        desc = default_description(peers=2, clients=3, seed=9)
        desc.session_cache = True
        desc.cost = CostModel(1, 2, 3, 4)
        path = tmp_path / "net.conf"
        path.write_text(format_network_file(desc))
        parsed = parse_network_file(str(path))
        assert parsed.peer_ids == desc.peer_ids
        assert parsed.client_ids == desc.client_ids
        assert parsed.orderer_listen == desc.orderer_listen
        assert parsed.peer_listen == desc.peer_listen
        assert parsed.proxy_listen == desc.proxy_listen
        assert parsed.session_cache is True
        assert parsed.cost == desc.cost

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "net.conf"
        path.write_text("peers=p0\nwat=1\n")
        with pytest.raises(ValueError):
            parse_network_file(str(path))

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "net.conf"
        path.write_text("# comment\n\npeers=p0\n")
        assert parse_network_file(str(path)).peer_ids == ["p0"]

    def test_deterministic_keys(self):
        a = default_description(seed=4)
        b = default_description(seed=4)
        assert a.peer_keys() == b.peer_keys()
        assert a.build_public_key() == b.build_public_key()
        assert a.peer_keys() != default_description(seed=5).peer_keys()


class TestTaCli:
    def test_sign_then_install(self, tmp_path):
        out_path = str(tmp_path / "coffee.ta")
        code, out, _ = run_cli(["ta", "sign", "--uuid", "ab" * 16,
                                "--handler", "coffee", "--key", BUILD_SEED_HEX,
                                "--out", out_path])
        assert code == 0 and "signed TA" in out
        code, out, _ = run_cli(["ta", "install", "--file", out_path,
                                "--pubkey", BUILD_PUB_HEX,
                                "--store", str(tmp_path / "store")])
        assert code == 0 and "installed TA" in out
        assert (tmp_path / "store" / "coffee.ta").exists()

    def test_install_rejects_corrupted_file(self, tmp_path):
        out_path = str(tmp_path / "coffee.ta")
        run_cli(["ta", "sign", "--uuid", "cd" * 16, "--handler", "coffee",
                 "--key", BUILD_SEED_HEX, "--out", out_path])
        data = bytearray(open(out_path, "rb").read())
        data[len(data) // 2] ^= 0x55
        open(out_path, "wb").write(bytes(data))
        code, _, err = run_cli(["ta", "install", "--file", out_path,
                                "--pubkey", BUILD_PUB_HEX])
        assert code == 1 and "rejected" in err

    def test_install_rejects_wrong_pubkey(self, tmp_path):
        out_path = str(tmp_path / "coffee.ta")
        run_cli(["ta", "sign", "--uuid", "ef" * 16, "--handler", "coffee",
                 "--key", BUILD_SEED_HEX, "--out", out_path])
        other = keys.public_bytes(keys.signing_key_from_seed(b"\x99" * 32)).hex()
        code, _, err = run_cli(["ta", "install", "--file", out_path,
                                "--pubkey", other])
        assert code == 1

    def test_sign_encrypted_bit_exact_reinstall(self, tmp_path):
        out_path = str(tmp_path / "enc.ta")
        enc_key = "77" * 32
        code, _, _ = run_cli(["ta", "sign", "--uuid", "aa" * 16,
                              "--handler", "echo", "--key", BUILD_SEED_HEX,
                              "--encrypt", "--enc-key", enc_key,
                              "--out", out_path])
        assert code == 0
        code, _, _ = run_cli(["ta", "install", "--file", out_path,
                              "--pubkey", BUILD_PUB_HEX, "--enc-key", enc_key])
        assert code == 0

    def test_key_from_file(self, tmp_path):
        key_file = tmp_path / "build.key"
        key_file.write_text(BUILD_SEED_HEX + "\n")
        out_path = str(tmp_path / "t.ta")
        code, _, _ = run_cli(["ta", "sign", "--uuid", "bb" * 16,
                              "--handler", "echo", "--key", str(key_file),
                              "--out", out_path])
        assert code == 0


class TestBenchCli:
    def test_bench_baseline_with_csv(self, tmp_path):
        csv_path = str(tmp_path / "out.csv")
        code, out, _ = run_cli(["bench", "--scenario", "baseline", "--clients", "1",
                                "--txs-per-client", "10", "--duration", "999",
                                "--workload", "write", "--seed", "2",
                                "--csv", csv_path])
        assert code == 0
        assert "throughput=" in out
        lines = open(csv_path).read().strip().split("\n")
        assert len(lines) == 2

    def test_breakdown_prints_shares(self):
        code, out, _ = run_cli(["breakdown", "--scenario", "shielded-local",
                                "--clients", "1", "--txs-per-client", "8",
                                "--duration", "999",
                                "--cost", "world_switch_us=0,open_session_us=5000,"
                                          "close_session_us=1000,per_kib_copy_us=0"])
        assert code == 0
        assert "phase-B share:" in out
        assert "phase A:" in out and "phase O:" in out

    def test_bad_cost_spec_is_reported(self):
        code, _, err = run_cli(["bench", "--scenario", "baseline",
                                "--cost", "bogus=1"])
        assert code == 2 and "error" in err


class TestNetUp:
    def test_runtime_from_description_serves_transactions(self, tmp_path):
        desc = NetworkDescription(
            seed=3, peer_ids=["p0"], client_ids=["c0"],
            orderer_listen=("127.0.0.1", 0),
            peer_listen={"p0": ("127.0.0.1", 0)},
            proxy_listen={"p0": ("127.0.0.1", 0)},
            cost=CostModel(0, 0, 0, 0), batch_timeout_ms=5)
        net = NetworkRuntime(desc)
        try:
            from shieldchain.harness import COFFEE_UUID
            from shieldchain.txn import (
                Transaction, TransactionProposal, read_response, write_proposal,
                write_transaction,
            )
            from shieldchain.wire import Reader, TX_ID_LEN

            client_key = keys.signing_key_from_seed(desc.client_signing_seed("c0"))
            peer_conn = Connection.dial(net.peers[0].server.address)
            w = Writer()
            w.str_field("c0")
            peer_conn.send_frame(ServiceMsg.CLIENT_HELLO, w.getvalue())
            orderer_conn = Connection.dial(net.orderer_server.address)

            proposal = TransactionProposal(
                random.Random(0).randbytes(16), COFFEE_UUID, "record",
                (b"zed", b"4"), "c0").signed(client_key)
            pw = Writer()
            write_proposal(pw, proposal)
            peer_conn.send_frame(ServiceMsg.PROPOSAL_SUBMIT, pw.getvalue())
            msg_type, payload = peer_conn.recv_frame(10)
            assert msg_type == ServiceMsg.PROPOSAL_RESPONSE
            r = Reader(payload)
            resp = read_response(r)
            tx = Transaction(proposal.tx_id, proposal, (resp,),
                             resp.readset, resp.writeset)
            tw = Writer()
            write_transaction(tw, tx)
            orderer_conn.send_frame(ServiceMsg.TX_SUBMIT, tw.getvalue())
            assert orderer_conn.recv_frame(10)[0] == ServiceMsg.TX_ACK
            note_type, note = peer_conn.recv_frame(10)
            assert note_type == ServiceMsg.COMMIT_NOTICE
            nr = Reader(note)
            assert nr.raw(TX_ID_LEN) == proposal.tx_id
            assert nr.boolean() is True
            peer_conn.close()
            orderer_conn.close()
        finally:
            net.close()

    def test_net_up_parser(self):
        args = cli.build_parser().parse_args(["net", "up", "--peers", "2"])
        assert args.fn is cli._cmd_net_up
        assert args.peers == 2


class TestStandaloneProxyProcess:
    def test_sign_install_invoke_roundtrip(self, tmp_path):
        ta_path = str(tmp_path / "echo.ta")
        code, _, _ = run_cli(["ta", "sign", "--uuid", "ec" * 16,
                              "--handler", "echo", "--key", BUILD_SEED_HEX,
                              "--out", ta_path])
        assert code == 0
        proc = subprocess.Popen(
            [sys.executable, "-u", "-m", "shieldchain.cli", "proxy",
             "--listen", "127.0.0.1:0", "--capacity", "2",
             "--cost", "world_switch_us=0,open_session_us=0,"
                       "close_session_us=0,per_kib_copy_us=0",
             "--build-pubkey", BUILD_PUB_HEX, "--ta", ta_path],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
        try:
            addr = None
            deadline = time.time() + 10
            while time.time() < deadline:
                line = proc.stdout.readline()
                m = re.search(r"proxy listening on ([\d.]+):(\d+)", line or "")
                if m:
                    addr = (m.group(1), int(m.group(2)))
                    break
            assert addr is not None, "proxy never reported its address"

            from shieldchain.ledger import WorldState
            from shieldchain.wrapper import ProxyChannel, Wrapper

            channel = ProxyChannel(addr, timeout_s=5.0)
            wrapper = Wrapper(WorldState, channel=channel)
            message, _, _, _ = wrapper.forward_invocation(
                b"\x77" * 16, bytes.fromhex("ec" * 16), "echo", (b"hi", b"!"))
            assert message == b"hi!"
            channel.close()
        finally:
            proc.send_signal(signal.SIGINT)
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
