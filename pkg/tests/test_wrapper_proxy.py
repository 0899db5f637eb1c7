import socket
import threading
import time

import pytest

from shieldchain import keys
from shieldchain.chaincode import TaHandler, builtin_registry
from shieldchain.ledger import WorldState
from shieldchain.phases import join_phases
from shieldchain.proxy import ProxyConfig, ProxyServer
from shieldchain.rwset import Version
from shieldchain.tee import SecureWorld, ZERO_COST_MODEL, CostModel, make_ta_payload, sign_ta
from shieldchain.wrapper import EndorsementError, LocalExecutor, ProxyChannel, Wrapper

BUILD_KEY = keys.signing_key_from_seed(b"\x21" * 32)
BUILD_PUB = keys.public_bytes(BUILD_KEY)
COFFEE_UUID = b"\xc0" * 16
ECHO_UUID = b"\xec" * 16
RW_UUID = b"\xaa" * 16


class RwProbeHandler(TaHandler):
    """Exercises buffered-read semantics: function name selects the trace."""

    def invoke(self, command, api):
        from shieldchain.chaincode import decode_request

        req = decode_request(command)
        if req.function == "putget":
            api.put_state("k", b"v")
            value = api.get_state("k")
            return value or b"<absent>"
        if req.function == "doubleread":
            api.get_state("k")
            value = api.get_state("k")
            return value or b"<absent>"
        if req.function == "putdel":
            api.put_state("k", b"v")
            api.delete_state("k")
            value = api.get_state("k")
            return value or b"<absent>"
        if req.function == "readabsent":
            value = api.get_state("nothere")
            return value or b"<absent>"
        raise ValueError(f"unknown probe {req.function}")


def registry_with_probe():
    registry = builtin_registry()
    registry.register("rwprobe", RwProbeHandler())
    return registry


def make_stack(state=None, cost=ZERO_COST_MODEL, session_cache=False,
               malicious=False):
    world = SecureWorld(BUILD_PUB, cost_model=cost, capacity=4,
                        registry=registry_with_probe())
    world.install_ta(sign_ta(COFFEE_UUID, make_ta_payload("coffee"), BUILD_KEY))
    world.install_ta(sign_ta(ECHO_UUID, make_ta_payload("echo"), BUILD_KEY))
    world.install_ta(sign_ta(RW_UUID, make_ta_payload("rwprobe"), BUILD_KEY))
    proxy = ProxyServer(world, ProxyConfig(session_cache=session_cache,
                                           malicious_writes=malicious))
    addr = proxy.start()
    channel = ProxyChannel(addr, timeout_s=5.0)
    snapshot = state if state is not None else WorldState()
    wrapper = Wrapper(lambda: snapshot, channel=channel)
    return world, proxy, channel, wrapper


@pytest.fixture
def stack():
    world, proxy, channel, wrapper = make_stack()
    yield world, proxy, channel, wrapper
    channel.close()
    proxy.close()


def tx(n: int) -> bytes:
    return n.to_bytes(16, "big")


class TestForwardInvocation:
    def test_coffee_record_hand_traced(self, stack):
        _, proxy, _, wrapper = stack
        message, readset, writeset, phases = wrapper.forward_invocation(
            tx(1), COFFEE_UUID, "record", (b"alice", b"2"))
        assert message == b"ok"
        assert readset.entries == (("coffee/alice", None),)
        assert writeset.entries == (("coffee/alice", b"2", False),)
        pp = proxy.pop_phases(tx(1))
        assert pp is not None and pp.upcalls == 2

    def test_coffee_query_after_commit(self):
        state = WorldState({"coffee/alice": (b"2", Version(1, 0))})
        world, proxy, channel, wrapper = make_stack(state)
        try:
            message, readset, writeset, _ = wrapper.forward_invocation(
                tx(2), COFFEE_UUID, "query", (b"alice",))
            assert message == b"2"
            assert readset.entries == (("coffee/alice", Version(1, 0)),)
            assert writeset.entries == ()
        finally:
            channel.close()
            proxy.close()

    def test_read_your_own_write(self, stack):
        _, _, _, wrapper = stack
        message, readset, writeset, _ = wrapper.forward_invocation(
            tx(3), RW_UUID, "putget", ())
        assert message == b"v"  # buffered value served
        assert readset.entries == ()  # no readset entry for own write
        assert writeset.entries == (("k", b"v", False),)

    def test_double_read_single_entry(self, stack):
        _, _, _, wrapper = stack
        _, readset, _, _ = wrapper.forward_invocation(
            tx(4), RW_UUID, "doubleread", ())
        assert readset.entries == (("k", None),)

    def test_put_then_delete(self, stack):
        _, _, _, wrapper = stack
        message, readset, writeset, _ = wrapper.forward_invocation(
            tx(5), RW_UUID, "putdel", ())
        assert message == b"<absent>"  # read-your-own-delete
        assert writeset.entries == (("k", b"", True),)
        assert readset.entries == ()

    def test_absent_key_records_absent(self, stack):
        _, _, _, wrapper = stack
        message, readset, _, _ = wrapper.forward_invocation(
            tx(6), RW_UUID, "readabsent", ())
        assert message == b"<absent>"
        assert readset.entries == (("nothere", None),)

    def test_unknown_uuid_is_ta_not_found(self, stack):
        _, _, _, wrapper = stack
        with pytest.raises(EndorsementError, match="TA not found"):
            wrapper.forward_invocation(tx(7), b"\xff" * 16, "f", ())

    def test_chaincode_error_propagates(self, stack):
        _, _, _, wrapper = stack
        with pytest.raises(EndorsementError, match="chaincode error"):
            wrapper.forward_invocation(tx(8), COFFEE_UUID, "nosuch", ())

    def test_echo_burn_counts_upcalls(self, stack):
        _, proxy, _, wrapper = stack
        message, readset, _, _ = wrapper.forward_invocation(
            tx(9), ECHO_UUID, "burn3", ())
        assert message == b""
        assert [k for k, _ in readset.entries] == ["burn/0", "burn/1", "burn/2"]
        assert proxy.pop_phases(tx(9)).upcalls == 3

    def test_endorsement_purity(self, stack):
        world, _, _, wrapper = stack
        state = WorldState({"coffee/bob": (b"5", Version(2, 1))})
        wrapper._snapshot_fn = lambda: state
        digest_before = state.digest()
        wrapper.forward_invocation(tx(10), COFFEE_UUID, "record", (b"bob", b"3"))
        assert state.digest() == digest_before

    def test_concurrent_invocations_multiplexed(self, stack):
        _, _, _, wrapper = stack
        results = {}

        def invoke(n):
            message, _, _, _ = wrapper.forward_invocation(
                tx(100 + n), ECHO_UUID, "echo", (f"m{n}".encode(),))
            results[n] = message

        threads = [threading.Thread(target=invoke, args=(i,)) for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == {i: f"m{i}".encode() for i in range(6)}

    def test_phase_identity_total_equals_sum(self, stack):
        _, proxy, _, wrapper = stack
        _, _, _, wp = wrapper.forward_invocation(
            tx(11), COFFEE_UUID, "record", (b"zoe", b"1"))
        pp = proxy.pop_phases(tx(11))
        joined = join_phases(wp, pp)
        wall_us = (wp.t_recv_resp_ns - wp.t_send_req_ns) / 1000
        assert joined.total_us() == pytest.approx(wp.a_us + wall_us + wp.m_us, rel=0.05)


class TestMaliciousProxy:
    def test_set_divergence_detected(self):
        world, proxy, channel, wrapper = make_stack(malicious=True)
        try:
            with pytest.raises(EndorsementError, match="set divergence"):
                wrapper.forward_invocation(tx(20), COFFEE_UUID, "record",
                                           (b"eve", b"1"))
        finally:
            channel.close()
            proxy.close()


class TestLifecyclePerInvocation:
    def test_one_open_one_close_per_invocation(self, stack):
        world, _, _, wrapper = stack
        for n in range(3):
            wrapper.forward_invocation(tx(30 + n), ECHO_UUID, "echo", (b"x",))
        assert world.counters.ops["open_session"] == 3
        assert world.counters.ops["close_session"] == 3
        assert world.counters.ops["initialize_context"] == 3
        assert world.counters.ops["finalize_context"] == 3

    def test_session_cache_skips_reopen(self):
        cost = CostModel(world_switch_us=0, open_session_us=20_000,
                         close_session_us=0, per_kib_copy_us=0)
        world, proxy, channel, wrapper = make_stack(cost=cost, session_cache=True)
        try:
            wrapper.forward_invocation(tx(40), ECHO_UUID, "echo", (b"a",))
            wrapper.forward_invocation(tx(41), ECHO_UUID, "echo", (b"b",))
            first = proxy.pop_phases(tx(40))
            second = proxy.pop_phases(tx(41))
            assert world.counters.ops["open_session"] == 1
            assert "close_session" not in world.counters.ops
            assert second.b_us < 0.10 * first.b_us
        finally:
            channel.close()
            proxy.close()


class TestTransportFailures:
    def test_proxy_that_closes_immediately(self):
        # a fake proxy that accepts, reads one frame, then drops the link
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)

        def fake_proxy():
            sock, _ = listener.accept()
            sock.recv(4096)
            sock.close()

        t = threading.Thread(target=fake_proxy, daemon=True)
        t.start()
        channel = ProxyChannel(listener.getsockname(), timeout_s=2.0)
        wrapper = Wrapper(WorldState, channel=channel)
        t0 = time.perf_counter()
        with pytest.raises(EndorsementError, match="TEE error"):
            wrapper.forward_invocation(tx(50), ECHO_UUID, "echo", (b"x",))
        assert time.perf_counter() - t0 < 5  # the wrapper does not hang
        channel.close()
        listener.close()

    def test_wrapper_vanishing_mid_upcall_aborts_cleanly(self):
        world, proxy, channel, wrapper = make_stack()
        # kill the channel as soon as the first up-call arrives
        original = wrapper.handle_get_state

        def sabotage(tx_id, key):
            channel.close()
            raise ConnectionError("gone")

        wrapper.handle_get_state = sabotage
        with pytest.raises(EndorsementError):
            wrapper.forward_invocation(tx(51), COFFEE_UUID, "query", (b"a",))
        wrapper.handle_get_state = original
        time.sleep(0.2)  # let the proxy-side abort path run
        # the secure world survived the abort; sessions were torn down
        assert world.counters.ops["open_session"] == world.counters.ops["close_session"]
        proxy.close()


class TestBaselineLocal:
    def test_local_execution_same_semantics(self):
        state = WorldState({"coffee/alice": (b"2", Version(1, 0))})
        local = LocalExecutor(registry_with_probe())
        local.install(COFFEE_UUID, "coffee")
        local.install(RW_UUID, "rwprobe")
        wrapper = Wrapper(lambda: state, local=local)
        message, readset, writeset, phases = wrapper.forward_invocation(
            tx(60), COFFEE_UUID, "record", (b"alice", b"3"))
        assert message == b"ok"
        assert readset.entries == (("coffee/alice", Version(1, 0)),)
        assert writeset.entries == (("coffee/alice", b"5", False),)
        joined = join_phases(phases, None)
        assert joined.b_us == 0.0 and joined.c_us == 0.0

    def test_local_unknown_uuid(self):
        wrapper = Wrapper(WorldState, local=LocalExecutor(builtin_registry()))
        with pytest.raises(EndorsementError, match="TA not found"):
            wrapper.forward_invocation(tx(61), b"\x01" * 16, "f", ())
