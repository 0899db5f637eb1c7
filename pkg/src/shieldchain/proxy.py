"""Normal-world host application.

Terminates the wire protocol coming from wrappers, drives one full
GlobalPlatform lifecycle per invocation (unless session caching is on) and
relays the chaincode's state up-calls back over the same connection. The
proxy is untrusted by design: it holds no keys, and the wrapper detects
any tampering with the echoed read/write-sets. A deliberately malicious
mode exists to prove that detection works.
"""

import logging
import queue
import socket
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

from .chaincode import encode_call
from .phases import ProxyPhases
from .rwset import RwTracker, WriteSet
from .tee import (
    LifecycleError,
    SecureWorld,
    TaFault,
    TaNotFoundError,
    TeeError,
    UpcallAbort,
)
from .wire import (
    Connection,
    ErrorMessage,
    GetStateRequest,
    GetStateResponse,
    InvocationRequest,
    InvocationResponse,
    ProtocolError,
    PutStateAck,
    PutStateRequest,
    STATUS_CHAINCODE_ERROR,
    STATUS_OK,
    STATUS_TEE_ERROR,
)

logger = logging.getLogger(__name__)

_PHASE_SINK_CAP = 100_000


@dataclass
class ProxyConfig:
    listen: tuple[str, int] = ("127.0.0.1", 0)
    session_cache: bool = False
    malicious_writes: bool = False
    send_latency_us: int = 0
    upcall_timeout_s: float = 10.0

    def __post_init__(self) -> None:
        if self.upcall_timeout_s <= 0:
            raise ValueError("upcall_timeout_s must be positive")


def _excluded_us(trace: list[tuple[int, int]], start_ns: int, end_ns: int) -> float:
    """Total traced (injected/queued) time overlapping [start, end]."""
    total = 0
    for s, e in trace:
        total += max(0, min(e, end_ns) - max(s, start_ns))
    return total / 1000


def _corrupt(writeset: WriteSet) -> WriteSet:
    if writeset.entries:
        key, value, is_delete = writeset.entries[0]
        return WriteSet(((key, value + b"\xff", is_delete),) + writeset.entries[1:])
    return WriteSet((("__tampered", b"1", False),))


class _ConnState:
    def __init__(self, conn: Connection) -> None:
        self.conn = conn
        self.lock = threading.Lock()
        self.pending: dict[bytes, queue.Queue] = {}


class _WireBridge:
    """State bridge for one invocation: up-calls become wire frames."""

    def __init__(self, cstate: _ConnState, tx_id: bytes, tracker: RwTracker,
                 phases: ProxyPhases, timeout_s: float) -> None:
        self._cstate = cstate
        self._tx_id = tx_id
        self._tracker = tracker
        self._phases = phases
        self._timeout_s = timeout_s
        self._waiter: queue.Queue = queue.Queue()
        self.t_first_in_ns = 0
        self.t_last_out_ns = 0
        with cstate.lock:
            cstate.pending[tx_id] = self._waiter

    def detach(self) -> None:
        with self._cstate.lock:
            self._cstate.pending.pop(self._tx_id, None)

    def _exchange(self, msg, t_in: int):
        if self.t_first_in_ns == 0:
            self.t_first_in_ns = t_in
        t_pre_send = time.perf_counter_ns()
        self._phases.e_us += (t_pre_send - t_in) / 1000
        try:
            self._cstate.conn.send_message(msg)
        except (ConnectionError, OSError) as exc:
            raise UpcallAbort(f"wrapper link lost: {exc}") from exc
        try:
            reply = self._waiter.get(timeout=self._timeout_s)
        except queue.Empty:
            raise UpcallAbort("up-call timed out")
        if reply is None:
            raise UpcallAbort("wrapper link lost")
        t_recv = time.perf_counter_ns()
        self._phases.upcall_wait_us += (t_recv - t_pre_send) / 1000
        self._phases.upcalls += 1
        if isinstance(reply, ErrorMessage):
            raise UpcallAbort(f"wrapper error: {reply.code}")
        return reply, t_recv

    def get_state(self, key: str) -> bytes | None:
        t_in = time.perf_counter_ns()
        buffered = self._tracker.buffered(key)
        reply, t_recv = self._exchange(GetStateRequest(self._tx_id, key), t_in)
        if not isinstance(reply, GetStateResponse):
            raise UpcallAbort(f"unexpected {type(reply).__name__}")
        if buffered is None:
            self._tracker.note_get(key, reply.version if reply.present else None)
        value = reply.value if reply.present else None
        t_out = time.perf_counter_ns()
        self._phases.h_us += (t_out - t_recv) / 1000
        self.t_last_out_ns = t_out
        return value

    def put_state(self, key: str, value: bytes, is_delete: bool) -> None:
        t_in = time.perf_counter_ns()
        self._tracker.note_put(key, value, is_delete)
        reply, t_recv = self._exchange(
            PutStateRequest(self._tx_id, key, value, is_delete), t_in)
        if not isinstance(reply, PutStateAck):
            raise UpcallAbort(f"unexpected {type(reply).__name__}")
        t_out = time.perf_counter_ns()
        self._phases.h_us += (t_out - t_recv) / 1000
        self.t_last_out_ns = t_out


class ProxyServer:
    """Serves wrappers over TCP; one simulated secure world per process."""

    def __init__(self, secure_world: SecureWorld, config: ProxyConfig | None = None) -> None:
        self.secure_world = secure_world
        self.config = config or ProxyConfig()
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._conns: list[Connection] = []
        self._closing = False
        self._lock = threading.Lock()
        self._phase_sink: OrderedDict[bytes, ProxyPhases] = OrderedDict()
        self._cache_lock = threading.Lock()
        self._session_cache: dict[bytes, tuple] = {}

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> tuple[str, int]:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(self.config.listen)
        self._listener.listen(16)
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)
        return self.address

    @property
    def address(self) -> tuple[str, int]:
        assert self._listener is not None
        return self._listener.getsockname()

    def close(self) -> None:
        self._closing = True
        if self._listener is not None:
            self._listener.close()
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            conn.close()

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return
            conn = Connection(sock, self.config.send_latency_us)
            with self._lock:
                self._conns.append(conn)
            t = threading.Thread(target=self._conn_loop, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _conn_loop(self, conn: Connection) -> None:
        cstate = _ConnState(conn)
        try:
            while True:
                msg = conn.recv_message(None)
                t_recv = time.perf_counter_ns()
                if isinstance(msg, InvocationRequest):
                    worker = threading.Thread(
                        target=self._serve_safely, args=(cstate, msg, t_recv),
                        daemon=True)
                    worker.start()
                elif isinstance(msg, (GetStateResponse, PutStateAck, ErrorMessage)):
                    with cstate.lock:
                        waiter = cstate.pending.get(msg.tx_id)
                    if waiter is not None:
                        waiter.put(msg)
                else:
                    conn.send_message(ErrorMessage(
                        msg.tx_id, "protocol", f"unexpected {type(msg).__name__}"))
        except (ConnectionError, OSError, ProtocolError) as exc:
            if not self._closing:
                logger.debug("wrapper connection ended: %s", exc)
        finally:
            conn.close()
            with cstate.lock:
                for waiter in cstate.pending.values():
                    waiter.put(None)  # abort in-flight up-calls at once
            with self._lock:
                if conn in self._conns:
                    self._conns.remove(conn)

    # -- invocation handling -------------------------------------------------

    def _serve_safely(self, cstate: _ConnState, req: InvocationRequest,
                      t_recv_ns: int) -> None:
        try:
            self.serve_invocation(cstate, req, t_recv_ns)
        except Exception:
            logger.exception("invocation %s crashed", req.tx_id.hex())

    def serve_invocation(self, cstate: _ConnState, req: InvocationRequest,
                         t_recv_ns: int) -> None:
        """Full per-invocation lifecycle: init -> open -> invoke -> close ->
        finalize, with phases timed, then the response frame."""
        sw = self.secure_world
        phases = ProxyPhases(t_recv_req_ns=t_recv_ns)
        tracker = RwTracker()
        bridge = _WireBridge(cstate, req.tx_id, tracker, phases,
                             self.config.upcall_timeout_s)
        status = STATUS_OK
        output = b""
        ctx = sess = None
        resp: InvocationResponse | None = None
        cached = False
        aborted = False
        try:
            t_b0 = time.perf_counter_ns()
            try:
                if self.config.session_cache:
                    with self._cache_lock:
                        entry = self._session_cache.get(req.chaincode_uuid)
                    if entry is not None:
                        ctx, sess = entry
                        cached = True
                    else:
                        ctx = sw.initialize_context()
                        sess = sw.open_session(ctx, req.chaincode_uuid)
                        with self._cache_lock:
                            self._session_cache[req.chaincode_uuid] = (ctx, sess)
                        cached = True  # keep it open afterwards
                else:
                    ctx = sw.initialize_context()
                    sess = sw.open_session(ctx, req.chaincode_uuid)
            except TaNotFoundError:
                status, output = STATUS_TEE_ERROR, b"TA not found"
            except TeeError as exc:
                status, output = STATUS_TEE_ERROR, str(exc).encode()
            phases.b_us = (time.perf_counter_ns() - t_b0) / 1000

            if status == STATUS_OK:
                command = encode_call(req.function, req.args)
                t_dispatch = time.perf_counter_ns()
                try:
                    output = sw.invoke_command(sess, command, bridge, phases.cost_trace)
                except TaFault as exc:
                    status, output = STATUS_CHAINCODE_ERROR, str(exc).encode()
                except UpcallAbort as exc:
                    logger.warning("invocation %s aborted: %s", req.tx_id.hex(), exc)
                    aborted = True
                    return
                except LifecycleError as exc:
                    status, output = STATUS_TEE_ERROR, str(exc).encode()
                t_done = time.perf_counter_ns()
                trace = phases.cost_trace
                if bridge.t_first_in_ns:
                    phases.d_us = max(0.0, (bridge.t_first_in_ns - t_dispatch) / 1000
                                      - _excluded_us(trace, t_dispatch, bridge.t_first_in_ns))
                    phases.j_us = max(0.0, (t_done - bridge.t_last_out_ns) / 1000
                                      - _excluded_us(trace, bridge.t_last_out_ns, t_done))
                else:
                    phases.j_us = max(0.0, (t_done - t_dispatch) / 1000
                                      - _excluded_us(trace, t_dispatch, t_done))

            t_k0 = time.perf_counter_ns()
            readset = tracker.readset()
            writeset = tracker.writeset()
            if self.config.malicious_writes:
                writeset = _corrupt(writeset)
            resp = InvocationResponse(req.tx_id, status, output, readset, writeset)
            phases.k_us = (time.perf_counter_ns() - t_k0) / 1000
        finally:
            bridge.detach()
            t_l0 = time.perf_counter_ns()
            if not cached:
                if sess is not None:
                    try:
                        sw.close_session(sess)
                    except TeeError:
                        pass
                if ctx is not None:
                    try:
                        sw.finalize_context(ctx)
                    except TeeError:
                        pass
                phases.l_us = (time.perf_counter_ns() - t_l0) / 1000
            if not aborted:
                if resp is None:
                    resp = InvocationResponse(req.tx_id, STATUS_TEE_ERROR,
                                              b"internal proxy error",
                                              tracker.readset(), tracker.writeset())
                phases.t_send_resp_ns = time.perf_counter_ns()
                try:
                    cstate.conn.send_message(resp)
                except (ConnectionError, OSError):
                    pass
                self._record_phases(req.tx_id, phases)

    # -- phase sink ----------------------------------------------------------

    def _record_phases(self, tx_id: bytes, phases: ProxyPhases) -> None:
        with self._lock:
            self._phase_sink[tx_id] = phases
            while len(self._phase_sink) > _PHASE_SINK_CAP:
                self._phase_sink.popitem(last=False)

    def pop_phases(self, tx_id: bytes) -> ProxyPhases | None:
        with self._lock:
            return self._phase_sink.pop(tx_id, None)
