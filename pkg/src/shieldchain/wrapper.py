"""The chaincode-shaped shim that runs at the peer.

The wrapper forwards invocations to the offload proxy, answers the state
up-calls that come back against a pinned snapshot of the committed world
state, and accumulates the authoritative read/write-sets. It accepts a
result only if the sets echoed by the (untrusted) proxy match its own
accumulation byte for byte.

A baseline mode executes the chaincode handler in-process instead, with
identical state semantics, for the unshielded comparison scenario.
"""

import queue
import threading
import time
from typing import Callable

from .chaincode import ChaincodeApi, ChaincodeError, HandlerRegistry, encode_request, ChaincodeRequest
from .ledger import WorldState
from .phases import WrapperPhases
from .rwset import ReadSet, RwTracker, WriteSet
from .wire import (
    Connection,
    ErrorMessage,
    GetStateRequest,
    GetStateResponse,
    InvocationRequest,
    InvocationResponse,
    Message,
    ProtocolError,
    PutStateAck,
    PutStateRequest,
    STATUS_OK,
    STATUS_TEE_ERROR,
    encode_readset,
    encode_writeset,
    transport_error_response,
)


class EndorsementError(Exception):
    """Proposal execution failed; nothing was committed."""


class InvocationContext:
    """Book-keeping for one in-flight endorsement.

    The committed-state snapshot is pinned lazily at the first state
    access; buffered writes never reach the ledger.
    """

    def __init__(self, tx_id: bytes, snapshot_fn: Callable[[], WorldState]) -> None:
        self.tx_id = tx_id
        self.tracker = RwTracker()
        self.phases = WrapperPhases()
        self._snapshot_fn = snapshot_fn
        self._snapshot: WorldState | None = None

    def snapshot(self) -> WorldState:
        if self._snapshot is None:
            self._snapshot = self._snapshot_fn()
        return self._snapshot


class ProxyChannel:
    """Client end of the persistent wrapper<->proxy connection.

    One connection carries all invocations, multiplexed by tx id: a reader
    thread routes state requests to the owning invocation's handler and
    invocation responses to the waiting caller.
    """

    def __init__(self, address: tuple[str, int], send_latency_us: int = 0,
                 timeout_s: float = 10.0) -> None:
        self.timeout_s = timeout_s
        self._conn = Connection.dial(address, send_latency_us)
        self._lock = threading.Lock()
        self._pending: dict[bytes, queue.Queue] = {}
        self._handlers: dict[bytes, Callable[[Message], Message]] = {}
        self._dead = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            while True:
                msg = self._conn.recv_message(None)
                if isinstance(msg, (GetStateRequest, PutStateRequest)):
                    with self._lock:
                        handler = self._handlers.get(msg.tx_id)
                    if handler is None:
                        self._conn.send_message(ErrorMessage(msg.tx_id, "protocol",
                                                             "unknown tx_id"))
                        continue
                    try:
                        reply = handler(msg)
                    except ProtocolError as exc:
                        reply = ErrorMessage(msg.tx_id, "protocol", str(exc))
                    self._conn.send_message(reply)
                elif isinstance(msg, (InvocationResponse, ErrorMessage)):
                    with self._lock:
                        waiter = self._pending.get(msg.tx_id)
                    if waiter is not None:
                        waiter.put(msg)
        except (ConnectionError, OSError, ProtocolError):
            with self._lock:
                self._dead = True
                waiters = list(self._pending.items())
            for tx_id, waiter in waiters:
                waiter.put(transport_error_response(tx_id))

    def invoke(self, req: InvocationRequest,
               state_handler: Callable[[Message], Message],
               phases: WrapperPhases) -> InvocationResponse:
        waiter: queue.Queue = queue.Queue()
        with self._lock:
            if self._dead:
                return transport_error_response(req.tx_id)
            self._pending[req.tx_id] = waiter
            self._handlers[req.tx_id] = state_handler
        try:
            phases.t_send_req_ns = time.perf_counter_ns()
            try:
                self._conn.send_message(req)
            except (ConnectionError, OSError):
                return transport_error_response(req.tx_id)
            try:
                msg = waiter.get(timeout=self.timeout_s)
            except queue.Empty:
                return transport_error_response(req.tx_id)
            phases.t_recv_resp_ns = time.perf_counter_ns()
            if isinstance(msg, ErrorMessage):
                return transport_error_response(req.tx_id, msg.code)
            return msg
        finally:
            with self._lock:
                self._pending.pop(req.tx_id, None)
                self._handlers.pop(req.tx_id, None)

    def close(self) -> None:
        self._conn.close()


class LocalExecutor:
    """Baseline execution: handlers run in-process, no wire, no secure world."""

    def __init__(self, registry: HandlerRegistry) -> None:
        self._registry = registry
        self._installed: dict[bytes, str] = {}

    def install(self, uuid: bytes, handler_name: str) -> None:
        if self._registry.resolve(handler_name) is None:
            raise ValueError(f"unknown handler {handler_name!r}")
        self._installed[uuid] = handler_name

    def execute(self, uuid: bytes, request: ChaincodeRequest, api: ChaincodeApi) -> bytes:
        name = self._installed.get(uuid)
        if name is None:
            raise EndorsementError("TA not found")
        handler = self._registry.resolve(name)
        try:
            return handler.invoke(encode_request(request), api)
        except ChaincodeError as exc:
            raise EndorsementError(f"chaincode error: {exc}") from exc
        except Exception as exc:
            raise EndorsementError(f"chaincode fault: {exc}") from exc


class Wrapper:
    """Forwards invocations and services their state callbacks."""

    def __init__(self, snapshot_fn: Callable[[], WorldState],
                 channel: ProxyChannel | None = None,
                 local: LocalExecutor | None = None) -> None:
        if (channel is None) == (local is None):
            raise ValueError("exactly one of channel/local must be given")
        self._snapshot_fn = snapshot_fn
        self._channel = channel
        self._local = local
        self._contexts: dict[bytes, InvocationContext] = {}
        self._lock = threading.Lock()

    # -- state callbacks ---------------------------------------------------

    def _context(self, tx_id: bytes) -> InvocationContext:
        with self._lock:
            ctx = self._contexts.get(tx_id)
        if ctx is None:
            raise ProtocolError("state request for unknown tx_id")
        return ctx

    def handle_get_state(self, tx_id: bytes, key: str) -> GetStateResponse:
        """Serve a read: write buffer first (no readset entry), then the
        pinned snapshot (readset entry on first read of the key)."""
        ctx = self._context(tx_id)
        buffered = ctx.tracker.buffered(key)
        if buffered is not None:
            value, is_delete = buffered
            if is_delete:
                return GetStateResponse(tx_id, False, b"", None)
            return GetStateResponse(tx_id, True, value, None)
        entry = ctx.snapshot().get_state(key)
        if entry is None:
            ctx.tracker.note_get(key, None)
            return GetStateResponse(tx_id, False, b"", None)
        value, version = entry
        ctx.tracker.note_get(key, version)
        return GetStateResponse(tx_id, True, value, version)

    def handle_put_state(self, tx_id: bytes, key: str, value: bytes,
                         is_delete: bool) -> PutStateAck:
        ctx = self._context(tx_id)
        ctx.tracker.note_put(key, value, is_delete)
        return PutStateAck(tx_id)

    def _handle_state_message(self, msg: Message) -> Message:
        ctx = self._context(msg.tx_id)
        t0 = time.perf_counter_ns()
        try:
            if isinstance(msg, GetStateRequest):
                return self.handle_get_state(msg.tx_id, msg.key)
            if isinstance(msg, PutStateRequest):
                return self.handle_put_state(msg.tx_id, msg.key, msg.value, msg.is_delete)
            raise ProtocolError(f"unexpected {type(msg).__name__}")
        finally:
            ctx.phases.g_us += (time.perf_counter_ns() - t0) / 1000

    # -- invocation --------------------------------------------------------

    def forward_invocation(self, tx_id: bytes, chaincode_uuid: bytes,
                           function: str, args: tuple[bytes, ...]
                           ) -> tuple[bytes, ReadSet, WriteSet, WrapperPhases]:
        """Execute one proposal; returns the response message, the locally
        accumulated sets and the wrapper-side phase record. The ledger is
        never touched."""
        t0 = time.perf_counter_ns()
        ctx = InvocationContext(tx_id, self._snapshot_fn)
        with self._lock:
            if tx_id in self._contexts:
                raise EndorsementError("tx_id already in flight")
            self._contexts[tx_id] = ctx
        try:
            if self._local is not None:
                return self._invoke_local(ctx, chaincode_uuid, function, args, t0)
            req = InvocationRequest(tx_id, chaincode_uuid, function, args)
            ctx.phases.a_us = (time.perf_counter_ns() - t0) / 1000
            resp = self._channel.invoke(req, self._handle_state_message, ctx.phases)
            t_m = time.perf_counter_ns()
            if resp.status != STATUS_OK:
                kind = "TEE error" if resp.status == STATUS_TEE_ERROR else "chaincode error"
                raise EndorsementError(
                    f"{kind}: {resp.response_message.decode('utf-8', 'replace')}")
            readset = ctx.tracker.readset()
            writeset = ctx.tracker.writeset()
            if (encode_readset(resp.readset) != encode_readset(readset)
                    or encode_writeset(resp.writeset) != encode_writeset(writeset)):
                raise EndorsementError("set divergence")
            ctx.phases.m_us = (time.perf_counter_ns() - t_m) / 1000
            return resp.response_message, readset, writeset, ctx.phases
        finally:
            with self._lock:
                self._contexts.pop(tx_id, None)

    def _invoke_local(self, ctx: InvocationContext, uuid: bytes, function: str,
                      args: tuple[bytes, ...], t0: int
                      ) -> tuple[bytes, ReadSet, WriteSet, WrapperPhases]:
        tx_id = ctx.tx_id
        try:
            request = ChaincodeRequest(function, args)
        except ChaincodeError as exc:
            raise EndorsementError(f"chaincode error: {exc}") from exc
        ctx.phases.a_us = (time.perf_counter_ns() - t0) / 1000

        def get_fn(key: str) -> bytes | None:
            resp = self._handle_state_message(GetStateRequest(tx_id, key))
            return resp.value if resp.present else None

        def put_fn(key: str, value: bytes, is_delete: bool) -> None:
            self._handle_state_message(PutStateRequest(tx_id, key, value, is_delete))

        t_exec = time.perf_counter_ns()
        message = self._local.execute(uuid, request, ChaincodeApi(get_fn, put_fn))
        ctx.phases.j_local_us = (time.perf_counter_ns() - t_exec) / 1000
        t_m = time.perf_counter_ns()
        readset = ctx.tracker.readset()
        writeset = ctx.tracker.writeset()
        ctx.phases.m_us = (time.perf_counter_ns() - t_m) / 1000
        return message, readset, writeset, ctx.phases
