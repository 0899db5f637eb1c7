"""Simulated TrustZone secure world.

Models the GlobalPlatform client lifecycle (initialize-context, open-session,
invoke-command, close-session, finalize-context) over a registry of signed
trusted applications, with two deliberately physical properties:

* every secure-world entry costs real wall-clock time, injected from a
  CostModel (world switches, session open/close, shared-buffer copies);
* at most `capacity` trusted threads execute inside the secure world at
  once; open, invoke and close all occupy one, and excess callers queue
  FIFO without being rejected.

Session opening is expensive by design (TA load + verify + memory setup):
callers that open a session per invocation pay for it dearly, which is the
bottleneck the benchmark harness exists to expose.
"""

import hashlib
import itertools
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from . import keys
from .chaincode import ChaincodeApi, HandlerRegistry, TaHandler, builtin_registry
from .wire import Reader, Writer, ProtocolError, UUID_LEN


class TeeError(Exception):
    """Secure-world failure visible to the normal world."""


class TaNotFoundError(TeeError):
    pass


class InstallError(TeeError):
    pass


class LifecycleError(TeeError):
    """Operation out of the init -> open -> invoke* -> close -> finalize order."""


class TaFault(Exception):
    """The TA handler failed; the secure world itself survives."""


class UpcallAbort(Exception):
    """A state up-call could not complete (wrapper link lost); the
    invocation is abandoned rather than blamed on the TA."""


@dataclass(frozen=True)
class CostModel:
    """Injected secure-world latencies, all in microseconds of real sleep."""

    world_switch_us: int = 150
    open_session_us: int = 48_000
    close_session_us: int = 14_000
    per_kib_copy_us: int = 30

    def __post_init__(self) -> None:
        for name in ("world_switch_us", "open_session_us",
                     "close_session_us", "per_kib_copy_us"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def copy_cost_us(self, nbytes: int) -> int:
        return self.per_kib_copy_us * ((nbytes + 1023) // 1024)

    def scaled(self, factor: float) -> "CostModel":
        return CostModel(
            int(self.world_switch_us * factor),
            int(self.open_session_us * factor),
            int(self.close_session_us * factor),
            int(self.per_kib_copy_us * factor),
        )


DEFAULT_COST_MODEL = CostModel()
ZERO_COST_MODEL = CostModel(0, 0, 0, 0)


@dataclass(frozen=True)
class TAImage:
    """Signed (optionally sealed) trusted-application image."""

    uuid: bytes
    encrypted: bool
    payload: bytes  # plaintext payload, or AEAD blob when encrypted
    signature: bytes

    def signing_digest(self) -> bytes:
        return hashlib.sha256(self.uuid + self.payload).digest()


def make_ta_payload(handler_name: str, config: bytes = b"") -> bytes:
    w = Writer()
    w.str_field(handler_name)
    w.bytes_field(config)
    return w.getvalue()


def parse_ta_payload(payload: bytes) -> tuple[str, bytes]:
    r = Reader(payload)
    name = r.str_field()
    config = r.bytes_field()
    r.finish()
    return name, config


def encode_ta_image(image: TAImage) -> bytes:
    w = Writer()
    w.bytes_field(image.uuid)
    w.boolean(image.encrypted)
    w.bytes_field(image.payload)
    w.bytes_field(image.signature)
    return w.getvalue()


def decode_ta_image(data: bytes) -> TAImage:
    r = Reader(data)
    uuid = r.bytes_field()
    if len(uuid) != UUID_LEN:
        raise ProtocolError(f"TA uuid must be {UUID_LEN} bytes")
    encrypted = r.boolean()
    payload = r.bytes_field()
    signature = r.bytes_field()
    r.finish()
    return TAImage(uuid, encrypted, payload, signature)


def sign_ta(uuid: bytes, payload: bytes, build_key: Ed25519PrivateKey,
            encrypt: bool = False, encryption_key: bytes | None = None) -> TAImage:
    """Produce an installable image, signing uuid || stored-payload."""
    if len(uuid) != UUID_LEN:
        raise ValueError(f"TA uuid must be {UUID_LEN} bytes")
    stored = payload
    if encrypt:
        if encryption_key is None:
            raise ValueError("encrypt=True requires an encryption key")
        stored = keys.seal(encryption_key, payload)
    digest = hashlib.sha256(uuid + stored).digest()
    return TAImage(uuid, encrypt, stored, keys.sign(build_key, digest))


@dataclass
class Context:
    context_id: int
    open: bool = True


@dataclass
class Session:
    session_id: int
    context_id: int
    uuid: bytes
    open: bool = True


class FairGate:
    """FIFO semaphore: the trusted-thread pool."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._lock = threading.Lock()
        self._active = 0
        self._queue: deque[threading.Event] = deque()

    def acquire(self) -> None:
        with self._lock:
            if self._active < self.capacity and not self._queue:
                self._active += 1
                return
            ev = threading.Event()
            self._queue.append(ev)
        ev.wait()

    def release(self) -> None:
        with self._lock:
            if self._queue:
                self._queue.popleft().set()  # hand the slot to the next waiter
            else:
                self._active -= 1


@dataclass
class CostCounters:
    """Requested (pre-overshoot) injected microseconds, by category."""

    injected_us: dict = field(default_factory=dict)
    ops: dict = field(default_factory=dict)
    invocation_costs_us: list = field(default_factory=list)

    def total_injected_us(self) -> int:
        return sum(self.injected_us.values())


class SecureWorld:
    """One simulated secure world: TA registry, sessions, trusted threads."""

    def __init__(self, build_public_key: bytes,
                 cost_model: CostModel = DEFAULT_COST_MODEL,
                 capacity: int = 4,
                 registry: HandlerRegistry | None = None,
                 ta_decryption_key: bytes | None = None) -> None:
        self.cost_model = cost_model
        self.build_public_key = build_public_key
        self.registry = registry if registry is not None else builtin_registry()
        self._ta_decryption_key = ta_decryption_key
        self._gate = FairGate(capacity)
        self._lock = threading.RLock()
        self._ids = itertools.count(1)
        self._tas: dict[bytes, tuple[TaHandler, bytes]] = {}
        self._contexts: dict[int, Context] = {}
        self._sessions: dict[int, Session] = {}
        self.counters = CostCounters()

    @property
    def capacity(self) -> int:
        return self._gate.capacity

    # -- cost injection -------------------------------------------------

    def _charge(self, parts: list[tuple[str, int]],
                trace: list[tuple[int, int]] | None = None) -> int:
        """Record the itemized cost and sleep once for the sum.

        When `trace` is given, the real sleep span (perf_counter_ns pair)
        is appended to it so callers can subtract injected time from their
        own phase windows.
        """
        total = 0
        with self._lock:
            for category, us in parts:
                self.counters.injected_us[category] = (
                    self.counters.injected_us.get(category, 0) + us)
                total += us
        if total > 0:
            t0 = time.perf_counter_ns()
            time.sleep(total / 1e6)
            if trace is not None:
                trace.append((t0, time.perf_counter_ns()))
        return total

    def _count_op(self, name: str) -> None:
        with self._lock:
            self.counters.ops[name] = self.counters.ops.get(name, 0) + 1

    # -- TA installation -------------------------------------------------

    def install_ta(self, image: TAImage) -> None:
        """Verify, resolve and register a TA image.

        Rejects bad signatures, undecryptable payloads, malformed payload
        encodings, unknown handler names and duplicate uuids; a rejected
        image leaves no trace in the registry.
        """
        if len(image.uuid) != UUID_LEN:
            raise InstallError("malformed uuid")
        if not keys.verify(self.build_public_key, image.signature,
                           image.signing_digest()):
            raise InstallError("TA signature verification failed")
        payload = image.payload
        if image.encrypted:
            if self._ta_decryption_key is None:
                raise InstallError("no TA decryption key configured")
            try:
                payload = keys.unseal(self._ta_decryption_key, payload)
            except ValueError as exc:
                raise InstallError(f"TA decryption failed: {exc}") from exc
        try:
            handler_name, config = parse_ta_payload(payload)
        except ProtocolError as exc:
            raise InstallError(f"malformed TA payload: {exc}") from exc
        handler = self.registry.resolve(handler_name)
        if handler is None:
            raise InstallError(f"unknown handler {handler_name!r}")
        with self._lock:
            if image.uuid in self._tas:
                raise InstallError("uuid already installed")
            self._tas[image.uuid] = (handler, config)

    def installed_uuids(self) -> list[bytes]:
        with self._lock:
            return list(self._tas)

    # -- GlobalPlatform lifecycle -----------------------------------------

    def initialize_context(self) -> Context:
        self._count_op("initialize_context")
        self._charge([("world_switch", self.cost_model.world_switch_us)])
        with self._lock:
            ctx = Context(next(self._ids))
            self._contexts[ctx.context_id] = ctx
        return ctx

    def open_session(self, ctx: Context, uuid: bytes) -> Session:
        self._count_op("open_session")
        with self._lock:
            known = self._contexts.get(ctx.context_id)
            if known is None or not known.open:
                raise LifecycleError("context is not open")
            entry = self._tas.get(uuid)
        if entry is None:
            raise TaNotFoundError("TA not found")
        handler, _config = entry
        self._gate.acquire()
        try:
            self._charge([
                ("open_session", self.cost_model.open_session_us),
                ("world_switch", self.cost_model.world_switch_us),
            ])
            handler.on_session_open()
            with self._lock:
                known = self._contexts.get(ctx.context_id)
                if known is None or not known.open:
                    raise LifecycleError("context closed during open_session")
                sess = Session(next(self._ids), ctx.context_id, uuid)
                self._sessions[sess.session_id] = sess
            return sess
        finally:
            self._gate.release()

    def invoke_command(self, sess: Session, command: bytes, state_bridge,
                       cost_trace: list[tuple[int, int]] | None = None) -> bytes:
        """Run the session's TA handler on a trusted thread.

        `state_bridge` must expose get_state(key) -> bytes|None and
        put_state(key, value, is_delete); every up-call through it costs
        two world switches on top of whatever the bridge itself does.
        The thread is held for the whole invocation, up-calls included.

        `cost_trace` collects (start_ns, end_ns) spans of injected sleeps
        and trusted-thread queueing, letting the caller keep its own phase
        windows free of simulated overhead.
        """
        self._count_op("invoke_command")
        with self._lock:
            known = self._sessions.get(sess.session_id)
            if known is None or not known.open:
                raise LifecycleError("session is not open")
            handler, _config = self._tas[known.uuid]
        invocation_cost = 0
        t_wait = time.perf_counter_ns()
        self._gate.acquire()
        if cost_trace is not None:
            cost_trace.append((t_wait, time.perf_counter_ns()))
        try:
            invocation_cost += self._charge([
                ("world_switch", self.cost_model.world_switch_us),
                ("copy", self.cost_model.copy_cost_us(len(command))),
            ], cost_trace)

            def charged_get(key: str) -> bytes | None:
                nonlocal invocation_cost
                invocation_cost += self._charge(
                    [("world_switch", self.cost_model.world_switch_us)], cost_trace)
                try:
                    return state_bridge.get_state(key)
                finally:
                    invocation_cost += self._charge(
                        [("world_switch", self.cost_model.world_switch_us)], cost_trace)

            def charged_put(key: str, value: bytes, is_delete: bool) -> None:
                nonlocal invocation_cost
                invocation_cost += self._charge(
                    [("world_switch", self.cost_model.world_switch_us)], cost_trace)
                try:
                    state_bridge.put_state(key, value, is_delete)
                finally:
                    invocation_cost += self._charge(
                        [("world_switch", self.cost_model.world_switch_us)], cost_trace)

            api = ChaincodeApi(charged_get, charged_put)
            try:
                output = handler.invoke(command, api)
            except UpcallAbort:
                invocation_cost += self._charge(
                    [("world_switch", self.cost_model.world_switch_us)], cost_trace)
                raise
            except Exception as exc:
                invocation_cost += self._charge(
                    [("world_switch", self.cost_model.world_switch_us)], cost_trace)
                raise TaFault(f"{type(exc).__name__}: {exc}") from exc
            invocation_cost += self._charge([
                ("world_switch", self.cost_model.world_switch_us),
                ("copy", self.cost_model.copy_cost_us(len(output))),
            ], cost_trace)
            return output
        finally:
            self._gate.release()
            with self._lock:
                self.counters.invocation_costs_us.append(invocation_cost)

    def close_session(self, sess: Session) -> None:
        self._count_op("close_session")
        with self._lock:
            known = self._sessions.get(sess.session_id)
            if known is None or not known.open:
                raise LifecycleError("session already closed")
            known.open = False
            sess.open = False
        self._gate.acquire()
        try:
            self._charge([("close_session", self.cost_model.close_session_us)])
        finally:
            self._gate.release()

    def finalize_context(self, ctx: Context) -> None:
        self._count_op("finalize_context")
        with self._lock:
            known = self._contexts.get(ctx.context_id)
            if known is None or not known.open:
                raise LifecycleError("context already finalized")
            for sess in self._sessions.values():
                if sess.context_id == ctx.context_id and sess.open:
                    raise LifecycleError("context still has open sessions")
            known.open = False
            ctx.open = False
        self._charge([("world_switch", self.cost_model.world_switch_us)])
