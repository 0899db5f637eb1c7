"""Built-in trusted-application handlers.

Handlers are pure functions of (request, state api): no ambient I/O, no
shared mutable state. That keeps endorsement deterministic across peers.
The registry maps handler names (carried in signed TA images) to handler
objects; there is no dynamic code loading.
"""

import re
from dataclasses import dataclass
from typing import Callable

from .wire import Reader, Writer


class ChaincodeError(Exception):
    """Application-level failure: unknown function, bad arguments."""


@dataclass(frozen=True)
class ChaincodeRequest:
    function: str
    args: tuple[bytes, ...]

    def __post_init__(self) -> None:
        if not self.function:
            raise ChaincodeError("function must be non-empty")


def encode_call(function: str, args: tuple[bytes, ...]) -> bytes:
    """Encode a call without validating it; validation happens TA-side."""
    w = Writer()
    w.str_field(function)
    w.u32(len(args))
    for a in args:
        w.bytes_field(a)
    return w.getvalue()


def encode_request(req: ChaincodeRequest) -> bytes:
    return encode_call(req.function, req.args)


def decode_request(data: bytes) -> ChaincodeRequest:
    r = Reader(data)
    function = r.str_field()
    args = tuple(r.bytes_field() for _ in range(r.u32()))
    r.finish()
    return ChaincodeRequest(function, args)


class ChaincodeApi:
    """The only capability a handler gets: get/put/delete on ledger state."""

    def __init__(self, get_fn: Callable[[str], bytes | None],
                 put_fn: Callable[[str, bytes, bool], None]) -> None:
        self._get = get_fn
        self._put = put_fn

    def get_state(self, key: str) -> bytes | None:
        return self._get(key)

    def put_state(self, key: str, value: bytes) -> None:
        self._put(key, value, False)

    def delete_state(self, key: str) -> None:
        self._put(key, b"", True)


def _as_text(arg: bytes) -> str:
    try:
        return arg.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ChaincodeError("argument is not valid UTF-8") from exc


def coffee_invoke(req: ChaincodeRequest, api: ChaincodeApi) -> bytes:
    """Office coffee tracking: record consumption and query the counters.

    Counts are stored as decimal UTF-8 strings so ledger contents stay
    human-readable and byte-stable across implementations.
    """
    if req.function == "record":
        if len(req.args) != 2:
            raise ChaincodeError("record needs (user, amount)")
        user = _as_text(req.args[0])
        try:
            amount = int(_as_text(req.args[1]))
        except ValueError as exc:
            raise ChaincodeError("amount must be a decimal integer") from exc
        key = f"coffee/{user}"
        previous = api.get_state(key)
        count = int(previous.decode("utf-8")) if previous is not None else 0
        api.put_state(key, str(count + amount).encode("utf-8"))
        return b"ok"
    if req.function == "query":
        if len(req.args) != 1:
            raise ChaincodeError("query needs (user)")
        value = api.get_state(f"coffee/{_as_text(req.args[0])}")
        return value if value is not None else b"0"
    if req.function == "stats":
        index = api.get_state("coffee/__users")
        if index is None:
            return b""
        users = sorted(u for u in index.decode("utf-8").split("\n") if u)
        lines = []
        for user in users:
            value = api.get_state(f"coffee/{user}")
            count = value.decode("utf-8") if value is not None else "0"
            lines.append(f"{user}={count}")
        return "\n".join(lines).encode("utf-8")
    raise ChaincodeError(f"unknown function {req.function!r}")


_BURN = re.compile(r"^burn(\d+)$")


def echo_invoke(req: ChaincodeRequest, api: ChaincodeApi) -> bytes:
    """Protocol probe: echoes its arguments back.

    function "burn<k>" issues exactly k get_state calls first, which lets
    tests count up-call frames and price the cost model.
    """
    m = _BURN.match(req.function)
    if m:
        for i in range(int(m.group(1))):
            api.get_state(f"burn/{i}")
    return b"".join(req.args)


class TaHandler:
    """Base trusted-application handler."""

    def on_session_open(self) -> None:
        """Hook run inside open_session; default is a no-op."""

    def invoke(self, command: bytes, api: ChaincodeApi) -> bytes:
        raise NotImplementedError


class _FunctionHandler(TaHandler):
    def __init__(self, fn: Callable[[ChaincodeRequest, ChaincodeApi], bytes]) -> None:
        self._fn = fn

    def invoke(self, command: bytes, api: ChaincodeApi) -> bytes:
        return self._fn(decode_request(command), api)


class HandlerRegistry:
    """Name -> handler table the secure world resolves TA payloads against."""

    def __init__(self) -> None:
        self._handlers: dict[str, TaHandler] = {}

    def register(self, name: str, handler: TaHandler) -> None:
        if name in self._handlers:
            raise ValueError(f"handler {name!r} already registered")
        self._handlers[name] = handler

    def resolve(self, name: str) -> TaHandler | None:
        return self._handlers.get(name)


def builtin_registry() -> HandlerRegistry:
    registry = HandlerRegistry()
    registry.register("coffee", _FunctionHandler(coffee_invoke))
    registry.register("echo", _FunctionHandler(echo_invoke))
    return registry
