"""Bit-exact framing and the wrapper<->proxy invocation protocol.

Every frame is ``u32 length (big-endian) | u8 msg_type | payload`` where
``length = 1 + len(payload)`` and the length field stays below the 16 MiB
cap. Payload fields are encoded in declaration order with fixed rules:

* integers: big-endian, fixed width;
* byte strings and UTF-8 strings: u32 length prefix + bytes;
* lists: u32 count + elements;
* booleans: one byte, 0 or 1 (anything else is a protocol error);
* tx ids and TA uuids: 16 raw bytes; digests: 32 raw bytes;
* optional Version: presence byte, then u64 block height + u32 tx index.

Two structurally equal messages always encode to identical bytes; block
digests in the ledger hash these encodings, so none of this may drift.
"""

import socket
import struct
import threading
import time
from dataclasses import dataclass
from enum import IntEnum

from .rwset import ReadSet, Version, WriteSet

MAX_FRAME_LEN = 0x01000000 - 1  # 16 MiB cap on the length field
TX_ID_LEN = 16
UUID_LEN = 16
DIGEST_LEN = 32

STATUS_OK = 0
STATUS_CHAINCODE_ERROR = 1
STATUS_TEE_ERROR = 2

DEFAULT_EXCHANGE_TIMEOUT_S = 10.0


class ProtocolError(Exception):
    """Malformed frame or payload: unknown type, bad length, junk bytes."""


class EncodingError(Exception):
    """Message field exceeds size bounds or is otherwise unencodable."""


class IncompleteFrame(Exception):
    """Not enough bytes for a full frame yet; read more and retry."""


class MsgType(IntEnum):
    INVOCATION_REQUEST = 0x01
    GET_STATE_REQUEST = 0x02
    GET_STATE_RESPONSE = 0x03
    PUT_STATE_REQUEST = 0x04
    PUT_STATE_ACK = 0x05
    INVOCATION_RESPONSE = 0x06
    ERROR = 0x7F


class ServiceMsg(IntEnum):
    """Frame types for client->peer and orderer<->peer traffic.

    These reuse the framing layer only; they are not part of the
    wrapper<->proxy message set that `decode` accepts.
    """

    CLIENT_HELLO = 0x10
    PROPOSAL_SUBMIT = 0x11
    PROPOSAL_RESPONSE = 0x12
    ORDERER_HELLO = 0x13
    TX_SUBMIT = 0x14
    TX_ACK = 0x15
    BLOCK_DELIVER = 0x16
    COMMIT_NOTICE = 0x17
    SERVICE_ERROR = 0x7E


@dataclass(frozen=True)
class InvocationRequest:
    tx_id: bytes
    chaincode_uuid: bytes
    function: str
    args: tuple[bytes, ...]


@dataclass(frozen=True)
class GetStateRequest:
    tx_id: bytes
    key: str


@dataclass(frozen=True)
class GetStateResponse:
    tx_id: bytes
    present: bool
    value: bytes
    version: Version | None


@dataclass(frozen=True)
class PutStateRequest:
    tx_id: bytes
    key: str
    value: bytes
    is_delete: bool


@dataclass(frozen=True)
class PutStateAck:
    tx_id: bytes


@dataclass(frozen=True)
class InvocationResponse:
    tx_id: bytes
    status: int
    response_message: bytes
    readset: ReadSet
    writeset: WriteSet


@dataclass(frozen=True)
class ErrorMessage:
    tx_id: bytes
    code: str
    detail: str


Message = (
    InvocationRequest
    | GetStateRequest
    | GetStateResponse
    | PutStateRequest
    | PutStateAck
    | InvocationResponse
    | ErrorMessage
)


# --- primitive encoders -----------------------------------------------------


class Writer:
    """Accumulates canonically encoded fields."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, v: int) -> None:
        self._parts.append(struct.pack(">B", v))

    def u32(self, v: int) -> None:
        self._parts.append(struct.pack(">I", v))

    def u64(self, v: int) -> None:
        self._parts.append(struct.pack(">Q", v))

    def boolean(self, v: bool) -> None:
        self._parts.append(b"\x01" if v else b"\x00")

    def raw(self, data: bytes, width: int) -> None:
        if len(data) != width:
            raise EncodingError(f"fixed field must be {width} bytes, got {len(data)}")
        self._parts.append(data)

    def bytes_field(self, data: bytes) -> None:
        if len(data) > MAX_FRAME_LEN:
            raise EncodingError("byte field exceeds frame cap")
        self.u32(len(data))
        self._parts.append(data)

    def str_field(self, s: str) -> None:
        self.bytes_field(s.encode("utf-8"))

    def opt_version(self, v: Version | None) -> None:
        if v is None:
            self.boolean(False)
        else:
            self.boolean(True)
            self.u64(v.block_height)
            self.u32(v.tx_index)

    def readset(self, rs: ReadSet) -> None:
        self.u32(len(rs.entries))
        for key, version in rs.entries:
            self.str_field(key)
            self.opt_version(version)

    def writeset(self, ws: WriteSet) -> None:
        self.u32(len(ws.entries))
        for key, value, is_delete in ws.entries:
            self.str_field(key)
            self.bytes_field(value)
            self.boolean(is_delete)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    """Strict, offset-tracking decoder over one payload."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise ProtocolError("payload truncated")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def boolean(self) -> bool:
        b = self.u8()
        if b not in (0, 1):
            raise ProtocolError(f"non-canonical boolean byte {b:#04x}")
        return b == 1

    def raw(self, width: int) -> bytes:
        return self._take(width)

    def bytes_field(self) -> bytes:
        n = self.u32()
        if n > MAX_FRAME_LEN:
            raise ProtocolError("byte field length exceeds cap")
        return self._take(n)

    def str_field(self) -> str:
        try:
            return self.bytes_field().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError("invalid UTF-8 in string field") from exc

    def opt_version(self) -> Version | None:
        if not self.boolean():
            return None
        height = self.u64()
        index = self.u32()
        return Version(height, index)

    def readset(self) -> ReadSet:
        n = self.u32()
        entries = []
        for _ in range(n):
            key = self.str_field()
            entries.append((key, self.opt_version()))
        return ReadSet(tuple(entries))

    def writeset(self) -> WriteSet:
        n = self.u32()
        entries = []
        for _ in range(n):
            key = self.str_field()
            value = self.bytes_field()
            entries.append((key, value, self.boolean()))
        return WriteSet(tuple(entries))

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise ProtocolError(f"{len(self._data) - self._pos} trailing payload bytes")


def encode_version(v: Version) -> bytes:
    return struct.pack(">QI", v.block_height, v.tx_index)


def encode_readset(rs: ReadSet) -> bytes:
    w = Writer()
    w.readset(rs)
    return w.getvalue()


def encode_writeset(ws: WriteSet) -> bytes:
    w = Writer()
    w.writeset(ws)
    return w.getvalue()


# --- message <-> payload ----------------------------------------------------


def _payload(msg: Message) -> tuple[int, bytes]:
    w = Writer()
    w.raw(msg.tx_id, TX_ID_LEN)
    if isinstance(msg, InvocationRequest):
        w.raw(msg.chaincode_uuid, UUID_LEN)
        w.str_field(msg.function)
        w.u32(len(msg.args))
        for a in msg.args:
            w.bytes_field(a)
        return MsgType.INVOCATION_REQUEST, w.getvalue()
    if isinstance(msg, GetStateRequest):
        w.str_field(msg.key)
        return MsgType.GET_STATE_REQUEST, w.getvalue()
    if isinstance(msg, GetStateResponse):
        w.boolean(msg.present)
        w.bytes_field(msg.value)
        w.opt_version(msg.version)
        return MsgType.GET_STATE_RESPONSE, w.getvalue()
    if isinstance(msg, PutStateRequest):
        w.str_field(msg.key)
        w.bytes_field(msg.value)
        w.boolean(msg.is_delete)
        return MsgType.PUT_STATE_REQUEST, w.getvalue()
    if isinstance(msg, PutStateAck):
        return MsgType.PUT_STATE_ACK, w.getvalue()
    if isinstance(msg, InvocationResponse):
        if msg.status not in (STATUS_OK, STATUS_CHAINCODE_ERROR, STATUS_TEE_ERROR):
            raise EncodingError(f"bad status {msg.status}")
        w.u8(msg.status)
        w.bytes_field(msg.response_message)
        w.readset(msg.readset)
        w.writeset(msg.writeset)
        return MsgType.INVOCATION_RESPONSE, w.getvalue()
    if isinstance(msg, ErrorMessage):
        w.str_field(msg.code)
        w.str_field(msg.detail)
        return MsgType.ERROR, w.getvalue()
    raise EncodingError(f"unknown message {type(msg).__name__}")


def _parse(msg_type: int, payload: bytes) -> Message:
    r = Reader(payload)
    tx_id = r.raw(TX_ID_LEN)
    if msg_type == MsgType.INVOCATION_REQUEST:
        uuid = r.raw(UUID_LEN)
        function = r.str_field()
        args = tuple(r.bytes_field() for _ in range(r.u32()))
        msg: Message = InvocationRequest(tx_id, uuid, function, args)
    elif msg_type == MsgType.GET_STATE_REQUEST:
        msg = GetStateRequest(tx_id, r.str_field())
    elif msg_type == MsgType.GET_STATE_RESPONSE:
        msg = GetStateResponse(tx_id, r.boolean(), r.bytes_field(), r.opt_version())
    elif msg_type == MsgType.PUT_STATE_REQUEST:
        msg = PutStateRequest(tx_id, r.str_field(), r.bytes_field(), r.boolean())
    elif msg_type == MsgType.PUT_STATE_ACK:
        msg = PutStateAck(tx_id)
    elif msg_type == MsgType.INVOCATION_RESPONSE:
        status = r.u8()
        if status not in (STATUS_OK, STATUS_CHAINCODE_ERROR, STATUS_TEE_ERROR):
            raise ProtocolError(f"bad status byte {status}")
        msg = InvocationResponse(tx_id, status, r.bytes_field(), r.readset(), r.writeset())
    elif msg_type == MsgType.ERROR:
        msg = ErrorMessage(tx_id, r.str_field(), r.str_field())
    else:
        raise ProtocolError(f"unknown msg_type {msg_type:#04x}")
    r.finish()
    return msg


def frame(msg_type: int, payload: bytes) -> bytes:
    length = 1 + len(payload)
    if length > MAX_FRAME_LEN:
        raise EncodingError(f"frame length {length} exceeds cap")
    return struct.pack(">IB", length, msg_type) + payload


def encode(msg: Message) -> bytes:
    """Canonical frame bytes for one message."""
    msg_type, payload = _payload(msg)
    return frame(msg_type, payload)


def split_frame(data: bytes) -> tuple[int, bytes, bytes]:
    """Split one raw frame off the front of `data`.

    Returns (msg_type, payload, rest). Raises IncompleteFrame if more bytes
    are needed; rejects over-cap length fields before any payload arrives.
    """
    if len(data) < 4:
        raise IncompleteFrame
    length = struct.unpack(">I", data[:4])[0]
    if length < 1 or length > MAX_FRAME_LEN:
        raise ProtocolError(f"frame length {length:#010x} out of bounds")
    if len(data) < 4 + length:
        raise IncompleteFrame
    return data[4], bytes(data[5 : 4 + length]), bytes(data[4 + length :])


def decode(data: bytes) -> tuple[Message, bytes]:
    """Parse exactly one frame; trailing bytes are returned for the next."""
    msg_type, payload, rest = split_frame(data)
    return _parse(msg_type, payload), rest


class StreamDecoder:
    """Incremental frame splitter for a byte stream."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[int, bytes]]:
        self._buf.extend(data)
        frames = []
        while True:
            try:
                msg_type, payload, rest = split_frame(bytes(self._buf))
            except IncompleteFrame:
                # Enforce the cap as soon as the header is visible, before
                # buffering a bogus multi-megabyte payload.
                if len(self._buf) >= 4:
                    length = struct.unpack(">I", bytes(self._buf[:4]))[0]
                    if length < 1 or length > MAX_FRAME_LEN:
                        raise ProtocolError(f"frame length {length:#010x} out of bounds")
                return frames
            self._buf = bytearray(rest)
            frames.append((msg_type, payload))


# --- connections ------------------------------------------------------------


class Connection:
    """A framed socket. Sends are atomic; receives are single-reader.

    ``send_latency_us`` adds a per-frame sleep before each send, emulating
    one-way network latency for the remote-proxy scenario.
    """

    def __init__(self, sock: socket.socket, send_latency_us: int = 0) -> None:
        self.sock = sock
        self.send_latency_us = send_latency_us
        self._wlock = threading.Lock()
        self._decoder = StreamDecoder()
        self._pending: list[tuple[int, bytes]] = []
        try:
            self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass

    @classmethod
    def dial(cls, address: tuple[str, int], send_latency_us: int = 0,
             timeout_s: float = 5.0) -> "Connection":
        sock = socket.create_connection(address, timeout=timeout_s)
        sock.settimeout(None)
        return cls(sock, send_latency_us)

    def send_frame(self, msg_type: int, payload: bytes) -> None:
        data = frame(msg_type, payload)
        if self.send_latency_us > 0:
            time.sleep(self.send_latency_us / 1e6)
        with self._wlock:
            self.sock.sendall(data)

    def send_message(self, msg: Message) -> None:
        msg_type, payload = _payload(msg)
        self.send_frame(msg_type, payload)

    def recv_frame(self, timeout_s: float | None = None) -> tuple[int, bytes]:
        """Block until one full frame is available.

        Raises socket.timeout on deadline, ConnectionError on EOF and
        ProtocolError on malformed framing.
        """
        deadline = None if timeout_s is None else time.monotonic() + timeout_s
        while not self._pending:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise socket.timeout("frame read timed out")
                self.sock.settimeout(remaining)
            else:
                self.sock.settimeout(None)
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ConnectionError("connection closed")
            self._pending.extend(self._decoder.feed(chunk))
        return self._pending.pop(0)

    def recv_message(self, timeout_s: float | None = None) -> Message:
        msg_type, payload = self.recv_frame(timeout_s)
        return _parse(msg_type, payload)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def transport_error_response(tx_id: bytes, detail: str = "transport") -> InvocationResponse:
    return InvocationResponse(tx_id, STATUS_TEE_ERROR, detail.encode(), ReadSet(), WriteSet())


def invocation_exchange(conn: Connection, req: InvocationRequest, state_handler,
                        timeout_s: float = DEFAULT_EXCHANGE_TIMEOUT_S) -> InvocationResponse:
    """Drive one invocation over `conn`.

    Sends `req`, serves interleaved state requests through `state_handler`
    (a callable from GetStateRequest/PutStateRequest to the matching
    response message) and returns the InvocationResponse for `req.tx_id`.
    Transport failures and timeouts never raise; they synthesize a local
    TEE-error response so the caller cannot hang.
    """
    deadline = time.monotonic() + timeout_s
    try:
        conn.send_message(req)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return transport_error_response(req.tx_id)
            msg = conn.recv_message(remaining)
            if isinstance(msg, (GetStateRequest, PutStateRequest)):
                conn.send_message(state_handler(msg))
            elif isinstance(msg, InvocationResponse) and msg.tx_id == req.tx_id:
                return msg
            elif isinstance(msg, ErrorMessage) and msg.tx_id == req.tx_id:
                return transport_error_response(req.tx_id, msg.code)
            else:
                raise ProtocolError(f"unexpected {type(msg).__name__} during exchange")
    except (socket.timeout, ConnectionError, OSError):
        return transport_error_response(req.tx_id)
