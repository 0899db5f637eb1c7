"""Single ordering node.

Batches endorsed transactions into numbered, hash-linked blocks in strict
arrival order and pushes them to every registered peer. No consensus: one
orderer, crash-stop. Endorsement checking is deliberately absent here;
that is the peers' job at validation time.
"""

import logging
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass

from .ledger import Block, compute_block_hash, encode_block, GENESIS_PREV_HASH, make_block
from .txn import Transaction, decode_transaction
from .wire import Connection, ProtocolError, ServiceMsg, Writer, TX_ID_LEN

logger = logging.getLogger(__name__)


class SubmitError(Exception):
    pass


@dataclass(frozen=True)
class BatchConfig:
    max_block_txs: int = 10
    batch_timeout_ms: int = 200

    def __post_init__(self) -> None:
        if self.max_block_txs < 1:
            raise ValueError("max_block_txs must be >= 1")
        if self.batch_timeout_ms <= 0:
            raise ValueError("batch_timeout must be positive")


class Orderer:
    """FIFO queue plus block cutting; thread-safe."""

    def __init__(self, batch: BatchConfig | None = None) -> None:
        self.batch = batch or BatchConfig()
        self._lock = threading.Lock()
        self._queue: deque[tuple[Transaction, float]] = deque()
        self._seen: set[bytes] = set()
        self._next_number = 0
        self._prev_hash = GENESIS_PREV_HASH

    def submit(self, tx: Transaction) -> None:
        """Enqueue in arrival order. Rejects duplicates so no transaction
        can ever land in two blocks."""
        if len(tx.tx_id) != TX_ID_LEN:
            raise SubmitError("malformed tx_id")
        with self._lock:
            if tx.tx_id in self._seen:
                raise SubmitError("duplicate tx_id")
            self._seen.add(tx.tx_id)
            self._queue.append((tx, time.monotonic()))

    def queue_length(self) -> int:
        with self._lock:
            return len(self._queue)

    def _cut_ready(self) -> bool:
        if not self._queue:
            return False
        if len(self._queue) >= self.batch.max_block_txs:
            return True
        oldest = self._queue[0][1]
        return (time.monotonic() - oldest) * 1000 >= self.batch.batch_timeout_ms

    def cut_block(self) -> Block | None:
        """Cut the next block if the queue is full enough or old enough."""
        with self._lock:
            if not self._cut_ready():
                return None
            txs = []
            while self._queue and len(txs) < self.batch.max_block_txs:
                txs.append(self._queue.popleft()[0])
            block = make_block(self._next_number, self._prev_hash, tuple(txs))
            self._next_number += 1
            self._prev_hash = compute_block_hash(block.header)
            return block

    def time_until_cut_s(self) -> float | None:
        """Seconds until the timeout condition fires, None if queue empty."""
        with self._lock:
            if not self._queue:
                return None
            if len(self._queue) >= self.batch.max_block_txs:
                return 0.0
            oldest = self._queue[0][1]
            remaining = self.batch.batch_timeout_ms / 1000 - (time.monotonic() - oldest)
            return max(0.0, remaining)


class _DeliveryWorker:
    """Per-peer push channel with bounded-backoff reconnects."""

    MAX_ATTEMPTS = 100
    BACKOFF_S = 0.05
    BACKOFF_CAP_S = 0.5

    def __init__(self, peer_address: tuple[str, int]) -> None:
        self.peer_address = peer_address
        self._queue: deque[bytes] = deque()
        self._cond = threading.Condition()
        self._conn: Connection | None = None
        self._closing = False
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def enqueue(self, block_bytes: bytes) -> None:
        with self._cond:
            self._queue.append(block_bytes)
            self._cond.notify()

    def close(self) -> None:
        with self._cond:
            self._closing = True
            self._cond.notify()
        if self._conn is not None:
            self._conn.close()

    def _connect(self) -> Connection:
        conn = Connection.dial(self.peer_address)
        conn.send_frame(ServiceMsg.ORDERER_HELLO, b"")
        return conn

    def _run(self) -> None:
        while True:
            with self._cond:
                while not self._queue and not self._closing:
                    self._cond.wait()
                if self._closing:
                    return
                data = self._queue[0]
            if self._send_with_retry(data):
                with self._cond:
                    self._queue.popleft()
            else:
                logger.error("giving up delivering block to %s", self.peer_address)
                with self._cond:
                    self._queue.popleft()

    def _send_with_retry(self, data: bytes) -> bool:
        for attempt in range(self.MAX_ATTEMPTS):
            if self._closing:
                return False
            try:
                if self._conn is None:
                    self._conn = self._connect()
                self._conn.send_frame(ServiceMsg.BLOCK_DELIVER, data)
                return True
            except (ConnectionError, OSError) as exc:
                if self._conn is not None:
                    self._conn.close()
                    self._conn = None
                backoff = min(self.BACKOFF_S * (attempt + 1), self.BACKOFF_CAP_S)
                if attempt % 10 == 0:
                    logger.warning("delivery to %s failed (%s), retrying",
                                   self.peer_address, exc)
                time.sleep(backoff)
        return False


class OrdererServer:
    """Submission endpoint plus the sequencer that cuts and disseminates."""

    def __init__(self, orderer: Orderer, peer_addresses: list[tuple[str, int]],
                 listen: tuple[str, int] = ("127.0.0.1", 0)) -> None:
        self.orderer = orderer
        self._listen = listen
        self._listener: socket.socket | None = None
        self._closing = False
        self._workers = [_DeliveryWorker(addr) for addr in peer_addresses]
        self._wake = threading.Event()
        self._conns: list[Connection] = []
        self._lock = threading.Lock()

    def start(self) -> tuple[str, int]:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(self._listen)
        self._listener.listen(64)
        threading.Thread(target=self._accept_loop, daemon=True).start()
        threading.Thread(target=self._sequencer, daemon=True).start()
        return self.address

    @property
    def address(self) -> tuple[str, int]:
        assert self._listener is not None
        return self._listener.getsockname()

    def close(self) -> None:
        self._closing = True
        self._wake.set()
        if self._listener is not None:
            self._listener.close()
        for worker in self._workers:
            worker.close()
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            conn.close()

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            conn = Connection(sock)
            with self._lock:
                self._conns.append(conn)
            threading.Thread(target=self._submit_loop, args=(conn,), daemon=True).start()

    def _submit_loop(self, conn: Connection) -> None:
        try:
            while True:
                msg_type, payload = conn.recv_frame(None)
                if msg_type != ServiceMsg.TX_SUBMIT:
                    raise ProtocolError(f"unexpected frame {msg_type:#04x}")
                try:
                    tx = decode_transaction(payload)
                    self.orderer.submit(tx)
                except (ProtocolError, SubmitError, ValueError) as exc:
                    w = Writer()
                    w.str_field("submit")
                    w.str_field(str(exc))
                    conn.send_frame(ServiceMsg.SERVICE_ERROR, w.getvalue())
                    continue
                conn.send_frame(ServiceMsg.TX_ACK, tx.tx_id)
                self._wake.set()
        except (ConnectionError, OSError, ProtocolError):
            pass
        finally:
            conn.close()
            with self._lock:
                if conn in self._conns:
                    self._conns.remove(conn)

    def _sequencer(self) -> None:
        while not self._closing:
            block = self.orderer.cut_block()
            if block is not None:
                data = encode_block(block)
                for worker in self._workers:
                    worker.enqueue(data)
                continue
            wait = self.orderer.time_until_cut_s()
            self._wake.wait(timeout=0.02 if wait is None else min(wait + 0.001, 0.02))
            self._wake.clear()
