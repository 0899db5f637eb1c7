"""Endorsing and committing node.

A peer executes proposals through its wrapper (never touching committed
state), signs the resulting response, and at commit time checks both the
endorsement policy and MVCC read conflicts before applying a delivered
block. Commits are strictly serialized; endorsements may run concurrently.
"""

import logging
import socket
import threading
from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from . import keys
from .ledger import Block, ChainIntegrityError, Ledger, decode_block, mvcc_validate
from .phases import WrapperPhases
from .txn import (
    Transaction,
    TransactionProposal,
    TransactionResponse,
    read_proposal,
    write_response,
)
from .wire import (
    Connection,
    Reader,
    ServiceMsg,
    Writer,
    ProtocolError,
    TX_ID_LEN,
)
from .wrapper import EndorsementError, Wrapper

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EndorsementPolicy:
    """k-of-N over an explicit set of eligible peer ids."""

    required: frozenset[str]
    threshold: int

    def __post_init__(self) -> None:
        if not (1 <= self.threshold <= len(self.required)):
            raise ValueError("threshold must satisfy 1 <= k <= |required|")


class PeerIdentity:
    def __init__(self, peer_id: str, signing_key: Ed25519PrivateKey) -> None:
        self.peer_id = peer_id
        self.signing_key = signing_key
        self.public_key = keys.public_bytes(signing_key)

    @classmethod
    def from_seed(cls, peer_id: str, seed: bytes) -> "PeerIdentity":
        return cls(peer_id, keys.signing_key_from_seed(seed))


def verify_endorsements(tx: Transaction, policy: EndorsementPolicy,
                        peer_keys: dict[str, bytes]) -> bool:
    """Policy check: at least k valid signatures from distinct eligible
    peers, and byte-identical (message, readset, writeset) across all
    responses and the transaction's own agreed payload."""
    if not tx.responses:
        return False
    agreed = (tx.responses[0].response_message, tx.responses[0].readset,
              tx.responses[0].writeset)
    if (tx.readset, tx.writeset) != (agreed[1], agreed[2]):
        return False
    signers: set[str] = set()
    for resp in tx.responses:
        if resp.tx_id != tx.tx_id:
            return False
        if (resp.response_message, resp.readset, resp.writeset) != agreed:
            return False
        public = peer_keys.get(resp.peer_id)
        if public is None or not resp.verify(public):
            return False
        if resp.peer_id in policy.required:
            signers.add(resp.peer_id)
    return len(signers) >= policy.threshold


class Peer:
    def __init__(self, identity: PeerIdentity, wrapper: Wrapper, ledger: Ledger,
                 policy: EndorsementPolicy, peer_keys: dict[str, bytes],
                 client_keys: dict[str, bytes]) -> None:
        self.identity = identity
        self.wrapper = wrapper
        self.ledger = ledger
        self.policy = policy
        self.peer_keys = peer_keys
        self.client_keys = client_keys
        self._commit_lock = threading.Lock()
        self._commit_listeners: list = []
        # wrapper-side phase records per endorsed tx, for the harness;
        # bounded so standing networks do not grow without limit
        self.phase_sink: dict[bytes, WrapperPhases] = {}
        self._phase_sink_cap = 100_000

    def add_commit_listener(self, fn) -> None:
        """fn(block_number, tx, valid) is called for every committed tx."""
        self._commit_listeners.append(fn)

    def endorse(self, proposal: TransactionProposal) -> TransactionResponse:
        """Execute a proposal and sign the result; state is not modified."""
        client_key = self.client_keys.get(proposal.client_id)
        if client_key is None or not proposal.verify(client_key):
            raise EndorsementError("bad client signature")
        message, readset, writeset, phases = self.wrapper.forward_invocation(
            proposal.tx_id, proposal.chaincode_uuid, proposal.function,
            proposal.args)
        self.phase_sink[proposal.tx_id] = phases
        while len(self.phase_sink) > self._phase_sink_cap:
            self.phase_sink.pop(next(iter(self.phase_sink)))
        resp = TransactionResponse(proposal.tx_id, message, readset, writeset,
                                   self.identity.peer_id)
        return resp.signed(self.identity.signing_key)

    def validate_and_commit(self, block: Block) -> list[bool]:
        """Validation phase: endorsement policy AND MVCC, then commit.

        Policy-failed transactions are masked out of MVCC so their writes
        never shadow later reads. Chain-linkage failures reject the whole
        block and change nothing.
        """
        with self._commit_lock:
            policy_flags = [
                verify_endorsements(tx, self.policy, self.peer_keys)
                for tx in block.transactions
            ]
            flags = mvcc_validate(block, self.ledger.snapshot(), eligible=policy_flags)
            self.ledger.commit(block, flags)
        for index, tx in enumerate(block.transactions):
            for fn in self._commit_listeners:
                fn(block.header.number, tx, flags[index])
        return flags


class PeerServer:
    """Frame endpoint: client proposals in, orderer deliveries in,
    commit notices out."""

    def __init__(self, peer: Peer, listen: tuple[str, int] = ("127.0.0.1", 0)) -> None:
        self.peer = peer
        self._listen = listen
        self._listener: socket.socket | None = None
        self._closing = False
        self._lock = threading.Lock()
        self._client_conns: dict[str, Connection] = {}
        self._conns: list[Connection] = []
        peer.add_commit_listener(self._notify_commit)

    def start(self) -> tuple[str, int]:
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(self._listen)
        self._listener.listen(64)
        threading.Thread(target=self._accept_loop, daemon=True).start()
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
                sock, _ = self._listener.accept()
            except OSError:
                return
            conn = Connection(sock)
            with self._lock:
                self._conns.append(conn)
            threading.Thread(target=self._conn_loop, args=(conn,), daemon=True).start()

    def _conn_loop(self, conn: Connection) -> None:
        client_id = None
        try:
            msg_type, payload = conn.recv_frame(None)
            if msg_type == ServiceMsg.CLIENT_HELLO:
                r = Reader(payload)
                client_id = r.str_field()
                r.finish()
                with self._lock:
                    self._client_conns[client_id] = conn
                self._client_loop(conn, client_id)
            elif msg_type == ServiceMsg.ORDERER_HELLO:
                self._orderer_loop(conn)
            else:
                raise ProtocolError(f"expected hello, got {msg_type:#04x}")
        except (ConnectionError, OSError, socket.timeout):
            pass
        except ProtocolError as exc:
            logger.warning("peer %s: bad connection: %s",
                           self.peer.identity.peer_id, exc)
        finally:
            if client_id is not None:
                with self._lock:
                    if self._client_conns.get(client_id) is conn:
                        del self._client_conns[client_id]
            conn.close()
            with self._lock:
                if conn in self._conns:
                    self._conns.remove(conn)

    def _client_loop(self, conn: Connection, client_id: str) -> None:
        while True:
            msg_type, payload = conn.recv_frame(None)
            if msg_type != ServiceMsg.PROPOSAL_SUBMIT:
                raise ProtocolError(f"unexpected frame {msg_type:#04x} from client")
            try:
                r = Reader(payload)
                proposal = read_proposal(r)
                r.finish()
                response = self.peer.endorse(proposal)
            except (ProtocolError, EndorsementError) as exc:
                w = Writer()
                w.str_field("endorsement")
                w.str_field(str(exc))
                conn.send_frame(ServiceMsg.SERVICE_ERROR, w.getvalue())
                continue
            w = Writer()
            write_response(w, response)
            conn.send_frame(ServiceMsg.PROPOSAL_RESPONSE, w.getvalue())

    def _orderer_loop(self, conn: Connection) -> None:
        while True:
            msg_type, payload = conn.recv_frame(None)
            if msg_type != ServiceMsg.BLOCK_DELIVER:
                raise ProtocolError(f"unexpected frame {msg_type:#04x} from orderer")
            block = decode_block(payload)
            try:
                self.peer.validate_and_commit(block)
            except ChainIntegrityError as exc:
                logger.error("peer %s rejected block %d: %s",
                             self.peer.identity.peer_id, block.header.number, exc)

    def _notify_commit(self, block_number: int, tx: Transaction, valid: bool) -> None:
        with self._lock:
            conn = self._client_conns.get(tx.proposal.client_id)
        if conn is None:
            return
        w = Writer()
        w.raw(tx.tx_id, TX_ID_LEN)
        w.boolean(valid)
        w.u64(block_number)
        try:
            conn.send_frame(ServiceMsg.COMMIT_NOTICE, w.getvalue())
        except (ConnectionError, OSError):
            pass
