"""Transaction proposals, endorsement responses and assembled transactions.

The canonical encodings here feed block digests and signatures, so field
order and widths follow the wire rules exactly.
"""

import os
from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from . import keys
from .rwset import ReadSet, WriteSet
from .wire import Reader, Writer, TX_ID_LEN, UUID_LEN


def new_tx_id() -> bytes:
    return os.urandom(TX_ID_LEN)


@dataclass(frozen=True)
class TransactionProposal:
    tx_id: bytes
    chaincode_uuid: bytes
    function: str
    args: tuple[bytes, ...]
    client_id: str
    client_signature: bytes = b""

    def signing_payload(self) -> bytes:
        w = Writer()
        w.raw(self.tx_id, TX_ID_LEN)
        w.raw(self.chaincode_uuid, UUID_LEN)
        w.str_field(self.function)
        w.u32(len(self.args))
        for a in self.args:
            w.bytes_field(a)
        w.str_field(self.client_id)
        return w.getvalue()

    def signed(self, key: Ed25519PrivateKey) -> "TransactionProposal":
        return TransactionProposal(
            self.tx_id, self.chaincode_uuid, self.function, self.args,
            self.client_id, keys.sign(key, self.signing_payload()),
        )

    def verify(self, client_public_key: bytes) -> bool:
        return keys.verify(client_public_key, self.client_signature, self.signing_payload())


@dataclass(frozen=True)
class TransactionResponse:
    tx_id: bytes
    response_message: bytes
    readset: ReadSet
    writeset: WriteSet
    peer_id: str
    peer_signature: bytes = b""

    def signing_payload(self) -> bytes:
        w = Writer()
        w.raw(self.tx_id, TX_ID_LEN)
        w.bytes_field(self.response_message)
        w.readset(self.readset)
        w.writeset(self.writeset)
        return w.getvalue()

    def signed(self, key: Ed25519PrivateKey) -> "TransactionResponse":
        return TransactionResponse(
            self.tx_id, self.response_message, self.readset, self.writeset,
            self.peer_id, keys.sign(key, self.signing_payload()),
        )

    def verify(self, peer_public_key: bytes) -> bool:
        return keys.verify(peer_public_key, self.peer_signature, self.signing_payload())


@dataclass(frozen=True)
class Transaction:
    """An endorsed transaction as submitted to the ordering service.

    All responses must agree on (response_message, readset, writeset); the
    top-level readset/writeset are that agreed payload.
    """

    tx_id: bytes
    proposal: TransactionProposal
    responses: tuple[TransactionResponse, ...]
    readset: ReadSet
    writeset: WriteSet


# --- canonical encodings ----------------------------------------------------


def write_proposal(w: Writer, p: TransactionProposal) -> None:
    w.raw(p.tx_id, TX_ID_LEN)
    w.raw(p.chaincode_uuid, UUID_LEN)
    w.str_field(p.function)
    w.u32(len(p.args))
    for a in p.args:
        w.bytes_field(a)
    w.str_field(p.client_id)
    w.bytes_field(p.client_signature)


def read_proposal(r: Reader) -> TransactionProposal:
    tx_id = r.raw(TX_ID_LEN)
    uuid = r.raw(UUID_LEN)
    function = r.str_field()
    args = tuple(r.bytes_field() for _ in range(r.u32()))
    client_id = r.str_field()
    return TransactionProposal(tx_id, uuid, function, args, client_id, r.bytes_field())


def write_response(w: Writer, resp: TransactionResponse) -> None:
    w.raw(resp.tx_id, TX_ID_LEN)
    w.bytes_field(resp.response_message)
    w.readset(resp.readset)
    w.writeset(resp.writeset)
    w.str_field(resp.peer_id)
    w.bytes_field(resp.peer_signature)


def read_response(r: Reader) -> TransactionResponse:
    tx_id = r.raw(TX_ID_LEN)
    message = r.bytes_field()
    readset = r.readset()
    writeset = r.writeset()
    peer_id = r.str_field()
    return TransactionResponse(tx_id, message, readset, writeset, peer_id, r.bytes_field())


def write_transaction(w: Writer, tx: Transaction) -> None:
    w.raw(tx.tx_id, TX_ID_LEN)
    write_proposal(w, tx.proposal)
    w.u32(len(tx.responses))
    for resp in tx.responses:
        write_response(w, resp)
    w.readset(tx.readset)
    w.writeset(tx.writeset)


def read_transaction(r: Reader) -> Transaction:
    tx_id = r.raw(TX_ID_LEN)
    proposal = read_proposal(r)
    responses = tuple(read_response(r) for _ in range(r.u32()))
    return Transaction(tx_id, proposal, responses, r.readset(), r.writeset())


def encode_transaction(tx: Transaction) -> bytes:
    w = Writer()
    write_transaction(w, tx)
    return w.getvalue()


def decode_transaction(data: bytes) -> Transaction:
    r = Reader(data)
    tx = read_transaction(r)
    r.finish()
    return tx
