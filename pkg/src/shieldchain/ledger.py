"""Hash-chained block store and the versioned world state.

The ledger has two halves: an append-only chain of blocks linked by header
digests, and a world state mapping keys to (value, version) where version
is the commit coordinate of the last write. Validation walks a block in
order and accepts a transaction only if every readset entry still matches
the running state (multi-version concurrency control).
"""

import hashlib
import os
import re
import struct
import threading
from dataclasses import dataclass

from .rwset import ReadSet, Version, WriteSet  # noqa: F401  (re-exported)
from .txn import Transaction, read_transaction, write_transaction
from .wire import DIGEST_LEN, Reader, Writer, ProtocolError

GENESIS_PREV_HASH = b"\x00" * DIGEST_LEN


class ChainIntegrityError(Exception):
    """Appended block does not extend the current tip."""


class StructuralError(Exception):
    """Mismatched lengths or otherwise malformed commit input."""


@dataclass(frozen=True)
class BlockHeader:
    number: int
    prev_hash: bytes
    data_hash: bytes


@dataclass
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]
    # Per-tx validity, filled at commit. Not part of the canonical block
    # bytes: the orderer fixes the hash chain before peers validate.
    validity: tuple[bool, ...] | None = None


def encode_header(header: BlockHeader) -> bytes:
    """72 canonical bytes: u64 number, 32-byte prev hash, 32-byte data hash."""
    return (
        struct.pack(">Q", header.number)
        + header.prev_hash
        + header.data_hash
    )


def compute_block_hash(header: BlockHeader) -> bytes:
    return hashlib.sha256(encode_header(header)).digest()


def transactions_digest(transactions: tuple[Transaction, ...]) -> bytes:
    w = Writer()
    w.u32(len(transactions))
    for tx in transactions:
        write_transaction(w, tx)
    return hashlib.sha256(w.getvalue()).digest()


def make_block(number: int, prev_hash: bytes,
               transactions: tuple[Transaction, ...]) -> Block:
    header = BlockHeader(number, prev_hash, transactions_digest(transactions))
    return Block(header, transactions)


def encode_block(block: Block) -> bytes:
    w = Writer()
    w.u64(block.header.number)
    w.raw(block.header.prev_hash, DIGEST_LEN)
    w.raw(block.header.data_hash, DIGEST_LEN)
    w.u32(len(block.transactions))
    for tx in block.transactions:
        write_transaction(w, tx)
    return w.getvalue()


def decode_block(data: bytes) -> Block:
    r = Reader(data)
    number = r.u64()
    prev_hash = r.raw(DIGEST_LEN)
    data_hash = r.raw(DIGEST_LEN)
    transactions = tuple(read_transaction(r) for _ in range(r.u32()))
    r.finish()
    return Block(BlockHeader(number, prev_hash, data_hash), transactions)


class WorldState:
    """Committed key/value map with per-key versions. Reads are lock-free
    on an immutable snapshot discipline: mutation happens only through
    `with_updates`, which returns a fresh instance.

    This is the default store; validation and commit only rely on the
    get_state/with_updates/items surface, so a different backend can stand
    in behind the same methods."""

    def __init__(self, store: dict[str, tuple[bytes, Version]] | None = None) -> None:
        self._store = dict(store) if store else {}

    def get_state(self, key: str) -> tuple[bytes, Version] | None:
        """Committed (value, version), or None if the key is absent."""
        return self._store.get(key)

    def items(self) -> list[tuple[str, bytes, Version]]:
        return [(k, v, ver) for k, (v, ver) in sorted(self._store.items())]

    def copy(self) -> "WorldState":
        return WorldState(self._store)

    def __len__(self) -> int:
        return len(self._store)

    def with_updates(self, updates: dict[str, tuple[bytes, Version] | None]) -> "WorldState":
        store = dict(self._store)
        for key, entry in updates.items():
            if entry is None:
                store.pop(key, None)
            else:
                store[key] = entry
        return WorldState(store)

    def encode(self) -> bytes:
        w = Writer()
        w.u32(len(self._store))
        for key, value, version in self.items():
            w.str_field(key)
            w.bytes_field(value)
            w.u64(version.block_height)
            w.u32(version.tx_index)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "WorldState":
        r = Reader(data)
        store = {}
        for _ in range(r.u32()):
            key = r.str_field()
            value = r.bytes_field()
            store[key] = (value, Version(r.u64(), r.u32()))
        r.finish()
        return cls(store)

    def digest(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()

    def save(self, path: str) -> None:
        with open(path, "wb") as f:
            f.write(self.encode())

    @classmethod
    def load(cls, path: str) -> "WorldState":
        with open(path, "rb") as f:
            return cls.decode(f.read())


def _writeset_updates(writeset: WriteSet, number: int, tx_index: int
                      ) -> dict[str, tuple[bytes, Version] | None]:
    updates: dict[str, tuple[bytes, Version] | None] = {}
    for key, value, is_delete in writeset.entries:
        updates[key] = None if is_delete else (value, Version(number, tx_index))
    return updates


def mvcc_validate(block: Block, state: WorldState,
                  eligible: list[bool] | None = None) -> list[bool]:
    """Per-transaction validity flags for `block` against `state`.

    Transactions are checked in block order; a valid transaction's writes
    become visible to the checks of later transactions in the same block.
    `eligible` masks transactions already rejected upstream (endorsement
    policy failures): they are flagged False and apply nothing. The input
    state is not mutated.
    """
    if eligible is not None and len(eligible) != len(block.transactions):
        raise StructuralError("eligibility mask length mismatch")
    overlay: dict[str, tuple[bytes, Version] | None] = {}

    def current(key: str) -> tuple[bytes, Version] | None:
        if key in overlay:
            return overlay[key]
        return state.get_state(key)

    flags = []
    for index, tx in enumerate(block.transactions):
        if eligible is not None and not eligible[index]:
            flags.append(False)
            continue
        ok = True
        for key, read_version in tx.readset.entries:
            entry = current(key)
            seen = entry[1] if entry is not None else None
            if seen != read_version:
                ok = False
                break
        if ok:
            overlay.update(_writeset_updates(tx.writeset, block.header.number, index))
        flags.append(ok)
    return flags


def apply_block(block: Block, flags: list[bool], state: WorldState) -> WorldState:
    """World state after committing the valid transactions of `block`."""
    if len(flags) != len(block.transactions):
        raise StructuralError("validity flag length mismatch")
    updates: dict[str, tuple[bytes, Version] | None] = {}
    for index, (tx, ok) in enumerate(zip(block.transactions, flags)):
        if ok:
            updates.update(_writeset_updates(tx.writeset, block.header.number, index))
    return state.with_updates(updates)


class Blockchain:
    """Ordered block store; append checks the hash link and numbering."""

    def __init__(self) -> None:
        self.blocks: list[Block] = []

    @property
    def height(self) -> int:
        return len(self.blocks)

    def tip_hash(self) -> bytes:
        if not self.blocks:
            return GENESIS_PREV_HASH
        return compute_block_hash(self.blocks[-1].header)

    def append_block(self, block: Block) -> None:
        if block.header.number != len(self.blocks):
            raise ChainIntegrityError(
                f"expected block {len(self.blocks)}, got {block.header.number}")
        if block.header.prev_hash != self.tip_hash():
            raise ChainIntegrityError("prev_hash does not match chain tip")
        self.blocks.append(block)


def verify_chain(chain: Blockchain | list[Block]) -> bool:
    """True iff numbering, hash links and data digests all check out."""
    blocks = chain.blocks if isinstance(chain, Blockchain) else chain
    prev = GENESIS_PREV_HASH
    for number, block in enumerate(blocks):
        if block.header.number != number:
            return False
        if block.header.prev_hash != prev:
            return False
        if block.header.data_hash != transactions_digest(block.transactions):
            return False
        prev = compute_block_hash(block.header)
    return True


class Ledger:
    """Chain plus world state behind a single-writer commit path.

    Reads return immutable snapshots and may run concurrently; commits are
    serialized and swap the state reference atomically, so a reader never
    observes a half-applied block.
    """

    def __init__(self) -> None:
        self.chain = Blockchain()
        self._state = WorldState()
        self._lock = threading.Lock()

    def get_state(self, key: str) -> tuple[bytes, Version] | None:
        return self._state.get_state(key)

    def snapshot(self) -> WorldState:
        return self._state

    def state_digest(self) -> bytes:
        return self._state.digest()

    @property
    def height(self) -> int:
        return self.chain.height

    def tip_hash(self) -> bytes:
        return self.chain.tip_hash()

    def commit(self, block: Block, flags: list[bool]) -> None:
        with self._lock:
            new_state = apply_block(block, flags, self._state)
            block.validity = tuple(flags)
            self.chain.append_block(block)
            self._state = new_state


# --- chain dump -------------------------------------------------------------

_BLOCK_FILE = re.compile(r"block_(\d+)\.bin$")


def dump_chain(chain: Blockchain | list[Block], directory: str) -> list[str]:
    """Write one `block_<number>.bin` per block; returns the paths."""
    blocks = chain.blocks if isinstance(chain, Blockchain) else chain
    os.makedirs(directory, exist_ok=True)
    paths = []
    for block in blocks:
        path = os.path.join(directory, f"block_{block.header.number}.bin")
        with open(path, "wb") as f:
            f.write(encode_block(block))
        paths.append(path)
    return paths


def load_chain(directory: str) -> list[Block]:
    numbered = []
    for name in os.listdir(directory):
        m = _BLOCK_FILE.match(name)
        if m:
            numbered.append((int(m.group(1)), name))
    blocks = []
    for _, name in sorted(numbered):
        with open(os.path.join(directory, name), "rb") as f:
            blocks.append(decode_block(f.read()))
    return blocks


def verify_chain_dir(directory: str) -> bool:
    """Strict dump check: every file must decode, re-encode to identical
    bytes, and the decoded chain must verify."""
    numbered = []
    for name in os.listdir(directory):
        m = _BLOCK_FILE.match(name)
        if m:
            numbered.append((int(m.group(1)), name))
    blocks = []
    for _, name in sorted(numbered):
        with open(os.path.join(directory, name), "rb") as f:
            data = f.read()
        try:
            block = decode_block(data)
        except (ProtocolError, ValueError):
            return False
        if encode_block(block) != data:
            return False
        blocks.append(block)
    return verify_chain(blocks)
