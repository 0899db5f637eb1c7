"""Key versions and the read/write-sets produced by endorsement.

A key's version is the (block height, tx index) coordinate of the commit
that last wrote it. An absent key has no version; code represents that
case as ``None``, never as Version(0, 0).
"""

from dataclasses import dataclass, field


@dataclass(frozen=True, order=True)
class Version:
    """Commit coordinate of a world-state entry. Totally ordered."""

    block_height: int
    tx_index: int

    def __post_init__(self) -> None:
        if self.block_height < 0 or self.tx_index < 0:
            raise ValueError("version components must be non-negative")


@dataclass(frozen=True)
class ReadSet:
    """Keys read during execution, with the version seen (None = absent).

    Keys are unique; order is first-read order.
    """

    entries: tuple[tuple[str, Version | None], ...] = ()

    def keys(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.entries)


@dataclass(frozen=True)
class WriteSet:
    """Buffered updates: (key, value, is_delete). Keys unique, last put wins."""

    entries: tuple[tuple[str, bytes, bool], ...] = ()

    def keys(self) -> tuple[str, ...]:
        return tuple(k for k, _, _ in self.entries)


@dataclass
class RwTracker:
    """Accumulates the read/write-sets of one in-flight invocation.

    Both ends of the offload channel run one of these: the wrapper's copy is
    authoritative, the proxy's copy produces the echoed sets that the wrapper
    cross-checks. The rules are:

    * a get of a key present in the write buffer touches the readset not at
      all (read-your-own-write);
    * only the first get of any other key appends a readset entry;
    * puts upsert the write buffer; a delete leaves a single entry with
      is_delete=True and empty value.
    """

    _reads: list[tuple[str, Version | None]] = field(default_factory=list)
    _read_keys: set[str] = field(default_factory=set)
    _writes: dict[str, tuple[bytes, bool]] = field(default_factory=dict)
    _write_order: list[str] = field(default_factory=list)

    def buffered(self, key: str) -> tuple[bytes, bool] | None:
        """Return (value, is_delete) if `key` has a buffered write."""
        return self._writes.get(key)

    def note_get(self, key: str, version: Version | None) -> None:
        """Record a get served from committed state (not from the buffer)."""
        if key in self._writes or key in self._read_keys:
            return
        self._read_keys.add(key)
        self._reads.append((key, version))

    def note_put(self, key: str, value: bytes, is_delete: bool) -> None:
        if is_delete:
            value = b""
        if key not in self._writes:
            self._write_order.append(key)
        self._writes[key] = (value, is_delete)

    def readset(self) -> ReadSet:
        return ReadSet(tuple(self._reads))

    def writeset(self) -> WriteSet:
        return WriteSet(
            tuple((k, *self._writes[k]) for k in self._write_order)
        )
