"""Deterministic identities and the key=value network description file.

All long-lived key material at desk scale derives from one master seed,
so a single integer in the config reproduces the whole network.
"""

import hashlib
from dataclasses import dataclass, field

from . import keys
from .peer import EndorsementPolicy
from .tee import CostModel


def derive_seed(master_seed: int, label: str) -> bytes:
    return hashlib.sha256(f"{master_seed}/{label}".encode("utf-8")).digest()


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"bad address {text!r}, expected host:port")
    return host, int(port)


def format_address(addr: tuple[str, int]) -> str:
    return f"{addr[0]}:{addr[1]}"


@dataclass
class NetworkDescription:
    seed: int = 0
    peer_ids: list[str] = field(default_factory=lambda: ["p0"])
    client_ids: list[str] = field(default_factory=lambda: ["c0"])
    threshold: int = 1
    orderer_listen: tuple[str, int] = ("127.0.0.1", 7050)
    peer_listen: dict[str, tuple[str, int]] = field(default_factory=dict)
    proxy_listen: dict[str, tuple[str, int]] = field(default_factory=dict)
    trusted_threads: int = 4
    session_cache: bool = False
    max_block_txs: int = 10
    batch_timeout_ms: int = 200
    cost: CostModel = field(default_factory=CostModel)

    def peer_signing_seed(self, peer_id: str) -> bytes:
        return derive_seed(self.seed, f"peer/{peer_id}")

    def client_signing_seed(self, client_id: str) -> bytes:
        return derive_seed(self.seed, f"client/{client_id}")

    def build_signing_seed(self) -> bytes:
        return derive_seed(self.seed, "build")

    def ta_encryption_key(self) -> bytes:
        return derive_seed(self.seed, "ta-encryption")

    def build_public_key(self) -> bytes:
        return keys.public_bytes(keys.signing_key_from_seed(self.build_signing_seed()))

    def peer_keys(self) -> dict[str, bytes]:
        return {
            pid: keys.public_bytes(keys.signing_key_from_seed(self.peer_signing_seed(pid)))
            for pid in self.peer_ids
        }

    def client_keys(self) -> dict[str, bytes]:
        return {
            cid: keys.public_bytes(keys.signing_key_from_seed(self.client_signing_seed(cid)))
            for cid in self.client_ids
        }

    def policy(self) -> EndorsementPolicy:
        return EndorsementPolicy(frozenset(self.peer_ids), self.threshold)


def default_description(peers: int = 1, clients: int = 1, seed: int = 0,
                        base_port: int = 7050) -> NetworkDescription:
    desc = NetworkDescription(
        seed=seed,
        peer_ids=[f"p{i}" for i in range(peers)],
        client_ids=[f"c{i}" for i in range(clients)],
        orderer_listen=("127.0.0.1", base_port),
    )
    for i, pid in enumerate(desc.peer_ids):
        desc.peer_listen[pid] = ("127.0.0.1", base_port + 1 + i)
        desc.proxy_listen[pid] = ("127.0.0.1", base_port + 101 + i)
    return desc


_COST_FIELDS = ("world_switch_us", "open_session_us", "close_session_us",
                "per_kib_copy_us")


def parse_cost_spec(text: str, base: CostModel | None = None) -> CostModel:
    """Parse 'world_switch_us=150,open_session_us=48000,...' overrides."""
    values = {f: getattr(base or CostModel(), f) for f in _COST_FIELDS}
    if text.strip():
        for item in text.split(","):
            name, sep, raw = item.partition("=")
            name = name.strip()
            if not sep or name not in _COST_FIELDS:
                raise ValueError(f"bad cost item {item!r}")
            values[name] = int(raw)
    return CostModel(**values)


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"bad boolean {raw!r}")


def parse_network_file(path: str) -> NetworkDescription:
    desc = NetworkDescription(peer_ids=[], client_ids=[])
    cost = {f: getattr(CostModel(), f) for f in _COST_FIELDS}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, raw = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, raw = key.strip(), raw.strip()
            if key == "seed":
                desc.seed = int(raw)
            elif key == "peers":
                desc.peer_ids = [p.strip() for p in raw.split(",") if p.strip()]
            elif key == "clients":
                desc.client_ids = [c.strip() for c in raw.split(",") if c.strip()]
            elif key == "policy_threshold":
                desc.threshold = int(raw)
            elif key == "orderer_listen":
                desc.orderer_listen = parse_address(raw)
            elif key.startswith("peer_listen."):
                desc.peer_listen[key.split(".", 1)[1]] = parse_address(raw)
            elif key.startswith("proxy_listen."):
                desc.proxy_listen[key.split(".", 1)[1]] = parse_address(raw)
            elif key == "trusted_threads":
                desc.trusted_threads = int(raw)
            elif key == "session_cache":
                desc.session_cache = _parse_bool(raw)
            elif key == "max_block_txs":
                desc.max_block_txs = int(raw)
            elif key == "batch_timeout_ms":
                desc.batch_timeout_ms = int(raw)
            elif key.startswith("cost."):
                name = key.split(".", 1)[1]
                if name not in _COST_FIELDS:
                    raise ValueError(f"{path}:{lineno}: unknown cost field {name!r}")
                cost[name] = int(raw)
            else:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    if not desc.peer_ids:
        raise ValueError(f"{path}: at least one peer required")
    if not desc.client_ids:
        desc.client_ids = ["c0"]
    desc.cost = CostModel(**cost)
    return desc


def format_network_file(desc: NetworkDescription) -> str:
    lines = [
        f"seed={desc.seed}",
        "peers=" + ",".join(desc.peer_ids),
        "clients=" + ",".join(desc.client_ids),
        f"policy_threshold={desc.threshold}",
        f"orderer_listen={format_address(desc.orderer_listen)}",
    ]
    for pid in desc.peer_ids:
        if pid in desc.peer_listen:
            lines.append(f"peer_listen.{pid}={format_address(desc.peer_listen[pid])}")
        if pid in desc.proxy_listen:
            lines.append(f"proxy_listen.{pid}={format_address(desc.proxy_listen[pid])}")
    lines += [
        f"trusted_threads={desc.trusted_threads}",
        f"session_cache={'true' if desc.session_cache else 'false'}",
        f"max_block_txs={desc.max_block_txs}",
        f"batch_timeout_ms={desc.batch_timeout_ms}",
    ]
    for name in _COST_FIELDS:
        lines.append(f"cost.{name}={getattr(desc.cost, name)}")
    return "\n".join(lines) + "\n"
