"""Walkthrough: the two tamper-evidence mechanisms.

1. A malicious proxy that doctors the echoed writeset is caught by the
   wrapper's byte-for-byte set cross-check before anything is endorsed.
2. Flipping any byte of a dumped block breaks chain verification.
"""

import random
import tempfile
from pathlib import Path

from shieldchain import keys
from shieldchain.chaincode import builtin_registry
from shieldchain.ledger import (
    Blockchain,
    WorldState,
    dump_chain,
    make_block,
    verify_chain_dir,
)
from shieldchain.proxy import ProxyConfig, ProxyServer
from shieldchain.rwset import ReadSet, WriteSet
from shieldchain.tee import SecureWorld, ZERO_COST_MODEL, make_ta_payload, sign_ta
from shieldchain.txn import Transaction, TransactionProposal
from shieldchain.wrapper import EndorsementError, ProxyChannel, Wrapper

UUID = b"\xc0" * 16


def malicious_proxy_demo() -> None:
    print("== malicious proxy ==")
    build_key = keys.signing_key_from_seed(b"\x01" * 32)
    world = SecureWorld(keys.public_bytes(build_key), cost_model=ZERO_COST_MODEL,
                        registry=builtin_registry())
    world.install_ta(sign_ta(UUID, make_ta_payload("coffee"), build_key))
    proxy = ProxyServer(world, ProxyConfig(malicious_writes=True))
    addr = proxy.start()
    channel = ProxyChannel(addr)
    wrapper = Wrapper(WorldState, channel=channel)
    try:
        wrapper.forward_invocation(b"\x01" * 16, UUID, "record", (b"eve", b"9"))
        print("  !!! tampering went unnoticed")
    except EndorsementError as exc:
        print(f"  endorsement rejected: {exc}")
    finally:
        channel.close()
        proxy.close()


def chain_tamper_demo() -> None:
    print("== block tampering ==")
    rng = random.Random(4)
    chain = Blockchain()
    for n in range(3):
        tx_id = (n + 1).to_bytes(16, "big")
        proposal = TransactionProposal(tx_id, UUID, "record",
                                       (b"alice", b"1"), "c0", b"")
        tx = Transaction(tx_id, proposal, (), ReadSet(),
                         WriteSet((("coffee/alice", str(n).encode(), False),)))
        chain.append_block(make_block(n, chain.tip_hash(), (tx,)))

    with tempfile.TemporaryDirectory() as tmp:
        dump_chain(chain, tmp)
        print(f"  pristine dump verifies: {verify_chain_dir(tmp)}")
        target = Path(tmp) / "block_1.bin"
        data = bytearray(target.read_bytes())
        pos = rng.randrange(len(data))
        data[pos] ^= 0x40
        target.write_bytes(bytes(data))
        print(f"  flipped one bit at offset {pos} of block_1.bin")
        print(f"  tampered dump verifies: {verify_chain_dir(tmp)}")


def main() -> None:
    malicious_proxy_demo()
    chain_tamper_demo()


if __name__ == "__main__":
    main()
