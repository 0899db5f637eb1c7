"""Walkthrough: a one-peer shielded network executing coffee transactions.

Brings everything up in-process over loopback TCP, runs a handful of
endorse -> order -> commit round trips by hand, then dumps and verifies
the chain.
"""

import tempfile

from shieldchain import keys
from shieldchain.harness import COFFEE_UUID, LocalNetwork, ScenarioConfig
from shieldchain.ledger import dump_chain, verify_chain_dir
from shieldchain.netconfig import derive_seed
from shieldchain.tee import CostModel
from shieldchain.txn import (
    Transaction,
    TransactionProposal,
    read_response,
    write_proposal,
    write_transaction,
)
from shieldchain.wire import Connection, Reader, ServiceMsg, Writer, TX_ID_LEN


def main() -> None:
    # a mild cost model so the demo stays snappy
    cfg = ScenarioConfig(scenario="shielded-local", clients=1, seed=42,
                         cost_model=CostModel(50, 5000, 1500, 30),
                         batch_timeout_ms=5)
    net = LocalNetwork(cfg)
    client_key = keys.signing_key_from_seed(derive_seed(cfg.seed, "client/c0"))

    peer_conn = Connection.dial(net.peers[0].server.address)
    hello = Writer()
    hello.str_field("c0")
    peer_conn.send_frame(ServiceMsg.CLIENT_HELLO, hello.getvalue())
    orderer_conn = Connection.dial(net.orderer_server.address)

    def submit(n: int, function: str, args: tuple) -> bytes:
        tx_id = n.to_bytes(TX_ID_LEN, "big")
        proposal = TransactionProposal(tx_id, COFFEE_UUID, function, args,
                                       "c0").signed(client_key)
        w = Writer()
        write_proposal(w, proposal)
        peer_conn.send_frame(ServiceMsg.PROPOSAL_SUBMIT, w.getvalue())
        msg_type, payload = peer_conn.recv_frame(10)
        assert msg_type == ServiceMsg.PROPOSAL_RESPONSE, "endorsement failed"
        r = Reader(payload)
        resp = read_response(r)
        print(f"  endorsed {function}{args}: message={resp.response_message!r} "
              f"reads={list(resp.readset.entries)} writes={list(resp.writeset.entries)}")

        tx = Transaction(tx_id, proposal, (resp,), resp.readset, resp.writeset)
        tw = Writer()
        write_transaction(tw, tx)
        orderer_conn.send_frame(ServiceMsg.TX_SUBMIT, tw.getvalue())
        assert orderer_conn.recv_frame(10)[0] == ServiceMsg.TX_ACK
        while True:
            note_type, note = peer_conn.recv_frame(10)
            if note_type != ServiceMsg.COMMIT_NOTICE:
                continue
            nr = Reader(note)
            noted, valid, block_no = nr.raw(TX_ID_LEN), nr.boolean(), nr.u64()
            if noted == tx_id:
                print(f"  committed in block {block_no}, valid={valid}")
                return resp.response_message

    try:
        print("recording coffee consumption...")
        submit(1, "record", (b"alice", b"2"))
        submit(2, "record", (b"bob", b"1"))
        submit(3, "record", (b"alice", b"3"))
        print("querying...")
        count = submit(4, "query", (b"alice",))
        print(f"alice has had {count.decode()} coffees")

        ledger = net.peers[0].ledger
        print(f"\nchain height: {ledger.height}")
        for key, value, version in ledger.snapshot().items():
            print(f"  state {key!r} = {value!r} @ block {version.block_height} "
                  f"tx {version.tx_index}")

        with tempfile.TemporaryDirectory() as tmp:
            paths = dump_chain(ledger.chain, tmp)
            print(f"\ndumped {len(paths)} block files; "
                  f"verify_chain_dir -> {verify_chain_dir(tmp)}")
    finally:
        peer_conn.close()
        orderer_conn.close()
        net.close()


if __name__ == "__main__":
    main()
