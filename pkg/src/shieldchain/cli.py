"""Command-line entry points.

Subcommands: `ta sign` / `ta install` for trusted-application images,
`proxy` for a standalone offload host, `bench` / `breakdown` for the
measurement harness and `net up` for a standing network.
"""

import argparse
import logging
import os
import shutil
import sys
import time

from . import keys
from .harness import (
    BreakdownReport,
    ScenarioConfig,
    measure_breakdown,
    run_scenario,
    write_report,
)
from .netconfig import (
    default_description,
    format_network_file,
    parse_address,
    parse_cost_spec,
    parse_network_file,
)
from .phases import PHASE_LETTERS
from .proxy import ProxyConfig, ProxyServer
from .tee import (
    CostModel,
    InstallError,
    SecureWorld,
    decode_ta_image,
    encode_ta_image,
    make_ta_payload,
    sign_ta,
)
from .wire import ProtocolError


def _hex_bytes(text: str, width: int | None = None, what: str = "value") -> bytes:
    data = bytes.fromhex(text.strip())
    if width is not None and len(data) != width:
        raise ValueError(f"{what} must be {width} bytes ({2 * width} hex chars)")
    return data


def _load_seed(arg: str) -> bytes:
    """A 64-hex-char seed, given literally or as a path to a file holding it."""
    if os.path.exists(arg):
        with open(arg, "r", encoding="utf-8") as f:
            arg = f.read()
    return _hex_bytes(arg, 32, "signing seed")


def _cmd_ta_sign(args) -> int:
    uuid = _hex_bytes(args.uuid, 16, "uuid")
    build_key = keys.signing_key_from_seed(_load_seed(args.key))
    config = _hex_bytes(args.config_hex) if args.config_hex else b""
    enc_key = _hex_bytes(args.enc_key, 32, "encryption key") if args.enc_key else None
    if args.encrypt and enc_key is None:
        print("--encrypt requires --enc-key", file=sys.stderr)
        return 2
    image = sign_ta(uuid, make_ta_payload(args.handler, config), build_key,
                    encrypt=args.encrypt, encryption_key=enc_key)
    with open(args.out, "wb") as f:
        f.write(encode_ta_image(image))
    print(f"signed TA {args.uuid} (handler={args.handler}, "
          f"encrypted={args.encrypt}) -> {args.out}")
    return 0


def _cmd_ta_install(args) -> int:
    with open(args.file, "rb") as f:
        data = f.read()
    build_pub = _hex_bytes(args.pubkey, 32, "build public key")
    enc_key = _hex_bytes(args.enc_key, 32, "encryption key") if args.enc_key else None
    world = SecureWorld(build_pub, ta_decryption_key=enc_key)
    try:
        image = decode_ta_image(data)
        world.install_ta(image)
    except (ProtocolError, InstallError, ValueError) as exc:
        print(f"install rejected: {exc}", file=sys.stderr)
        return 1
    if args.store:
        os.makedirs(args.store, exist_ok=True)
        dest = os.path.join(args.store, os.path.basename(args.file))
        shutil.copyfile(args.file, dest)
        print(f"installed TA {image.uuid.hex()} -> {dest}")
    else:
        print(f"installed TA {image.uuid.hex()}")
    return 0


def _cmd_proxy(args) -> int:
    cost = parse_cost_spec(args.cost or "")
    build_pub = _hex_bytes(args.build_pubkey, 32, "build public key")
    enc_key = _hex_bytes(args.enc_key, 32, "encryption key") if args.enc_key else None
    world = SecureWorld(build_pub, cost_model=cost, capacity=args.capacity,
                        ta_decryption_key=enc_key)
    for path in args.ta or []:
        with open(path, "rb") as f:
            world.install_ta(decode_ta_image(f.read()))
        print(f"installed {path}")
    server = ProxyServer(world, ProxyConfig(
        listen=parse_address(args.listen),
        session_cache=args.session_cache,
        malicious_writes=args.malicious_writes))
    addr = server.start()
    print(f"proxy listening on {addr[0]}:{addr[1]} "
          f"(capacity={args.capacity}, session_cache={args.session_cache})")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        server.close()
    return 0


def _scenario_config(args) -> ScenarioConfig:
    return ScenarioConfig(
        scenario=args.scenario,
        clients=args.clients,
        duration_s=args.duration,
        txs_per_client=args.txs_per_client,
        workload=args.workload,
        read_fraction=args.read_fraction,
        peers=args.peers,
        trusted_threads=args.trusted_threads,
        cost_model=parse_cost_spec(args.cost or ""),
        seed=args.seed,
        net_latency_us=args.net_latency_us,
        session_cache=args.session_cache,
        max_block_txs=args.max_block_txs,
        batch_timeout_ms=args.batch_timeout_ms,
    )


def _print_result(result) -> None:
    print(f"scenario={result.scenario} clients={result.clients} "
          f"workload={result.workload}")
    print(f"  committed={result.committed} invalid={result.invalid} "
          f"duration={result.duration_s:.2f}s")
    print(f"  throughput={result.throughput_tps:.2f} tx/s")
    print(f"  latency p50={result.p50_ms:.2f}ms p95={result.p95_ms:.2f}ms "
          f"p99={result.p99_ms:.2f}ms mean={result.mean_latency_ms:.2f}ms")


def _cmd_bench(args) -> int:
    result = run_scenario(_scenario_config(args))
    _print_result(result)
    if args.csv:
        write_report(result, args.csv)
        print(f"  appended to {args.csv}")
    return 0


def _cmd_breakdown(args) -> int:
    report: BreakdownReport = measure_breakdown(_scenario_config(args))
    _print_result(report.result)
    phases = report.mean_phases.as_dict()
    print(f"  total={report.mean_phases.total_us():.0f}us per invocation")
    for letter in PHASE_LETTERS:
        print(f"  phase {letter}: {phases[letter]:10.1f}us  "
              f"share={report.shares[letter] * 100:6.2f}%")
    print(f"  phase-B share: {report.shares['B']:.3f}")
    if args.csv:
        write_report(report.result, args.csv)
        print(f"  appended to {args.csv}")
    return 0


def _cmd_net_up(args) -> int:
    from .harness import NetworkRuntime

    if args.config:
        desc = parse_network_file(args.config)
        if args.peers and args.peers != len(desc.peer_ids):
            print("--peers disagrees with config; using config",
                  file=sys.stderr)
    else:
        desc = default_description(peers=args.peers or 1)
    net = NetworkRuntime(desc)
    print(f"orderer on {desc.orderer_listen[0]}:{desc.orderer_listen[1]}")
    for rt in net.peers:
        addr = rt.server.address
        paddr = rt.proxy.address
        print(f"peer {rt.peer_id} on {addr[0]}:{addr[1]} "
              f"(proxy {paddr[0]}:{paddr[1]})")
    print("network up; Ctrl-C to stop")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        net.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shieldchain",
        description="Permissioned ledger with TEE-offloaded chaincode, desk scale.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ta = sub.add_parser("ta", help="trusted-application image tools")
    ta_sub = ta.add_subparsers(dest="ta_command", required=True)
    sign_p = ta_sub.add_parser("sign", help="sign a TA image")
    sign_p.add_argument("--uuid", required=True, help="16-byte uuid, hex")
    sign_p.add_argument("--handler", required=True, help="registered handler name")
    sign_p.add_argument("--config-hex", help="optional config bytes, hex")
    sign_p.add_argument("--key", required=True,
                        help="32-byte build key seed, hex or file")
    sign_p.add_argument("--encrypt", action="store_true")
    sign_p.add_argument("--enc-key", help="32-byte AEAD key, hex")
    sign_p.add_argument("--out", required=True)
    sign_p.set_defaults(fn=_cmd_ta_sign)

    install_p = ta_sub.add_parser("install", help="verify and install a TA image")
    install_p.add_argument("--file", required=True)
    install_p.add_argument("--pubkey", required=True,
                           help="32-byte build public key, hex")
    install_p.add_argument("--enc-key", help="32-byte AEAD key, hex")
    install_p.add_argument("--store", help="directory to copy accepted images into")
    install_p.set_defaults(fn=_cmd_ta_install)

    proxy_p = sub.add_parser("proxy", help="run a standalone offload proxy")
    proxy_p.add_argument("--listen", default="127.0.0.1:7151")
    proxy_p.add_argument("--capacity", type=int, default=4,
                         help="trusted threads in the secure world")
    proxy_p.add_argument("--session-cache", action="store_true")
    proxy_p.add_argument("--cost", help="cost model overrides, k=v[,k=v...]")
    proxy_p.add_argument("--malicious-writes", action="store_true",
                         help="corrupt echoed writesets (tamper-detection demo)")
    proxy_p.add_argument("--build-pubkey", required=True,
                         help="32-byte build public key, hex")
    proxy_p.add_argument("--enc-key", help="32-byte TA decryption key, hex")
    proxy_p.add_argument("--ta", nargs="*", help="TA image files to install")
    proxy_p.set_defaults(fn=_cmd_proxy)

    def add_bench_args(p) -> None:
        p.add_argument("--scenario", default="shielded-local",
                       choices=("baseline", "shielded-local", "shielded-remote"))
        p.add_argument("--clients", type=int, default=1)
        p.add_argument("--duration", type=float, default=30.0)
        p.add_argument("--txs-per-client", type=int,
                       help="stop each client after N transactions instead of "
                            "a deadline (deterministic counts)")
        p.add_argument("--workload", default="write",
                       choices=("read", "write", "mixed"))
        p.add_argument("--read-fraction", type=float, default=0.5)
        p.add_argument("--peers", type=int, default=1)
        p.add_argument("--trusted-threads", type=int, default=4)
        p.add_argument("--cost", help="cost model overrides, k=v[,k=v...]")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--net-latency-us", type=int, default=1000)
        p.add_argument("--session-cache", action="store_true")
        p.add_argument("--max-block-txs", type=int, default=10)
        p.add_argument("--batch-timeout-ms", type=int, default=8)
        p.add_argument("--csv", help="append the result to this CSV file")

    bench_p = sub.add_parser("bench", help="throughput/latency benchmark")
    add_bench_args(bench_p)
    bench_p.set_defaults(fn=_cmd_bench)

    breakdown_p = sub.add_parser("breakdown", help="per-phase latency breakdown")
    add_bench_args(breakdown_p)
    breakdown_p.set_defaults(fn=_cmd_breakdown)

    net_p = sub.add_parser("net", help="network lifecycle")
    net_sub = net_p.add_subparsers(dest="net_command", required=True)
    up_p = net_sub.add_parser("up", help="bring up a standing network")
    up_p.add_argument("--peers", type=int)
    up_p.add_argument("--config", help="key=value network description file")
    up_p.set_defaults(fn=_cmd_net_up)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
