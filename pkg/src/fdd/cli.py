"""The ``fdd`` command.

Exit status: 0 success, 1 validation failure (bad arguments, config or
input), 2 runtime error (integrity violation, storage failure, IO).
Diagnostics go to stderr; data goes to stdout or the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from pathlib import Path

log = logging.getLogger("fdd")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would exit 2, which is reserved for runtime errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def resolve_seed(cli_seed: int | None, config_seed: int | None = None) -> int:
    """--seed beats FDD_SEED, which beats the config file; otherwise a fresh seed is printed."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("FDD_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"FDD_SEED must be an integer, got {env!r}") from None
    if config_seed is not None:
        return config_seed
    seed = random.SystemRandom().randrange(2**31)
    print(f"seed={seed}", file=sys.stderr)
    return seed


def _out_dir(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- fuzzy ---------------------------------------------------------------------

def cmd_fuzzy(args) -> int:
    from .fuzzy import default_system, dump_config, load_config

    system = load_config(Path(args.config)) if args.config else default_system()
    if args.action == "eval":
        out = system.infer(args.error, args.weight)
        _dump({"error": args.error, "weight": args.weight, **out.to_json()})
    else:
        sys.stdout.write(dump_config(system))
    return EXIT_OK


# -- detect ----------------------------------------------------------------------

def cmd_detect(args) -> int:
    from .detection import Detector, MalformedFrame, write_decisions, read_frames
    from .fuzzy import default_system, load_config

    system = load_config(Path(args.config)) if args.config else default_system()
    det = Detector(system)
    bad = 0
    decisions = []
    with open(args.input) as fh:
        for item in read_frames(fh):
            if isinstance(item, MalformedFrame):
                print(f"skipped: {item}", file=sys.stderr)
                bad += 1
                continue
            decisions.append(det.detect(item))
    if args.output:
        with open(args.output, "w") as fh:
            write_decisions(decisions, fh)
    else:
        write_decisions(decisions, sys.stdout)
    log.info("%d decisions, %d unparsable lines", len(decisions), bad)
    return EXIT_INVALID if bad else EXIT_OK


# -- reputation --------------------------------------------------------------------

def cmd_reputation(args) -> int:
    from types import SimpleNamespace

    from .fuzzy import Verdict
    from .reputation import ReputationStore

    path = Path(args.store)
    store = ReputationStore.load(path) if path.exists() else ReputationStore()
    if args.action == "init":
        store.init(args.id)
    elif args.action == "update":
        if args.id not in store.ids():
            store.init(args.id)
        d = SimpleNamespace(verdict=Verdict.parse(args.verdict), severity=args.level, timestamp=args.time)
        upd = store.update_rep(args.id, d)
        _dump({"id": upd.id, "old_R": upd.old_r, "new_R": upd.new_r, "quarantined": store.is_quarantined(args.id)})
    else:
        recs = store.snapshot()
        _dump([r for r in recs if args.id is None or r["id"] == args.id])
        return EXIT_OK
    store.save(path)
    return EXIT_OK


# -- keys ----------------------------------------------------------------------

def _load_kgd(directory: Path):
    from .certless import KGD, Cosigner, CosignerKey
    from .ledger import GenesisConfig

    genesis = GenesisConfig.from_json(json.loads((directory / "genesis.json").read_text()))
    secrets = json.loads((directory / "kgd-secrets.json").read_text())
    g = genesis.system.group
    cos = [Cosigner(CosignerKey(i, int(secrets[str(i)], 16), p), genesis.system)
           for i, p in enumerate(genesis.cosigner_publics)]
    for c in cos:
        if g.gexp(c.key.secret) != c.key.public:
            raise UsageError(f"cosigner {c.index} secret does not match genesis")
    return genesis, KGD(genesis.system, cos)


def _device_json(genesis, keys) -> dict:
    g = genesis.system.group
    return {"id": keys.id, "pk": keys.pk.encode(g).hex(), "ps": hex(keys.ps), "x": hex(keys.x)}


def _load_device(genesis, path: Path):
    from .certless import DeviceKeyPair, DevicePublicKey

    obj = json.loads(path.read_text())
    pk = DevicePublicKey.decode(genesis.system.group, bytes.fromhex(obj["pk"]))
    return DeviceKeyPair(pk, int(obj["ps"], 16), int(obj["x"], 16))


def cmd_keys(args) -> int:
    from .certless import KGD, register_device, setup, sign_tx, verify_tx_sig
    from .ledger import GenesisConfig

    d = Path(args.dir)
    if args.action == "setup":
        seed = resolve_seed(args.seed)
        rng = random.Random(seed)
        system = setup(args.level, seed)
        kgd = KGD.create(system, args.peers, rng)
        f = (args.peers - 1) // 3
        genesis = GenesisConfig(system, kgd.public.cosigner_publics, f)
        d.mkdir(parents=True, exist_ok=True)
        (d / "genesis.json").write_text(json.dumps(genesis.to_json(), indent=2, sort_keys=True) + "\n")
        (d / "kgd-secrets.json").write_text(json.dumps({str(c.index): hex(c.key.secret) for c in kgd.cosigners},
                                                       indent=2) + "\n")
        print(str(d / "genesis.json"))
        return EXIT_OK
    genesis, kgd = _load_kgd(d)
    if args.action == "register":
        rng = random.Random(resolve_seed(args.seed))
        keys = register_device(kgd, args.id, rng)
        text = json.dumps(_device_json(genesis, keys), indent=2, sort_keys=True) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    keys = _load_device(genesis, Path(args.device))
    msg = args.message.encode()
    if args.action == "sign":
        rng = random.Random(resolve_seed(args.seed))
        print(sign_tx(genesis.public, keys, msg, rng).hex())
        return EXIT_OK
    ok = verify_tx_sig(genesis.public, keys.pk, args.id or keys.id, msg, bytes.fromhex(args.sig))
    print("valid" if ok else "invalid")
    return EXIT_OK if ok else EXIT_INVALID


# -- ledger ----------------------------------------------------------------------

def cmd_ledger(args) -> int:
    from .ledger import GenesisConfig, IntegrityViolation, load_chain, save_chain, verify_chain

    if args.action == "demo":
        from .dht import DHT
        from .ledger import Consortium

        seed = resolve_seed(args.seed)
        out = _out_dir(args)
        c = Consortium(seed=seed, level=args.level)
        dht = DHT.with_nodes(5)
        rng = random.Random(seed)
        devices = [c.register(f"dev-{i}")[0] for i in range(args.devices)]
        recs = []
        for i in range(args.txs):
            keys = devices[i % len(devices)]
            ads = dht.put(rng.randbytes(64))
            recs.append((c.submit(c.data_tx(keys, "store", ads)), ads))
        c.wait([r for r, _ in recs])
        for r, ads in recs:
            dht.mark_stored(r, ads)
        c.settle(1000)
        peer = c.peers[0]
        save_chain(peer.chain, out / "chain.bin")
        (out / "genesis.json").write_text(json.dumps(c.genesis.to_json(), indent=2, sort_keys=True) + "\n")
        (out / "world_state.json").write_text(json.dumps(peer.state.to_json(), indent=2, sort_keys=True) + "\n")
        dht.save(out / "dht")
        committed = sum(r.status == "committed" for r, _ in recs)
        _dump({"height": peer.height, "committed": committed, "submitted": len(recs),
               "state_digest": peer.state.digest().hex()})
        return EXIT_OK

    chain_path = Path(args.chain)
    genesis_path = Path(args.genesis) if args.genesis else chain_path.with_name("genesis.json")
    genesis = GenesisConfig.from_json(json.loads(genesis_path.read_text()))
    try:
        blocks = load_chain(chain_path)
        state = verify_chain(blocks, genesis)
    except IntegrityViolation as exc:
        print(f"integrity violation at height {exc.height}: {exc.reason}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.action == "verify-chain":
        _dump({"ok": True, "height": len(blocks) - 1, "state_digest": state.digest().hex()})
    else:
        _dump(state.to_json())
    return EXIT_OK


# -- dht ---------------------------------------------------------------------------

def cmd_dht(args) -> int:
    from .dht import DHT

    store = Path(args.store)
    dht = DHT.load(store) if (store / "members.txt").exists() else DHT.with_nodes(args.nodes, args.k)
    if args.action == "put":
        data = Path(args.file).read_bytes()
        print(dht.put(data).hex())
    elif args.action == "get":
        try:
            addr = bytes.fromhex(args.address)
        except ValueError:
            raise UsageError("address must be hex") from None
        if len(addr) != 32:
            raise UsageError("address must be 32 bytes (64 hex digits)")
        data = dht.get(addr)
        if args.output:
            Path(args.output).write_bytes(data)
        else:
            sys.stdout.buffer.write(data)
    elif args.action == "kill":
        dht.kill(args.node)
    elif args.action == "rebalance":
        rep = dht.rebalance()
        _dump({"copied": rep.count("copied"), "dropped": rep.count("dropped"),
               "corrupt_removed": rep.count("corrupt-removed"),
               "under_replicated": len(rep.under_replicated), "lost": len(rep.lost)})
    else:
        _dump(dht.stats())
    dht.save(store)
    return EXIT_OK


# -- bench / study ---------------------------------------------------------------------

def cmd_bench(args) -> int:
    from dataclasses import replace

    from .harness.bench import OPS, BenchmarkReport, parse_workloads, run_benchmark
    from .harness.config import BenchPlan, load_bench_config
    from .harness.report import BENCH_COLUMNS, bench_table, emit_report

    plan = load_bench_config(Path(args.config)) if args.config else BenchPlan()
    cfg = replace(plan.config, seed=resolve_seed(args.seed, plan.config.seed if args.config else None))
    if args.duration is not None:
        cfg = replace(cfg, duration_s=args.duration)
    ops = OPS if args.op == "both" else ((args.op.upper(),) if args.op else plan.ops)
    workloads = parse_workloads(args.workloads) if args.workloads else list(plan.workloads)
    report = BenchmarkReport()
    for op in ops:
        run_benchmark(op, workloads, config=cfg, report=report)
    print(",".join(BENCH_COLUMNS))
    for row in bench_table(report):
        print(",".join(row))
    if args.out:
        for p in emit_report(report, _out_dir(args)):
            log.info("wrote %s", p)
    return EXIT_OK


def cmd_study(args) -> int:
    from .harness import generate_scenario, run_detection_study
    from .harness.config import StudyConfig, load_study_config
    from .harness.report import emit_report

    cfg = load_study_config(Path(args.config)) if args.config else StudyConfig()
    seed = resolve_seed(args.seed, cfg.seed if args.config else None)
    rate = args.injection_rate if args.injection_rate is not None else cfg.injection_rate
    sc = generate_scenario(seed, cfg.n_cases, rate, cfg.error_band, cfg.weight_band, cfg.clean_band,
                           cfg.frames_per_case)
    res = run_detection_study(sc, rates=cfg.rates)
    paths = emit_report(res, _out_dir(args))
    _dump({"seed": seed, "accuracy": round(res.accuracy, 6), "auc": round(res.roc.auc, 6),
           "labels_intact": res.labels_intact, "files": [str(p) for p in paths]})
    return EXIT_OK


# -- wiring ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fdd", description="False-data detection, reputation, certificateless keys, ledger and DHT.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fz = sub.add_parser("fuzzy", help="evaluate or dump the fuzzy system")
    fz.add_argument("action", choices=["eval", "dump"])
    fz.add_argument("--error", type=float, default=0.0)
    fz.add_argument("--weight", type=float, default=0.0)
    fz.add_argument("--config")
    fz.set_defaults(fn=cmd_fuzzy)

    dt = sub.add_parser("detect", help="run detection over NDJSON telemetry frames")
    dt.add_argument("input")
    dt.add_argument("--output")
    dt.add_argument("--config")
    dt.set_defaults(fn=cmd_detect)

    rp = sub.add_parser("reputation", help="maintain a reputation store file")
    rp.add_argument("action", choices=["init", "update", "show"])
    rp.add_argument("--store", required=True)
    rp.add_argument("--id")
    rp.add_argument("--verdict", default="NO")
    rp.add_argument("--level", type=float, default=0.0)
    rp.add_argument("--time", type=int, default=0)
    rp.set_defaults(fn=cmd_reputation)

    ky = sub.add_parser("keys", help="KGD setup, device registration, sign and verify")
    ky.add_argument("action", choices=["setup", "register", "sign", "verify"])
    ky.add_argument("--dir", required=True, help="directory holding genesis.json and kgd-secrets.json")
    ky.add_argument("--peers", type=int, default=4)
    ky.add_argument("--level", default="toy", choices=["toy", "standard"])
    ky.add_argument("--id")
    ky.add_argument("--device", help="device key file")
    ky.add_argument("--message", default="")
    ky.add_argument("--sig")
    ky.add_argument("--out")
    ky.add_argument("--seed", type=int)
    ky.set_defaults(fn=cmd_keys)

    lg = sub.add_parser("ledger", help="run a demo consortium, verify or replay a chain file")
    lg.add_argument("action", choices=["demo", "verify-chain", "replay"])
    lg.add_argument("chain", nargs="?")
    lg.add_argument("--genesis")
    lg.add_argument("--out", default="out")
    lg.add_argument("--devices", type=int, default=3)
    lg.add_argument("--txs", type=int, default=20)
    lg.add_argument("--level", default="toy", choices=["toy", "standard"])
    lg.add_argument("--seed", type=int)
    lg.set_defaults(fn=cmd_ledger)

    dh = sub.add_parser("dht", help="content-addressed storage")
    dh.add_argument("action", choices=["put", "get", "stats", "kill", "rebalance"])
    dh.add_argument("target", nargs="?", help="file (put), hex address (get) or node name (kill)")
    dh.add_argument("--store", required=True, help="directory with per-node files")
    dh.add_argument("--nodes", type=int, default=5)
    dh.add_argument("--k", type=int, default=3)
    dh.add_argument("--output")
    dh.set_defaults(fn=cmd_dht)

    bn = sub.add_parser("bench", help="READ/WRITE benchmark in simulated time")
    bn.add_argument("--op", choices=["read", "write", "both"])
    bn.add_argument("--workloads", help="e.g. 100..1000:100 or 100,200")
    bn.add_argument("--duration", type=float)
    bn.add_argument("--config")
    bn.add_argument("--out")
    bn.add_argument("--seed", type=int)
    bn.set_defaults(fn=cmd_bench)

    st = sub.add_parser("study", help="detection study: per-case CSV, ROC and accuracy table")
    st.add_argument("--config")
    st.add_argument("--injection-rate", type=float)
    st.add_argument("--out", default="out")
    st.add_argument("--seed", type=int)
    st.set_defaults(fn=cmd_study)
    return p


def _check(args) -> None:
    need = {
        ("ledger", "verify-chain"): ["chain"], ("ledger", "replay"): ["chain"],
        ("keys", "register"): ["id"], ("keys", "sign"): ["device"], ("keys", "verify"): ["device", "sig"],
        ("dht", "put"): ["target"], ("dht", "get"): ["target"], ("dht", "kill"): ["target"],
        ("reputation", "init"): ["id"], ("reputation", "update"): ["id"],
    }
    for name in need.get((args.command, getattr(args, "action", None)), []):
        if getattr(args, name, None) is None:
            raise UsageError(f"{args.command} {args.action} needs {name}")
    if args.command == "dht":
        args.file = args.address = args.node = args.target


def main(argv: list[str] | None = None) -> int:
    from .certless import DerivationRefused, IssuanceFailed, PointerDecryptionError
    from .dht import DHTError
    from .ledger import IntegrityViolation, SubmissionRefused, TxRejected

    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _check(args)
        return args.fn(args)
    except (UsageError, ValueError, KeyError, TxRejected, SubmissionRefused, DerivationRefused,
            PointerDecryptionError) as exc:
        print(f"fdd: invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (IntegrityViolation, DHTError, IssuanceFailed, OSError, RuntimeFailure) as exc:
        print(f"fdd: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
