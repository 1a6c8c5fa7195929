"""Command-line entry point: scenario execution, chain verification and
metrics comparison.

Exit codes: 0 success, 1 protocol violation detected (or attack failed),
2 usage or config error.  `ALGOSIM_LOG` (off|info|trace) sets verbosity.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .adversary import AdversaryConfig
from .crypto import KeyRegistry
from .engine import RunMetrics, ScenarioConfig, metrics_to_lines, run_scenario
from .ledger import LedgerError, chain_from_lines, chain_to_lines, verify_chain
from .sortition import ProtocolParams, default_cert_threshold

log = logging.getLogger("algosim.cli")


class ConfigError(Exception):
    pass


def load_config(path: str, seed: int | None = None, rounds: int | None = None,
                mode: str | None = None) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    try:
        sc = cp["scenario"] if cp.has_section("scenario") else {}
        pc = cp["params"] if cp.has_section("params") else {}
        ac = cp["adversary"] if cp.has_section("adversary") else {}

        genesis_users = int(sc.get("genesis_users", 10))
        run_rounds = rounds if rounds is not None else int(sc.get("rounds", 20))
        verifier_prob = float(pc.get("verifier_prob", 0.2))
        cert_threshold = pc.get("cert_threshold")
        if cert_threshold is None:
            cert_threshold = default_cert_threshold(
                int(round(verifier_prob * genesis_users)))
        horizon = pc.get("horizon")
        params = ProtocolParams(
            leader_prob=float(pc.get("leader_prob", 0.05)),
            verifier_prob=verifier_prob,
            lookback=int(pc.get("lookback", 3)),
            max_ba_steps=int(pc.get("max_ba_steps", 9)),
            cert_threshold=int(cert_threshold),
            horizon=int(horizon) if horizon is not None else run_rounds + 8,
        )
        strategy = ac.get("strategy", "honest").replace("-", "_")
        fork_round = ac.get("fork_round")
        target_round = ac.get("target_round")
        adversary = AdversaryConfig(
            strategy=strategy,
            fork_round=int(fork_round) if fork_round else None,
            retention_fraction=float(ac.get("retention_fraction", 0.0)),
            target_round=int(target_round) if target_round else None,
        )
        config = ScenarioConfig(
            seed=seed if seed is not None else int(sc.get("seed", 0)),
            num_genesis_users=genesis_users,
            initial_balance=int(sc.get("initial_balance", 1000)),
            rounds=run_rounds,
            params=params,
            consensus_mode=mode if mode is not None else sc.get("mode", "ba"),
            adversary=adversary,
            payments_per_round=int(sc.get("payments_per_round", 5)),
            new_users_per_round=int(sc.get("new_users_per_round", 0)),
        )
        config.validate()
        return config
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc


def _write_outputs(out_dir: Path, chains, metrics: RunMetrics) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.jsonl").write_text(
        "\n".join(metrics_to_lines(metrics)) + "\n")
    (out_dir / "chain.jsonl").write_text(
        "\n".join(chain_to_lines(chains[0])) + "\n")
    for i, fork in enumerate(chains[1:]):
        (out_dir / f"chain_fork{i}.jsonl").write_text(
            "\n".join(chain_to_lines(fork)) + "\n")


def _execute(config: ScenarioConfig):
    chains, metrics = run_scenario(config)
    return config.seed, chains, metrics


def cmd_run(args) -> int:
    try:
        seeds = ([int(s) for s in str(args.seed).split(",")]
                 if args.seed is not None else [None])
        configs = [load_config(args.config, seed=s, rounds=args.rounds,
                               mode=args.mode) for s in seeds]
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_execute, configs))
    else:
        results = [_execute(c) for c in configs]

    worst = 0
    for (seed, chains, metrics), config in zip(results, configs):
        for line in metrics_to_lines(metrics):
            print(line)
        if args.out:
            base = Path(args.out)
            out_dir = base / f"seed_{seed}" if len(configs) > 1 else base
            _write_outputs(out_dir, chains, metrics)
        log.info("seed=%d rounds=%d forks=%d messages=%d wall=%.3fs",
                 seed, len(metrics.rounds), metrics.forks_detected,
                 metrics.total_messages, metrics.wall_time)
        if config.adversary.strategy == "honest" and metrics.forks_detected > 0:
            log.warning("fork detected in an honest run (seed %d)", seed)
            worst = 1
    return worst


def cmd_attack(args) -> int:
    strategy = args.kind.replace("-", "_")
    try:
        config = load_config(args.config, seed=args.seed, rounds=args.rounds)
        if config.adversary.strategy != strategy:
            raise ConfigError(
                f"config adversary strategy is {config.adversary.strategy!r}, "
                f"expected {strategy!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    seed, chains, metrics = _execute(config)
    for line in metrics_to_lines(metrics):
        print(line)
    if args.out:
        _write_outputs(Path(args.out), chains, metrics)
    if metrics.forks_detected > 0:
        for rep in metrics.fork_reports:
            print(f"fork at round {rep.round} [{rep.classification}]: "
                  f"{rep.digest_a.hex()[:16]} vs {rep.digest_b.hex()[:16]}",
                  file=sys.stderr)
        return 0
    print(f"attack failed: {metrics.attack_error or 'no fork produced'}",
          file=sys.stderr)
    return 1


def cmd_verify_chain(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    registry = KeyRegistry(config.seed, horizon=config.params.horizon,
                           max_step=config.params.max_step)
    for u in range(1, config.num_genesis_users + 1):
        registry.register_user(u)
    try:
        lines = Path(args.chain).read_text().splitlines()
        chain = chain_from_lines(lines, registry)
    except (OSError, LedgerError) as exc:
        print(f"error: cannot load chain: {exc}", file=sys.stderr)
        return 2
    for block in chain.blocks:
        for p in block.payset:
            registry.register_user(p.payer)
            registry.register_user(p.payee)
    problems = verify_chain(chain, config.params, registry)
    for round, violation in problems:
        print(f"round {round}: {violation}")
    if problems:
        return 1
    print(f"chain valid: {len(chain.blocks)} blocks")
    return 0


def cmd_compare(args) -> int:
    try:
        lines_a = Path(args.metrics_a).read_text().splitlines()
        lines_b = Path(args.metrics_b).read_text().splitlines()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if len(lines_a) != len(lines_b):
        print(f"length mismatch: {len(lines_a)} vs {len(lines_b)} records")
        return 1
    differences = 0
    for i, (la, lb) in enumerate(zip(lines_a, lines_b)):
        if la == lb:
            continue
        differences += 1
        try:
            oa, ob = json.loads(la), json.loads(lb)
            keys = sorted(set(oa) | set(ob))
            for k in keys:
                if oa.get(k) != ob.get(k):
                    print(f"record {i}: {k}: {oa.get(k)!r} != {ob.get(k)!r}")
        except json.JSONDecodeError:
            print(f"record {i}: raw difference")
    if differences:
        print(f"{differences} differing records")
        return 1
    print("identical")
    return 0


def _setup_logging() -> None:
    level = os.environ.get("ALGOSIM_LOG", "off").lower()
    if level == "trace":
        logging.basicConfig(level=logging.DEBUG, stream=sys.stderr)
    elif level == "info":
        logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    else:
        logging.disable(logging.CRITICAL)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="algosim",
        description="Deterministic committee-vote consensus simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", help="seed or comma-separated seed list")
    run.add_argument("--rounds", type=int)
    run.add_argument("--mode", choices=["ba", "simple", "both"])
    run.add_argument("--out", help="directory for metrics and chain files")
    run.add_argument("--jobs", type=int, default=1,
                     help="parallel workers for multi-seed runs")
    run.set_defaults(func=cmd_run)

    attack = sub.add_parser("attack", help="run a fork attack scenario")
    attack.add_argument("kind", choices=["genesis-fork", "bribery"])
    attack.add_argument("--config", required=True)
    attack.add_argument("--seed", type=int)
    attack.add_argument("--rounds", type=int)
    attack.add_argument("--out")
    attack.set_defaults(func=cmd_attack)

    verify = sub.add_parser("verify-chain", help="re-validate an exported chain")
    verify.add_argument("--chain", required=True)
    verify.add_argument("--config", required=True,
                        help="scenario config the chain was produced with")
    verify.set_defaults(func=cmd_verify_chain)

    compare = sub.add_parser("compare", help="diff two metrics files")
    compare.add_argument("metrics_a")
    compare.add_argument("metrics_b")
    compare.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
