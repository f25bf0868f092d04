"""Command-line interface.

Verbs: mine an instance from an event log, run seeded replications under a
policy, compare two result files, measure decision agreement between two
policies, serve episodes to a remote agent, and validate an instance file.
"""

from __future__ import annotations

import argparse
import sys

from . import bench, mining, protocol
from .model import (InstanceFormatError, InstanceValidationError, load_instance,
                    read_instance, save_instance, validate_instance)
from .policies import BUILTIN_POLICIES, make_policy
from .protocol import EngineConfig, RemotePolicyClient, SimulatorServer


def _add_duration_flags(parser: argparse.ArgumentParser, serve_default: bool) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--stochastic-durations", dest="determinize",
                       action="store_false",
                       help="sample completion durations (default for run)")
    group.add_argument("--determinize", dest="determinize", action="store_true",
                       help="force completion durations to their means")
    parser.set_defaults(determinize=serve_default)


def _auto_apply_flag(parser: argparse.ArgumentParser, default: str) -> None:
    parser.add_argument("--auto-apply-singletons", choices=("on", "off"),
                        default=default,
                        help="apply forced single-choice decisions internally "
                             f"(default {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtapsim",
        description="Task-assignment simulator and benchmark harness")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("mine", help="estimate an instance from an event log")
    p.add_argument("--log", required=True, help="event-log CSV")
    p.add_argument("--out", required=True, help="instance file to write")
    p.add_argument("--lambda-scale", type=float, default=1.0,
                   help="arrival-rate adjustment factor (default 1.0)")
    p.add_argument("--horizon-hours", type=float, default=None,
                   help="override the default horizon (log span in whole weeks)")
    p.add_argument("--report", action="store_true",
                   help="print the estimation report")

    p = sub.add_parser("run", help="run seeded replications under a policy")
    p.add_argument("--instance", required=True)
    p.add_argument("--policy", required=True, choices=(*BUILTIN_POLICIES, "remote"))
    p.add_argument("--endpoint", help="agent endpoint host:port (policy remote)")
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--horizon-hours", type=float, default=None,
                   help="override the instance horizon")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    _add_duration_flags(p, serve_default=False)
    _auto_apply_flag(p, default="off")
    p.add_argument("--out", required=True, help="results CSV to write")

    p = sub.add_parser("compare", help="Welch test between two result files")
    p.add_argument("--a", required=True, help="results CSV (sample A)")
    p.add_argument("--b", required=True, help="results CSV (sample B)")
    p.add_argument("--alpha", type=float, default=0.01)

    p = sub.add_parser("agreement",
                       help="fraction of multi-choice decisions where two "
                            "policies pick the same assignment")
    p.add_argument("--instance", required=True)
    p.add_argument("--policy-a", required=True, choices=(*BUILTIN_POLICIES, "remote"))
    p.add_argument("--policy-b", required=True, choices=(*BUILTIN_POLICIES, "remote"))
    p.add_argument("--endpoint", help="agent endpoint host:port (policy remote)")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon-hours", type=float, default=None)

    p = sub.add_parser("serve", help="listen for a remote agent and run episodes")
    p.add_argument("--instance", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True, help="0 picks a free port")
    p.add_argument("--seed", type=int, default=0,
                   help="base seed for resets that do not carry one")
    p.add_argument("--horizon-hours", type=float, default=None)
    _add_duration_flags(p, serve_default=True)
    _auto_apply_flag(p, default="on")
    p.add_argument("--max-episodes", type=int, default=0,
                   help="per-connection episode cap, 0 = unlimited")
    p.add_argument("--timeout", type=float, default=protocol.DEFAULT_TIMEOUT_S,
                   help="per-message timeout in seconds")

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("--instance", required=True)

    p = sub.add_parser("cross-eval",
                       help="evaluate policies across instances into a matrix CSV")
    p.add_argument("--instances", required=True, nargs="+")
    p.add_argument("--policies", required=True, nargs="+",
                   help="built-in names or remote@host:port")
    p.add_argument("--replications", type=int, default=10)
    p.add_argument("--horizon-hours", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="matrix CSV to write")

    return parser


def _cmd_mine(args) -> int:
    log = mining.parse_event_log(args.log)
    instance = mining.assemble_instance(
        log, lambda_scale=args.lambda_scale, horizon_hours=args.horizon_hours)
    save_instance(instance, args.out)
    if args.report:
        print(mining.mining_report(log, instance))
    print(f"wrote {args.out}: {len(instance.labels)} labels, "
          f"{len(instance.resources)} resources, {len(instance.pools)} pools, "
          f"rate {instance.arrival_rate:.4f} cases/h")
    return 0


def _cmd_run(args) -> int:
    instance = load_instance(args.instance)
    if args.policy == "remote" and not args.endpoint:
        print("error: --policy remote needs --endpoint", file=sys.stderr)
        return 1
    results = bench.run_replications(
        instance, args.policy, args.replications, args.horizon_hours, args.seed,
        determinize=args.determinize,
        auto_apply_singletons=args.auto_apply_singletons == "on",
        check_invariants=False, endpoint=args.endpoint)
    bench.write_results_csv(results, args.out)
    cycles = [r.mean_cycle_hours for r in results if r.mean_defined]
    mean = sum(cycles) / len(cycles) if cycles else float("nan")
    print(f"wrote {args.out}: {len(results)} episodes, "
          f"mean cycle {mean:.3f} h")
    return 0


def _cmd_compare(args) -> int:
    rows_a = bench.read_results_csv(args.a)
    rows_b = bench.read_results_csv(args.b)
    sample_a = [float(r["mean_cycle_h"]) for r in rows_a]
    sample_b = [float(r["mean_cycle_h"]) for r in rows_b]
    result = bench.welch_t_test(sample_a, sample_b, args.alpha)

    def describe(name, xs):
        mean = sum(xs) / len(xs)
        var = sum((x - mean) ** 2 for x in xs) / (len(xs) - 1) if len(xs) > 1 else 0.0
        print(f"  {name}: n={len(xs)} mean={mean:.4f} std={var ** 0.5:.4f}")

    describe("a", sample_a)
    describe("b", sample_b)
    print(f"  t={result.t:.6f} dof={result.dof:.3f} p={result.p:.3e} "
          f"significant={'yes' if result.significant else 'no'} (alpha={args.alpha:g})")
    return 0


def _cmd_agreement(args) -> int:
    instance = load_instance(args.instance)
    client = None

    def resolve(name):
        nonlocal client
        if name == "remote":
            if not args.endpoint:
                raise ValueError("policy remote needs --endpoint")
            if client is None:
                client = RemotePolicyClient(args.endpoint)
            return client.as_policy(instance)
        return make_policy(name, instance, args.seed)

    try:
        result = bench.action_agreement(
            resolve(args.policy_a), resolve(args.policy_b), instance,
            args.samples, base_seed=args.seed, horizon_hours=args.horizon_hours)
    finally:
        if client is not None:
            client.close()
    if not result.defined:
        print(f"agreement undefined: no multi-choice decision in "
              f"{result.episodes} episodes")
        return 0
    print(f"agreement {result.fraction:.4f} over {result.samples} decisions "
          f"({result.episodes} episodes)")
    return 0


def _cmd_serve(args) -> int:
    instance = load_instance(args.instance)
    server = SimulatorServer(
        instance, args.host, args.port, base_seed=args.seed,
        config=EngineConfig(
            horizon_hours=args.horizon_hours, determinize=args.determinize,
            auto_apply_singletons=args.auto_apply_singletons == "on"),
        max_episodes=args.max_episodes, timeout=args.timeout)
    print(f"listening on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _cmd_validate(args) -> int:
    try:
        instance = read_instance(args.instance)
    except InstanceFormatError as exc:
        print(f"malformed: {exc}", file=sys.stderr)
        return 1
    violations = validate_instance(instance)
    if violations:
        for v in violations:
            print(f"{v.code}: {v.message}")
        return 1
    print(f"valid: {len(instance.labels)} labels, {len(instance.resources)} "
          f"resources, {len(instance.pools)} pools")
    return 0


def _cmd_cross_eval(args) -> int:
    instances = [load_instance(path) for path in args.instances]
    cells = bench.cross_eval(args.policies, instances, args.replications,
                             args.horizon_hours, args.seed)
    csv_text = bench.cross_eval_csv(cells)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    print(csv_text, end="")
    failures = [c for c in cells if c.error]
    for cell in failures:
        print(f"cell ({cell.policy}, {cell.instance}) failed: {cell.error}",
              file=sys.stderr)
    return 0


_COMMANDS = {
    "mine": _cmd_mine,
    "run": _cmd_run,
    "compare": _cmd_compare,
    "agreement": _cmd_agreement,
    "serve": _cmd_serve,
    "validate": _cmd_validate,
    "cross-eval": _cmd_cross_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except (InstanceFormatError, InstanceValidationError, mining.LogFormatError,
            protocol.ProtocolViolation, bench.AuditFailure, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
