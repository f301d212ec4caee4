"""Command-line interface.

Subcommands: ``validate``, ``synthesize``, ``evaluate``, ``bound``, and
``sweep``.  Model arguments take either a path to a model JSON file or one
of the builtin example names (``ex1``, ``ex2``); an existing file of the
same name wins.

Exit codes: 0 success, 1 input error, 2 synthesis did not converge or was
infeasible, 3 the certified entropy is unbounded.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

from .ccp_synthesis import CcpConfig, SynthesisProblem, SynthesisResult, synthesize
from .fsc import fsc_from_instantiation, parse_controller, serialize_controller
from .mc_analysis import evaluate_chain
from .model import ModelError, Pomdp, builtin_example, parse_model, validate
from .product import build_pmc, induced_chain

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_UNBOUNDED = 3

BUILTIN_NAMES = ("ex1", "ex2")


def _fmt(x: float) -> str:
    return "%.6g" % x


def _load_model(path: str) -> Pomdp:
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            return parse_model(fh.read())
    if path in BUILTIN_NAMES:
        return builtin_example(path)
    raise ModelError(f"model file not found: {path!r} (builtin names: {', '.join(BUILTIN_NAMES)})")


def _config_from_args(args: argparse.Namespace) -> CcpConfig:
    return CcpConfig(
        restarts=args.restarts,
        seed=args.seed,
        max_iters=args.max_iters,
    )


def _result_json(result: SynthesisResult) -> dict:
    return {
        "entropy_bits": result.entropy_bits,
        "expected_reward": result.expected_reward,
        "nu_initial": result.nu_initial,
        "converged": result.converged,
        "iterations": result.iterations,
    }


def _synthesis_exit(result: SynthesisResult) -> int:
    if math.isinf(result.entropy_bits):
        return EXIT_UNBOUNDED
    if not result.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        model = _load_model(args.model)
    except ModelError as exc:
        report = {
            "ok": False,
            "errors": [str(exc)],
            "warnings": [],
            "absorbing_states": [],
            "is_dag_to_absorbing": False,
        }
        print(json.dumps(report, indent=2))
        return EXIT_INPUT
    rep = validate(model)
    out = {
        "ok": rep.ok,
        "errors": list(rep.errors),
        "warnings": list(rep.warnings),
        "absorbing_states": sorted(rep.absorbing_states),
        "is_dag_to_absorbing": rep.is_dag_to_absorbing,
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK if rep.ok else EXIT_INPUT


def cmd_synthesize(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    pmc = build_pmc(model, args.memory)
    problem = SynthesisProblem(pmc, args.gamma, args.mode)
    result = synthesize(problem, _config_from_args(args))
    controller = fsc_from_instantiation(
        result.best_u,
        pmc.k if args.mode != "mdp_bound" else 1,
        pmc.observations if args.mode != "mdp_bound" else model.states,
        pmc.actions,
    )
    controller_text = serialize_controller(controller)
    result_text = json.dumps(_result_json(result), indent=2)
    if args.out:
        with open(args.out + ".controller.json", "w", encoding="utf-8") as fh:
            fh.write(controller_text + "\n")
        with open(args.out + ".result.json", "w", encoding="utf-8") as fh:
            fh.write(result_text + "\n")
    else:
        print(json.dumps({"result": _result_json(result), "controller": json.loads(controller_text)}, indent=2))
    return _synthesis_exit(result)


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    with open(args.controller, "r", encoding="utf-8") as fh:
        controller = parse_controller(fh.read())
    chain = induced_chain(model, controller)
    ev = evaluate_chain(chain)
    print(
        json.dumps(
            {
                "entropy_bits": ev.entropy_bits,
                "expected_reward": ev.expected_reward,
                "finite": ev.finite,
            },
            indent=2,
        )
    )
    return EXIT_OK if ev.finite else EXIT_UNBOUNDED


def cmd_bound(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    pmc = build_pmc(model, 1)
    problem = SynthesisProblem(pmc, args.gamma, "mdp_bound")
    result = synthesize(problem, _config_from_args(args))
    print(
        json.dumps(
            {
                "bound_bits": result.entropy_bits,
                "expected_reward": result.expected_reward,
                "converged": result.converged,
                "iterations": result.iterations,
            },
            indent=2,
        )
    )
    return _synthesis_exit(result)


def _sweep_values(args: argparse.Namespace) -> list[float]:
    if args.step <= 0:
        raise ModelError("--step must be positive")
    values: list[float] = []
    i = 0
    while True:
        v = args.start + i * args.step
        if v > args.stop + 1e-9:
            break
        values.append(v)
        i += 1
    if not values:
        raise ModelError("empty sweep range")
    return values


def cmd_sweep(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    values = _sweep_values(args)
    lines = ["param,entropy_bits,expected_reward,converged,restart_best,iterations,wall_ms"]
    worst = EXIT_OK
    for v in values:
        if args.param == "memory":
            k = int(round(v))
            if k < 1:
                raise ModelError("memory values must be >= 1")
            gamma = args.gamma
            shown = str(k)
        else:
            k = args.memory
            gamma = v
            shown = _fmt(v)
        t0 = time.perf_counter()
        pmc = build_pmc(model, k)
        result = synthesize(SynthesisProblem(pmc, gamma, args.mode), _config_from_args(args))
        wall_ms = int(round((time.perf_counter() - t0) * 1000.0))
        lines.append(
            ",".join(
                [
                    shown,
                    _fmt(result.entropy_bits),
                    _fmt(result.expected_reward),
                    "true" if result.converged else "false",
                    str(result.restart_index),
                    str(result.iterations),
                    str(wall_ms),
                ]
            )
        )
        code = _synthesis_exit(result)
        if code == EXIT_UNBOUNDED:
            worst = EXIT_UNBOUNDED
        elif code == EXIT_NOT_CONVERGED and worst != EXIT_UNBOUNDED:
            worst = EXIT_NOT_CONVERGED
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return worst


def _add_synthesis_flags(p: argparse.ArgumentParser, with_mode: bool = True) -> None:
    p.add_argument("--restarts", type=int, default=10, help="independent random restarts")
    p.add_argument("--seed", type=int, default=0, help="base seed for restart initialization")
    p.add_argument("--max-iters", type=int, default=100, help="penalty iterations per restart")
    if with_mode:
        p.add_argument(
            "--mode",
            choices=["maxent", "feasibility", "mdp_bound"],
            default="maxent",
            help="objective mode",
        )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maxent-pomdp",
        description="Maximum-entropy controller synthesis for partially observable models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file and print a report")
    p.add_argument("model", help="model file or builtin name (ex1, ex2)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synthesize", help="synthesize a controller for a reward threshold")
    p.add_argument("model", help="model file or builtin name")
    p.add_argument("--memory", "-k", type=int, default=1, help="controller memory size")
    p.add_argument("--gamma", "-g", type=float, required=True, help="expected reward threshold")
    p.add_argument("--out", help="write <out>.controller.json and <out>.result.json")
    _add_synthesis_flags(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="exactly evaluate a controller on a model")
    p.add_argument("model", help="model file or builtin name")
    p.add_argument("controller", help="controller JSON file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bound", help="fully observable entropy upper bound")
    p.add_argument("model", help="model file or builtin name")
    p.add_argument("--gamma", "-g", type=float, required=True, help="expected reward threshold")
    _add_synthesis_flags(p, with_mode=False)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("sweep", help="synthesize across a parameter range, CSV output")
    p.add_argument("model", help="model file or builtin name")
    p.add_argument("--param", choices=["gamma", "memory"], required=True)
    p.add_argument("--from", dest="start", type=float, required=True, help="first value")
    p.add_argument("--to", dest="stop", type=float, required=True, help="last value (inclusive)")
    p.add_argument("--step", type=float, default=None, help="increment (default 0.1, or 1 for memory)")
    p.add_argument("--memory", "-k", type=int, default=1, help="memory size for gamma sweeps")
    p.add_argument("--gamma", "-g", type=float, default=0.0, help="threshold for memory sweeps")
    p.add_argument("--out", help="write CSV here instead of stdout")
    _add_synthesis_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    # MAXENT_THREADS caps worker concurrency; this implementation runs
    # sweep points sequentially, so any positive value is accepted as-is.
    threads = os.environ.get("MAXENT_THREADS")
    if threads is not None:
        try:
            if int(threads) < 1:
                print("MAXENT_THREADS must be a positive integer", file=sys.stderr)
                return EXIT_INPUT
        except ValueError:
            print("MAXENT_THREADS must be a positive integer", file=sys.stderr)
            return EXIT_INPUT

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    if getattr(args, "command", None) == "sweep" and args.step is None:
        args.step = 1.0 if args.param == "memory" else 0.1
    try:
        return args.func(args)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
