"""Command-line entry point.

Every command writes one JSON document (to ``--out`` or stdout).  Exit
codes: 0 success, 1 internal invariant breach, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import core, diagnostics, ingest, losses, metrics, setcover
from .errors import InputError, InvariantError, UrecaError
from .jsonio import dumps

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("ureca") / "fixtures" / name))


def resolve_manifest(ref: str) -> Path:
    if ref.startswith("fixture:"):
        return fixture_path(ref[len("fixture:"):]) / "manifest.json"
    return Path(ref)


def _threads() -> int:
    raw = os.environ.get("URECA_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        raise InputError(f"URECA_THREADS must be an integer, got {raw!r}") from None


def _emit(doc, args) -> None:
    text = dumps(doc, pretty=getattr(args, "pretty", False))
    out = getattr(args, "out", None)
    if out and out != "-":
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise InputError(f"cannot write {out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg})") from None


def _transport_config(args) -> core.TransportConfig:
    return core.TransportConfig(
        mode=args.mode,
        max_recursion_num=args.max_recursion,
        log_prior=args.log_prior,
        renormalize_after_drop=args.renorm,
    )


def _run_traces(batch, cfg, anchors=None) -> list[core.RecursionTrace]:
    anchors = list(range(batch.n)) if anchors is None else anchors
    E = core.init_evidence(batch)
    dyn = core.init_dynamics(batch)

    def one(a):
        return core.run_recursion(batch, a, cfg, evidence=E, dynamics=dyn)

    workers = min(_threads(), len(anchors))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, anchors))
    return [one(a) for a in anchors]


def traces_document(traces, cfg: core.TransportConfig) -> dict:
    return {
        "schema": core.TRACE_SCHEMA,
        "config": {
            "mode": cfg.mode.value,
            "max_recursion_num": cfg.max_recursion_num,
            "log_prior": cfg.log_prior,
            "renormalize_after_drop": cfg.renormalize,
        },
        "traces": [t.to_dict() for t in traces],
    }


def cmd_gen(args) -> int:
    batch = ingest.gen_synthetic(args.n, args.m, args.dim, args.shift, args.seed)
    save = ingest.save_binary if args.format == "binary" else ingest.save_text
    manifest = save(batch, args.out)
    sys.stdout.write(dumps({"manifest": str(manifest), "n": batch.n, "m": batch.m, "dim": batch.dim}))
    return EXIT_OK


def cmd_sample(args) -> int:
    batch = ingest.load_batch(resolve_manifest(args.manifest))
    sub = ingest.sample_fewshot(batch, args.k, args.seed)
    save = ingest.save_binary if args.format == "binary" else ingest.save_text
    manifest = save(sub, args.out)
    sys.stdout.write(dumps({"manifest": str(manifest), "n": sub.n, "m": sub.m, "query_ids": list(sub.query_ids)}))
    return EXIT_OK


def cmd_cluster(args) -> int:
    batch = ingest.load_batch(resolve_manifest(args.manifest))
    cfg = _transport_config(args)
    traces = _run_traces(batch, cfg, args.anchor)
    _emit(traces_document(traces, cfg), args)
    return EXIT_OK


def _partitions_from_file(path) -> losses.PartitionSet:
    doc = _read_json(path)
    try:
        return losses.PartitionSet.from_pairs({t["anchor"]: (t["K"], t["L"]) for t in doc["traces"]})
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed trace document ({exc})") from None


def cmd_loss(args) -> int:
    batch = ingest.load_batch(resolve_manifest(args.manifest))
    if args.traces:
        parts = _partitions_from_file(args.traces)
    else:
        parts = losses.PartitionSet.from_traces(_run_traces(batch, _transport_config(args)))
    report = losses.combined_loss(batch, parts, args.temperature)
    doc = report.to_dict()
    doc["temperature"] = args.temperature
    _emit(doc, args)
    return EXIT_OK


def cmd_eval(args) -> int:
    batch = ingest.load_batch(resolve_manifest(args.manifest))
    result = metrics.evaluate(core.init_evidence(batch), batch.gt, args.k)
    _emit(result.to_dict(), args)
    return EXIT_OK


def _parse_dist(text: str) -> setcover.DyadicDistribution:
    pairs = []
    for item in text.split(","):
        if "=" not in item:
            raise InputError(f"distribution entries look like label=p, got {item!r}")
        label, p = item.split("=", 1)
        pairs.append((label.strip(), p.strip()))
    return setcover.DyadicDistribution.create(pairs)


def _fmt_set(labels) -> str:
    return "{" + ",".join(labels) + "}"


def chain_narrative(dist, chains: setcover.ChainResult) -> list[str]:
    lab = dist.atom_label
    lines = [f"atoms: {_fmt_set(lab(a) for a in range(dist.n_atoms))}"]
    for e, p in dist.events:
        pred = chains.predecessors[e]
        picks = " then ".join(_fmt_set(lab(a) for a in part) for part in pred.parts)
        lines.append(f"{e} (p={p}): predecessor cover picks {picks}")
        if pred.residual:
            lines.append(f"{e}: atoms {_fmt_set(lab(a) for a in pred.residual)} admit no further disjoint candidate")
        succ = " then ".join("{" + _fmt_set(lab(a) for a in s[0]) + "}" for s in chains.successors[e])
        lines.append(f"{e}: successor cover picks {succ}")
    for e in dist.labels():
        lines.append(f"select {{{_fmt_set(lab(a) for a in chains.selected[e])}}} for {e}")
    return lines


def cmd_setcover(args) -> int:
    if args.action in ("greedy", "bound"):
        if args.random:
            rng = np.random.default_rng(args.seed)
            checks = [setcover.harmonic_bound_check(setcover.random_instance(rng)) for _ in range(args.random)]
            doc = {
                "instances": args.random,
                "seed": args.seed,
                "all_hold": all(c.holds for c in checks),
                "max_ratio": max(c.greedy_cost / c.opt_cost for c in checks),
            }
        else:
            path = args.instance or fixture_path("five_element.json")
            inst = setcover.SetCoverInstance.from_file(path)
            if args.action == "greedy":
                doc = setcover.greedy_cover(inst).to_dict()
            else:
                doc = setcover.harmonic_bound_check(inst).to_dict()
    elif args.action == "chain-demo":
        dist = _parse_dist(args.dist)
        chains = setcover.build_chains(dist, args.ordering)
        doc = chains.to_dict(dist)
        doc["entropy"] = setcover.entropy_nats(dist)
        doc["narrative"] = chain_narrative(dist, chains)
    else:
        if args.random:
            rng = np.random.default_rng(args.seed)
            checks = [setcover.duality_check(setcover.random_dyadic(rng), args.ordering) for _ in range(args.random)]
            doc = {
                "distributions": args.random,
                "seed": args.seed,
                "all_hold": all(c.holds for c in checks),
                "max_excess": max(c.expected_cover_cost - c.entropy for c in checks),
            }
        else:
            doc = setcover.duality_check(_parse_dist(args.dist), args.ordering).to_dict()
    _emit(doc, args)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    traj = diagnostics.Trajectory.from_json(_read_json(args.trace), args.anchor)
    j_size = args.j_size or len(traj.steps[-1].active)
    params = diagnostics.ConvergenceParams(j_size, args.epsilon, args.alpha, args.burn_in, args.spread_tol)
    report = diagnostics.convergence_report(traj, params)
    doc = report.to_dict()
    doc["spread"] = diagnostics.uniform_spread(traj)
    _emit(doc, args)
    return EXIT_OK


def _output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.add_argument("--pretty", action="store_true", help="indent the JSON output")


def _transport_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=[m.value for m in core.Mode], default="expectation")
    p.add_argument("--max-recursion", type=int, default=10)
    p.add_argument("--log-prior", type=float, default=0.0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--renorm", dest="renorm", action="store_true", default=None,
                   help="renormalize dynamics rows after each drop (default except in literal mode)")
    g.add_argument("--no-renorm", dest="renorm", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ureca", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic embedding batch")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--shift", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--format", choices=["text", "binary"], default="binary")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sample", help="draw a few-shot subset of a batch")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--format", choices=["text", "binary"], default="binary")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("cluster", help="run the recursive clustering for each anchor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--anchor", type=int, action="append", help="restrict to these anchors (repeatable)")
    _transport_flags(p)
    _output_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("loss", help="InfoNCE, auxiliary and combined loss")
    p.add_argument("--manifest", required=True)
    p.add_argument("--traces", help="trace JSON from 'cluster'; computed inline when omitted")
    p.add_argument("--temperature", type=float, default=1.0)
    _transport_flags(p)
    _output_flags(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("eval", help="MRR and recall@k of the initial scores")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, nargs="+", default=[1, 5, 10])
    _output_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("setcover", help="set-cover and entropy duality lab")
    p.add_argument("action", choices=["greedy", "bound", "chain-demo", "duality"])
    p.add_argument("--instance", help="set-cover instance JSON (default: bundled 5-element instance)")
    p.add_argument("--dist", default="a=1/2,b=1/4,c=1/4", help="dyadic distribution, e.g. a=1/2,b=1/4,c=1/4")
    p.add_argument("--ordering", default="lex", help="lex | paper | file:<path>")
    p.add_argument("--random", type=int, default=0, help="check this many seeded random cases instead")
    p.add_argument("--seed", type=int)
    _output_flags(p)
    p.set_defaults(func=cmd_setcover)

    p = sub.add_parser("diagnose", help="convergence report for a recorded trajectory")
    p.add_argument("--trace", required=True, help="trace JSON from 'cluster' or a {\"steps\": [...]} file")
    p.add_argument("--anchor", type=int)
    p.add_argument("--j-size", type=int, help="|K| (default: size of the final active set)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--spread-tol", type=float, default=1e-6)
    _output_flags(p)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "random", 0) and args.seed is None:
        parser.error("--random needs --seed")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"ureca: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantError, UrecaError) as exc:
        print(f"ureca: internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
