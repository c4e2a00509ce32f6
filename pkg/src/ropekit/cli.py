"""Command-line entry point.

Subcommands: ``analyze`` (per-dimension table and critical indices),
``factors`` (closed-form factor files), ``search`` (evolutionary factor
search), ``synth`` (needle corpus synthesis), ``pack`` (mixed-window
packing plans), and ``export`` (search result to factor file).  Every run
echoes its resolved configuration, defaults included, to stderr so output
files can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import jsonutil
from .core import (
    RopeConfig,
    coverage_dimension,
    decay_profile,
    ood_report,
    periods,
    rotation_angles,
    theoretical_critical_dimension,
)
from .errors import RopeKitError
from .needles import WhitespaceTokenizer, build_corpus, write_corpus
from .packing import DocSpec, plan_packing, write_plan
from .protocol import (
    NEEDLE_PPL,
    FULL_PPL,
    EvaluatorClient,
    RemoteEvaluator,
    SubprocessTransport,
    SurrogateEvaluator,
    TcpTransport,
    default_surrogate_spec,
)
from .rescale import (
    RescaleFactors,
    RescaleMethod,
    export_factors,
    factors_from_base,
    load_factors,
    ntk_base,
    pi_factors,
    yarn_factors,
)
from .search import SearchParams, evolve, result_document

PRESETS = {
    "phi3-mini": {"theta_base": 10000.0, "head_dim": 96, "pretrained_len": 2048},
    "llama3-8b": {"theta_base": 500000.0, "head_dim": 128, "pretrained_len": 8192},
}
DEFAULT_TARGET_LEN = 131072


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("extension problem")
    group.add_argument("--preset", choices=sorted(PRESETS), help="named base-model geometry")
    group.add_argument("--theta-base", type=float, help="rotary base value")
    group.add_argument("--head-dim", type=int, help="attention head dimension (even)")
    group.add_argument("--pretrained-len", type=int, help="pre-trained context window")
    group.add_argument(
        "--target-len",
        type=int,
        help=f"target context window (default {DEFAULT_TARGET_LEN})",
    )
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    parser.add_argument(
        "--format", choices=["table", "csv"], default="table", help="report format"
    )


def _resolve_config(args: argparse.Namespace) -> RopeConfig:
    values = dict(PRESETS[args.preset]) if args.preset else {}
    for key in ("theta_base", "head_dim", "pretrained_len", "target_len"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    values.setdefault("target_len", DEFAULT_TARGET_LEN)
    missing = [k for k in ("theta_base", "head_dim", "pretrained_len") if k not in values]
    if missing:
        raise RopeKitError(
            f"missing {', '.join('--' + m.replace('_', '-') for m in missing)}"
            " (or use --preset)"
        )
    return RopeConfig(**values)


def _echo_resolved(args: argparse.Namespace, config: RopeConfig | None, extra: dict) -> None:
    doc = {"command": args.command, "seed": getattr(args, "seed", None)}
    if config is not None:
        doc.update(
            theta_base=config.theta_base,
            head_dim=config.head_dim,
            pretrained_len=config.pretrained_len,
            target_len=config.target_len,
        )
    doc.update(extra)
    print("resolved-config " + jsonutil.dumps(doc), file=sys.stderr)


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# analyze


def _cmd_analyze(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    _echo_resolved(args, config, {"format": args.format, "decay": args.decay})
    angles = rotation_angles(config)
    pers = periods(config)
    tcd = theoretical_critical_dimension(config)
    cov10 = coverage_dimension(config, 10)
    per_window = config.pretrained_len / pers

    rows = []
    for i in range(config.n_cosine_dims):
        rows.append(
            (i, angles[i], pers[i], per_window[i], "yes" if i >= tcd.cosine_index else "no")
        )
    if args.format == "csv":
        lines = ["cosine_dim,angle,period,periods_per_window,ood_at_target"]
        for i, a, t, r, flag in rows:
            lines.append(
                f"{i},{jsonutil.format_float(a)},{jsonutil.format_float(t)},"
                f"{jsonutil.format_float(r)},{flag}"
            )
        body = "\n".join(lines) + "\n"
    else:
        lines = [
            f"theoretical critical dimension: full {tcd.full_index}, cosine {tcd.cosine_index}",
            f"coverage-10 dimension (cosine): {cov10}",
            f"extension ratio s = {config.extension_ratio:g}",
            f"{'dim':>4} {'angle':>14} {'period':>14} {'periods/window':>15} {'ood':>4}",
        ]
        for i, a, t, r, flag in rows:
            lines.append(f"{i:>4} {a:>14.6e} {t:>14.2f} {r:>15.4f} {flag:>4}")
        body = "\n".join(lines) + "\n"

    if args.decay:
        profile = decay_profile(angles, args.decay)
        if args.format == "csv":
            body += "distance,decay_measure_draft\n"
            body += "".join(
                f"{d},{jsonutil.format_float(v)}\n" for d, v in enumerate(profile)
            )
        else:
            body += "attention decay measure (draft diagnostic):\n"
            step = max(1, args.decay // 16)
            for d in range(0, args.decay + 1, step):
                body += f"  distance {d:>8}: {profile[d]:.4f}\n"
    _write_text(args.out, body)
    return 0


# ---------------------------------------------------------------------------
# factors


def _cmd_factors(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    _echo_resolved(
        args,
        config,
        {
            "method": args.method,
            "yarn_alpha": args.yarn_alpha,
            "yarn_beta": args.yarn_beta,
            "base": args.base,
        },
    )
    if args.method == "pi":
        factors = pi_factors(config)
    elif args.method == "ntk":
        base = args.base if args.base is not None else ntk_base(config)
        factors = factors_from_base(config, base)
    else:
        factors = yarn_factors(config, alpha=args.yarn_alpha, beta=args.yarn_beta)
    export_factors(factors, args.out)
    report = ood_report(config, factors, factors.critical_cos_index)
    status = "clean" if report.clean else f"violations at dims {list(report.violating_dims)}"
    print(
        f"wrote {args.out}: method={factors.method.value}"
        f" critical_cos_index={factors.critical_cos_index} ood={status}"
    )
    return 0


# ---------------------------------------------------------------------------
# search


def _cmd_search(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    params = SearchParams(
        population_size=args.population,
        iterations=args.iterations,
        mutation_prob=args.mutation_prob,
        topk=args.topk,
        seed=args.seed,
    )
    _echo_resolved(
        args,
        config,
        {
            "population_size": params.population_size,
            "iterations": params.iterations,
            "mutation_prob": params.mutation_prob,
            "topk": params.topk,
            "jobs": args.jobs,
            "surrogate": args.surrogate,
            "evaluator_cmd": args.evaluator_cmd,
            "evaluator_tcp": args.evaluator_tcp,
            "mode": args.mode,
        },
    )

    client = None
    try:
        if args.surrogate:
            evaluator = SurrogateEvaluator(default_surrogate_spec(config))
        elif args.evaluator_cmd:
            client = EvaluatorClient(SubprocessTransport(args.evaluator_cmd.split()))
            evaluator = RemoteEvaluator(
                client,
                corpus_ref=args.corpus or "",
                mode=NEEDLE_PPL if args.mode == "needle" else FULL_PPL,
            )
        elif args.evaluator_tcp:
            host, _, port = args.evaluator_tcp.rpartition(":")
            client = EvaluatorClient(TcpTransport(host, int(port)))
            evaluator = RemoteEvaluator(
                client,
                corpus_ref=args.corpus or "",
                mode=NEEDLE_PPL if args.mode == "needle" else FULL_PPL,
            )
        else:
            raise RopeKitError(
                "no evaluator: pass --surrogate, --evaluator-cmd, or --evaluator-tcp"
            )
        result = evolve(config, evaluator, params, jobs=args.jobs)
    finally:
        if client is not None:
            client.close()

    doc = result_document(config, params, result)
    _write_text(args.out, jsonutil.dumps(doc, indent=2) + "\n")

    factors_path = args.factors_out
    if factors_path is None and args.out not in (None, "-"):
        factors_path = str(Path(args.out).with_suffix("")) + ".factors.json"
    if factors_path:
        factors = RescaleFactors(
            method=RescaleMethod.SEARCHED,
            lambdas=result.best.lambdas,
            critical_cos_index=result.best.d_rcd_cos,
            source_config=config,
        )
        export_factors(factors, factors_path)
    print(
        f"best fitness {result.best.fitness:.6g} at d_rcd_cos={result.best.d_rcd_cos}"
        f" after {result.evaluations} evaluations"
    )
    return 0


# ---------------------------------------------------------------------------
# synth / pack / export


def _cmd_synth(args: argparse.Namespace) -> int:
    _echo_resolved(
        args,
        None,
        {
            "input_dir": args.input_dir,
            "samples": args.samples,
            "target_tokens": args.target_tokens,
            "out": args.out,
        },
    )
    paths = sorted(Path(args.input_dir).glob("*.txt"))
    if not paths:
        raise RopeKitError(f"no .txt files found in {args.input_dir}")
    books = [p.read_text(encoding="utf-8") for p in paths]
    rng = np.random.Generator(np.random.PCG64(args.seed))
    samples = build_corpus(
        books, args.samples, args.target_tokens, WhitespaceTokenizer(), rng
    )
    write_corpus(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_pack(args: argparse.Namespace) -> int:
    import json

    _echo_resolved(
        args,
        None,
        {
            "docs": args.docs,
            "window_len": args.window_len,
            "pretrained_len": args.pretrained_len,
            "quotas": args.quotas,
            "bucket_bounds": args.bucket_bounds,
        },
    )
    if args.pretrained_len is None:
        raise RopeKitError("--pretrained-len is required for pack")
    docs = []
    for line in Path(args.docs).read_text(encoding="utf-8").splitlines():
        if line.strip():
            doc = json.loads(line)
            docs.append(DocSpec(doc_id=str(doc["doc_id"]), token_len=int(doc["token_len"])))
    quotas = [float(v) for v in args.quotas.split(",")] if args.quotas else None
    bounds = (
        [int(v) for v in args.bucket_bounds.split(",")] if args.bucket_bounds else None
    )
    segments = plan_packing(
        docs, args.window_len, args.pretrained_len, quotas=quotas, bucket_bounds=bounds
    )
    write_plan(segments, args.out)
    n_short = sum(1 for s in segments if s.mode.value == "short")
    print(f"wrote {len(segments)} segments ({n_short} short) to {args.out}")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    import json

    _echo_resolved(args, None, {"from_search": args.from_search, "from_factors": args.from_factors})
    if bool(args.from_search) == bool(args.from_factors):
        raise RopeKitError("pass exactly one of --from-search / --from-factors")
    if args.from_search:
        doc = json.loads(Path(args.from_search).read_text(encoding="utf-8"))
        config = RopeConfig(
            theta_base=float(doc["config"]["theta_base"]),
            head_dim=int(doc["config"]["head_dim"]),
            pretrained_len=int(doc["config"]["pretrained_len"]),
            target_len=int(doc["config"]["target_len"]),
        )
        factors = RescaleFactors(
            method=RescaleMethod.SEARCHED,
            lambdas=np.asarray(doc["best"]["lambdas"], dtype=np.float64),
            critical_cos_index=int(doc["best"]["d_rcd_cos"]),
            source_config=config,
        )
    else:
        factors = load_factors(args.from_factors)
    export_factors(factors, args.out)
    report = ood_report(factors.source_config, factors, factors.critical_cos_index)
    print(f"wrote {args.out}: ood={'clean' if report.clean else 'violations'}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ropekit",
        description="Rotary-embedding context window extension toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="per-dimension angle/period/ood report")
    _add_config_flags(p)
    p.add_argument("--decay", type=int, default=0, help="append decay profile to this distance")
    p.add_argument("--out", help="write report here instead of stdout")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("factors", help="generate a closed-form factor file")
    _add_config_flags(p)
    p.add_argument("--method", required=True, choices=["pi", "ntk", "yarn"])
    p.add_argument("--yarn-alpha", type=float, default=1.0, help="periods/window bound for full scaling")
    p.add_argument("--yarn-beta", type=float, default=32.0, help="periods/window bound for no scaling")
    p.add_argument("--base", type=float, help="explicit rescaled base (ntk only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_factors)

    p = sub.add_parser("search", help="evolutionary factor search")
    _add_config_flags(p)
    p.add_argument("--population", type=int, default=64)
    p.add_argument("--iterations", type=int, default=40)
    p.add_argument("--mutation-prob", type=float, default=0.3)
    p.add_argument("--topk", type=int, default=16)
    p.add_argument("--jobs", type=int, default=1, help="parallel fitness evaluations")
    p.add_argument("--surrogate", action="store_true", help="use the built-in surrogate fitness")
    p.add_argument("--evaluator-cmd", help="spawn this command as a protocol evaluator")
    p.add_argument("--evaluator-tcp", help="connect to host:port protocol evaluator")
    p.add_argument("--corpus", help="corpus path passed to the evaluator")
    p.add_argument("--mode", choices=["needle", "full"], default="needle")
    p.add_argument("--out", required=True, help="search result JSON")
    p.add_argument("--factors-out", help="factor file for the best candidate")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("synth", help="synthesize a needle corpus from text files")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--target-tokens", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pack", help="plan mixed-window packing for doc specs")
    p.add_argument("--docs", required=True, help="JSONL of {doc_id, token_len}")
    p.add_argument("--window-len", type=int, required=True)
    p.add_argument("--pretrained-len", type=int, required=True)
    p.add_argument("--quotas", help="comma fractions per bucket, e.g. 0.3,0.3,0.4")
    p.add_argument("--bucket-bounds", help="comma token bounds, e.g. 2048,100000")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pack)

    p = sub.add_parser("export", help="emit a factor file from a search result")
    p.add_argument("--from-search", help="search result JSON")
    p.add_argument("--from-factors", help="existing factor file to re-validate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RopeKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
