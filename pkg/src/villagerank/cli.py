"""Single entry-point command exposing the pipeline stages.

Subcommands: describe, compose, rank, rate, eval, regress, report.  Outputs
are written atomically (temp file + rename) and every ranking run echoes its
fully resolved configuration into ``run.json`` for reproducibility.

Exit codes: 0 success, 1 usage, 2 data error, 3 remote-judge failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .composer import ComposeConfig, ComposeError, compose_files
from .corpus import Cohort, CorpusError, load_manifest, load_survey
from .econometrics import (
    STANDARD_MODELS,
    ModelSpec,
    RegressionError,
    fit_model,
    format_report,
    quad_vertex,
    vif,
    build_design,
)
from .judge import (
    CriteriaConfig,
    DescriptionCache,
    JudgeError,
    NoiseKind,
    NoiseModel,
    RemoteJudgeConfig,
    RemoteJudge,
    RemoteJudgeError,
    SimulatedJudge,
    VotePolicy,
    describe_item,
)
from .metrics import RankingMismatchError, footrule, footrule_similarity
from .ranker import (
    BudgetLedger,
    JsonlLogWriter,
    RankerConfig,
    RankerError,
    ReplayAdjudicator,
    VotingAdjudicator,
    rank_cohort,
    read_comparison_log,
    read_ranking_csv,
    write_ledger_csv,
    write_ranking_csv,
)
from .rating import (
    RatingError,
    RatingParams,
    ScoreStrategy,
    aggregate,
    rate_log,
    to_scores,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_REMOTE = 3


class UsageError(Exception):
    """Bad flags or subcommand; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_json(path: Path, payload) -> None:
    _atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _progress(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _load_toml(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _setting(args: argparse.Namespace, file_cfg: dict, name: str, default):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in file_cfg:
        return file_cfg[name]
    return default


# ---------------------------------------------------------------------------
# Subcommands


def _add_compose(sub) -> None:
    p = sub.add_parser("compose", help="render a side-by-side pair image")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gap", type=int, default=None)
    p.add_argument("--border", type=int, default=None)
    p.add_argument("--max-width", type=int, default=None)
    p.add_argument("--max-height", type=int, default=None)


def _cmd_compose(args: argparse.Namespace, file_cfg: dict) -> int:
    cfg = ComposeConfig(
        gap_px=_setting(args, file_cfg, "gap", 500),
        border_px=_setting(args, file_cfg, "border", 80),
        max_width_px=_setting(args, file_cfg, "max_width", 3060),
        max_height_px=_setting(args, file_cfg, "max_height", 1440),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    # render to a temp name in the same directory, then move into place
    tmp = out.with_name(f".{out.name}.tmp{out.suffix or '.png'}")
    plan = compose_files(args.left, args.right, tmp, cfg)
    os.replace(tmp, out)
    print(f"wrote {out} canvas={plan.canvas[0]}x{plan.canvas[1]} scale={plan.scale_factor:.4f}")
    return EXIT_OK


def _add_describe(sub) -> None:
    p = sub.add_parser("describe", help="generate per-item description cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", required=True, help="JSONL description cache path")
    p.add_argument("--endpoint-url", required=True)
    p.add_argument("--model-name", required=True)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--max-retries", type=int, default=None)
    p.add_argument("--rate-limit", type=float, default=None)
    p.add_argument("--criteria", default=None, help="criteria JSON override")


def _remote_config(args: argparse.Namespace, file_cfg: dict) -> RemoteJudgeConfig:
    endpoint = getattr(args, "endpoint_url", None) or file_cfg.get("endpoint_url")
    model = getattr(args, "model_name", None) or file_cfg.get("model_name")
    if not endpoint or not model:
        raise UsageError("remote judging requires --endpoint-url and --model-name")
    return RemoteJudgeConfig(
        endpoint_url=endpoint,
        model_name=model,
        temperature=_setting(args, file_cfg, "temperature", 0.2),
        max_tokens=_setting(args, file_cfg, "max_tokens", 1024),
        timeout=_setting(args, file_cfg, "timeout", 60.0),
        max_retries=_setting(args, file_cfg, "max_retries", 3),
        rate_limit=_setting(args, file_cfg, "rate_limit", None),
    )


def _criteria(args: argparse.Namespace, file_cfg: dict) -> CriteriaConfig:
    path = getattr(args, "criteria", None) or file_cfg.get("criteria")
    if path:
        return CriteriaConfig.from_json_file(path)
    return CriteriaConfig()


def _cmd_describe(args: argparse.Namespace, file_cfg: dict) -> int:
    cohort = load_manifest(args.manifest)
    remote_cfg = _remote_config(args, file_cfg)
    crit = _criteria(args, file_cfg)
    cache = DescriptionCache(args.cache)
    generated = 0
    for index, item in enumerate(cohort, start=1):
        if item.id in cache:
            _progress(f"describe {index}/{len(cohort)} id={item.id} (cached)")
            continue
        text = describe_item(item, remote_cfg, crit)
        cache.put(item.id, text)
        generated += 1
        _progress(f"describe {index}/{len(cohort)} id={item.id}")
    print(f"descriptions ready: {len(cache)} cached ({generated} new)")
    return EXIT_OK


def _add_rank(sub) -> None:
    p = sub.add_parser("rank", help="rank a cohort with a pairwise judge")
    p.add_argument("--manifest", required=True)
    p.add_argument("--judge", choices=("sim", "remote", "replay"), default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None, help="TOML defaults file")
    p.add_argument("--rng-seed", type=int, default=None)
    p.add_argument("--seed-size", type=int, default=None)
    p.add_argument("--shuffle", action="store_true", default=None)
    p.add_argument("--no-top-up", dest="top_up", action="store_false", default=None)
    p.add_argument("--top-up-threshold", type=int, default=None)
    p.add_argument(
        "--seed-order",
        default=None,
        help="comma-separated item ids fixing the seed ranking",
    )
    p.add_argument(
        "--noise",
        choices=tuple(k.value for k in NoiseKind),
        default=None,
    )
    p.add_argument("--sensitivity", type=float, default=None)
    p.add_argument("--vote-min", type=int, default=None)
    p.add_argument("--vote-max", type=int, default=None)
    p.add_argument("--vote-agree", type=int, default=None)
    p.add_argument("--replay-log", default=None, help="stored comparison log (replay judge)")
    p.add_argument("--descriptions", default=None, help="description cache JSONL (remote judge)")
    p.add_argument("--endpoint-url", default=None)
    p.add_argument("--model-name", default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--timeout", type=float, default=None)
    p.add_argument("--max-retries", type=int, default=None)
    p.add_argument("--rate-limit", type=float, default=None)
    p.add_argument("--criteria", default=None)


def _cmd_rank(args: argparse.Namespace, file_cfg: dict) -> int:
    cohort = load_manifest(args.manifest)
    judge_kind = _setting(args, file_cfg, "judge", "sim")
    rng_seed = _setting(args, file_cfg, "rng_seed", 0)
    policy = VotePolicy(
        min_votes=_setting(args, file_cfg, "vote_min", 2),
        max_votes=_setting(args, file_cfg, "vote_max", 3),
        required_agreement=_setting(args, file_cfg, "vote_agree", 2),
    )
    seed_order = _setting(args, file_cfg, "seed_order", None)
    if isinstance(seed_order, str):
        seed_order = tuple(s.strip() for s in seed_order.split(",") if s.strip())
    config = RankerConfig(
        seed_size=_setting(args, file_cfg, "seed_size", 10),
        explicit_seed_order=tuple(seed_order) if seed_order else None,
        shuffle_insertions=bool(_setting(args, file_cfg, "shuffle", False)),
        rng_seed=rng_seed,
        top_up=bool(_setting(args, file_cfg, "top_up", True)),
        top_up_threshold=_setting(args, file_cfg, "top_up_threshold", 20),
    )

    resolved: dict = {
        "command": "rank",
        "version": __version__,
        "manifest": str(args.manifest),
        "judge": judge_kind,
        "rng_seed": rng_seed,
        "vote_policy": dataclasses.asdict(policy),
        "ranker": {
            "seed_size": config.seed_size,
            "explicit_seed_order": list(config.explicit_seed_order or ()),
            "shuffle_insertions": config.shuffle_insertions,
            "top_up": config.top_up,
            "top_up_threshold": config.top_up_threshold,
        },
    }

    if judge_kind == "sim":
        noise = NoiseModel(
            kind=NoiseKind(_setting(args, file_cfg, "noise", "bradley-terry")),
            sensitivity=_setting(args, file_cfg, "sensitivity", 1.0),
            rng_seed=rng_seed,
        )
        adjudicator = VotingAdjudicator(SimulatedJudge(noise), policy, rng_seed)
        resolved["noise"] = {
            "kind": noise.kind.value,
            "sensitivity": noise.sensitivity,
            "rng_seed": noise.rng_seed,
        }
    elif judge_kind == "replay":
        replay_log = _setting(args, file_cfg, "replay_log", None)
        if not replay_log:
            raise UsageError("replay judging requires --replay-log")
        if not Path(replay_log).exists():
            raise RankerError(f"replay log not found: {replay_log}")
        adjudicator = ReplayAdjudicator(read_comparison_log(replay_log))
        resolved["replay_log"] = str(replay_log)
    else:
        remote_cfg = _remote_config(args, file_cfg)
        crit = _criteria(args, file_cfg)
        cache_path = _setting(args, file_cfg, "descriptions", None)
        if not cache_path:
            raise UsageError("remote judging requires --descriptions cache path")
        judge = RemoteJudge(remote_cfg, DescriptionCache(cache_path), crit)
        adjudicator = VotingAdjudicator(judge, policy, rng_seed)
        resolved["remote"] = {
            "endpoint_url": remote_cfg.endpoint_url,
            "model_name": remote_cfg.model_name,
            "temperature": remote_cfg.temperature,
            "max_tokens": remote_cfg.max_tokens,
            "timeout": remote_cfg.timeout,
            "max_retries": remote_cfg.max_retries,
            "rate_limit": remote_cfg.rate_limit,
            "descriptions": str(cache_path),
        }

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved["outputs"] = {
        "ranking": "ranking.csv",
        "comparison_log": "comparisons.jsonl",
        "ledger": "ledger.csv",
    }
    _atomic_write_json(out_dir / "run.json", resolved)

    log_path = out_dir / "comparisons.jsonl"
    if log_path.exists():
        log_path.unlink()
    with JsonlLogWriter(log_path) as sink:
        result = rank_cohort(cohort, adjudicator, config, sink=sink, progress=_progress)

    ranking_lines = ["rank,item_id"] + [
        f"{i},{item_id}" for i, item_id in enumerate(result.ranking, start=1)
    ]
    _atomic_write_text(out_dir / "ranking.csv", "\n".join(ranking_lines) + "\n")
    ledger_lines = ["item_id,appearances"] + [
        f"{item_id},{count}"
        for item_id, count in sorted(result.ledger.appearances.items())
    ]
    _atomic_write_text(out_dir / "ledger.csv", "\n".join(ledger_lines) + "\n")
    print(
        f"ranked {len(result.ranking)} items: "
        f"{result.ledger.total_adjudications} adjudications, "
        f"{result.ledger.total_base_calls} base judge calls -> {out_dir}"
    )
    return EXIT_OK


def _add_rate(sub) -> None:
    p = sub.add_parser("rate", help="convert a comparison log into scores")
    p.add_argument("--log", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="scores CSV path")
    p.add_argument(
        "--strategy", choices=("minmax", "raw-mu", "conservative"), default="minmax"
    )
    p.add_argument("--k", type=float, default=3.0, help="conservative multiplier")
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=100.0)
    p.add_argument("--group-by", choices=("county", "province"), default=None)
    p.add_argument("--aggregate-out", default=None)


def _cmd_rate(args: argparse.Namespace, file_cfg: dict) -> int:
    cohort = load_manifest(args.manifest)
    log_path = Path(args.log)
    if not log_path.exists():
        raise RankerError(f"comparison log not found: {log_path}")
    records = read_comparison_log(log_path)
    if not records:
        logger.warning("comparison log %s is empty; all items keep their priors", log_path)
        print(f"warning: empty log {log_path}; emitting prior ratings", file=sys.stderr)

    params = RatingParams()
    ratings = rate_log(records, cohort.ids(), params)
    if args.strategy == "raw-mu":
        strategy = ScoreStrategy.raw_mu()
    elif args.strategy == "conservative":
        strategy = ScoreStrategy.conservative(args.k)
    else:
        strategy = ScoreStrategy.min_max(args.lo, args.hi)
    try:
        scores = to_scores(ratings, strategy)
    except RatingError as exc:
        if args.strategy == "minmax" and not records:
            # prior-only table has all-equal mu; fall back to reporting mu
            logger.warning("minmax undefined on priors (%s); using raw mu", exc)
            scores = to_scores(ratings, ScoreStrategy.raw_mu())
        else:
            raise

    by_id = cohort.by_id()
    out_lines = ["item_id,mu,sigma,score,province,county"]
    for item in cohort:
        rating = ratings[item.id]
        out_lines.append(
            f"{item.id},{rating.mu:.6f},{rating.sigma:.6f},"
            f"{scores[item.id]:.6f},{by_id[item.id].province},{by_id[item.id].county}"
        )
    _atomic_write_text(Path(args.out), "\n".join(out_lines) + "\n")

    if args.group_by:
        stats = aggregate(scores, cohort.items, args.group_by)
        agg_lines = ["group,mean,count,min,max"] + [
            f"{s.group},{s.mean:.6f},{s.count},{s.min:.6f},{s.max:.6f}" for s in stats
        ]
        target = Path(args.aggregate_out or f"{args.out}.{args.group_by}.csv")
        _atomic_write_text(target, "\n".join(agg_lines) + "\n")
        print(f"wrote {args.out} and {target}")
    else:
        print(f"wrote {args.out}")
    return EXIT_OK


def _add_eval(sub) -> None:
    p = sub.add_parser("eval", help="compare a ranking against a reference")
    p.add_argument("--ranking", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--json", action="store_true")


def _cmd_eval(args: argparse.Namespace, file_cfg: dict) -> int:
    ranking = read_ranking_csv(args.ranking)
    truth = read_ranking_csv(args.truth)
    distance = footrule(ranking, truth)
    similarity = footrule_similarity(ranking, truth)
    if args.json:
        print(
            json.dumps(
                {
                    "n": len(ranking),
                    "footrule": distance,
                    "max_footrule": (len(ranking) ** 2) // 2,
                    "similarity": similarity,
                }
            )
        )
    else:
        print(f"footrule distance: {distance}")
        print(f"similarity: {similarity:g}")
    return EXIT_OK


def _add_regress(sub) -> None:
    p = sub.add_parser("regress", help="fit one livability model")
    p.add_argument("--survey", required=True)
    p.add_argument(
        "--livability-from",
        default=None,
        help="aggregate CSV supplying livability means by county_id",
    )
    p.add_argument("--terms", default="tem2,tem,ter,fin,cinc,vinc")
    p.add_argument("--no-intercept", dest="intercept", action="store_false")
    p.add_argument("--vif", action="store_true", help="also print VIF diagnostics")
    p.add_argument("--json", action="store_true")


def _merge_livability(rows, agg_path: str):
    """Fill missing livability from an aggregate CSV (group,mean,...)."""
    means: dict[str, float] = {}
    with open(agg_path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "group" not in reader.fieldnames:
            raise CorpusError(f"{agg_path}: expected aggregate CSV with a 'group' column")
        for record in reader:
            means[record["group"]] = float(record["mean"])
    merged = []
    for row in rows:
        if row.livability is None and row.county_id in means:
            row = dataclasses.replace(row, livability=means[row.county_id])
        merged.append(row)
    return merged


def _cmd_regress(args: argparse.Namespace, file_cfg: dict) -> int:
    rows = load_survey(args.survey)
    if args.livability_from:
        rows = _merge_livability(rows, args.livability_from)
    spec = ModelSpec.parse(args.terms, intercept=args.intercept)
    report = fit_model(rows, spec)

    payload = report.to_json()
    if "tem2" in spec.include:
        vertex = quad_vertex(report.term("tem2").coef, report.term("tem").coef)
        payload["temperature_vertex"] = vertex.vertex
        payload["temperature_shape"] = vertex.shape
    if args.vif:
        design = build_design(rows, spec)
        payload["vif"] = {e.name: e.vif for e in vif(design.X, design.names)}

    if args.json:
        print(json.dumps(payload, default=str))
    else:
        print(format_report([report]))
        if "temperature_vertex" in payload:
            print(
                f"temperature vertex: {payload['temperature_vertex']:.2f} C "
                f"({payload['temperature_shape']})"
            )
        if "vif" in payload:
            for name, value in payload["vif"].items():
                print(f"VIF {name}: {value:.3f}")
    return EXIT_OK


def _add_report(sub) -> None:
    p = sub.add_parser("report", help="fit the standard model ladder and print the table")
    p.add_argument("--survey", required=True)
    p.add_argument("--livability-from", default=None)
    p.add_argument("--json", action="store_true")


def _cmd_report(args: argparse.Namespace, file_cfg: dict) -> int:
    rows = load_survey(args.survey)
    if args.livability_from:
        rows = _merge_livability(rows, args.livability_from)
    reports = [fit_model(rows, spec) for spec in STANDARD_MODELS]
    if args.json:
        print(json.dumps([r.to_json() for r in reports]))
    else:
        print(format_report(reports))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Dispatch


def build_parser() -> _Parser:
    parser = _Parser(prog="villagerank", description=__doc__)
    parser.add_argument("--config", default=None, help="TOML defaults file")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_describe(sub)
    _add_compose(sub)
    _add_rank(sub)
    _add_rate(sub)
    _add_eval(sub)
    _add_regress(sub)
    _add_report(sub)
    return parser


_COMMANDS = {
    "describe": _cmd_describe,
    "compose": _cmd_compose,
    "rank": _cmd_rank,
    "rate": _cmd_rate,
    "eval": _cmd_eval,
    "regress": _cmd_regress,
    "report": _cmd_report,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Parse arguments and run exactly one subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE

    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO, stream=sys.stderr)

    try:
        file_cfg = _load_toml(getattr(args, "config", None))
        return _COMMANDS[args.command](args, file_cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except RemoteJudgeError as exc:
        print(f"remote judge failure: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except (
        CorpusError,
        ComposeError,
        RankerError,
        RatingError,
        RegressionError,
        RankingMismatchError,
        JudgeError,
        FileNotFoundError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
