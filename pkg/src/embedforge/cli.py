"""Command-line entry point: one subcommand per pipeline stage.

Every subcommand takes ``--out`` and ``--seed``, may read defaults from a
TOML ``--config`` file (a table named after the subcommand, or top-level
keys), and writes ``<out>.manifest.json`` recording arguments, seed,
timestamps and content hashes of inputs and outputs.

Exit codes: 0 success, 1 domain error (JSON on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .batching import DEFAULT_MIX, TrainingConfig, build_epoch
from .dataset_io import (
    CATEGORIES,
    load_triplets,
    read_qrels,
    write_jsonl,
    write_triplets,
)
from .errors import DanglingReference, EmbedForgeError, FileMissing
from .evaluation import EvalReport, eval_retrieval
from .evaluation.runner import evaluate_manifest
from .filtering import FilterConfig, HttpReranker, ScoreCache, filter_triplets, load_scores, score_triplets
from .generation import Budget, CampaignPlan, HttpChatTransport, ModelRoute, plan_prompt, run_campaign
from .mining import MiningParams, mine_run, read_run
from .topics import TopicDistribution, fit_topic_distribution, load_labeled_queries
from .toy import ToyEncoder, encoder_to_matrix, make_separable_task, train_toy, write_loss_curve
from .vocab import read_matrix, read_token_stats, trim_vocabulary, write_id_map, write_matrix

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("embedforge")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def content_hash(path: str | Path) -> str | None:
    """sha256 of a file, or of ``relative path + file hash`` over a directory tree."""
    path = Path(path)
    if path.is_file():
        return _sha256_file(path)
    if path.is_dir():
        h = hashlib.sha256()
        for p in sorted(q for q in path.rglob("*") if q.is_file()):
            h.update(f"{p.relative_to(path).as_posix()}\0{_sha256_file(p)}\n".encode())
        return h.hexdigest()
    return None


def manifest_path(out: str | Path) -> Path:
    return Path(str(out).rstrip("/") + ".manifest.json")


@dataclasses.dataclass
class RunManifest:
    subcommand: str
    config_path: str | None
    seed: int
    args: dict
    started: float
    finished: float | None = None
    inputs: dict = dataclasses.field(default_factory=dict)
    outputs: dict = dataclasses.field(default_factory=dict)
    status: str = "running"
    version: str = __version__

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands. Each returns (inputs, outputs): lists of paths to hash.
# ---------------------------------------------------------------------------


def _dump_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _load_toml(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"no such file: {path}")
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def cmd_fit_topics(a):
    dist = fit_topic_distribution(load_labeled_queries(a.input))
    dist.save(a.out)
    return [a.input], [a.out]


def _categories(raw: Sequence[str] | str | None) -> list[str]:
    if not raw:
        return list(CATEGORIES)
    names = [raw] if isinstance(raw, str) else list(raw)
    bad = [c for c in names if c not in CATEGORIES]
    if bad:
        raise UsageError(f"unknown categories {bad}; choose from {list(CATEGORIES)}")
    return names


def cmd_gen_prompts(a):
    dist = TopicDistribution.load(a.topics)
    rows = []
    for cat in _categories(a.category):
        for i in range(a.n):
            pp = plan_prompt(dist, cat, i, a.seed)
            rows.append(
                {
                    "id": pp.triplet_id,
                    "category": cat,
                    "index": i,
                    "tier": pp.tier.tier,
                    "hardness": pp.tier.score,
                    "params": pp.params.to_dict(),
                    "prompt": pp.prompt,
                }
            )
    write_jsonl(a.out, rows)
    return [a.topics], [a.out]


def make_transport():
    """Chat transport for ``generate``; replaced in tests."""
    return HttpChatTransport()


def cmd_generate(a):
    camp = _load_toml(a.campaign)
    targets = {str(k): int(v) for k, v in camp.get("targets", {}).items()}
    _categories(list(targets))
    route = ModelRoute.from_config(camp["route"])
    if a.jobs:
        route = ModelRoute(
            {t: dataclasses.replace(r, max_in_flight=min(r.max_in_flight, a.jobs)) for t, r in route.tiers.items()},
            route.temperature,
        )
    b = camp.get("budget", {})
    budget = Budget(float(b.get("limit", float("inf"))), {m: tuple(p) for m, p in b.get("prices", {}).items()})
    journal = Path(a.journal or f"{a.out}.journal.jsonl")
    plan = CampaignPlan(targets, a.seed, route, journal, Path(a.out), budget)
    _, stats = run_campaign(plan, TopicDistribution.load(a.topics), make_transport())
    _dump_json(Path(f"{a.out}.stats.json"), stats.to_dict())
    return [a.topics, a.campaign], [a.out, journal, f"{a.out}.stats.json"]


def cmd_filter(a):
    trips = load_triplets(a.input).triplets
    if a.scores:
        scores = load_scores(a.scores)
        inputs = [a.input, a.scores]
    elif a.reranker_url:
        scores = score_triplets(trips, HttpReranker(a.reranker_url), ScoreCache(a.cache))
        inputs = [a.input]
    else:
        raise UsageError("filter needs --scores or --reranker-url")
    by_id = {s.id: s for s in scores}
    scored = []
    for t in trips:
        if t.category == "sts":
            continue
        if t.id not in by_id:
            raise DanglingReference(t.id, "score")
        scored.append(by_id[t.id])
    kept, rejected = filter_triplets(scored, FilterConfig(a.c))
    keep = set(kept)
    # sts pairs carry graded scores instead of a hard negative and pass through
    write_triplets(a.out, [t for t in trips if t.category == "sts" or t.id in keep])
    outputs = [a.out]
    if a.rejected:
        write_jsonl(a.rejected, [{"id": i, "reason": r} for i, r in rejected])
        outputs.append(a.rejected)
    print(f"kept {len(kept)} of {len(scored)} scored triplets (C={a.c})", file=sys.stderr)
    return inputs, outputs


def cmd_mine_negatives(a):
    params = MiningParams(a.top_n, a.k, a.n_neg, a.seed)
    mined = list(mine_run(read_run(a.run), read_qrels(a.qrels), params))
    write_jsonl(a.out, [m.to_record() for m in mined])
    return [a.run, a.qrels], [a.out]


def _count_lines(path: Path) -> int:
    with open(path, encoding="utf-8") as fh:
        return sum(1 for line in fh if line.strip())


def cmd_build_batches(a):
    inputs = []
    if a.mix:
        doc = _load_toml(a.mix)
        mix = {}
        for name, spec in doc.get("sources", {}).items():
            count = spec.get("count")
            if "path" in spec:
                p = Path(a.mix).parent / spec["path"]
                if not p.is_file():
                    raise FileMissing(f"mix source {name!r}: no such file {p}")
                inputs.append(p)
                n = _count_lines(p)
                count = n if count is None else min(int(count), n)
            if count is None:
                raise UsageError(f"mix source {name!r} needs a path or a count")
            mix[name] = int(count)
        inputs.append(a.mix)
    else:
        mix = dict(DEFAULT_MIX)
    cfg = TrainingConfig(batch_size=a.batch_size, epochs=a.epochs, seed=a.seed)
    rng = np.random.default_rng(a.seed)
    rows = []
    for epoch in range(cfg.epochs):
        for i, batch in enumerate(build_epoch(mix, cfg, rng)):
            rows.append({"epoch": epoch, "batch": i, **batch.to_record()})
    write_jsonl(a.out, rows)
    return inputs, [a.out]


def cmd_train_toy(a):
    cfg = TrainingConfig(
        batch_size=a.batch_size,
        temperature=a.tau,
        learning_rate=a.lr,
        warmup_ratio=a.warmup,
        epochs=a.epochs,
        seed=a.seed,
    )
    held_out = None
    if a.input:
        data = load_triplets(a.input).triplets
        inputs = [a.input]
    elif a.synthetic:
        data, held_out = make_separable_task(seed=a.seed)
        inputs = []
    else:
        raise UsageError("train-toy needs --in or --synthetic")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    init = ToyEncoder.init(a.hash_dim, a.embed_dim, a.seed)
    enc, losses = train_toy(data, cfg, encoder=init)
    write_loss_curve(out / "loss_curve.csv", losses)
    write_matrix(out / "weights.vmat", encoder_to_matrix(enc))
    per_epoch = np.array_split(np.asarray(losses), cfg.epochs)
    summary = {
        "steps": len(losses),
        "first_epoch_mean_loss": float(per_epoch[0].mean()),
        "last_epoch_mean_loss": float(per_epoch[-1].mean()),
    }
    if held_out is not None:
        for name, e in (("random_init", init), ("trained", enc)):
            qids, dids = sorted(held_out.queries), sorted(held_out.corpus)
            res = eval_retrieval(
                e.to_store(qids, [held_out.queries[q] for q in qids]),
                e.to_store(dids, [held_out.corpus[d] for d in dids]),
                held_out,
            )
            summary[f"{name}_ndcg_at_10"] = res["ndcg_at_10"]
    _dump_json(out / "summary.json", summary)
    return inputs, [out]


def cmd_trim_vocab(a):
    specials = []
    for s in a.specials or []:
        specials.extend(x for x in s.split(",") if x)
    mat = read_matrix(a.matrix)
    trimmed, id_map = trim_vocabulary(mat, read_token_stats(a.stats), a.target, specials)
    write_matrix(a.out, trimmed)
    id_map_path = a.id_map or f"{a.out}.idmap.json"
    write_id_map(id_map_path, id_map)
    return [a.matrix, a.stats], [a.out, id_map_path]


def cmd_evaluate(a):
    report = evaluate_manifest(a.manifest, a.emb, seed=a.seed)
    report.save(a.out)
    print(f"AvgD {report.avg_d:.1f}  AvgT {report.avg_t:.1f}  ({len(report.datasets)} datasets)")
    return [a.manifest, Path(a.manifest).parent, a.emb], [a.out]


def cmd_report(a):
    report = EvalReport.from_json(json.loads(Path(a.input).read_text(encoding="utf-8")))
    table = report.to_markdown(a.model)
    Path(a.out).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return [a.input], [a.out]


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

# subcommand -> (handler, required dests, help)
COMMANDS: dict[str, tuple[Callable, tuple[str, ...], str]] = {
    "fit-topics": (cmd_fit_topics, ("input",), "fit P(T1) and P(T2|T1) from labeled queries"),
    "gen-prompts": (cmd_gen_prompts, ("topics", "n"), "render generation prompts without calling a model"),
    "generate": (cmd_generate, ("topics", "campaign"), "run a resumable generation campaign"),
    "filter": (cmd_filter, ("input",), "keep triplets whose reranker margin lies in (0, C)"),
    "mine-negatives": (cmd_mine_negatives, ("run", "qrels"), "hard negative mining below the positive by a top-N std margin"),
    "build-batches": (cmd_build_batches, (), "plan single-source training batches"),
    "train-toy": (cmd_train_toy, (), "train the hashing toy encoder"),
    "trim-vocab": (cmd_trim_vocab, ("matrix", "stats", "target"), "trim an embedding matrix vocabulary"),
    "evaluate": (cmd_evaluate, ("manifest", "emb"), "score embedding files on a task manifest"),
    "report": (cmd_report, ("input",), "render an evaluation report as a markdown table"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output path; the run manifest goes to <out>.manifest.json")
    common.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
    common.add_argument("--config", help="TOML file supplying defaults; flags win")
    common.add_argument("--jobs", type=int, default=None, help="parallelism cap where applicable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="embedforge", description="Synthetic-data embedding training toolkit.")
    parser.add_argument("--version", action="version", version=f"embedforge {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    subs = {name: sub.add_parser(name, parents=[common], help=h) for name, (_, _, h) in COMMANDS.items()}

    subs["fit-topics"].add_argument("--in", dest="input", help="labeled queries JSONL")

    p = subs["gen-prompts"]
    p.add_argument("--topics", help="fitted topic distribution JSON")
    p.add_argument("--category", action="append", help="category (repeatable; default all)")
    p.add_argument("--n", type=int, help="prompts per category")

    p = subs["generate"]
    p.add_argument("--topics", help="fitted topic distribution JSON")
    p.add_argument("--campaign", help="campaign TOML with [targets], [route] and optional [budget]")
    p.add_argument("--journal", help="journal path (default <out>.journal.jsonl)")

    p = subs["filter"]
    p.add_argument("--in", dest="input", help="triplets JSONL")
    p.add_argument("--scores", help="precomputed scores JSONL with id, s_pos, s_neg")
    p.add_argument("--reranker-url", help="score with a reranker endpoint instead")
    p.add_argument("--cache", help="score cache file for --reranker-url")
    p.add_argument("--c", type=float, default=0.96, help="upper margin bound C")
    p.add_argument("--rejected", help="write rejected ids and reasons here")

    p = subs["mine-negatives"]
    p.add_argument("--run", help="teacher run TSV: qid docid score")
    p.add_argument("--qrels", help="qrels TSV")
    p.add_argument("--top-n", type=int, default=1000, help="top-N scores for sigma")
    p.add_argument("--k", type=int, default=100, help="candidate window")
    p.add_argument("--n-neg", type=int, default=1, help="negatives per positive")

    p = subs["build-batches"]
    p.add_argument("--mix", help="mix TOML; default is the reference training mix by count")
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--epochs", type=int, default=1)

    p = subs["train-toy"]
    p.add_argument("--in", dest="input", help="triplets JSONL")
    p.add_argument("--synthetic", action="store_true", help="use the built-in separable 8-topic task")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--warmup", type=float, default=0.25)
    p.add_argument("--hash-dim", type=int, default=4096)
    p.add_argument("--embed-dim", type=int, default=64)

    p = subs["trim-vocab"]
    p.add_argument("--matrix", help="VMAT embedding matrix")
    p.add_argument("--stats", help="token counts TSV")
    p.add_argument("--target", type=int, help="vocabulary size after trimming")
    p.add_argument("--specials", action="append", help="special tokens, comma separated (repeatable)")
    p.add_argument("--id-map", help="id map JSON (default <out>.idmap.json)")

    p = subs["evaluate"]
    p.add_argument("--manifest", help="task manifest TOML")
    p.add_argument("--emb", help="directory of embedding files")

    p = subs["report"]
    p.add_argument("--in", dest="input", help="report JSON from evaluate")
    p.add_argument("--model", default="model", help="row label")

    parser._subparsers_map = subs  # type: ignore[attr-defined]
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str], args) -> argparse.Namespace:
    doc = _load_toml(args.config)
    section = doc.get(args.command, {k: v for k, v in doc.items() if not isinstance(v, dict)})
    sub = parser._subparsers_map[args.command]  # type: ignore[attr-defined]
    known = {act.dest for act in sub._actions}
    defaults = {}
    for key, value in section.items():
        dest = key.replace("-", "_")
        if dest == "in":
            dest = "input"
        if dest not in known or dest == "config":
            raise UsageError(f"config key {key!r} is not an option of {args.command}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        print("embedforge: error: a subcommand is required", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler, required, _ = COMMANDS[args.command]
    sub = parser._subparsers_map[args.command]  # type: ignore[attr-defined]
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        missing = [d for d in (*required, "out") if getattr(args, d) is None]
        if missing:
            raise UsageError("missing required options: " + ", ".join("--" + m.replace("_", "-") for m in missing))
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"embedforge {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except EmbedForgeError as exc:
        print(json.dumps({**exc.to_dict(), "subcommand": args.command}), file=sys.stderr)
        return 1

    arg_record = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "config", "verbose")}
    manifest = RunManifest(args.command, args.config, args.seed, arg_record, time.time())
    mpath = manifest_path(args.out)
    code = 0
    try:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        inputs, outputs = handler(args)
        manifest.inputs = {str(p): content_hash(p) for p in inputs}
        manifest.outputs = {str(p): content_hash(p) for p in outputs}
        manifest.status = "ok"
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"embedforge {args.command}: error: {exc}", file=sys.stderr)
        manifest.status, code = "usage_error", 2
    except EmbedForgeError as exc:
        print(json.dumps({**exc.to_dict(), "subcommand": args.command}, ensure_ascii=False), file=sys.stderr)
        manifest.status, code = f"error: {exc.code}", 1
    except ValueError as exc:
        # invalid option values rejected by config dataclasses
        sub.print_usage(sys.stderr)
        print(f"embedforge {args.command}: error: {exc}", file=sys.stderr)
        manifest.status, code = "usage_error", 2
    except OSError as exc:
        err = FileMissing(str(exc))
        print(json.dumps({**err.to_dict(), "subcommand": args.command}, ensure_ascii=False), file=sys.stderr)
        manifest.status, code = f"error: {err.code}", 1
    manifest.finished = time.time()
    manifest.write(mpath)
    return code


if __name__ == "__main__":
    sys.exit(main())
