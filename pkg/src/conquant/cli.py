"""Command-line pipeline: warmup, train, encode, build-ivf, search, eval,
inspect, gen-synthetic.

Conventions shared by every subcommand:

- stdout carries machine-parseable results (tab-separated fields or CSV);
  anything meant for a human goes to stderr, so shell pipelines stay clean.
- exit codes: 0 ok, 2 configuration error, 3 data or parse error,
  4 numerical divergence, 5 corrupt index file.
- given the same --seed and inputs, a command writes byte-identical
  artifacts on every run, and no command mutates its input files.
- --threads caps the BLAS worker pool for the invocation.

A model checkpoint is a directory holding `model.npz` (rotation, codebook,
optional encoder parameters and corpus codes), `config.json` (the flags
that produced it) and `metrics.jsonl` (one JSON object per training step).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import shutil
import sys
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    CorruptIndexError,
    DataError,
    DivergenceError,
    NumericalUnderflowError,
)
from .evaluation import code_balance, evaluate_rankings
from .index_io import (
    read_embeddings,
    read_index,
    read_qrels,
    read_queries,
    write_embeddings,
    write_index,
    write_qrels,
    write_queries,
)
from .ivf import build_ivf, search as ivf_search
from .opq import Rotation, train_opq
from .pq import Codebook, compression_ratio, reconstruct_batch
from .synthetic import SyntheticSpec, generate
from .training import (
    EmbeddingTableEncoder,
    LinearFeatureEncoder,
    TrainConfig,
    default_mse_weight,
    encode_corpus,
    init_state,
    train_loop,
)

MODEL_FILE = "model.npz"
CONFIG_FILE = "config.json"
METRICS_FILE = "metrics.jsonl"


def _say(msg: str) -> None:
    """Human commentary; stdout stays machine-parseable."""
    print(msg, file=sys.stderr)


def _out(*fields) -> None:
    print("\t".join(str(f) for f in fields))


# ---------------------------------------------------------------------------
# checkpoint directory


@dataclass
class Checkpoint:
    rotation: Rotation
    codebook: Codebook
    doc_encoder: object | None
    query_encoder: object | None
    corpus_codes: np.ndarray | None
    config: dict


def _encoder_arrays(prefix: str, encoder) -> dict:
    if encoder is None:
        return {}
    arrays = {f"{prefix}_kind": np.array(encoder.kind), f"{prefix}_params": encoder.params}
    if encoder.kind == "linear":
        arrays[f"{prefix}_features"] = encoder.features
    return arrays


def _encoder_from_arrays(prefix: str, data) -> object | None:
    if f"{prefix}_kind" not in data:
        return None
    kind = str(data[f"{prefix}_kind"])
    if kind == "table":
        return EmbeddingTableEncoder(data[f"{prefix}_params"])
    if kind == "linear":
        return LinearFeatureEncoder(data[f"{prefix}_features"], data[f"{prefix}_params"])
    raise DataError(f"checkpoint stores unknown encoder kind {kind!r}")


def save_checkpoint(
    directory: str | Path,
    rotation: Rotation,
    codebook: Codebook,
    config: dict,
    doc_encoder=None,
    query_encoder=None,
    corpus_codes: np.ndarray | None = None,
    metrics_lines: list[str] | None = None,
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {
        "rotation_matrix": rotation.matrix,
        "rotation_enabled": np.array(rotation.enabled),
        "codebook": codebook.centroids,
    }
    arrays.update(_encoder_arrays("doc", doc_encoder))
    arrays.update(_encoder_arrays("query", query_encoder))
    if corpus_codes is not None:
        arrays["corpus_codes"] = corpus_codes
    np.savez(directory / MODEL_FILE, **arrays)
    with open(directory / CONFIG_FILE, "w") as fh:
        fh.write(json.dumps(config, sort_keys=True, indent=2) + "\n")
    with open(directory / METRICS_FILE, "w") as fh:
        for line in metrics_lines or []:
            fh.write(line + "\n")


def load_checkpoint(directory: str | Path) -> Checkpoint:
    directory = Path(directory)
    model_path = directory / MODEL_FILE
    if not model_path.is_file():
        raise ConfigurationError(f"no checkpoint at {directory} (missing {MODEL_FILE})")
    try:
        with np.load(model_path, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
    except (zipfile.BadZipFile, ValueError, OSError) as exc:
        raise DataError(f"unreadable checkpoint {model_path}: {exc}") from None
    for key in ("rotation_matrix", "rotation_enabled", "codebook"):
        if key not in arrays:
            raise DataError(f"checkpoint {model_path} lacks required array {key!r}")
    config = {}
    config_path = directory / CONFIG_FILE
    if config_path.is_file():
        try:
            config = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"unreadable checkpoint config {config_path}: {exc}") from None
    return Checkpoint(
        rotation=Rotation(arrays["rotation_matrix"], enabled=bool(arrays["rotation_enabled"])),
        codebook=Codebook(arrays["codebook"]),
        doc_encoder=_encoder_from_arrays("doc", arrays),
        query_encoder=_encoder_from_arrays("query", arrays),
        corpus_codes=arrays.get("corpus_codes"),
        config=config,
    )


# ---------------------------------------------------------------------------
# subcommands


def _cmd_warmup(args) -> int:
    docs = read_embeddings(args.docs)
    log: list[float] = []
    rotation, codebook = train_opq(
        docs,
        num_blocks=args.M,
        num_centroids=args.K,
        outer_iters=args.outer,
        inner_iters=args.inner,
        seed=args.seed,
        rotate=args.rotation == "on",
        restarts=args.restarts,
        distortion_log=log,
    )
    for i, value in enumerate(log):
        _out(i, f"{value:.6f}")
    save_checkpoint(
        args.out,
        rotation,
        codebook,
        config=_invocation(args),
        metrics_lines=[
            json.dumps({"iter": i, "distortion": v}, sort_keys=True) for i, v in enumerate(log)
        ],
    )
    _say(f"warmup checkpoint written to {args.out}")
    return 0


def _relevant_lists(query_ids: list[str], qrels: dict) -> list[list[int]]:
    return [
        sorted(doc for doc, grade in qrels.get(qid, {}).items() if grade > 0)
        for qid in query_ids
    ]


def _table_for(side: str, stored, matrix: np.ndarray):
    """Reuse a checkpoint's trained encoder when present, else start a fresh
    table from the embedding file; either way it must match the file."""
    if stored is None:
        return EmbeddingTableEncoder(matrix)
    if stored.num_items != matrix.shape[0] or stored.dim_out != matrix.shape[1]:
        raise ConfigurationError(
            f"checkpoint {side} encoder covers {stored.num_items} items of dim "
            f"{stored.dim_out}, file has {matrix.shape[0]} of dim {matrix.shape[1]}"
        )
    return stored


def _cmd_train(args) -> int:
    src = Path(args.from_dir)
    dst = Path(args.out)
    if src.resolve() == dst.resolve():
        raise ConfigurationError("--out must differ from --from; inputs are never mutated")

    if args.steps == 0:
        if not (src / MODEL_FILE).is_file():
            raise ConfigurationError(f"no checkpoint at {src} (missing {MODEL_FILE})")
        dst.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src / MODEL_FILE, dst / MODEL_FILE)
        if (src / CONFIG_FILE).is_file():
            shutil.copyfile(src / CONFIG_FILE, dst / CONFIG_FILE)
        (dst / METRICS_FILE).write_text("")
        _say(f"0 steps requested: checkpoint copied to {dst}")
        return 0

    ck = load_checkpoint(src)
    docs = read_embeddings(args.docs)
    query_ids, queries = read_queries(args.queries)
    qrels = read_qrels(args.qrels)

    doc_encoder = _table_for("document", ck.doc_encoder, docs)
    query_encoder = _table_for("query", ck.query_encoder, queries)
    mse_weight = args.mse_weight
    if mse_weight is None:
        mse_weight = default_mse_weight(ck.codebook.num_blocks)
    config = TrainConfig(
        mse_weight=mse_weight,
        lr_encoder=args.lr_encoder,
        lr_codebook=args.lr_codebook,
        batch_size=args.batch_size,
        stage=args.stage,
        negatives_per_query=args.negatives,
        constrained=not args.unconstrained,
        epsilon=args.epsilon,
        max_iters=args.max_iters,
        tol=args.tol,
        seed=args.seed,
    )
    # stage 2 inherits its corpus codes verbatim; stage 1 re-encodes fresh
    inherited = ck.corpus_codes if args.stage == 2 else None
    state = init_state(
        doc_encoder,
        query_encoder,
        ck.rotation,
        ck.codebook,
        _relevant_lists(query_ids, qrels),
        config,
        corpus_codes=inherited,
    )
    metrics = train_loop(state, config, args.steps)

    if args.stage == 1:
        # checkpoint boundary: make every row consistent with the final
        # centroids, not only the rows the last batches touched
        state.corpus_codes = encode_corpus(state)
    save_checkpoint(
        dst,
        state.rotation,
        state.codebook(),
        config=_invocation(args),
        doc_encoder=state.doc_encoder,
        query_encoder=state.query_encoder,
        corpus_codes=state.corpus_codes,
        metrics_lines=[json.dumps(m.as_dict(), sort_keys=True) for m in metrics],
    )
    last = metrics[-1]
    _out("steps", len(metrics))
    _out("final_ranking_loss", f"{last.ranking_loss:.6f}")
    _out("final_mse_loss", f"{last.mse_loss:.6f}")
    _out("final_total_loss", f"{last.total_loss:.6f}")
    _say(f"stage-{args.stage} checkpoint written to {dst}")
    return 0


def _cmd_encode(args) -> int:
    ck = load_checkpoint(args.from_dir)
    docs = read_embeddings(args.docs)
    index = build_ivf(docs, ck.codebook, ck.rotation, n=1, seed=args.seed)
    write_index(index, args.out)
    m = ck.codebook.num_blocks
    _out("docs", index.doc_count)
    _out("code_bytes", index.doc_count * (4 + m))
    _out("compression_ratio", f"{compression_ratio(docs.shape[1], m):.6f}")
    _say(f"flat index written to {args.out}")
    return 0


def _cmd_build_ivf(args) -> int:
    ck = load_checkpoint(args.from_dir)
    docs = read_embeddings(args.docs)
    index = build_ivf(
        docs, ck.codebook, ck.rotation, n=args.n, seed=args.seed, coarse_iters=args.coarse_iters
    )
    write_index(index, args.out)
    _out("docs", index.doc_count)
    _out("lists", index.num_lists)
    _out("code_bytes", index.doc_count * (4 + ck.codebook.num_blocks))
    _say(f"IVF index with {index.num_lists} lists written to {args.out}")
    return 0


def _query_rows(args, query_ids: list[str], matrix: np.ndarray) -> np.ndarray:
    """Query vectors for search: raw file rows, or the trained query
    encoder's view of them when --model is given."""
    if args.model is None:
        return matrix
    encoder = load_checkpoint(args.model).query_encoder
    if encoder is None:
        raise ConfigurationError(f"model {args.model} stores no query encoder")
    if encoder.kind == "table":
        # table rows are the trained query embeddings; file row i names
        # table row i, so the counts must agree exactly
        if encoder.num_items != len(query_ids):
            raise ConfigurationError(
                f"model query table covers {encoder.num_items} queries, file has {len(query_ids)}"
            )
        _say("using trained query embeddings from the model (file rows map by position)")
        return encoder.params
    if matrix.shape[1] != encoder.params.shape[0]:
        raise ConfigurationError(
            f"query dim {matrix.shape[1]} does not match model input dim {encoder.params.shape[0]}"
        )
    _say("projecting file queries through the model's linear encoder")
    return matrix.astype(np.float64) @ encoder.params


def _cmd_search(args) -> int:
    index = read_index(args.index)
    query_ids, matrix = read_queries(args.queries)
    if not query_ids:
        _say("no queries in input")
        return 0
    rows = _query_rows(args, query_ids, matrix)
    if rows.shape[1] != index.dim:
        raise ConfigurationError(
            f"query dim {rows.shape[1]} does not match index dim {index.dim}"
        )
    for qid, row in zip(query_ids, rows):
        for rank, (doc, score) in enumerate(
            ivf_search(index, row, nprobe=args.nprobe, topk=args.topk), start=1
        ):
            print(f"{qid} {doc} {rank} {score:.6f}")
    return 0


def _read_run(path: str | Path) -> dict[str, list[int]]:
    """Parse 'qid docid rank score' lines back into per-query rankings."""
    per_query: dict[str, list[tuple[int, int]]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 'qid docid rank score'")
            try:
                doc, rank = int(parts[1]), int(parts[2])
                float(parts[3])
            except ValueError:
                raise DataError(f"{path}:{lineno}: docid and rank must be integers") from None
            if rank < 1:
                raise DataError(f"{path}:{lineno}: rank must be >= 1")
            per_query.setdefault(parts[0], []).append((rank, doc))
    return {
        qid: [doc for _, doc in sorted(entries)] for qid, entries in per_query.items()
    }


def _index_codes_by_doc(index) -> np.ndarray:
    """Code sequences arranged by document id."""
    codes = np.empty((index.doc_count, index.codebook.num_blocks), dtype=np.uint8)
    for lst in index.lists:
        codes[lst.doc_ids] = lst.codes
    return codes


def _cmd_eval(args) -> int:
    rankings = _read_run(args.run)
    qrels = read_qrels(args.qrels)
    index = read_index(args.index)
    codes = _index_codes_by_doc(index)
    try:
        cutoffs = tuple(sorted({int(tok) for tok in args.k.split(",") if tok}))
    except ValueError:
        raise ConfigurationError(f"--k must be comma-separated integers, got {args.k!r}") from None
    if not cutoffs:
        raise ConfigurationError("--k lists no cutoffs")

    mean_distortion = None
    if args.docs is not None:
        docs = read_embeddings(args.docs)
        if docs.shape[0] != index.doc_count:
            raise ConfigurationError(
                f"embedding file has {docs.shape[0]} rows, index holds {index.doc_count}"
            )
        rotated = index.rotation.apply(docs.astype(np.float64))
        recon = reconstruct_batch(codes, index.codebook)
        mean_distortion = float(((rotated - recon) ** 2).sum(axis=1).mean())

    report = evaluate_rankings(
        rankings,
        qrels,
        codes,
        index.codebook.num_centroids,
        cutoffs=cutoffs,
        mean_distortion=mean_distortion,
    )
    print(report.as_csv())
    _say(report.as_table())
    return 0


def _cmd_inspect(args) -> int:
    index = read_index(args.index)
    codes = _index_codes_by_doc(index)
    balance = code_balance(codes, index.codebook.num_centroids)
    _out("dim", index.dim)
    _out("blocks", index.codebook.num_blocks)
    _out("centroids_per_block", index.codebook.num_centroids)
    _out("coarse_lists", index.num_lists)
    _out("doc_count", index.doc_count)
    _out("rotation", "on" if index.rotation.enabled else "off")
    _out("code_bytes", index.doc_count * (4 + index.codebook.num_blocks))
    _out("compression_ratio", f"{compression_ratio(index.dim, index.codebook.num_blocks):.6f}")
    _out("mean_entropy", f"{balance.mean_entropy:.6f}")
    _out("top_code_fraction", f"{balance.top_code_fraction:.6f}")
    return 0


def _cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        num_docs=args.num_docs,
        dim=args.dim,
        num_clusters=args.num_clusters,
        num_queries=args.num_queries,
        noise=args.noise,
        seed=args.seed,
    )
    bench = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    docs_path = out / "docs.rcem"
    queries_path = out / "queries.tsv"
    qrels_path = out / "qrels.tsv"
    write_embeddings(docs_path, bench.docs)
    write_queries(queries_path, [f"q{i}" for i in range(len(bench.queries))], bench.queries)
    write_qrels(qrels_path, bench.qrels())
    _out("docs", docs_path)
    _out("queries", queries_path)
    _out("qrels", qrels_path)
    _say(f"benchmark with {spec.num_docs} docs and {spec.num_queries} queries in {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _invocation(args) -> dict:
    skip = {"func"}
    return {
        "command": args.command,
        **{k: v for k, v in vars(args).items() if k not in skip and k != "command"},
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conquant",
        description="Quantized dense-retrieval pipeline: warm up a codebook, "
        "train it jointly with the encoders, build and query compressed indexes.",
        epilog="Exit codes: 0 ok, 2 configuration, 3 data/parse, 4 divergence, 5 corrupt index. "
        "stdout is machine-parseable; commentary goes to stderr.",
        allow_abbrev=False,
    )
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed; fixes every artifact byte")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser(
        "warmup",
        parents=[common],
        allow_abbrev=False,
        help="rotation + codebook initialization on a document embedding file",
    )
    p.add_argument("--docs", required=True, help="RCEM embedding file")
    p.add_argument("--M", required=True, type=int, help="sub-vector block count")
    p.add_argument("--K", required=True, type=int, help="centroids per block")
    p.add_argument("--rotation", choices=("on", "off"), default="on")
    p.add_argument("--outer", type=int, default=10, help="alternation rounds")
    p.add_argument("--inner", type=int, default=20, help="k-means iterations per round")
    p.add_argument("--restarts", type=int, default=3, help="k-means restarts per block")
    p.add_argument("--out", required=True, help="checkpoint directory to write")
    p.set_defaults(func=_cmd_warmup)

    p = sub.add_parser(
        "train",
        parents=[common],
        allow_abbrev=False,
        help="joint training from a checkpoint; stage 1 reassigns codes, stage 2 freezes them",
    )
    p.add_argument("--docs", required=True, help="RCEM document embeddings")
    p.add_argument("--queries", required=True, help="TSV query embeddings")
    p.add_argument("--qrels", required=True, help="TSV relevance judgments")
    p.add_argument("--from", dest="from_dir", required=True, help="input checkpoint directory")
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument(
        "--lambda",
        dest="mse_weight",
        type=float,
        default=None,
        help="clustering-loss weight (default: keyed to the block count)",
    )
    p.add_argument("--steps", type=int, default=100, help="0 copies the checkpoint through")
    p.add_argument("--lr-encoder", type=float, default=1e-2)
    p.add_argument("--lr-codebook", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--negatives", type=int, default=4, help="negatives sampled per query")
    p.add_argument("--epsilon", type=float, default=None, help="transport regularization")
    p.add_argument("--max-iters", type=int, default=100, help="transport iteration cap")
    p.add_argument("--tol", type=float, default=None, help="transport marginal tolerance")
    p.add_argument(
        "--unconstrained",
        action="store_true",
        help="replace balanced assignment with plain nearest-centroid",
    )
    p.add_argument("--out", required=True, help="output checkpoint directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser(
        "encode",
        parents=[common],
        allow_abbrev=False,
        help="quantize a corpus by nearest centroid into a flat searchable index",
    )
    p.add_argument("--docs", required=True, help="RCEM document embeddings")
    p.add_argument("--from", dest="from_dir", required=True, help="checkpoint directory")
    p.add_argument("--out", required=True, help="index file to write")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser(
        "build-ivf",
        parents=[common],
        allow_abbrev=False,
        help="quantize a corpus and bucket it into coarse inverted lists",
    )
    p.add_argument("--docs", required=True, help="RCEM document embeddings")
    p.add_argument("--from", dest="from_dir", required=True, help="checkpoint directory")
    p.add_argument("--n", type=int, default=None, help="coarse list count (default: sized to corpus)")
    p.add_argument("--coarse-iters", type=int, default=20, help="coarse k-means iterations")
    p.add_argument("--out", required=True, help="index file to write")
    p.set_defaults(func=_cmd_build_ivf)

    p = sub.add_parser(
        "search",
        parents=[common],
        allow_abbrev=False,
        help="rank documents for each query; prints 'qid docid rank score'",
    )
    p.add_argument("--index", required=True, help="index file")
    p.add_argument("--queries", required=True, help="TSV query embeddings")
    p.add_argument("--model", default=None, help="checkpoint whose query encoder re-embeds the queries")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--nprobe", type=int, default=None, help="coarse lists to probe (default: all)")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser(
        "eval",
        parents=[common],
        allow_abbrev=False,
        help="score a search run against judgments; CSV to stdout, table to stderr",
    )
    p.add_argument("--run", required=True, help="search output file")
    p.add_argument("--qrels", required=True, help="TSV relevance judgments")
    p.add_argument("--index", required=True, help="index file (for code-usage diagnostics)")
    p.add_argument("--docs", default=None, help="RCEM embeddings; adds mean distortion")
    p.add_argument("--k", default="10,100", help="comma-separated cutoffs")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser(
        "inspect",
        parents=[common],
        allow_abbrev=False,
        help="dump an index file's header fields and code-usage balance",
    )
    p.add_argument("--index", required=True, help="index file")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser(
        "gen-synthetic",
        parents=[common],
        allow_abbrev=False,
        help="write a planted benchmark: docs.rcem, queries.tsv, qrels.tsv",
    )
    p.add_argument("--num-docs", type=int, default=10000)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--num-clusters", type=int, default=64)
    p.add_argument("--num-queries", type=int, default=1000)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--out", required=True, help="directory for the three files")
    p.set_defaults(func=_cmd_gen_synthetic)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        limiter = contextlib.nullcontext()
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigurationError(f"--threads must be >= 1, got {args.threads}")
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=args.threads)
        with limiter:
            return args.func(args)
    except CorruptIndexError as exc:
        _say(f"error: {exc}")
        return 5
    except (DivergenceError, NumericalUnderflowError) as exc:
        _say(f"error: {exc}")
        return 4
    except DataError as exc:
        _say(f"error: {exc}")
        return 3
    except ConfigurationError as exc:
        _say(f"error: {exc}")
        return 2
    except OSError as exc:
        _say(f"error: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
