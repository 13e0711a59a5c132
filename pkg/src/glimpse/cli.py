"""Command-line pipeline: acquisition -> estimation -> scoring -> evaluation.

One subcommand per stage so API-dependent and offline stages stay
separate; every offline stage is bit-reproducible under a fixed seed.
Exit codes: 1 configuration, 2 I/O or file format, 3 provider, 4
numerical/degenerate data. Diagnostics are a single machine-parsable
stderr line: ``glimpse: <category>: <ErrorClass>: <message>``.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import re
import sys
from pathlib import Path

import httpx

from . import client as client_mod
from . import evaluation, metrics, mlp, scoring
from .distribution import make_estimator
from .errors import (
    ClientError,
    ConfigError,
    DegenerateMassError,
    DegenerateVarianceError,
    DistributionError,
    DumpError,
    GlimpseError,
    ModelFileError,
    ObservationError,
    TrainingDivergedError,
)

DEFAULT_K = 5
# rank-list sizes used when --rank-size is not given
DEFAULT_M = {"geometric": 1000, "naive": 1000, "zipfian": 100, "mlp": 100}

EPILOG = (
    "Configuration precedence: command-line flags override provider config "
    "file values, which override environment variables (GLIMPSE_API_KEY), "
    "which override built-in defaults."
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as configuration errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="glimpse", description=__doc__, epilog=EPILOG)
    sub = parser.add_subparsers(dest="command", required=True)

    fetch = sub.add_parser(
        "fetch", help="acquire passages from a provider in echo mode", epilog=EPILOG
    )
    fetch.add_argument("--provider-config", required=True, help="JSON provider config")
    fetch.add_argument("--in", dest="infile", required=True, help="one text per line")
    fetch.add_argument("--prompt-file", default=None, help="conditioning prompt text")
    fetch.add_argument("--top-k", type=int, default=DEFAULT_K)
    fetch.add_argument("--label", default="unknown", choices=scoring.LABELS)
    fetch.add_argument("--jobs", type=int, default=1)
    fetch.add_argument("--out", required=True, help="dump file (.jsonl or .jsonl.gz)")
    fetch.set_defaults(func=cmd_fetch)

    synth = sub.add_parser(
        "synth", help="generate a paired synthetic corpus with known truths"
    )
    synth.add_argument(
        "--family", default="geometric", choices=("geometric", "zipfian", "mixture")
    )
    synth.add_argument("--n-passages", type=int, default=100, help="per class")
    synth.add_argument("--length", type=int, default=50, help="positions per passage")
    synth.add_argument("--rank-size", type=int, default=100, help="M, truth length")
    synth.add_argument("--top-k", type=int, default=DEFAULT_K)
    synth.add_argument("--machine-sharpness", type=float, default=2.5)
    synth.add_argument("--human-sharpness", type=float, default=1.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    score = sub.add_parser("score", help="score a dump with one method and estimator")
    _add_scoring_args(score)
    score.add_argument("--out", required=True, help="scores JSONL")
    score.set_defaults(func=cmd_score)

    detect = sub.add_parser(
        "detect", help="score and apply a threshold to get per-passage verdicts"
    )
    _add_scoring_args(detect)
    detect.add_argument("--threshold", type=float, required=True)
    detect.add_argument("--out", required=True, help="verdicts JSONL")
    detect.set_defaults(func=cmd_detect)

    ev = sub.add_parser("eval", help="turn labeled scores into a CSV report")
    ev.add_argument("--in", dest="infile", required=True, help="scores JSONL")
    ev.add_argument("--out", required=True, help="report CSV")
    ev.add_argument(
        "--roc-dir", default=None, help="also write per-population ROC point CSVs here"
    )
    ev.set_defaults(func=cmd_eval)

    train = sub.add_parser(
        "train-mlp", help="train the tail network on a dump that carries truths"
    )
    train.add_argument("--in", dest="infile", required=True)
    train.add_argument("--top-k", type=int, default=DEFAULT_K)
    train.add_argument("--rank-size", type=int, default=DEFAULT_M["mlp"])
    train.add_argument("--hidden", type=int, default=64)
    train.add_argument("--epochs", type=int, default=20)
    train.add_argument("--batch-size", type=int, default=128)
    train.add_argument("--step-size", type=float, default=0.01)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--strict", action="store_true", help="abort if loss increases")
    train.add_argument("--out", required=True, help="model file")
    train.set_defaults(func=cmd_train_mlp)

    return parser


def _add_scoring_args(sub) -> None:
    sub.add_argument("--in", dest="infile", required=True, help="dump file")
    sub.add_argument("--method", default="curvature", choices=metrics.METHODS)
    sub.add_argument(
        "--estimator",
        default="geometric",
        choices=("geometric", "zipfian", "mlp", "naive"),
    )
    sub.add_argument("--top-k", type=int, default=DEFAULT_K)
    sub.add_argument(
        "--rank-size",
        type=int,
        default=None,
        help="M; defaults to 1000 for geometric/naive, 100 for zipfian/mlp",
    )
    sub.add_argument("--model-file", default=None, help="trained model (mlp only)")
    sub.add_argument("--jobs", type=int, default=1)


def _resolve_estimator(args):
    m = args.rank_size if args.rank_size is not None else DEFAULT_M[args.estimator]
    model = None
    if args.estimator == "mlp":
        if args.model_file is None:
            raise ConfigError("--estimator mlp requires --model-file")
        model = mlp.load_model(args.model_file)
        if model.K != args.top_k or model.M != m:
            raise ConfigError(
                f"model file is for (K={model.K}, M={model.M}), "
                f"run wants (K={args.top_k}, M={m})"
            )
    elif args.model_file is not None:
        raise ConfigError("--model-file only applies to --estimator mlp")
    return make_estimator(args.estimator, m, model=model), m


def _score_passages(args):
    if args.top_k < 1:
        raise ConfigError("--top-k must be >= 1")
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    estimator, m = _resolve_estimator(args)
    passages = scoring.read_dump(args.infile)

    def one(passage):
        truncated = scoring.truncate_passage(passage, args.top_k)
        score = metrics.score_passage(truncated.positions, estimator, args.method)
        meta = passage.source_meta
        return {
            "id": passage.id,
            "label": passage.label,
            "method": args.method,
            "estimator": args.estimator,
            "metric": score.metric,
            "n_tokens": score.n_tokens,
            "aux": {
                "log_likelihood": score.log_likelihood,
                "mu_total": score.mu_total,
                "sigma2_total": score.sigma2_total,
            },
            "dataset": meta.get("dataset", "all"),
            "source": meta.get("source", meta.get("model", "unknown")),
            "K": args.top_k,
            "M": m,
        }

    if args.jobs == 1:
        return [one(p) for p in passages]
    with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
        return list(pool.map(one, passages))  # map keeps input order


def _write_jsonl(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")))
            fh.write("\n")


def cmd_score(args) -> int:
    _write_jsonl(_score_passages(args), args.out)
    return 0


def cmd_detect(args) -> int:
    rows = _score_passages(args)
    verdicts = [
        {
            "id": row["id"],
            "label": row["label"],
            "method": row["method"],
            "estimator": row["estimator"],
            "metric": row["metric"],
            "threshold": args.threshold,
            "verdict": "machine" if row["metric"] > args.threshold else "human",
        }
        for row in rows
    ]
    _write_jsonl(verdicts, args.out)
    return 0


def cmd_synth(args) -> int:
    config = scoring.SynthConfig(
        family=args.family,
        n_passages=args.n_passages,
        length=args.length,
        M=args.rank_size,
        K=args.top_k,
        machine_sharpness=args.machine_sharpness,
        human_sharpness=args.human_sharpness,
        seed=args.seed,
    )
    corpus = scoring.gen_synthetic(config)
    scoring.write_dump(corpus.passages, args.out)
    return 0


def cmd_eval(args) -> int:
    rows = []
    with open(args.infile, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if raw.strip() == "":
                continue
            try:
                rows.append(json.loads(raw))
            except json.JSONDecodeError as exc:
                raise DumpError(f"invalid JSON: {exc.msg}", line_no) from exc
    pops = evaluation.populations_from_scores(rows)
    if not pops:
        raise ConfigError("no labeled scores to evaluate")
    evaluation.write_report([evaluation.evaluate_population(p) for p in pops], args.out)
    if args.roc_dir is not None:
        roc_dir = Path(args.roc_dir)
        roc_dir.mkdir(parents=True, exist_ok=True)
        for pop in pops:
            stem = "_".join(
                re.sub(r"[^A-Za-z0-9.-]+", "-", str(part))
                for part in (pop.method, pop.estimator, pop.dataset, pop.source)
            )
            evaluation.write_roc_points(pop, roc_dir / f"roc_{stem}.csv")
    return 0


def cmd_train_mlp(args) -> int:
    passages = scoring.read_dump(args.infile)
    examples = scoring.teacher_examples(passages, K=args.top_k, M=args.rank_size)
    config = mlp.TrainConfig(
        H=args.hidden,
        epochs=args.epochs,
        step_size=args.step_size,
        batch_size=args.batch_size,
        seed=args.seed,
        strict=args.strict,
        dataset_id=Path(args.infile).name,
    )
    model = mlp.train_mlp(examples, config)
    mlp.save_model(model, args.out)
    return 0


def cmd_fetch(args) -> int:
    config = client_mod.ClientConfig.from_file(args.provider_config)
    prompt = ""
    if args.prompt_file is not None:
        prompt = Path(args.prompt_file).read_text(encoding="utf-8")
    with open(args.infile, encoding="utf-8") as fh:
        texts = [line.rstrip("\n") for line in fh if line.strip()]
    if not texts:
        raise ConfigError(f"{args.infile}: no input texts")
    limiter = client_mod.RateLimiter(config.requests_per_minute)
    jobs = max(1, min(args.jobs, config.max_concurrency))

    with httpx.Client() as http:

        def one(item):
            index, text = item
            return client_mod.fetch_observation(
                config,
                text,
                prompt=prompt,
                k=args.top_k,
                label=args.label,
                passage_id=f"text-{index:04d}",
                client=http,
                limiter=limiter,
            )

        items = list(enumerate(texts))
        if jobs == 1:
            passages = [one(item) for item in items]
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
                passages = list(pool.map(one, items))
    scoring.write_dump(passages, args.out)
    return 0


def _fail(code: int, category: str, exc: BaseException) -> int:
    message = re.sub(r"\s+", " ", str(exc)).strip()
    print(f"glimpse: {category}: {type(exc).__name__}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        return _fail(1, "config", exc)
    except (DumpError, ModelFileError) as exc:
        return _fail(2, "io", exc)
    except OSError as exc:
        return _fail(2, "io", exc)
    except ClientError as exc:
        return _fail(3, "provider", exc)
    except (
        ObservationError,
        DistributionError,
        DegenerateMassError,
        DegenerateVarianceError,
        TrainingDivergedError,
        ArithmeticError,
    ) as exc:
        return _fail(4, "numerical", exc)
    except GlimpseError as exc:  # anything uncategorized is a config problem
        return _fail(1, "config", exc)


if __name__ == "__main__":
    sys.exit(main())
