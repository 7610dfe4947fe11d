"""Command-line interface.

Subcommands: lit-summarize, hypgen, eval, metaeval, convert, split.
Exit codes: 0 success, 2 usage/config error, 3 provider error,
4 data validation error.

A JSON config file can carry any HypoGenConfig field at the top level plus
a "provider" object ({"script": ..., "model": ..., "eval_model": ...,
"api_base": ...}); command-line flags override file values, which override
defaults. The API key is only ever read from HYPOEVAL_API_KEY.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import corpus as corpus_mod
from .evaluator import (
    RubricScorer,
    SelectionError,
    evaluate,
    load_scores,
    save_scores,
)
from .gateway import (
    ENV_CACHE_DIR,
    Gateway,
    GatewayError,
    ProviderConfigError,
    ResponseCache,
    live_provider_from_env,
    scripted_provider_from_file,
)
from .hypogen import GenContext, GenerationError, generate_bank, summarize_literature
from .prompts import MissingPlaceholderError, PromptLibrary
from .report import render_text_table, write_report_files
from .stats import MetaRecord, grouped_correlation
from .types import (
    BankFormatError,
    ConfigError,
    DatasetError,
    HypoGenConfig,
    LiteratureCorpus,
    load_aspect,
    load_bank,
    load_corpus,
    load_samples,
    save_bank,
    save_corpus,
    save_samples,
    validate_dataset,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PROVIDER = 3
EXIT_DATA = 4

_CONFIG_ERRORS = (
    ConfigError,
    ProviderConfigError,
    MissingPlaceholderError,
    FileNotFoundError,
)
_DATA_ERRORS = (DatasetError, BankFormatError)
_PROVIDER_ERRORS = (GatewayError, GenerationError, SelectionError)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return raw


def _resolve_hypgen_config(file_cfg: dict, seed: int | None) -> HypoGenConfig:
    fields = {f.name for f in dataclasses.fields(HypoGenConfig)}
    values = {k: v for k, v in file_cfg.items() if k in fields}
    unknown = set(file_cfg) - fields - {"provider", "max_inflight"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if seed is not None:
        values["rng_seed"] = seed
    return HypoGenConfig(**values)


def _build_gateway(args: argparse.Namespace, file_cfg: dict) -> Gateway:
    provider_cfg = file_cfg.get("provider", {})
    script = getattr(args, "script", None) or provider_cfg.get("script")
    if script:
        provider = scripted_provider_from_file(script)
    else:
        provider = live_provider_from_env(
            api_base=getattr(args, "api_base", None) or provider_cfg.get("api_base")
        )
    cache = None
    if not getattr(args, "no_cache", False):
        cache_dir = getattr(args, "cache_dir", None) or os.environ.get(ENV_CACHE_DIR)
        if cache_dir:
            cache = ResponseCache(cache_dir)
    return Gateway(provider=provider, cache=cache)


def _resolve_model(
    flag_value: str | None, file_cfg: dict, key: str, scripted: bool
) -> str:
    value = flag_value or file_cfg.get("provider", {}).get(key)
    if value:
        return value
    if scripted:
        return "scripted"
    raise ConfigError(f"no {key.replace('_', '-')} given (flag or config file)")


def _max_inflight(args: argparse.Namespace, file_cfg: dict) -> int:
    flag = getattr(args, "max_inflight", None)
    if flag is not None:
        return flag
    return int(file_cfg.get("max_inflight", 8))


def _prompts(args: argparse.Namespace) -> PromptLibrary:
    return PromptLibrary(overrides_dir=getattr(args, "prompts_dir", None))


def _check_dataset(samples, aspect, require_scores: bool) -> None:
    summary = validate_dataset(samples, aspect, require_scores=require_scores)
    if summary.violations:
        for line in summary.flagged[:20]:
            print(f"validation: {line}", file=sys.stderr)
        raise DatasetError(
            f"{summary.violations} of {summary.samples} samples failed validation"
        )


def _manifest_path(out_path: Path) -> Path:
    return out_path.with_name(out_path.stem + ".manifest.json")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _cmd_lit_summarize(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    aspect = load_aspect(args.aspect)
    papers_dir = Path(args.papers_dir)
    if not papers_dir.is_dir():
        raise ConfigError(f"papers dir {papers_dir} does not exist")
    papers = [
        (path.stem, path.read_text(encoding="utf-8"))
        for path in sorted(papers_dir.glob("*.txt"))
    ]
    gateway = _build_gateway(args, file_cfg)
    model = _resolve_model(args.gen_model, file_cfg, "model",
                           _is_scripted(gateway))
    corpus = summarize_literature(
        papers, aspect, gateway, _prompts(args), model
    )
    save_corpus(args.out, corpus)
    print(f"summarized {len(corpus.summaries)} papers -> {args.out}")
    return EXIT_OK


def _is_scripted(gateway: Gateway) -> bool:
    return gateway.provider.provider_id == "scripted"


def _cmd_hypgen(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    train = load_samples(args.train)
    resume_bank = load_bank(args.resume) if args.resume else None

    if resume_bank is not None:
        aspect = resume_bank.aspect
        cfg = resume_bank.hyperparams
        if args.aspect:
            flagged = load_aspect(args.aspect)
            if flagged.aspect_id != aspect.aspect_id:
                raise ConfigError(
                    f"--aspect {flagged.aspect_id!r} does not match resumed "
                    f"bank aspect {aspect.aspect_id!r}"
                )
    else:
        if not args.aspect:
            raise ConfigError("--aspect is required unless resuming")
        aspect = load_aspect(args.aspect)
        cfg = _resolve_hypgen_config(file_cfg, args.seed)
    cfg.validate_for_aspect(aspect)
    _check_dataset(train, aspect, require_scores=True)

    gateway = _build_gateway(args, file_cfg)
    scripted = _is_scripted(gateway)
    gen_model = _resolve_model(args.gen_model, file_cfg, "model", scripted)
    eval_model = args.eval_model or file_cfg.get("provider", {}).get(
        "eval_model"
    ) or gen_model
    literature = (
        load_corpus(args.literature) if args.literature else LiteratureCorpus()
    )
    ctx = GenContext(
        aspect=aspect,
        cfg=cfg,
        gateway=gateway,
        prompts=_prompts(args),
        gen_model=gen_model,
        eval_model=eval_model,
        literature=literature,
        max_inflight=_max_inflight(args, file_cfg),
    )
    bank, manifest = generate_bank(ctx, train, resume_bank=resume_bank)
    out_bank = Path(args.out_bank)
    out_bank.parent.mkdir(parents=True, exist_ok=True)
    save_bank(out_bank, bank)
    _write_json(_manifest_path(out_bank), manifest)
    print(
        f"bank: {len(bank.hypotheses)} hypotheses, phase={bank.phase}, "
        f"selected={list(bank.selected_ids)} -> {out_bank}"
    )
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    bank = load_bank(args.bank)
    samples = load_samples(args.data)
    _check_dataset(samples, bank.aspect, require_scores=False)
    if not bank.selected_ids:
        raise BankFormatError(
            "bank has no selected hypotheses; finish hypgen first"
        )
    gateway = _build_gateway(args, file_cfg)
    eval_model = (
        args.eval_model
        or file_cfg.get("provider", {}).get("eval_model")
        or bank.generator_model
    )
    scorer = RubricScorer(
        gateway=gateway,
        prompts=_prompts(args),
        aspect=bank.aspect,
        model=eval_model,
        temperature=bank.hyperparams.eval_temperature,
        max_inflight=_max_inflight(args, file_cfg),
    )
    started = time.monotonic()
    records = evaluate(samples, bank, scorer)
    out_scores = Path(args.out_scores)
    out_scores.parent.mkdir(parents=True, exist_ok=True)
    save_scores(out_scores, records)
    unparseable = [r.sample_id for r in records if r.final_score is None]
    manifest = {
        "bank": str(args.bank),
        "eval_model": eval_model,
        "n_samples": len(samples),
        "n_selected": len(bank.selected_ids),
        "requests": gateway.stats.requests,
        "cache_hits": gateway.stats.cache_hits,
        "unparseable_samples": unparseable,
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    _write_json(_manifest_path(out_scores), manifest)
    print(
        f"scored {len(records)} samples with {len(bank.selected_ids)} "
        f"hypotheses -> {out_scores}"
        + (f" ({len(unparseable)} unparseable)" if unparseable else "")
    )
    return EXIT_OK


def _cmd_metaeval(args: argparse.Namespace) -> int:
    scores = load_scores(args.scores)
    samples = load_samples(args.data)
    by_id = {s.sample_id: s for s in samples}
    records: list[MetaRecord] = []
    for row in scores:
        sid = row.get("sample_id")
        sample = by_id.get(sid)
        if sample is None:
            raise DatasetError(f"scores refer to unknown sample {sid!r}")
        if sample.human_score is None:
            raise DatasetError(f"sample {sid!r} has no human score to compare to")
        records.append(
            MetaRecord(
                group_id=sample.group_id,
                predicted=row.get("final_score"),
                human=sample.human_score,
            )
        )
    try:
        report = grouped_correlation(records, mode=args.mode, weighted=args.weighted)
    except ValueError as exc:
        raise DatasetError(str(exc)) from None
    label = args.label or Path(args.data).stem
    paths = write_report_files(
        report, records, args.out_report, label, figures=not args.no_figures
    )
    sys.stdout.write(render_text_table(report, label))
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def _cmd_convert(args: argparse.Namespace) -> int:
    samples = corpus_mod.convert(args.format, args.in_path, args.aspect_id)
    save_samples(args.out, samples)
    groups = len({s.group_id for s in samples})
    print(f"{len(samples)} samples across {groups} groups -> {args.out}")
    return EXIT_OK


def _cmd_split(args: argparse.Namespace) -> int:
    samples = load_samples(args.data)
    result = corpus_mod.split(
        samples, train_n=args.train_n, test_groups=args.test_groups, seed=args.seed
    )
    save_samples(args.out_train, result.train)
    save_samples(args.out_test, result.test)
    manifest_path = Path(
        args.out_manifest or _manifest_path(Path(args.out_train))
    )
    _write_json(manifest_path, result.manifest)
    print(
        f"train: {len(result.train)} samples; test: {len(result.test)} samples "
        f"in {len(result.manifest['test_group_ids'])} groups"
    )
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, provider: bool = True) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("-v", "--verbose", action="store_true")
    if provider:
        p.add_argument("--script", help="scripted provider rules file (offline)")
        p.add_argument("--api-base", help="live provider base URL "
                                          "(default: HYPOEVAL_API_BASE)")
        p.add_argument("--cache-dir", help="response cache directory "
                                           "(default: HYPOEVAL_CACHE_DIR)")
        p.add_argument("--no-cache", action="store_true",
                       help="disable the response cache")
        p.add_argument("--prompts-dir", help="directory of template overrides")
        p.add_argument("--max-inflight", type=int,
                       help="max concurrent provider requests (default 8)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypoeval",
        description="Learn scoring rubrics from a few human-scored examples, "
                    "judge texts with them, and meta-evaluate the judgments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lit-summarize",
                       help="summarize papers into a literature corpus")
    p.add_argument("--papers-dir", required=True,
                   help="directory of plain-text .txt papers")
    p.add_argument("--aspect", required=True, help="aspect JSON file")
    p.add_argument("--out", required=True, help="output corpus JSON")
    p.add_argument("--gen-model", help="generator model name")
    _add_common(p)
    p.set_defaults(func=_cmd_lit_summarize)

    p = sub.add_parser("hypgen", help="generate and select a hypothesis bank")
    p.add_argument("--train", required=True, help="training JSONL")
    p.add_argument("--aspect", help="aspect JSON file")
    p.add_argument("--literature", help="literature corpus JSON")
    p.add_argument("--gen-model", help="generator model name")
    p.add_argument("--eval-model", help="judge model name (default: gen model)")
    p.add_argument("--seed", type=int, help="override config rng_seed")
    p.add_argument("--out-bank", required=True, help="output bank JSON")
    p.add_argument("--resume", help="bank JSON from an interrupted run")
    _add_common(p)
    p.set_defaults(func=_cmd_hypgen)

    p = sub.add_parser("eval", help="score samples with a finished bank")
    p.add_argument("--bank", required=True, help="bank JSON")
    p.add_argument("--data", required=True, help="samples JSONL")
    p.add_argument("--eval-model",
                   help="judge model (default: bank generator model)")
    p.add_argument("--out-scores", required=True, help="output scores JSONL")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("metaeval",
                       help="correlate scores with human annotations")
    p.add_argument("--scores", required=True, help="scores JSONL from eval")
    p.add_argument("--data", required=True, help="samples JSONL with human scores")
    p.add_argument("--mode", choices=("grouped", "dataset"), default="grouped")
    p.add_argument("--weighted", action="store_true",
                   help="weight the aggregate by group size")
    p.add_argument("--label", help="row label in the report (default: data stem)")
    p.add_argument("--out-report", required=True, help="output report JSON")
    p.add_argument("--no-figures", action="store_true",
                   help="skip the PNG figures")
    _add_common(p, provider=False)
    p.set_defaults(func=_cmd_metaeval)

    p = sub.add_parser("convert", help="convert a benchmark dump to JSONL")
    p.add_argument("--format", required=True, choices=corpus_mod.SOURCE_FORMATS)
    p.add_argument("--in", dest="in_path", required=True, help="input dump")
    p.add_argument("--aspect-id", required=True, help="aspect column to extract")
    p.add_argument("--out", required=True, help="output JSONL")
    _add_common(p, provider=False)
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("split", help="seeded sample-level train / group-level test split")
    p.add_argument("--data", required=True, help="normalized JSONL")
    p.add_argument("--train-n", type=int, default=30)
    p.add_argument("--test-groups", type=int,
                   help="number of test groups (default: all disjoint groups)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.add_argument("--out-manifest")
    _add_common(p, provider=False)
    p.set_defaults(func=_cmd_split)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _PROVIDER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    raise SystemExit(main())
