"""Command-line front end: eval, curate, score, inspect, record-fixture.

Exit codes: 0 success; 1 usage or configuration problem; 2 run completed
but infrastructure failures are present (unscored traces / retriable
curation errors); 3 data integrity violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Any

from . import jsonl
from .config import RunConfig, config_keys_help, load_config
from .curation import (
    CurationInfraError,
    RationaleType,
    candidate_to_record,
    emit_alpaca,
    load_candidates,
    synthesize_candidates,
    validate_candidates,
)
from .decoding import (
    DecodeDeps,
    DecodeMode,
    decode_batch,
    trace_to_obj,
)
from .errors import (
    BackendError,
    ConfigurationError,
    HarnessError,
    IntegrityError,
    ParseError,
)
from .execution import (
    InProcessRunner,
    ProgramExecutor,
    SubprocessRunner,
)
from .generation import (
    GenRequest,
    HttpBackend,
    RateLimiter,
    RecordingBackend,
    ReplayBackend,
)
from .problems import DatasetMeta, LoadResult, dataset_meta, load_dataset, registry
from .prompts import Mode, PromptSpec, load_exemplars, render
from .scoring import (
    card_to_obj,
    compare,
    fmt_tenths,
    render_markdown,
    score,
)

log = logging.getLogger(__name__)

_MODE_BY_NAME = {
    "hybrid": DecodeMode.HYBRID,
    "pot": DecodeMode.POT_ONLY,
    "cot": DecodeMode.COT_ONLY,
}


def _build_backend(config: RunConfig):
    kind = config["backend.kind"]
    if kind == "replay":
        fixture = config["backend.fixture"]
        if not fixture:
            raise ConfigurationError("backend.kind=replay requires backend.fixture")
        return ReplayBackend.from_path(fixture)
    url = config["backend.url"]
    if not url:
        raise ConfigurationError("backend.kind=http requires backend.url")
    limiter = RateLimiter(
        max_concurrency=config["backend.max_concurrency"],
        requests_per_second=config["backend.requests_per_second"],
    )
    return HttpBackend(
        url=url,
        model=config["backend.model"],
        api_style=config["backend.api_style"],
        auth_token=config.auth_token(),
        timeout_s=config["backend.timeout_s"],
        retries=config["backend.retries"],
        backoff_s=config["backend.backoff_s"],
        limiter=limiter,
    )


def _build_executor(config: RunConfig) -> ProgramExecutor:
    if config["executor.kind"] == "inprocess":
        runner = InProcessRunner()
    else:
        cmd = tuple(
            sys.executable if part == "python" else part
            for part in config["executor.runner_cmd"]
        )
        runner = SubprocessRunner(cmd)
    return ProgramExecutor(
        runner,
        limits=config.limits(),
        policy=config.sandbox_policy(),
        pool_size=config["executor.pool_size"],
    )


def _load_problem_sets(config: RunConfig) -> list[tuple[DatasetMeta, LoadResult]]:
    loaded = []
    for dataset in config["run.datasets"]:
        meta = dataset_meta(dataset)
        path = os.path.join(config["run.dataset_dir"], f"{dataset}.jsonl")
        if not os.path.exists(path):
            raise ConfigurationError(f"dataset file not found: {path}")
        result = load_dataset(path, meta)
        for warning in result.warnings:
            print(f"warning: {warning}", file=sys.stderr)
        loaded.append((meta, result))
    return loaded


def _exemplars_for(config: RunConfig, mode: Mode, shots: int):
    if shots == 0:
        return []
    path = os.path.join(config["prompts.exemplar_dir"], f"{mode.value}.jsonl")
    if not os.path.exists(path):
        raise ConfigurationError(
            f"{shots}-shot prompting needs exemplar file {path}, which does not exist"
        )
    return load_exemplars(path)


def _decode_deps(config: RunConfig, meta: DatasetMeta, backend, executor) -> DecodeDeps:
    shots = config.shots_for(meta.dataset, meta.default_shots)
    return DecodeDeps(
        client=backend,
        executor=executor,
        spec_pot=PromptSpec(mode=Mode.POT, shots=shots),
        spec_cot=PromptSpec(mode=Mode.COT, shots=shots),
        pot_exemplars=_exemplars_for(config, Mode.POT, shots),
        cot_exemplars=_exemplars_for(config, Mode.COT, shots),
        tolerances=config.tolerances(),
        unit_words=config.unit_words(),
        max_new_tokens=config["backend.max_new_tokens"],
        temperature=config["backend.temperature"],
        stop=tuple(config["backend.stop"]),
    )


def _write_json(path: str, obj: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    problem_sets = _load_problem_sets(config)  # before any run-dir writes
    backend = _build_backend(config)
    executor = _build_executor(config)

    run_dir = os.path.join(config["run.out_dir"], config["run.run_id"])
    os.makedirs(run_dir, exist_ok=True)
    _write_json(os.path.join(run_dir, "config.json"), config.snapshot())

    cards = []
    unscored_total = 0
    for mode_name in config.modes():
        mode = _MODE_BY_NAME[mode_name]
        trace_path = os.path.join(run_dir, f"traces-{mode_name}.jsonl")
        done_ids: set[str] = set()
        if os.path.exists(trace_path):
            done_ids = {obj["problem_id"] for _, obj in jsonl.read_jsonl(trace_path)}
            if done_ids:
                print(
                    f"resuming {mode_name}: {len(done_ids)} traces already logged",
                    file=sys.stderr,
                )
        for meta, result in problem_sets:
            deps = _decode_deps(config, meta, backend, executor)
            pending = [p for p in result.problems if p.id not in done_ids]
            decode_batch(
                pending,
                mode,
                deps,
                parallelism=config["run.parallelism"],
                on_trace=lambda t: jsonl.append_jsonl(trace_path, trace_to_obj(t)),
            )

        trace_objs = [obj for _, obj in jsonl.read_jsonl(trace_path)]
        card = score(trace_objs, registry(), run_id=config["run.run_id"], mode=mode_name)
        cards.append(card)
        unscored_total += sum(s.unscored for s in card.scores)
        _write_json(os.path.join(run_dir, f"scorecard-{mode_name}.json"), card_to_obj(card))
        _write_text(os.path.join(run_dir, f"report-{mode_name}.md"), render_markdown(card, registry()))
        overall = fmt_tenths(card.overall_avg) if card.overall_avg is not None else "-"
        print(f"{mode_name}: overall {overall} ({len(trace_objs)} traces) -> {trace_path}")

    if len(cards) > 1:
        table = compare(cards, baseline=0)
        names = {m.dataset: m.display_name for m in registry()}
        _write_text(os.path.join(run_dir, "comparison.md"), table.markdown(names))
        _write_text(os.path.join(run_dir, "comparison.csv"), table.csv())
        print(f"comparison table -> {os.path.join(run_dir, 'comparison.md')}")

    if unscored_total:
        print(f"{unscored_total} traces unscored due to infrastructure failures", file=sys.stderr)
        return 2
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    run_dir = args.run_dir
    config_path = os.path.join(run_dir, "config.json")
    run_id = os.path.basename(os.path.normpath(run_dir))
    if os.path.exists(config_path):
        with open(config_path, "r", encoding="utf-8") as fh:
            run_id = json.load(fh).get("run.run_id", run_id)

    modes = args.mode.split(",") if args.mode else ["hybrid", "pot", "cot"]
    found = False
    for mode_name in modes:
        trace_path = os.path.join(run_dir, f"traces-{mode_name}.jsonl")
        if not os.path.exists(trace_path):
            continue
        found = True
        trace_objs = [obj for _, obj in jsonl.read_jsonl(trace_path)]
        card = score(trace_objs, registry(), run_id=run_id, mode=mode_name)
        _write_json(os.path.join(run_dir, f"scorecard-{mode_name}.json"), card_to_obj(card))
        print(render_markdown(card, registry()))
        if args.micro and card.micro_overall is not None:
            print(f"micro-average ({mode_name}): {fmt_tenths(card.micro_overall)}")
    if not found:
        raise ConfigurationError(f"no trace logs found under {run_dir}")
    return 0


def cmd_curate(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    candidates = load_candidates(args.candidates) if args.candidates else []
    if args.synth:
        if not args.seeds:
            raise ConfigurationError("--synth requires --seeds")
        seeds = load_exemplars(args.seeds)
        backend = _build_backend(config)
        candidates.extend(
            synthesize_candidates(
                seeds,
                args.synth,
                backend,
                rationale_type=RationaleType(args.synth_type),
            )
        )
    if not candidates:
        raise ConfigurationError("no candidates: pass --candidates and/or --synth with --seeds")

    executor = _build_executor(config)
    try:
        result = validate_candidates(
            candidates,
            executor,
            tolerances=config.tolerances(),
            checkpoint_path=args.checkpoint,
        )
    except CurationInfraError as exc:
        print(f"validation infrastructure failure: {exc}", file=sys.stderr)
        return 2

    print(f"kept {len(result.kept)} of {len(candidates)} candidates")
    for kind, count in result.histogram().items():
        print(f"  dropped {kind}: {count}")
    if args.dry_run:
        print("dry run: nothing emitted")
        return 0
    if not args.out:
        raise ConfigurationError("--out is required unless --dry-run is given")
    records = [candidate_to_record(c) for c in result.kept]
    emit_alpaca(records, args.out)
    print(f"wrote {len(records)} records -> {args.out}")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    run_dir = args.run_dir
    found = False
    for mode_name in ("hybrid", "pot", "cot"):
        trace_path = os.path.join(run_dir, f"traces-{mode_name}.jsonl")
        if not os.path.exists(trace_path):
            continue
        found = True
        paths: dict[str, int] = {}
        statuses: dict[str, int] = {}
        correct = unscored = total = 0
        for _, obj in jsonl.read_jsonl(trace_path):
            if args.problem and obj["problem_id"] == args.problem:
                print(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False))
            total += 1
            paths[obj["path"]] = paths.get(obj["path"], 0) + 1
            if obj.get("execution"):
                status = obj["execution"]["status"]
                statuses[status] = statuses.get(status, 0) + 1
            correct += bool(obj.get("correct"))
            unscored += bool(obj.get("unscored"))
        print(f"{mode_name}: {total} traces, {correct} correct, {unscored} unscored")
        for name, count in sorted(paths.items()):
            print(f"  path {name}: {count}")
        for name, count in sorted(statuses.items()):
            print(f"  execution {name}: {count}")
    if not found:
        raise ConfigurationError(f"no trace logs found under {run_dir}")
    return 0


def cmd_record_fixture(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set)
    if config["backend.kind"] != "http":
        raise ConfigurationError("record-fixture needs backend.kind=http")
    problem_sets = _load_problem_sets(config)
    recorder = RecordingBackend(_build_backend(config))

    needed_modes: set[Mode] = set()
    for mode_name in config.modes():
        if mode_name in ("hybrid", "pot"):
            needed_modes.add(Mode.POT)
        if mode_name in ("hybrid", "cot"):
            needed_modes.add(Mode.COT)

    count = 0
    try:
        for meta, result in problem_sets:
            shots = config.shots_for(meta.dataset, meta.default_shots)
            for mode in sorted(needed_modes, key=lambda m: m.value):
                spec = PromptSpec(mode=mode, shots=shots)
                exemplars = _exemplars_for(config, mode, shots)
                for problem in result.problems:
                    prompt = render(problem, spec, exemplars)
                    recorder.generate(
                        GenRequest(
                            prompt=prompt.text,
                            max_new_tokens=config["backend.max_new_tokens"],
                            temperature=config["backend.temperature"],
                            stop=tuple(config["backend.stop"]),
                            tag=f"{problem.id}:{mode.value}",
                        )
                    )
                    count += 1
    except BackendError as exc:
        print(f"recording aborted by backend failure: {exc}", file=sys.stderr)
        if recorder.pairs:
            recorder.save(args.out)
            print(f"partial fixture with {len(recorder.pairs)} entries -> {args.out}", file=sys.stderr)
        return 2
    recorder.save(args.out)
    print(f"recorded {count} completions -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridmath",
        description=(
            "Evaluate math word problems with program-first hybrid decoding, "
            "curate execution-validated instruction data, and score trace logs."
        ),
        epilog="configuration keys (config file sections or --set overrides):\n" + config_keys_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command")

    def add_config_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="path to a config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )

    p_eval = sub.add_parser("eval", help="decode datasets and write trace logs + scorecards")
    add_config_args(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_score = sub.add_parser("score", help="recompute scorecards from a run directory")
    p_score.add_argument("run_dir")
    p_score.add_argument("--mode", help="comma-separated modes (default: whatever logs exist)")
    p_score.add_argument("--micro", action="store_true", help="also print pooled micro-averages")
    p_score.set_defaults(func=cmd_score)

    p_curate = sub.add_parser("curate", help="validate candidate rationales and emit training data")
    add_config_args(p_curate)
    p_curate.add_argument("--candidates", help="candidate rationale JSONL file")
    p_curate.add_argument("--out", help="output training file path")
    p_curate.add_argument("--checkpoint", help="journal file enabling resume")
    p_curate.add_argument("--dry-run", action="store_true", help="report only, emit nothing")
    p_curate.add_argument("--synth", type=int, default=0, metavar="N", help="synthesize N candidates first")
    p_curate.add_argument("--seeds", help="seed exemplar JSONL for --synth")
    p_curate.add_argument(
        "--synth-type", choices=["cot", "pot"], default="cot", help="rationale type for synthesized candidates"
    )
    p_curate.set_defaults(func=cmd_curate)

    p_inspect = sub.add_parser("inspect", help="summarize a run directory's trace logs")
    p_inspect.add_argument("run_dir")
    p_inspect.add_argument("--problem", help="print the full trace for one problem id")
    p_inspect.set_defaults(func=cmd_inspect)

    p_record = sub.add_parser("record-fixture", help="capture live completions into a replay fixture")
    add_config_args(p_record)
    p_record.add_argument("--out", required=True, help="fixture output path")
    p_record.set_defaults(func=cmd_record_fixture)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not getattr(args, "command", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IntegrityError, ParseError) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 3
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return 2
    except HarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted; partial trace logs are resumable", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
