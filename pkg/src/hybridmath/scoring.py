"""Accuracy aggregation and mode-comparison tables.

Internal arithmetic is exact (integer counts and fractions); rounding to
one decimal, half-up, happens once per displayed number. Dataset averages
are macro: the unweighted mean of the per-dataset display accuracies, which
is the arithmetic the source tables use for their Avg columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import IntegrityError
from .problems import DatasetMeta

Number = Fraction | int | float | str


def _to_fraction(value: Number) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))  # decimal-faithful, not binary-faithful
    return Fraction(value)


def round_tenths_half_up(value: Number) -> Fraction:
    """Round a nonnegative value half-up to one decimal, exactly."""
    frac = _to_fraction(value)
    if frac < 0:
        raise ValueError("accuracies are nonnegative")
    return Fraction(math.floor(frac * 10 + Fraction(1, 2)), 10)


def fmt_tenths(value: Fraction | None, signed: bool = False) -> str:
    if value is None:
        return "-"
    tenths = value * 10
    if tenths.denominator != 1:
        raise ValueError(f"{value} is not an exact tenth")
    units, tenth = divmod(abs(tenths.numerator), 10)
    sign = "-" if tenths.numerator < 0 else ("+" if signed and tenths.numerator > 0 else "")
    return f"{sign}{units}.{tenth}"


def macro_average(values: Iterable[Number]) -> Fraction:
    """Unweighted mean of accuracies, rounded half-up to one decimal."""
    items = [_to_fraction(v) for v in values]
    if not items:
        raise ValueError("cannot average zero accuracies")
    return round_tenths_half_up(sum(items, Fraction(0)) / len(items))


@dataclass(slots=True)
class DatasetScore:
    dataset: str
    correct: int
    scored: int
    unscored: int
    accuracy: Fraction | None  # exact tenths; None when nothing was scored

    @staticmethod
    def from_counts(dataset: str, correct: int, scored: int, unscored: int) -> "DatasetScore":
        accuracy = (
            round_tenths_half_up(Fraction(100 * correct, scored)) if scored > 0 else None
        )
        return DatasetScore(dataset, correct, scored, unscored, accuracy)


@dataclass(slots=True)
class ScoreCard:
    run_id: str
    mode: str
    scores: list[DatasetScore]  # registry order
    ind_avg: Fraction | None
    ood_avg: Fraction | None
    overall_avg: Fraction | None
    micro_overall: Fraction | None  # pooled-count accuracy, for diagnostics

    def datasets(self) -> list[str]:
        return [s.dataset for s in self.scores]

    def accuracy(self, dataset: str) -> Fraction | None:
        for s in self.scores:
            if s.dataset == dataset:
                return s.accuracy
        return None


def _averages(
    scores: Sequence[DatasetScore], registry: Sequence[DatasetMeta]
) -> tuple[Fraction | None, Fraction | None, Fraction | None, Fraction | None]:
    ind_domain = {m.dataset for m in registry if m.in_domain}
    ind = [s.accuracy for s in scores if s.dataset in ind_domain and s.accuracy is not None]
    ood = [s.accuracy for s in scores if s.dataset not in ind_domain and s.accuracy is not None]
    every = [s.accuracy for s in scores if s.accuracy is not None]
    total_scored = sum(s.scored for s in scores)
    total_correct = sum(s.correct for s in scores)
    micro = (
        round_tenths_half_up(Fraction(100 * total_correct, total_scored))
        if total_scored > 0
        else None
    )
    return (
        macro_average(ind) if ind else None,
        macro_average(ood) if ood else None,
        macro_average(every) if every else None,
        micro,
    )


def score(
    traces: Iterable[dict],
    registry: Sequence[DatasetMeta],
    run_id: str = "run",
    mode: str = "hybrid",
) -> ScoreCard:
    """Aggregate trace objects into a card; unscored traces leave the
    accuracy denominator but stay visible in their own column."""
    known = {m.dataset: i for i, m in enumerate(registry)}
    counts: dict[str, list[int]] = {}  # dataset -> [correct, scored, unscored]
    for trace in traces:
        dataset = trace["dataset"]
        if dataset not in known:
            raise IntegrityError(f"trace {trace.get('problem_id')!r} references unknown dataset {dataset!r}")
        bucket = counts.setdefault(dataset, [0, 0, 0])
        if trace.get("unscored", False):
            bucket[2] += 1
        else:
            bucket[1] += 1
            if trace.get("correct", False):
                bucket[0] += 1
    scores = [
        DatasetScore.from_counts(dataset, *counts[dataset])
        for dataset in sorted(counts, key=known.__getitem__)
    ]
    ind_avg, ood_avg, overall_avg, micro = _averages(scores, registry)
    return ScoreCard(
        run_id=run_id,
        mode=mode,
        scores=scores,
        ind_avg=ind_avg,
        ood_avg=ood_avg,
        overall_avg=overall_avg,
        micro_overall=micro,
    )


def card_from_accuracies(
    run_id: str, mode: str, accuracies: dict[str, Number], registry: Sequence[DatasetMeta]
) -> ScoreCard:
    """Build a card straight from display accuracies (counts unknown),
    e.g. to reproduce a published table's averaging."""
    known = {m.dataset: i for i, m in enumerate(registry)}
    unknown = set(accuracies) - set(known)
    if unknown:
        raise IntegrityError(f"unknown datasets {sorted(unknown)}")
    scores = [
        DatasetScore(
            dataset=dataset,
            correct=0,
            scored=0,
            unscored=0,
            accuracy=round_tenths_half_up(accuracies[dataset]),
        )
        for dataset in sorted(accuracies, key=known.__getitem__)
    ]
    ind_avg, ood_avg, overall_avg, _ = _averages(scores, registry)
    return ScoreCard(
        run_id=run_id,
        mode=mode,
        scores=scores,
        ind_avg=ind_avg,
        ood_avg=ood_avg,
        overall_avg=overall_avg,
        micro_overall=None,
    )


def card_to_obj(card: ScoreCard) -> dict:
    return {
        "run_id": card.run_id,
        "mode": card.mode,
        "per_dataset": {
            s.dataset: {
                "correct": s.correct,
                "scored": s.scored,
                "unscored": s.unscored,
                "accuracy": fmt_tenths(s.accuracy) if s.accuracy is not None else None,
            }
            for s in card.scores
        },
        "ind_avg": fmt_tenths(card.ind_avg) if card.ind_avg is not None else None,
        "ood_avg": fmt_tenths(card.ood_avg) if card.ood_avg is not None else None,
        "overall_avg": fmt_tenths(card.overall_avg) if card.overall_avg is not None else None,
        "micro_overall": fmt_tenths(card.micro_overall) if card.micro_overall is not None else None,
    }


def card_from_obj(obj: dict, registry: Sequence[DatasetMeta]) -> ScoreCard:
    known = {m.dataset: i for i, m in enumerate(registry)}
    scores = []
    for dataset in sorted(obj["per_dataset"], key=known.__getitem__):
        entry = obj["per_dataset"][dataset]
        scores.append(
            DatasetScore(
                dataset=dataset,
                correct=int(entry["correct"]),
                scored=int(entry["scored"]),
                unscored=int(entry["unscored"]),
                accuracy=Fraction(entry["accuracy"]) if entry["accuracy"] is not None else None,
            )
        )

    def parse(value: str | None) -> Fraction | None:
        return Fraction(value) if value is not None else None

    return ScoreCard(
        run_id=obj["run_id"],
        mode=obj["mode"],
        scores=scores,
        ind_avg=parse(obj.get("ind_avg")),
        ood_avg=parse(obj.get("ood_avg")),
        overall_avg=parse(obj.get("overall_avg")),
        micro_overall=parse(obj.get("micro_overall")),
    )


@dataclass(slots=True)
class ComparisonTable:
    datasets: list[str]
    rows: list[tuple[str, list[Fraction | None], Fraction | None]]  # (label, accuracies, overall)
    deltas: list[tuple[str, list[Fraction | None], Fraction | None]]

    def markdown(self, display_names: dict[str, str] | None = None) -> str:
        names = display_names or {}
        header = ["mode"] + [names.get(d, d) for d in self.datasets] + ["Avg"]
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for label, accs, overall in self.rows:
            cells = [fmt_tenths(a) for a in accs] + [fmt_tenths(overall)]
            lines.append("| " + " | ".join([label] + cells) + " |")
        for label, accs, overall in self.deltas:
            cells = [fmt_tenths(a, signed=True) if a is not None else "-" for a in accs]
            cells.append(fmt_tenths(overall, signed=True) if overall is not None else "-")
            lines.append("| " + " | ".join([label] + cells) + " |")
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        lines = [",".join(["mode"] + self.datasets + ["avg"])]
        for label, accs, overall in self.rows:
            lines.append(",".join([label] + [fmt_tenths(a) for a in accs] + [fmt_tenths(overall)]))
        for label, accs, overall in self.deltas:
            cells = [fmt_tenths(a, signed=True) if a is not None else "-" for a in accs]
            cells.append(fmt_tenths(overall, signed=True) if overall is not None else "-")
            lines.append(",".join([label] + cells))
        return "\n".join(lines) + "\n"


def compare(cards: Sequence[ScoreCard], baseline: int = 0) -> ComparisonTable:
    """Tabulate several cards over one dataset set, with deltas vs a baseline."""
    if not cards:
        raise ValueError("nothing to compare")
    if not 0 <= baseline < len(cards):
        raise ValueError(f"baseline index {baseline} out of range")
    base_sets = set(cards[baseline].datasets())
    for card in cards:
        if set(card.datasets()) != base_sets:
            diff = sorted(set(card.datasets()) ^ base_sets)
            raise IntegrityError(
                f"cards cover different datasets; symmetric difference: {diff}"
            )
    datasets = cards[baseline].datasets()
    rows = [(card.mode, [card.accuracy(d) for d in datasets], card.overall_avg) for card in cards]

    def delta(a: Fraction | None, b: Fraction | None) -> Fraction | None:
        if a is None or b is None:
            return None
        return a - b

    base = cards[baseline]
    deltas = []
    for card in cards:
        if card is base:
            continue
        deltas.append(
            (
                f"{card.mode} vs {base.mode}",
                [delta(card.accuracy(d), base.accuracy(d)) for d in datasets],
                delta(card.overall_avg, base.overall_avg),
            )
        )
    return ComparisonTable(datasets=datasets, rows=rows, deltas=deltas)


def render_markdown(card: ScoreCard, registry: Sequence[DatasetMeta]) -> str:
    names = {m.dataset: m.display_name for m in registry}
    header = ["dataset", "correct", "scored", "unscored", "accuracy"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for s in card.scores:
        lines.append(
            f"| {names.get(s.dataset, s.dataset)} | {s.correct} | {s.scored} | {s.unscored} | "
            f"{fmt_tenths(s.accuracy) if s.accuracy is not None else '-'} |"
        )
    lines.append("")
    for label, value in (
        ("IND avg", card.ind_avg),
        ("OOD avg", card.ood_avg),
        ("Overall avg", card.overall_avg),
        ("Micro overall", card.micro_overall),
    ):
        lines.append(f"{label}: {fmt_tenths(value) if value is not None else '-'}")
    return "\n".join(lines) + "\n"
