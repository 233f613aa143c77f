"""Label-level, ancestor-constrained and path-level F1 scores."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .hierarchy import Hierarchy


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    gold: frozenset[int]
    pred: frozenset[int]


@dataclass
class EvalReport:
    micro_f1: float
    macro_f1: float
    cmicro_f1: float
    cmacro_f1: float
    pmicro_f1: float
    pmacro_f1: float
    count_gold: int
    count_invalid: int
    gamma: float
    raw_pmicro_f1: float
    raw_pmacro_f1: float
    per_layer: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


class Counts:
    """Per-key true positive / false positive / false negative tallies."""

    def __init__(self):
        self.tp: Counter = Counter()
        self.fp: Counter = Counter()
        self.fn: Counter = Counter()

    def add(self, gold: set, pred: set, hits: set | None = None) -> None:
        hits = gold & pred if hits is None else hits
        self.tp.update(hits)
        self.fp.update(pred - hits)
        self.fn.update(gold - hits)

    def keys(self) -> set:
        return set(self.tp) | set(self.fp) | set(self.fn)

    def f1(self, keys: Iterable | None = None) -> tuple[float, float]:
        keys = sorted(self.keys() if keys is None else keys)
        tp = sum(self.tp[k] for k in keys)
        fp = sum(self.fp[k] for k in keys)
        fn = sum(self.fn[k] for k in keys)
        micro = _f1(tp, fp, fn)
        macro = sum(_f1(self.tp[k], self.fp[k], self.fn[k]) for k in keys) / len(keys) if keys else 0.0
        return micro, macro


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def _require(records: Sequence[PredictionRecord]) -> None:
    if not records:
        raise ValueError("no prediction records")


def micro_macro_f1(records: Sequence[PredictionRecord], h: Hierarchy):
    """Micro/macro F1 over label ids plus a per-depth breakdown.

    Macro-F1 averages over labels that occur in gold or predictions.
    """
    _require(records)
    counts = Counts()
    for r in records:
        counts.add(set(r.gold), set(r.pred))
    micro, macro = counts.f1()
    present = counts.keys()
    per_layer = []
    for d, layer in enumerate(h.layers, 1):
        mi, ma = counts.f1(present & set(layer))
        per_layer.append({"depth": d, "micro_f1": mi, "macro_f1": ma})
    return micro, macro, per_layer


def constrained_f1(records: Sequence[PredictionRecord], h: Hierarchy) -> tuple[float, float]:
    """A correct label only counts if all of its ancestors are correct too;
    otherwise it stays in the prediction as a false positive."""
    _require(records)
    counts = Counts()
    for r in records:
        correct = set(r.gold & r.pred)
        hits = {lab for lab in correct if correct.issuperset(h.ancestors(lab))}
        counts.add(set(r.gold), set(r.pred), hits)
    return counts.f1()


def gamma(count_invalid: int, count_gold: int) -> float:
    """Penalty ``1 - 2 (sigmoid(a) - 1/2)`` with ``a = invalid / gold``; 1 when there is no gold."""
    if count_gold == 0:
        return 1.0
    a = count_invalid / count_gold
    return 1.0 - 2.0 * (1.0 / (1.0 + math.exp(-a)) - 0.5)


def path_metric(records: Sequence[PredictionRecord], h: Hierarchy):
    """Path-level F1 scaled by :func:`gamma`.

    Returns ``(pmicro, pmacro, count_invalid, count_gold, gamma, raw_micro, raw_macro)``.
    """
    _require(records)
    counts = Counts()
    count_gold = 0
    count_invalid = 0
    for r in records:
        gold_paths, _ = h.labels_to_paths(r.gold)
        pred_paths, invalid = h.labels_to_paths(r.pred)
        counts.add(gold_paths, pred_paths)
        count_gold += len(r.gold)
        count_invalid += len(invalid)
    raw_micro, raw_macro = counts.f1()
    g = gamma(count_invalid, count_gold)
    return g * raw_micro, g * raw_macro, count_invalid, count_gold, g, raw_micro, raw_macro


def evaluate(records: Sequence[PredictionRecord], h: Hierarchy) -> EvalReport:
    micro, macro, per_layer = micro_macro_f1(records, h)
    cmicro, cmacro = constrained_f1(records, h)
    pmicro, pmacro, invalid, gold, g, raw_micro, raw_macro = path_metric(records, h)
    return EvalReport(
        micro_f1=micro,
        macro_f1=macro,
        cmicro_f1=cmicro,
        cmacro_f1=cmacro,
        pmicro_f1=pmicro,
        pmacro_f1=pmacro,
        count_gold=gold,
        count_invalid=invalid,
        gamma=g,
        raw_pmicro_f1=raw_micro,
        raw_pmacro_f1=raw_macro,
        per_layer=per_layer,
    )


def load_predictions(path, h: Hierarchy) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(
                    PredictionRecord(str(rec["id"]), frozenset(h.ids_of(rec["gold"])), frozenset(h.ids_of(rec["pred"])))
                )
    return out


def write_predictions(path, records: Iterable[PredictionRecord], h: Hierarchy) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            row = {"id": r.id, "gold": h.names_of(r.gold), "pred": h.names_of(r.pred)}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
