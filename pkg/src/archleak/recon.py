"""Attacker-side analysis: query segmentation, attribute extraction,
block-level reconstruction, catalog matching and freeze-point detection."""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .catalog import (
    ATTRIBUTE_NAMES,
    AttributeVector,
    Catalog,
    FunctionCode,
    expand_events,
    l1_error,
)
from .errors import ContractViolation, EmptyObservationError, ParseError
from .trace import Observation

QUERY = FunctionCode.QUERY
CONV = FunctionCode.CONV
FC = FunctionCode.FC
SOFTM = FunctionCode.SOFTM
GRAD = FunctionCode.GRAD
BOUNDARIES = (FunctionCode.MPOOL, FunctionCode.APOOL, FunctionCode.MERGE)
QUERIES_PER_REPORT = 10


def split_queries(observation: Observation | Sequence[FunctionCode]) -> list[list[FunctionCode]]:
    """One code list per QUERY event; anything before the first QUERY is discarded."""
    codes = observation.codes if isinstance(observation, Observation) else observation
    out: list[list[FunctionCode]] = []
    for code in codes:
        if code is QUERY:
            out.append([])
        elif out:
            out[-1].append(code)
    if not out:
        raise EmptyObservationError("observation contains no QUERY event")
    return out


def extract_attributes(query_seq: Iterable[FunctionCode]) -> AttributeVector:
    return AttributeVector.from_codes(query_seq)


@dataclass
class ExtractionReport:
    mode: str
    per_query: list[AttributeVector]
    mean: AttributeVector
    truth: AttributeVector | None = None
    error: float | None = None
    denominator: int | None = None
    arch: str | None = None
    seeds: list[int] = field(default_factory=list)

    def error_text(self) -> str:
        if self.error is None:
            return "-"
        return f"{self.error:.1f}/{self.denominator}"

    def to_csv(self) -> str:
        lines = ["arch,data," + ",".join(ATTRIBUTE_NAMES) + ",errors"]
        name = self.arch or "?"
        if self.truth is not None:
            lines.append(f"{name},G," + ",".join(_num(v) for v in self.truth) + ",")
        lines.append(
            f"{name},{self.mode}," + ",".join(_num(v) for v in self.mean) + f",{self.error_text() if self.truth else ''}"
        )
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        head = "| Arch. | Data | " + " | ".join(f"#{n}" for n in ATTRIBUTE_NAMES) + " | Errors |"
        rule = "|" + "---|" * (len(ATTRIBUTE_NAMES) + 3)
        rows = [head, rule]
        name = self.arch or "?"
        if self.truth is not None:
            rows.append(f"| {name} | G | " + " | ".join(_num(v) for v in self.truth) + " | - |")
        rows.append(f"| {name} | {self.mode} | " + " | ".join(_num(v) for v in self.mean) + f" | {self.error_text()} |")
        return "\n".join(rows) + "\n"

    def to_json(self) -> str:
        doc = {
            "format": FORMAT,
            "kind": "extraction_report",
            "mode": self.mode,
            "arch": self.arch,
            "seeds": self.seeds,
            "per_query": [v._asdict() for v in self.per_query],
            "mean": self.mean._asdict(),
            "truth": None if self.truth is None else self.truth._asdict(),
            "error": self.error,
            "denominator": self.denominator,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExtractionReport":
        doc = _load_doc(text, "extraction_report")
        try:
            vec = lambda d: AttributeVector(**d)
            return cls(
                doc["mode"],
                [vec(d) for d in doc["per_query"]],
                vec(doc["mean"]),
                None if doc["truth"] is None else vec(doc["truth"]),
                doc["error"],
                doc["denominator"],
                doc["arch"],
                list(doc["seeds"]),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad extraction report: {exc}") from None


FORMAT = 1


def _load_doc(text: str, kind: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT or doc.get("kind") != kind:
        raise ParseError(f"not a format {FORMAT} {kind} document")
    return doc


def _num(v: float) -> str:
    v = float(v)
    if v == int(v):
        return str(int(v))
    return f"{v:.2f}".rstrip("0").rstrip(".")


def attack_report(
    observations: Observation | Sequence[Observation],
    mode: str,
    ground_truth: AttributeVector | None = None,
    n: int = QUERIES_PER_REPORT,
) -> ExtractionReport:
    """Average ``n`` per-query attribute vectors.

    Short mode (``"S"``) takes the first query of each of ``n`` independent
    observations; long mode (``"L"``) takes ``n`` consecutive queries of a
    single observation.
    """
    if isinstance(observations, Observation):
        observations = [observations]
    observations = list(observations)
    if mode == "S":
        if len(observations) < n:
            raise ContractViolation(f"short attack needs {n} independent observations, got {len(observations)}")
        per_query = [extract_attributes(split_queries(o)[0]) for o in observations[:n]]
    elif mode == "L":
        if len(observations) != 1:
            raise ContractViolation("long attack takes exactly one observation")
        queries = split_queries(observations[0])
        if len(queries) < n:
            raise ContractViolation(f"long attack needs {n} consecutive queries, got {len(queries)}")
        per_query = [extract_attributes(q) for q in queries[:n]]
    else:
        raise ContractViolation(f"unknown attack mode {mode!r}")
    mean = AttributeVector.mean(per_query)
    report = ExtractionReport(mode, per_query, mean, arch=observations[0].arch, seeds=[o.seed for o in observations[:n]])
    if ground_truth is not None:
        report.truth = AttributeVector(*ground_truth)
        report.error = l1_error(mean, ground_truth)
        report.denominator = int(sum(ground_truth))
    return report


# ---------------------------------------------------------------------------
# Block reconstruction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RBlock:
    kind: str
    convs: int = 0
    closed_by: str | None = None

    def token(self) -> tuple[str, int]:
        return (self.kind, self.convs)

    def label(self) -> str:
        if self.kind == "convnet":
            return f"convnet-{self.convs}"
        return self.kind


@dataclass(frozen=True)
class BlockStructure:
    blocks: tuple[RBlock, ...] = ()
    fc_tail: int = 0
    softmax: bool = False

    def signature(self) -> tuple:
        sig = [b.token() for b in self.blocks]
        if self.fc_tail or self.softmax:
            sig.append(("classifier", self.fc_tail))
        return tuple(sig)

    def describe(self) -> list[str]:
        out = [b.label() for b in self.blocks]
        if self.fc_tail or self.softmax:
            out.append(f"classifier({self.fc_tail} fc{', softmax' if self.softmax else ''})")
        return out

    def to_csv(self) -> str:
        lines = ["index,kind,convs,closed_by"]
        for i, b in enumerate(self.blocks):
            lines.append(f"{i},{b.kind},{b.convs},{b.closed_by or ''}")
        if self.fc_tail or self.softmax:
            lines.append(f"{len(self.blocks)},classifier,{self.fc_tail},{'softmax' if self.softmax else ''}")
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        labels = self.describe()
        head = "| Step | " + " | ".join(f"Block {i + 1}" for i in range(len(labels))) + " |"
        rule = "|" + "---|" * (len(labels) + 1)
        return "\n".join([head, rule, "| (2) | " + " | ".join(labels) + " |"]) + "\n"

    def to_json(self) -> str:
        doc = {
            "format": FORMAT,
            "kind": "block_structure",
            "blocks": [{"kind": b.kind, "convs": b.convs, "closed_by": b.closed_by} for b in self.blocks],
            "fc_tail": self.fc_tail,
            "softmax": self.softmax,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BlockStructure":
        doc = _load_doc(text, "block_structure")
        try:
            blocks = tuple(RBlock(b["kind"], int(b["convs"]), b["closed_by"]) for b in doc["blocks"])
            return cls(blocks, int(doc["fc_tail"]), bool(doc["softmax"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad block structure: {exc}") from None


def _classify(convs: int, closed_by: FunctionCode, first: bool) -> RBlock:
    end = closed_by.value
    if closed_by is FunctionCode.MERGE:
        if convs == 4:
            return RBlock("residual", 4, end)
        if convs == 3:
            return RBlock("identity", 3, end)
        return RBlock("convnet", convs, end)
    if first and convs == 1:
        return RBlock("stem", 1, end)
    return RBlock("convnet", convs, end)


def reconstruct(query_seq: Sequence[FunctionCode]) -> BlockStructure:
    """Segment one query's events into blocks.

    MPOOL, APOOL and MERGE each close the running block.  A merge-closed
    block of 4 convs is residual, of 3 identity.  A pool-closed first block
    with a single conv is the stem.  Blocks with no convs (a bare pooling
    layer such as the one feeding the classifier) are dropped.  Fully
    connected events feed the classifier tail; an FC found before the first
    boundary marks a degenerate stem.
    """
    blocks: list[RBlock] = []
    convs = 0
    fcs = 0
    softmax = False
    degenerate = False
    for code in query_seq:
        if code is CONV:
            convs += 1
        elif code is FC:
            fcs += 1
            if not blocks:
                degenerate = True
        elif code is SOFTM:
            softmax = True
        elif code in BOUNDARIES:
            if degenerate and not blocks:
                blocks.append(RBlock("stem", convs, code.value))
            elif convs:
                blocks.append(_classify(convs, code, first=not blocks))
            convs = 0
            fcs = 0
    if convs:
        blocks.append(RBlock("convnet", convs, None))
    return BlockStructure(tuple(blocks), fcs, softmax)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance over token sequences, unit costs."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


@functools.lru_cache(maxsize=256)
def template_signature(template) -> tuple:
    return reconstruct(expand_events(template)[1:]).signature()


def identify(structure: BlockStructure, catalog: Catalog) -> list[tuple[str, int]]:
    """Catalog names ranked by block-signature edit distance (ties by name)."""
    if not catalog:
        raise ContractViolation("catalog is empty")
    sig = structure.signature()
    scored = [(edit_distance(sig, template_signature(t)), name) for name, t in catalog.items()]
    scored.sort()
    return [(name, d) for d, name in scored]


def detect_freeze(observation: Observation, template) -> tuple[int, int]:
    """(layers updated per step, frozen bias-bearing prefix length)."""
    try:
        queries = split_queries(observation)
    except EmptyObservationError:
        raise ContractViolation("training observation holds zero queries") from None
    grads = sum(q.count(GRAD) for q in queries) / len(queries)
    updated = int(round(grads))
    frozen = max(0, template.bias_layer_count() - updated)
    return updated, frozen
