"""Decoy-process and oblivious-computation defense experiments."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .catalog import ATTRIBUTE_NAMES, ArchTemplate, AttributeVector, attributes_of, l1_error
from .errors import ContractViolation
from .parallel import pmap
from .recon import extract_attributes, identify, reconstruct, split_queries
from .rng import derive_seed
from .trace import (
    DecoySpec,
    NoiseModel,
    ObfuscationSpec,
    apply_obfuscation,
    emit_trace,
    merge_decoy,
    observe,
)


@dataclass
class DefenseReport:
    defense: str
    arch: str
    truth: AttributeVector
    runs: list[AttributeVector]
    baseline_runs: list[AttributeVector]
    events: list[int] = field(default_factory=list)
    baseline_events: list[int] = field(default_factory=list)
    identifications: list[tuple[str, int]] = field(default_factory=list)

    @property
    def mean(self) -> AttributeVector:
        return AttributeVector.mean(self.runs)

    @property
    def baseline_mean(self) -> AttributeVector:
        return AttributeVector.mean(self.baseline_runs)

    @property
    def errors(self) -> list[float]:
        return [l1_error(v, self.truth) for v in self.runs]

    @property
    def baseline_errors(self) -> list[float]:
        return [l1_error(v, self.truth) for v in self.baseline_runs]

    @property
    def error(self) -> float:
        return sum(self.errors) / len(self.errors)

    @property
    def baseline_error(self) -> float:
        return sum(self.baseline_errors) / len(self.baseline_errors)

    def standard_error(self, attr: str, baseline: bool = False) -> float:
        j = ATTRIBUTE_NAMES.index(attr)
        xs = [v[j] for v in (self.baseline_runs if baseline else self.runs)]
        if len(xs) < 2:
            return 0.0
        m = sum(xs) / len(xs)
        var = sum((x - m) ** 2 for x in xs) / (len(xs) - 1)
        return math.sqrt(var / len(xs))


def _run_decoy(job):
    template, decoy, noise, run_seed, queries = job
    trace = emit_trace(template, queries)
    obs_seed = derive_seed(run_seed, 1)
    base = observe(trace, noise, obs_seed)
    defended = observe(merge_decoy(trace, decoy, derive_seed(run_seed, 0)), noise, obs_seed)
    return _mean_vec(defended), _mean_vec(base), len(defended.codes), len(base.codes)


def _mean_vec(obs) -> AttributeVector:
    return AttributeVector.mean(extract_attributes(q) for q in split_queries(obs))


def eval_decoy(
    victim: ArchTemplate,
    decoy: DecoySpec,
    runs: int = 10,
    noise: NoiseModel | None = None,
    seed: int = 0,
    queries: int = 1,
    workers: int | None = 1,
) -> DefenseReport:
    if runs < 1:
        raise ContractViolation("runs must be at least 1")
    noise = noise or NoiseModel.noiseless()
    jobs = [(victim, decoy, noise, derive_seed(seed, r), queries) for r in range(runs)]
    out = pmap(_run_decoy, jobs, workers)
    return DefenseReport(
        f"decoy {decoy.label()} @ {decoy.rate:g}/query",
        victim.name,
        attributes_of(victim),
        [o[0] for o in out],
        [o[1] for o in out],
        [o[2] for o in out],
        [o[3] for o in out],
    )


def _run_obfuscation(job):
    template, obfuscated, noise, run_seed = job
    obs_seed = derive_seed(run_seed, 1)
    base = observe(emit_trace(template, 1), noise, obs_seed)
    obs = observe(emit_trace(obfuscated, 1), noise, obs_seed)
    return _mean_vec(obs), _mean_vec(base), len(obs.codes), len(base.codes), split_queries(obs)[0]


def eval_obfuscation(
    victim: ArchTemplate,
    spec: ObfuscationSpec,
    runs: int = 10,
    noise: NoiseModel | None = None,
    seed: int = 0,
    catalog=None,
    workers: int | None = 1,
) -> DefenseReport:
    """Errors are measured against the original template's ground truth."""
    if runs < 1:
        raise ContractViolation("runs must be at least 1")
    noise = noise or NoiseModel.noiseless()
    obfuscated = apply_obfuscation(victim, spec)
    jobs = [(victim, obfuscated, noise, derive_seed(seed, r)) for r in range(runs)]
    out = pmap(_run_obfuscation, jobs, workers)
    report = DefenseReport(
        spec.label(),
        victim.name,
        attributes_of(victim),
        [o[0] for o in out],
        [o[1] for o in out],
        [o[2] for o in out],
        [o[3] for o in out],
    )
    if catalog is not None:
        report.identifications = [identify(reconstruct(o[4]), catalog)[0] for o in out]
    return report


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def defense_table_md(reports: list[DefenseReport]) -> str:
    head = "| Network | Defense | " + " | ".join(f"#{n}" for n in ATTRIBUTE_NAMES) + " | Errors | Events |"
    rule = "|" + "---|" * (len(ATTRIBUTE_NAMES) + 4)
    rows = [head, rule]
    if reports:
        r0 = reports[0]
        base_events = sum(r0.baseline_events) / len(r0.baseline_events)
        rows.append(
            f"| {r0.arch} | - | " + " | ".join(_fmt(v) for v in r0.baseline_mean)
            + f" | {_fmt(r0.baseline_error)} | {_fmt(base_events)} |"
        )
    for r in reports:
        ev = sum(r.events) / len(r.events)
        rows.append(f"| {r.arch} | {r.defense} | " + " | ".join(_fmt(v) for v in r.mean) + f" | {_fmt(r.error)} | {_fmt(ev)} |")
    return "\n".join(rows) + "\n"


def defense_table_csv(reports: list[DefenseReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["network", "defense", *ATTRIBUTE_NAMES, "errors", "events"])
    if reports:
        r0 = reports[0]
        w.writerow([r0.arch, "-", *(repr(float(v)) for v in r0.baseline_mean), repr(r0.baseline_error),
                    repr(sum(r0.baseline_events) / len(r0.baseline_events))])
    for r in reports:
        w.writerow([r.arch, r.defense, *(repr(float(v)) for v in r.mean), repr(r.error), repr(sum(r.events) / len(r.events))])
    return buf.getvalue()
