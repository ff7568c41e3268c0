"""Victim traces, the Flush+Reload observation channel, and trace transforms.

RNG consumption is part of the contract (see ``docs/PRNG.md``):

``observe``
    1. for each code with a positive spurious rate, in ``FunctionCode``
       declaration order: ``k = poisson(rate * n_queries)``, then ``k`` gap
       draws ``1 + below(n)`` where ``n`` is the trace length;
    2. one ``random()`` per non-QUERY victim event in trace order; the event
       is missed iff the draw is ``< p_miss``.

``merge_decoy``
    one gap draw ``1 + below(n)`` per decoy event, in decoy order.

Gap ``g`` places an inserted event immediately before victim event ``g``
(``g == n`` appends). Gap 0 is never drawn, so every inserted event follows
the leading QUERY and lands inside some query window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from . import __version__
from .catalog import (
    ArchTemplate,
    Block,
    FunctionCode,
    LayerDesc,
    conv,
    expand_events,
    identity_block,
    layers_events,
)
from .errors import ContractViolation, ParseError
from .rng import Xoshiro256

TRACE_FORMAT = 1
Q = FunctionCode.QUERY
GRAD = FunctionCode.GRAD


@dataclass(frozen=True)
class GroundTruthTrace:
    codes: tuple[FunctionCode, ...]
    arch: str
    n_queries: int
    mode: str = "inference"
    freeze_boundary: int | None = None

    def __post_init__(self):
        if self.mode not in ("inference", "training"):
            raise ContractViolation(f"unknown mode {self.mode!r}")
        if self.codes.count(Q) != self.n_queries:
            raise ContractViolation("QUERY count does not match n_queries")
        if self.mode == "inference" and GRAD in self.codes:
            raise ContractViolation("GRAD events in an inference trace")

    def entries(self) -> list[tuple[int, FunctionCode]]:
        return list(enumerate(self.codes))

    def __len__(self) -> int:
        return len(self.codes)


@dataclass(frozen=True)
class NoiseModel:
    p_miss: float = 0.0
    spurious_rates: Mapping[FunctionCode, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.p_miss <= 1.0):
            raise ContractViolation("p_miss must lie in [0, 1]")
        rates = {}
        for code, rate in self.spurious_rates.items():
            code = FunctionCode(code)
            if code is Q:
                raise ContractViolation("QUERY cannot be spurious")
            if not (math.isfinite(rate) and rate >= 0):
                raise ContractViolation(f"bad spurious rate for {code}: {rate}")
            if rate > 0:
                rates[code] = float(rate)
        object.__setattr__(self, "spurious_rates", {c: rates[c] for c in FunctionCode if c in rates})

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(0.0, {})

    def rates_text(self) -> str:
        return ";".join(f"{c.value}:{r!r}" for c, r in self.spurious_rates.items())

    @classmethod
    def parse_rates(cls, text: str) -> dict[FunctionCode, float]:
        out = {}
        for item in filter(None, text.split(";")):
            name, _, value = item.partition(":")
            out[FunctionCode(name.strip())] = float(value)
        return out


@dataclass(frozen=True)
class Observation:
    slots: tuple[int, ...]
    codes: tuple[FunctionCode, ...]
    seed: int
    noise: NoiseModel
    arch: str | None = None
    n_queries: int | None = None
    mode: str = "inference"

    def __post_init__(self):
        if len(self.slots) != len(self.codes):
            raise ContractViolation("slots and codes differ in length")
        if any(b <= a for a, b in zip(self.slots, self.slots[1:])):
            raise ContractViolation("observation slots must strictly increase")

    def entries(self) -> list[tuple[int, FunctionCode]]:
        return list(zip(self.slots, self.codes))


@dataclass(frozen=True)
class DecoySpec:
    layers: tuple[LayerDesc, ...]
    rate: float

    def __post_init__(self):
        if not self.layers:
            raise ContractViolation("decoy template is empty")
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ContractViolation("decoy rate must be positive")

    @classmethod
    def parse(cls, text: str, rate: float) -> "DecoySpec":
        """Build a TinyNet from shorthand like ``C:2,R:2,M:1``.

        Each conv carries a bias; relus attach to the first R convs, the
        merges follow the convs.
        """
        counts = {"C": 0, "R": 0, "M": 0}
        for item in filter(None, text.replace(" ", ",").split(",")):
            key, _, n = item.partition(":")
            key = key.strip().upper()
            if key not in counts:
                raise ContractViolation(f"unknown TinyNet layer {key!r}")
            counts[key] += int(n or 1)
        if counts["R"] > counts["C"]:
            raise ContractViolation("TinyNet has more relus than convs")
        layers = [conv(relu=i < counts["R"], bias=True) for i in range(counts["C"])]
        layers += [LayerDesc("merge")] * counts["M"]
        return cls(tuple(layers), rate)

    def label(self) -> str:
        c = sum(l.kind == "conv" for l in self.layers)
        r = sum(l.activation == "relu" for l in self.layers)
        m = sum(l.kind == "merge" for l in self.layers)
        return " ".join(f"{k}:{v}" for k, v in (("C", c), ("R", r), ("M", m)) if v)


@dataclass(frozen=True)
class ObfuscationSpec:
    variant: str
    insert_count: int = 0
    seed: int = 0
    k_blocks: int = 3
    insert_layer: str = "conv"

    def __post_init__(self):
        if self.variant not in ("insert_preserving", "unravel"):
            raise ContractViolation(f"unknown obfuscation variant {self.variant!r}")
        if self.insert_layer not in ("conv", "identity"):
            raise ContractViolation("insert_layer must be 'conv' or 'identity'")
        if self.insert_count < 0 or self.k_blocks < 0:
            raise ContractViolation("counts must be non-negative")

    def label(self) -> str:
        if self.variant == "unravel":
            return f"unravel k={self.k_blocks}"
        return f"insert {self.insert_count}x{self.insert_layer}"


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def emit_trace(
    template: ArchTemplate,
    n_queries: int,
    mode: str = "inference",
    frozen_prefix: int | None = None,
) -> GroundTruthTrace:
    if n_queries < 1:
        raise ContractViolation("n_queries must be at least 1")
    if mode not in ("inference", "training"):
        raise ContractViolation(f"unknown mode {mode!r}")
    if frozen_prefix is not None and mode != "training":
        raise ContractViolation("frozen_prefix is only meaningful in training mode")
    n_bias = template.bias_layer_count()
    frozen = frozen_prefix or 0
    if not 0 <= frozen <= n_bias:
        raise ContractViolation(f"frozen_prefix must lie in [0, {n_bias}]")
    one = expand_events(template)
    if mode == "training":
        # bias-gradient kernel calls, output layer first
        one = one + [GRAD] * (n_bias - frozen)
    return GroundTruthTrace(
        tuple(one * n_queries),
        template.name,
        n_queries,
        mode,
        frozen if mode == "training" else None,
    )


def _insert_at_gaps(base: tuple, inserts: list[tuple[int, object]]) -> tuple[list, list[bool]]:
    """Merge ``(gap, code)`` inserts into ``base``; returns codes and an is-victim mask."""
    by_gap: dict[int, list] = {}
    for gap, code in inserts:
        by_gap.setdefault(gap, []).append(code)
    codes, victim = [], []
    for i, code in enumerate(base):
        for extra in by_gap.get(i, ()):
            codes.append(extra)
            victim.append(False)
        codes.append(code)
        victim.append(True)
    for extra in by_gap.get(len(base), ()):
        codes.append(extra)
        victim.append(False)
    return codes, victim


def observe(trace: GroundTruthTrace, noise: NoiseModel, seed: int) -> Observation:
    rng = Xoshiro256(seed)
    n = len(trace.codes)
    inserts = []
    for code, rate in noise.spurious_rates.items():
        k = rng.poisson(rate * trace.n_queries)
        for _ in range(k):
            inserts.append((1 + rng.below(n), code))
    timeline, victim = _insert_at_gaps(trace.codes, inserts)
    slots, codes = [], []
    p = noise.p_miss
    for slot, (code, is_victim) in enumerate(zip(timeline, victim)):
        if is_victim and code is not Q:
            if rng.random() < p:
                continue
        slots.append(slot)
        codes.append(code)
    return Observation(tuple(slots), tuple(codes), seed, noise, trace.arch, trace.n_queries, trace.mode)


def decoy_iterations(decoy: DecoySpec, n_queries: int) -> int:
    return max(1, math.ceil(decoy.rate * n_queries))


def merge_decoy(victim: GroundTruthTrace, decoy: DecoySpec, seed: int) -> GroundTruthTrace:
    rng = Xoshiro256(seed)
    events = layers_events(decoy.layers) * decoy_iterations(decoy, victim.n_queries)
    n = len(victim.codes)
    gaps = sorted(1 + rng.below(n) for _ in events)
    codes, _ = _insert_at_gaps(victim.codes, list(zip(gaps, events)))
    return GroundTruthTrace(tuple(codes), victim.arch, victim.n_queries, victim.mode, victim.freeze_boundary)


# ---------------------------------------------------------------------------
# Obfuscation transforms (template level)
# ---------------------------------------------------------------------------


def obfuscate(template: ArchTemplate, spec: ObfuscationSpec, seed: int | None = None) -> ArchTemplate:
    """Insert dimension-preserving layers at seeded positions."""
    if spec.variant != "insert_preserving":
        raise ContractViolation("obfuscate handles the insert_preserving variant")
    if spec.insert_count == 0:
        return template
    n_layers = len(template.layers())
    if spec.insert_count > 10 * n_layers:
        raise ContractViolation("insertion positions exhausted")
    rng = Xoshiro256(spec.seed if seed is None else seed)
    blocks = list(template.blocks)
    for _ in range(spec.insert_count):
        if spec.insert_layer == "conv":
            hosts = [i for i, b in enumerate(blocks) if b.label != "classifier" and b.layers]
            if not hosts:
                raise ContractViolation("no block can host an inserted layer")
            bi = hosts[rng.below(len(hosts))]
            layers = list(blocks[bi].layers)
            pos = rng.below(len(layers))
            layers.insert(pos, conv(relu=True, bias=True))
            blocks[bi] = Block(blocks[bi].label, tuple(layers))
        else:
            hosts = [i for i, b in enumerate(blocks) if b.is_skip]
            if not hosts:
                raise ContractViolation(f"{template.name} has no skip-connection blocks")
            bi = hosts[rng.below(len(hosts))]
            bias = blocks[bi].layers[0].has_bias
            blocks.insert(bi + 1, identity_block(bias))
    return ArchTemplate(f"{template.name}+ins{spec.insert_count}", template.family, tuple(blocks))


def unravel_order(k: int) -> list[int]:
    """Block computation order of the unraveled first ``k`` skip blocks.

    Order(1) = [0]; Order(j) = Order(j-1) + Order(j-1) + [j-1].  For k = 3
    this is residual, residual, identity, residual, residual, identity,
    identity: 2**k - 1 block computations covering the 2**k paths.
    """
    order: list[int] = []
    for j in range(k):
        order = order + order + [j]
    return order


def unravel_blocks(template: ArchTemplate, k_blocks: int = 3) -> ArchTemplate:
    if k_blocks < 0:
        raise ContractViolation("k_blocks must be non-negative")
    if k_blocks == 0:
        return template
    skip = [i for i, b in enumerate(template.blocks) if b.is_skip]
    if len(skip) < k_blocks:
        raise ContractViolation(f"{template.name} has only {len(skip)} skip-connection blocks, asked for {k_blocks}")
    chosen = skip[:k_blocks]
    if chosen != list(range(chosen[0], chosen[0] + k_blocks)):
        raise ContractViolation("unraveled blocks must be contiguous")
    originals = [template.blocks[i] for i in chosen]
    unraveled = [originals[j] for j in unravel_order(k_blocks)]
    blocks = template.blocks[: chosen[0]] + tuple(unraveled) + template.blocks[chosen[-1] + 1 :]
    return ArchTemplate(f"{template.name}+unravel{k_blocks}", template.family, blocks)


def apply_obfuscation(template: ArchTemplate, spec: ObfuscationSpec) -> ArchTemplate:
    if spec.variant == "unravel":
        return unravel_blocks(template, spec.k_blocks)
    return obfuscate(template, spec)


# ---------------------------------------------------------------------------
# Line-based file format
# ---------------------------------------------------------------------------


def _fmt_opt(v) -> str:
    return "none" if v is None else str(v)


def write_trace(obj: GroundTruthTrace | Observation) -> str:
    lines = [f"# format={TRACE_FORMAT}", f"# version={__version__}"]
    if isinstance(obj, GroundTruthTrace):
        lines += [
            "# kind=trace",
            f"# arch={obj.arch}",
            f"# n_queries={obj.n_queries}",
            f"# mode={obj.mode}",
            f"# freeze_boundary={_fmt_opt(obj.freeze_boundary)}",
        ]
        entries = obj.entries()
    else:
        lines += [
            "# kind=observation",
            f"# arch={_fmt_opt(obj.arch)}",
            f"# n_queries={_fmt_opt(obj.n_queries)}",
            f"# mode={obj.mode}",
            f"# seed={obj.seed}",
            f"# p_miss={obj.noise.p_miss!r}",
            f"# rates={obj.noise.rates_text()}",
        ]
        entries = obj.entries()
    lines += [f"{i},{c.value}" for i, c in entries]
    return "\n".join(lines) + "\n"


def _opt_int(v: str) -> int | None:
    return None if v == "none" else int(v)


def read_trace(text: str, path: str | None = None) -> GroundTruthTrace | Observation:
    meta: dict[str, str] = {}
    seqs: list[int] = []
    codes: list[FunctionCode] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                raise ParseError(f"header line without key=value: {line!r}", lineno, path)
            meta[key.strip()] = value.strip()
            continue
        seq, sep, name = line.partition(",")
        try:
            if not sep:
                raise ValueError
            seqs.append(int(seq))
            codes.append(FunctionCode(name.strip()))
        except ValueError:
            raise ParseError(f"expected 'seq,CODE', got {line!r}", lineno, path) from None
    if meta.get("format") != str(TRACE_FORMAT):
        raise ParseError(f"missing or unsupported format header (want {TRACE_FORMAT})", 1, path)
    try:
        kind = meta["kind"]
        if kind == "trace":
            if seqs != list(range(len(seqs))):
                raise ParseError("trace sequence indices must run 0, 1, 2, ...", None, path)
            return GroundTruthTrace(
                tuple(codes),
                meta["arch"],
                int(meta["n_queries"]),
                meta["mode"],
                _opt_int(meta["freeze_boundary"]),
            )
        if kind == "observation":
            arch = meta["arch"]
            noise = NoiseModel(float(meta["p_miss"]), NoiseModel.parse_rates(meta["rates"]))
            return Observation(
                tuple(seqs),
                tuple(codes),
                int(meta["seed"]),
                noise,
                None if arch == "none" else arch,
                _opt_int(meta["n_queries"]),
                meta["mode"],
            )
    except KeyError as exc:
        raise ParseError(f"missing header field {exc.args[0]!r}", None, path) from None
    except (ValueError, ContractViolation) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), None, path) from None
    raise ParseError(f"unknown kind {meta.get('kind')!r}", None, path)
