"""Command-line entry point: ``archleak <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .calibrate import calibrate_noise
from .catalog import attributes_of, build_catalog, get_template
from .config import Defaults, load_defaults
from .defense import defense_table_csv, defense_table_md, eval_decoy, eval_obfuscation
from .errors import ContractViolation, ParseError
from .fingerprint import (
    build_dataset,
    dataset_from_csv,
    dataset_to_csv,
    mutual_information,
    relabel,
    train_tree,
    tree_to_text,
)
from .probe import histogram_csv, otsu_threshold, read_latencies
from .recon import attack_report, detect_freeze, identify, reconstruct, split_queries
from .report import generate_artifacts, meta_lines, noise_meta, render_report
from .rng import derive_seed
from .trace import (
    DecoySpec,
    NoiseModel,
    ObfuscationSpec,
    Observation,
    apply_obfuscation,
    emit_trace,
    merge_decoy,
    observe,
    read_trace,
    write_trace,
)

SUBCOMMANDS = ("simulate", "observe", "extract", "reconstruct", "freeze", "fingerprint", "defend", "calibrate", "report")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None


def _emit(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        p = Path(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8", newline="\n")


def _noise(args, defaults: Defaults) -> NoiseModel:
    if getattr(args, "noiseless", False):
        return NoiseModel.noiseless()
    p = defaults.noise.p_miss if args.p_miss is None else args.p_miss
    rates = defaults.noise.spurious_rates if args.rates is None else NoiseModel.parse_rates(args.rates)
    return NoiseModel(p, rates)


def _add_noise(p: argparse.ArgumentParser) -> None:
    p.add_argument("--noiseless", action="store_true", help="perfect channel: no misses, no spurious hits")
    p.add_argument("--p-miss", type=float, help="probability a victim call goes unobserved")
    p.add_argument("--rates", help="spurious hits per query, e.g. CONV:0.3;MERGE:0.3")


def _add_defense(p: argparse.ArgumentParser) -> None:
    p.add_argument("--decoy", help="TinyNet shorthand, e.g. C:1 or C:2,R:2,M:1")
    p.add_argument("--decoy-rate", type=float, help="decoy iterations per victim query")
    p.add_argument("--unravel", type=int, metavar="K", help="unravel the first K skip blocks")
    p.add_argument("--insert", type=int, metavar="N", help="insert N dimension-preserving layers")
    p.add_argument("--insert-layer", choices=("conv", "identity"), default="conv")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="archleak", description="Cache side-channel architecture recovery lab.")
    ap.add_argument("--version", action="version", version=f"archleak {__version__}")
    ap.add_argument("--config", help="alternate defaults file")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="emit a victim trace and observe it")
    p.add_argument("--arch", required=True)
    p.add_argument("--queries", type=int)
    p.add_argument("--mode", choices=("inference", "training"), default="inference")
    p.add_argument("--frozen-prefix", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int, default=1, help="independent observations (needs --out-dir when > 1)")
    p.add_argument("--out", help="observation file (default stdout)")
    p.add_argument("--out-dir", help="directory for obs_NNN.trace files")
    p.add_argument("--trace-out", help="also write the ground-truth trace here")
    _add_noise(p)
    _add_defense(p)

    p = sub.add_parser("observe", help="pass a stored trace through the noise channel")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    _add_noise(p)

    p = sub.add_parser("extract", help="attribute extraction report")
    p.add_argument("--in", dest="inp", nargs="+", required=True)
    p.add_argument("--mode", choices=("S", "L"), default="L")
    p.add_argument("--truth", action="store_true", help="compare with the catalog ground truth")
    p.add_argument("--arch", help="ground-truth network (default: from the observation header)")
    p.add_argument("--format", choices=("csv", "md", "json"), default="csv")
    p.add_argument("--out")

    p = sub.add_parser("reconstruct", help="block structure and catalog match")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--query", type=int, default=0)
    p.add_argument("--format", choices=("csv", "md", "json"), default="csv")
    p.add_argument("--out")

    p = sub.add_parser("freeze", help="training freeze-point detection")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--arch", help="hypothesised network (default: from the observation header)")
    p.add_argument("--out")

    p = sub.add_parser("fingerprint", help="decision-tree meta-model with cross-validation")
    p.add_argument("--task", default="all13", help="all13 | family | variant:<V|R|D|I|M>")
    p.add_argument("--seed", type=int)
    p.add_argument("--per-arch-n", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--workers", type=int, default=1, help="0 means one per CPU")
    p.add_argument("--dataset-in")
    p.add_argument("--dataset-out")
    p.add_argument("--tree-out")
    p.add_argument("--format", choices=("csv", "md"), default="csv")
    p.add_argument("--out")
    _add_noise(p)

    p = sub.add_parser("defend", help="evaluate a decoy or obfuscation defense")
    p.add_argument("--arch", default="ResNet50")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("csv", "md"), default="csv")
    p.add_argument("--out")
    _add_noise(p)
    _add_defense(p)

    p = sub.add_parser("calibrate", help="latency threshold or noise-channel calibration")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--latencies", help="one latency (cycles) per line")
    g.add_argument("--noise", action="store_true", help="grid-search default noise parameters")
    p.add_argument("--histogram-out")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--out")

    p = sub.add_parser("report", help="regenerate all tables and figures")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--per-arch-n", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--reuse", action="store_true", help="render from artifacts already in --out")
    _add_noise(p)
    return ap


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _template(name: str):
    try:
        return get_template(build_catalog(), name)
    except ContractViolation as exc:
        raise UsageError(str(exc)) from None


def _defended_template(args, template, defaults: Defaults):
    if args.unravel is not None:
        return apply_obfuscation(template, ObfuscationSpec("unravel", k_blocks=args.unravel))
    if args.insert is not None:
        return apply_obfuscation(
            template, ObfuscationSpec("insert_preserving", args.insert, seed=args.seed or 0, insert_layer=args.insert_layer)
        )
    return template


def cmd_simulate(args, d: Defaults) -> None:
    template = _template(args.arch)
    seed = d.seed if args.seed is None else args.seed
    queries = d.queries if args.queries is None else args.queries
    noise = _noise(args, d)
    victim = _defended_template(args, template, d)
    trace = emit_trace(victim, queries, args.mode, args.frozen_prefix)
    if victim is not template:
        trace = type(trace)(trace.codes, template.name, trace.n_queries, trace.mode, trace.freeze_boundary)
    if args.trace_out:
        _emit(write_trace(trace), args.trace_out)

    def one(run_seed: int) -> Observation:
        t = trace
        if args.decoy:
            rate = d.decoy_rate if args.decoy_rate is None else args.decoy_rate
            t = merge_decoy(t, DecoySpec.parse(args.decoy, rate), derive_seed(run_seed, 0))
        return observe(t, noise, run_seed)

    if args.runs > 1:
        if not args.out_dir:
            raise UsageError("--runs > 1 needs --out-dir")
        for i in range(args.runs):
            _emit(write_trace(one(derive_seed(seed, i))), str(Path(args.out_dir) / f"obs_{i:03d}.trace"))
    else:
        _emit(write_trace(one(seed)), args.out)


def _load_trace(path: str):
    try:
        return read_trace(_read(path), path)
    except ParseError as exc:
        raise DataError(str(exc)) from None


def cmd_observe(args, d: Defaults) -> None:
    trace = _load_trace(args.inp)
    if isinstance(trace, Observation):
        raise DataError(f"{args.inp}: expected a ground-truth trace, got an observation")
    seed = d.seed if args.seed is None else args.seed
    _emit(write_trace(observe(trace, _noise(args, d), seed)), args.out)


def _arch_of(args, obs) -> str:
    name = args.arch or obs.arch
    if not name:
        raise UsageError("observation has no arch header; pass --arch")
    return name


def cmd_extract(args, d: Defaults) -> None:
    obs = [_load_trace(p) for p in args.inp]
    if not all(isinstance(o, Observation) for o in obs):
        raise DataError("extract expects observation files")
    truth = attributes_of(_template(_arch_of(args, obs[0]))) if args.truth else None
    try:
        rep = attack_report(obs if args.mode == "S" else obs[:1], args.mode, truth)
    except ContractViolation as exc:
        raise DataError(str(exc)) from None
    meta = {"seed": ",".join(str(o.seed) for o in obs), **noise_meta(obs[0].noise), "mode": args.mode}
    if args.format == "json":
        _emit(rep.to_json(), args.out)
        return
    body = rep.to_markdown() if args.format == "md" else rep.to_csv()
    _emit(meta_lines(meta, args.format) + body, args.out)


def cmd_reconstruct(args, d: Defaults) -> None:
    obs = _load_trace(args.inp)
    codes = obs.codes
    queries = split_queries(codes)
    if not 0 <= args.query < len(queries):
        raise DataError(f"{args.inp}: query {args.query} out of range (0..{len(queries) - 1})")
    st = reconstruct(queries[args.query])
    ranked = identify(st, build_catalog())
    meta = {"seed": getattr(obs, "seed", "none"), "query": args.query}
    if args.format == "json":
        _emit(st.to_json(), args.out)
        return
    if args.format == "md":
        body = st.to_markdown() + "\n| Rank | Network | Distance |\n|---|---|---|\n"
        body += "".join(f"| {i + 1} | {n} | {dist} |\n" for i, (n, dist) in enumerate(ranked[:5]))
    else:
        body = st.to_csv() + "\nrank,network,distance\n"
        body += "".join(f"{i + 1},{n},{dist}\n" for i, (n, dist) in enumerate(ranked))
    _emit(meta_lines(meta, args.format) + body, args.out)


def cmd_freeze(args, d: Defaults) -> None:
    obs = _load_trace(args.inp)
    if not isinstance(obs, Observation):
        raise DataError("freeze expects an observation file")
    template = _template(_arch_of(args, obs))
    try:
        updated, frozen = detect_freeze(obs, template)
    except ContractViolation as exc:
        raise DataError(str(exc)) from None
    meta = {"seed": obs.seed, "arch": template.name}
    _emit(meta_lines(meta, "csv") + f"updated_layers,frozen_prefix\n{updated},{frozen}\n", args.out)


def cmd_fingerprint(args, d: Defaults) -> None:
    catalog = build_catalog()
    seed = d.seed if args.seed is None else args.seed
    folds = d.folds if args.folds is None else args.folds
    noise = _noise(args, d)
    if args.dataset_in:
        try:
            ds = dataset_from_csv(_read(args.dataset_in), catalog, args.dataset_in)
        except ParseError as exc:
            raise DataError(str(exc)) from None
    else:
        n = d.per_arch_n if args.per_arch_n is None else args.per_arch_n
        ds = build_dataset(catalog, n, noise, seed, args.workers)
    meta = {"seed": seed, **noise_meta(noise), "task": args.task, "folds": folds}
    if args.dataset_out:
        _emit(dataset_to_csv(ds, {"version": __version__, **meta, "task": "all13"}), args.dataset_out)
    try:
        sub = relabel(ds, args.task)
        trees, cv = train_tree(sub, folds, seed, args.workers)
    except ContractViolation as exc:
        raise DataError(str(exc)) from None
    if args.tree_out:
        k = max(range(len(trees)), key=lambda i: (cv.fold_accuracies[i], -i))
        _emit(tree_to_text(trees[k]), args.tree_out)
    ranking = mutual_information(sub) if len(set(sub.labels)) > 1 else None
    mi_rows = [(a, ranking.scores[a]) for a in ranking.ranking] if ranking else []
    if args.format == "md":
        body = f"| Task | Acc. [Avg.] |\n|---|---|\n| {args.task} | {cv.best:.4f} [{cv.mean:.4f}] |\n\n"
        body += "| Attribute | MI (bits) |\n|---|---|\n" + "".join(f"| #{a} | {s:.4f} |\n" for a, s in mi_rows)
    else:
        body = "task,folds,best,mean," + ",".join(f"fold{k}" for k in range(folds)) + "\n"
        body += f"{args.task},{folds},{cv.best!r},{cv.mean!r}," + ",".join(repr(a) for a in cv.fold_accuracies) + "\n"
        body += "\nattribute,mi_bits\n" + "".join(f"{a},{s!r}\n" for a, s in mi_rows)
    _emit(meta_lines(meta, args.format) + body, args.out)


def cmd_defend(args, d: Defaults) -> None:
    template = _template(args.arch)
    seed = d.seed if args.seed is None else args.seed
    runs = d.runs if args.runs is None else args.runs
    noise = _noise(args, d)
    try:
        if args.decoy:
            rate = d.decoy_rate if args.decoy_rate is None else args.decoy_rate
            rep = eval_decoy(template, DecoySpec.parse(args.decoy, rate), runs, noise, seed, workers=args.workers)
        elif args.unravel is not None:
            rep = eval_obfuscation(template, ObfuscationSpec("unravel", k_blocks=args.unravel), runs, noise, seed,
                                   build_catalog(), args.workers)
        elif args.insert is not None:
            spec = ObfuscationSpec("insert_preserving", args.insert, seed=seed, insert_layer=args.insert_layer)
            rep = eval_obfuscation(template, spec, runs, noise, seed, build_catalog(), args.workers)
        else:
            raise UsageError("defend needs one of --decoy, --unravel, --insert")
    except ContractViolation as exc:
        raise UsageError(str(exc)) from None
    meta = {"seed": seed, **noise_meta(noise), "runs": runs}
    body = defense_table_md([rep]) if args.format == "md" else defense_table_csv([rep])
    _emit(meta_lines(meta, args.format) + body, args.out)


def cmd_calibrate(args, d: Defaults) -> None:
    if args.latencies:
        try:
            samples = read_latencies(_read(args.latencies), args.latencies)
            thr = otsu_threshold(samples)
        except (ParseError, ValueError) as exc:
            raise DataError(str(exc)) from None
        if args.histogram_out:
            _emit(histogram_csv(samples), args.histogram_out)
        _emit(meta_lines({"samples": len(samples)}, "csv") + f"threshold\n{thr}\n", args.out)
        return
    best, points = calibrate_noise(build_catalog(), seeds=range(args.seeds))
    lines = ["p_miss,rates,vgg19_error,resnet50_error,admissible"]
    for pt in points:
        lines.append(
            f"{pt.noise.p_miss!r},{pt.noise.rates_text()},{pt.errors['VGG19']:.4f},{pt.errors['ResNet50']:.4f},{int(pt.admissible)}"
        )
    if best is None:
        raise DataError("no grid point satisfies both error bands")
    head = meta_lines({"seeds": args.seeds, "chosen_p_miss": best.noise.p_miss, "chosen_rates": best.noise.rates_text()}, "csv")
    _emit(head + "\n".join(lines) + "\n", args.out)


def cmd_report(args, d: Defaults) -> None:
    out = Path(args.out)
    if not args.reuse:
        seed = d.seed if args.seed is None else args.seed
        n = d.per_arch_n if args.per_arch_n is None else args.per_arch_n
        generate_artifacts(out, seed, _noise(args, d), n, args.workers)
    elif not (out / "manifest.txt").exists():
        raise DataError(f"{out}: no manifest.txt; run report without --reuse first")
    try:
        written = render_report(out, out / "report", args.workers, d.decoy_rate)
    except ParseError as exc:
        raise DataError(str(exc)) from None
    except OSError as exc:
        raise DataError(f"cannot read {exc.filename}: {exc.strerror}") from None
    for p in written:
        sys.stdout.write(f"{p}\n")


COMMANDS = {
    "simulate": cmd_simulate,
    "observe": cmd_observe,
    "extract": cmd_extract,
    "reconstruct": cmd_reconstruct,
    "freeze": cmd_freeze,
    "fingerprint": cmd_fingerprint,
    "defend": cmd_defend,
    "calibrate": cmd_calibrate,
    "report": cmd_report,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand; choose from " + ", ".join(SUBCOMMANDS))
        defaults = load_defaults(args.config)
        COMMANDS[args.command](args, defaults)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (DataError, ParseError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except ContractViolation as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
