"""Artifact generation and table/figure rendering.

``generate_artifacts`` stores seeded observations, the catalog and the
fingerprint dataset under one directory; ``render_report`` reads them back
through the import paths and writes table-shaped markdown/CSV plus PNG
figures.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import __version__  # noqa: E402
from .catalog import (  # noqa: E402
    ATTRIBUTE_NAMES,
    Catalog,
    FunctionCode,
    attributes_of,
    build_catalog,
    expand_events,
    export_catalog,
    import_catalog,
    l1_error,
)
from .config import load_defaults  # noqa: E402
from .defense import defense_table_csv, defense_table_md, eval_decoy, eval_obfuscation  # noqa: E402
from .fingerprint import (  # noqa: E402
    build_dataset,
    dataset_from_csv,
    dataset_to_csv,
    mutual_information,
    pca,
    relabel,
    train_tree,
    tree_to_text,
)
from .parallel import pmap  # noqa: E402
from .recon import attack_report, identify, reconstruct, split_queries  # noqa: E402
from .rng import derive_seed  # noqa: E402
from .trace import (  # noqa: E402
    DecoySpec,
    NoiseModel,
    ObfuscationSpec,
    emit_trace,
    observe,
    read_trace,
    write_trace,
)

TABLE2_NETS = ("VGG19", "ResNet50")
DECOYS = ("C:1", "C:1,R:1", "C:2,R:2,M:1")
FINGERPRINT_TASKS = ("all13", "family", "variant:V", "variant:R", "variant:D", "variant:I", "variant:M")


def meta_lines(meta: dict, style: str) -> str:
    items = {"version": __version__, **meta}
    if style == "md":
        return "<!-- " + " ".join(f"{k}={v}" for k, v in items.items()) + " -->\n"
    return "".join(f"# {k}={v}\n" for k, v in items.items())


def read_meta(text: str) -> dict[str, str]:
    """Metadata from a CSV-style ``# key=value`` header or a markdown comment."""
    out = {}
    for line in text.splitlines():
        if line.startswith("<!--") and line.endswith("-->"):
            for item in line[4:-3].split():
                k, _, v = item.partition("=")
                out[k] = v
        elif line.startswith("# ") and "=" in line:
            k, _, v = line[2:].partition("=")
            out[k] = v
        elif line and not line.startswith("#"):
            break
    return out


def read_table_csv(text: str) -> tuple[dict[str, str], list[dict[str, str]]]:
    meta = read_meta(text)
    body = "\n".join(l for l in text.splitlines() if not l.startswith("#"))
    return meta, list(csv.DictReader(io.StringIO(body)))


def noise_meta(noise: NoiseModel) -> dict:
    return {"p_miss": repr(noise.p_miss), "rates": noise.rates_text() or "none"}


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# Artifact generation
# ---------------------------------------------------------------------------


def _arch_observations(job):
    template, noise, arch_seed, n = job
    single = emit_trace(template, 1)
    short = [write_trace(observe(single, noise, derive_seed(arch_seed, i))) for i in range(n)]
    long = write_trace(observe(emit_trace(template, n), noise, derive_seed(arch_seed, n)))
    return short, long


def generate_artifacts(
    out: str | Path,
    seed: int,
    noise: NoiseModel,
    per_arch_n: int = 50,
    workers: int | None = 1,
    catalog: Catalog | None = None,
) -> Path:
    out = Path(out)
    catalog = catalog or build_catalog()
    meta = {"seed": seed, **noise_meta(noise), "per_arch_n": per_arch_n}
    _write(out / "manifest.txt", meta_lines(meta, "csv"))
    _write(out / "catalog.json", export_catalog(catalog))
    names = list(catalog)
    jobs = [(catalog[n], noise, derive_seed(seed, 1000 + a), 10) for a, n in enumerate(names)]
    for name, (short, long) in zip(names, pmap(_arch_observations, jobs, workers)):
        for i, text in enumerate(short):
            _write(out / "observations" / name / f"S_{i:02d}.trace", text)
        _write(out / "observations" / name / "L.trace", long)
    ds = build_dataset(catalog, per_arch_n, noise, derive_seed(seed, 1), workers)
    _write(out / "dataset.csv", dataset_to_csv(ds, {"version": __version__, **meta, "task": "all13"}))
    return out


# ---------------------------------------------------------------------------
# Table rendering
# ---------------------------------------------------------------------------


def _n(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else f"{v:.2f}"


def extraction_rows(catalog: Catalog, art: Path, names) -> list[list[str]]:
    rows = []
    for name in names:
        truth = attributes_of(catalog[name])
        d = art / "observations" / name
        short = [read_trace((d / f"S_{i:02d}.trace").read_text(), str(d)) for i in range(10)]
        long = read_trace((d / "L.trace").read_text())
        s = attack_report(short, "S", truth)
        l = attack_report(long, "L", truth)
        rows.append([name, "G", *(_n(v) for v in truth), "-"])
        rows.append([name, "S", *(_n(v) for v in s.mean), s.error_text()])
        rows.append([name, "L", *(_n(v) for v in l.mean), l.error_text()])
    return rows


def _md_table(header: list[str], rows: list[list[str]]) -> str:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(out) + "\n"


def _csv_table(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


_OP = {
    FunctionCode.CONV: "C",
    FunctionCode.FC: "F",
    FunctionCode.MPOOL: "P_M",
    FunctionCode.APOOL: "P_A",
    FunctionCode.MERGE: "M",
}


def layer_notation(codes) -> list[str]:
    """Render events as layer tokens (C_R, P_M, M_R, F_So ...); biases are
    folded into their op, orphan activations stand alone."""
    out: list[str] = []
    last_op = False
    for c in codes:
        if c in _OP:
            out.append(_OP[c])
            last_op = c not in (FunctionCode.MPOOL, FunctionCode.APOOL)
        elif c is FunctionCode.BIAS:
            if not last_op:
                out.append("B")
        elif c in (FunctionCode.RELU, FunctionCode.SOFTM):
            sub = "R" if c is FunctionCode.RELU else "So"
            if last_op and "_" not in out[-1]:
                out[-1] += "_" + sub
            else:
                out.append(sub)
            last_op = False
    return out


def recon_table(catalog: Catalog, name: str, observed_query) -> str:
    truth_seq = expand_events(catalog[name])[1:]
    g = " ".join(layer_notation(truth_seq))
    s = " ".join(layer_notation(observed_query))
    st = reconstruct(observed_query)
    ranked = identify(st, catalog)
    labels = st.describe()
    lines = [
        f"### {name} reconstruction",
        "",
        "| Data | Computation sequence |",
        "|---|---|",
        f"| G | {g} |",
        f"| S | {s} |",
        "",
        "| Step | Details |",
        "|---|---|",
        f"| (1) | {len(st.blocks)} blocks |",
        f"| (2) | {' / '.join(labels)} |",
        f"| (3) | {ranked[0][0]} (distance {ranked[0][1]}) |",
    ]
    return "\n".join(lines) + "\n"


def render_report(
    art: str | Path,
    out: str | Path | None = None,
    workers: int | None = 1,
    decoy_rate: float | None = None,
) -> list[Path]:
    if decoy_rate is None:
        decoy_rate = load_defaults().decoy_rate
    art = Path(art)
    out = Path(out) if out is not None else art / "report"
    manifest = read_meta((art / "manifest.txt").read_text())
    seed = int(manifest["seed"])
    noise = NoiseModel(
        float(manifest["p_miss"]),
        NoiseModel.parse_rates("" if manifest["rates"] == "none" else manifest["rates"]),
    )
    catalog = import_catalog((art / "catalog.json").read_text())
    written: list[Path] = []
    md_meta = meta_lines({"seed": seed, **noise_meta(noise)}, "md")
    csv_meta = meta_lines({"seed": seed, **noise_meta(noise)}, "csv")

    def emit(stem: str, header: list[str], rows: list[list[str]], title: str) -> None:
        p_md, p_csv = out / f"{stem}.md", out / f"{stem}.csv"
        _write(p_md, md_meta + f"## {title}\n\n" + _md_table(header, rows))
        _write(p_csv, csv_meta + _csv_table(header, rows))
        written.extend([p_md, p_csv])

    attr_header = ["arch", "data", *ATTRIBUTE_NAMES, "errors"]
    emit("table2", attr_header, extraction_rows(catalog, art, TABLE2_NETS), "Observed attributes (VGG19, ResNet50)")
    others = [n for n in catalog if n not in TABLE2_NETS]
    emit("table8", attr_header, extraction_rows(catalog, art, others), "Observed attributes (other networks)")

    for stem, name in (("table3", "ResNet50"), ("table7", "VGG16")):
        obs = read_trace((art / "observations" / name / "S_00.trace").read_text())
        p = out / f"{stem}.md"
        _write(p, md_meta + recon_table(catalog, name, split_queries(obs)[0]))
        written.append(p)

    dataset = dataset_from_csv((art / "dataset.csv").read_text(), catalog)
    rows = []
    for task in FINGERPRINT_TASKS:
        sub = relabel(dataset, task)
        trees, cv = train_tree(sub, 5, seed, workers)
        best_tree = trees[max(range(len(trees)), key=lambda k: (cv.fold_accuracies[k], -k))]
        _write(out / "trees" / f"{task.replace(':', '_')}.txt", tree_to_text(best_tree))
        written.append(out / "trees" / f"{task.replace(':', '_')}.txt")
        mi = mutual_information(sub) if len(set(sub.labels)) > 1 else None
        top = [f"#{a} [{mi.scores[a]:.4f}]" for a in mi.top(4)] if mi else ["-"] * 4
        rows.append([task, f"{cv.best:.4f} [{cv.mean:.4f}]", *top])
    emit("table4", ["task", "acc [avg]", "mi1", "mi2", "mi3", "mi4"], rows, "Fingerprinting accuracy and MI ranking")

    resnet = catalog["ResNet50"]
    decoys = [eval_decoy(resnet, DecoySpec.parse(s, decoy_rate), 10, noise, derive_seed(seed, 5), workers=workers) for s in DECOYS]
    for ext, text in (("md", defense_table_md(decoys)), ("csv", defense_table_csv(decoys))):
        p = out / f"table5.{ext}"
        _write(p, (md_meta if ext == "md" else csv_meta) + text)
        written.append(p)

    unr = eval_obfuscation(resnet, ObfuscationSpec("unravel", k_blocks=3), 10, noise, derive_seed(seed, 6), catalog, workers)
    truth = attributes_of(resnet)
    rows6 = [
        ["ResNet50", "G", *(_n(v) for v in truth), "-", _n(len(expand_events(resnet)))],
        ["ResNet50", "S", *(_n(v) for v in unr.mean), f"{l1_error(unr.mean, truth):.1f}/{int(sum(truth))}",
         _n(sum(unr.events) / len(unr.events))],
    ]
    emit("table6", [*attr_header, "events"], rows6, "Attributes of the unraveled ResNet50")

    res = pca(dataset)
    rows9 = [[f"PCA-{k}", *(f"{v:.4f}" for v in res.loadings[k])] for k in range(2)]
    emit("table9", ["axis", *ATTRIBUTE_NAMES], rows9, "PCA loadings")
    _write(out / "pca_projection.csv", csv_meta + res.projection_csv())
    written.append(out / "pca_projection.csv")

    written.append(plot_pca(res, out / "figures" / "pca_clusters.png"))
    written.append(plot_defense(decoys, unr, out / "figures" / "defense_errors.png"))
    return written


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

_PNG_META = {"Software": None}


def plot_pca(res, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 5))
    names = list(dict.fromkeys(res.labels))
    cmap = plt.get_cmap("tab20")
    for i, name in enumerate(names):
        pts = res.projections[[j for j, l in enumerate(res.labels) if l == name]]
        ax.scatter(pts[:, 0], pts[:, 1], s=10, color=cmap(i % 20), label=name)
    ax.set_xlabel("PCA-0")
    ax.set_ylabel("PCA-1")
    ax.legend(fontsize=6, ncol=2, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_defense(decoys, unraveled, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = ["none"] + [r.defense.split(" @")[0].replace("decoy ", "") for r in decoys] + ["unravel k=3"]
    values = [decoys[0].baseline_error] + [r.error for r in decoys] + [unraveled.error]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(values)), values, color="0.4")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("mean l1 error")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path
