from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ..catalog import ATTRIBUTE_NAMES, Catalog
from ..errors import ContractViolation, ParseError
from ..parallel import pmap
from ..recon import extract_attributes, split_queries
from ..rng import derive_seed
from ..trace import NoiseModel, emit_trace, observe

TASKS = ("all13", "family", "variant")


@dataclass
class Dataset:
    """Attribute rows with the network and family each row came from."""

    X: np.ndarray
    labels: list[str]
    arch: list[str]
    family: list[str]
    task: str = "all13"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, len(ATTRIBUTE_NAMES))
        if not (len(self.X) == len(self.labels) == len(self.arch) == len(self.family)):
            raise ContractViolation("dataset columns differ in length")
        if len(self.X) and (not np.all(np.isfinite(self.X)) or (self.X < 0).any()):
            raise ContractViolation("features must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.labels)

    def label_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for lab in self.labels:
            out[lab] = out.get(lab, 0) + 1
        return out

    def subset(self, idx) -> "Dataset":
        idx = list(idx)
        return Dataset(
            self.X[idx],
            [self.labels[i] for i in idx],
            [self.arch[i] for i in idx],
            [self.family[i] for i in idx],
            self.task,
        )


def _observe_arch(job) -> list[tuple]:
    template, n, noise, arch_seed = job
    trace = emit_trace(template, 1)
    rows = []
    for j in range(n):
        obs = observe(trace, noise, derive_seed(arch_seed, j))
        rows.append(tuple(extract_attributes(split_queries(obs)[0])))
    return rows


def build_dataset(
    catalog: Catalog,
    per_arch_n: int = 50,
    noise: NoiseModel | None = None,
    master_seed: int = 0,
    workers: int | None = 1,
) -> Dataset:
    """One single-query observation per row; row j of network a is seeded
    with ``derive_seed(derive_seed(master_seed, a), j)``."""
    if per_arch_n < 1:
        raise ContractViolation("per_arch_n must be at least 1")
    noise = noise or NoiseModel.noiseless()
    names = list(catalog)
    jobs = [(catalog[n], per_arch_n, noise, derive_seed(master_seed, a)) for a, n in enumerate(names)]
    chunks = pmap(_observe_arch, jobs, workers)
    X, arch, fam = [], [], []
    for name, rows in zip(names, chunks):
        X.extend(rows)
        arch.extend([name] * len(rows))
        fam.extend([catalog[name].family] * len(rows))
    return Dataset(np.array(X, dtype=float), list(arch), arch, fam, "all13")


def relabel(dataset: Dataset, task: str) -> Dataset:
    """``all13``, ``family`` or ``variant:<F>`` (rows of family F, labelled by network)."""
    if task == "all13":
        return Dataset(dataset.X, list(dataset.arch), dataset.arch, dataset.family, task)
    if task == "family":
        return Dataset(dataset.X, list(dataset.family), dataset.arch, dataset.family, task)
    kind, _, fam = task.partition(":")
    if kind != "variant" or not fam:
        raise ContractViolation(f"unknown task {task!r}; expected all13, family or variant:<F>")
    idx = [i for i, f in enumerate(dataset.family) if f == fam]
    if not idx:
        raise ContractViolation(f"no rows for family {fam!r}")
    sub = dataset.subset(idx)
    sub.labels = list(sub.arch)
    sub.task = task
    return sub


def _fmt(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() else repr(float(v))


def dataset_to_csv(dataset: Dataset, meta: dict | None = None) -> str:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*ATTRIBUTE_NAMES, "label"] + (["arch", "family"] if dataset.task != "all13" else []))
    for row, lab, a, f in zip(dataset.X, dataset.labels, dataset.arch, dataset.family):
        extra = [a, f] if dataset.task != "all13" else []
        w.writerow([*(_fmt(v) for v in row), lab, *extra])
    return buf.getvalue()


def dataset_from_csv(text: str, catalog: Catalog | None = None, path: str | None = None) -> Dataset:
    """Inverse of :func:`dataset_to_csv`.  Without arch/family columns the
    label is taken as the network name and the family looked up in ``catalog``."""
    lines = text.splitlines()
    body = [(i, l) for i, l in enumerate(lines, 1) if l and not l.startswith("#")]
    if not body:
        raise ParseError("empty dataset", None, path)
    header = next(csv.reader([body[0][1]]))
    if header[: len(ATTRIBUTE_NAMES) + 1] != [*ATTRIBUTE_NAMES, "label"]:
        raise ParseError("bad dataset header", body[0][0], path)
    has_extra = header[len(ATTRIBUTE_NAMES) + 1 :] == ["arch", "family"]
    X, labels, arch, fam = [], [], [], []
    for lineno, line in body[1:]:
        cells = next(csv.reader([line]))
        try:
            if len(cells) != len(header):
                raise ValueError("wrong number of cells")
            X.append([float(c) for c in cells[: len(ATTRIBUTE_NAMES)]])
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
        labels.append(cells[len(ATTRIBUTE_NAMES)])
        if has_extra:
            arch.append(cells[-2])
            fam.append(cells[-1])
        else:
            arch.append(labels[-1])
            if catalog is not None and labels[-1] in catalog:
                fam.append(catalog[labels[-1]].family)
            else:
                fam.append("?")
    task = "all13"
    for l in lines:
        if l.startswith("# task="):
            task = l.split("=", 1)[1]
    return Dataset(np.array(X, dtype=float), labels, arch, fam, task)
