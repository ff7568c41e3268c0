import numpy as np
import pytest

from archleak.catalog import import_catalog
from archleak.fingerprint import dataset_from_csv
from archleak.report import generate_artifacts, meta_lines, read_meta, read_table_csv, render_report
from archleak.trace import NoiseModel, read_trace


@pytest.fixture(scope="module")
def rendered(tmp_path_factory, noise):
    out = tmp_path_factory.mktemp("art")
    generate_artifacts(out, 3, noise, per_arch_n=8)
    written = render_report(out)
    return out, written


def test_artifact_layout(rendered, catalog):
    out, _ = rendered
    assert import_catalog((out / "catalog.json").read_text()) == catalog
    for name in catalog:
        files = sorted(p.name for p in (out / "observations" / name).iterdir())
        assert files == ["L.trace"] + [f"S_{i:02d}.trace" for i in range(10)]
    obs = read_trace((out / "observations" / "VGG19" / "L.trace").read_text())
    assert obs.n_queries == 10 and obs.arch == "VGG19"
    ds = dataset_from_csv((out / "dataset.csv").read_text(), catalog)
    assert len(ds) == 8 * 13


def test_tables_carry_metadata(rendered):
    out, written = rendered
    names = {p.name for p in written}
    for stem in ("table2", "table4", "table5", "table6", "table8", "table9"):
        assert f"{stem}.md" in names and f"{stem}.csv" in names
    assert {"table3.md", "table7.md", "pca_clusters.png", "defense_errors.png"} <= names
    for p in written:
        if p.suffix == ".csv":
            meta = read_meta(p.read_text())
            assert meta["seed"] == "3" and meta["p_miss"] == "0.015" and "version" in meta
        elif p.suffix == ".md" and p.parent == out / "report":
            assert p.read_text().startswith("<!-- version=")


def test_table_contents(rendered):
    out, _ = rendered
    _, rows = read_table_csv((out / "report" / "table2.csv").read_text())
    assert [(r["arch"], r["data"]) for r in rows] == [
        ("VGG19", "G"), ("VGG19", "S"), ("VGG19", "L"), ("ResNet50", "G"), ("ResNet50", "S"), ("ResNet50", "L")
    ]
    _, rows4 = read_table_csv((out / "report" / "table4.csv").read_text())
    assert [r["task"] for r in rows4][:2] == ["all13", "family"]
    _, rows6 = read_table_csv((out / "report" / "table6.csv").read_text())
    assert float(rows6[1]["convs"]) > 53
    t3 = (out / "report" / "table3.md").read_text()
    assert "stem" in t3 and "residual" in t3 and "identity" in t3
    t7 = (out / "report" / "table7.md").read_text()
    assert "convnet" in t7
    png = (out / "report" / "figures" / "pca_clusters.png").read_bytes()
    assert png[:8] == b"\x89PNG\r\n\x1a\n"


def test_seed_changes_outputs(tmp_path):
    a = generate_artifacts(tmp_path / "a", 1, NoiseModel(0.05, {}), per_arch_n=2)
    b = generate_artifacts(tmp_path / "b", 2, NoiseModel(0.05, {}), per_arch_n=2)
    assert (a / "dataset.csv").read_bytes() != (b / "dataset.csv").read_bytes()


def test_meta_lines_formats():
    assert meta_lines({"seed": 1}, "csv").endswith("# seed=1\n")
    md = meta_lines({"seed": 1}, "md")
    assert md.startswith("<!-- ") and read_meta(md)["seed"] == "1"
