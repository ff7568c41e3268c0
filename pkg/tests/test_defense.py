import pytest

from archleak.calibrate import BANDS, CalibrationPoint, calibrate_noise, mean_short_error
from archleak.catalog import FunctionCode as F
from archleak.defense import defense_table_csv, defense_table_md, eval_decoy, eval_obfuscation
from archleak.errors import ContractViolation
from archleak.trace import DecoySpec, NoiseModel, ObfuscationSpec


def test_decoy_only_touches_its_own_codes(catalog):
    rep = eval_decoy(catalog["ResNet50"], DecoySpec.parse("C:1", 5), runs=3)
    assert rep.baseline_error == 0
    base, mean = rep.baseline_mean, rep.mean
    assert mean.convs == base.convs + 5 and mean.biases == base.biases + 5
    assert (mean.relus, mean.merges, mean.fcs) == (base.relus, base.merges, base.fcs)
    assert all(e == b + 10 for e, b in zip(rep.events, rep.baseline_events))


def test_decoy_scales_with_rate(catalog, noise):
    low = eval_decoy(catalog["VGG19"], DecoySpec.parse("C:1", 10), 4, noise, 2)
    high = eval_decoy(catalog["VGG19"], DecoySpec.parse("C:1", 100), 4, noise, 2)
    assert high.error > low.error > low.baseline_error
    assert high.baseline_runs == low.baseline_runs


def test_decoy_worker_independent(catalog, noise):
    d = DecoySpec.parse("C:2,R:2,M:1", 20)
    a = eval_decoy(catalog["ResNet50"], d, 4, noise, 5, workers=1)
    b = eval_decoy(catalog["ResNet50"], d, 4, noise, 5, workers=2)
    assert a.runs == b.runs and a.baseline_runs == b.baseline_runs


def test_unravel_defense_noiseless(catalog):
    rep = eval_obfuscation(catalog["ResNet50"], ObfuscationSpec("unravel", k_blocks=3), 2, catalog=catalog)
    assert rep.baseline_error == 0
    assert rep.mean.convs == 68 and rep.mean.merges == 20
    assert all(name == "ResNet50" and d > 0 for name, d in rep.identifications)


def test_insertion_defense(catalog):
    spec = ObfuscationSpec("insert_preserving", 5, seed=1)
    rep = eval_obfuscation(catalog["VGG16"], spec, 2)
    assert rep.mean.convs == 18
    assert rep.error == 15  # convs + relus + biases, five each


def test_tables(catalog):
    rep = eval_decoy(catalog["ResNet50"], DecoySpec.parse("C:1", 5), runs=2)
    md = defense_table_md([rep])
    assert md.splitlines()[0].startswith("| Network | Defense |")
    csv = defense_table_csv([rep]).splitlines()
    assert csv[0].startswith("network,defense,convs")
    assert len(csv) == 3


def test_contracts(catalog):
    with pytest.raises(ContractViolation):
        eval_decoy(catalog["VGG16"], DecoySpec.parse("C:1", 1), runs=0)
    with pytest.raises(ContractViolation):
        eval_obfuscation(catalog["VGG16"], ObfuscationSpec("unravel", k_blocks=2), 1)


def test_calibration_small_grid(catalog):
    best, points = calibrate_noise(catalog, p_grid=(0.0, 0.015), conv_rates=(0.3,), merge_rates=(0.0, 0.3), seeds=range(4))
    assert len(points) == 4
    assert all(set(p.errors) == set(BANDS) for p in points)
    assert best is None or best.admissible
    # more noise never lowers the error on this grid
    e = {(p.noise.p_miss, p.noise.spurious_rates.get(F.MERGE, 0)): p.errors["ResNet50"] for p in points}
    assert e[(0.015, 0.3)] > e[(0.0, 0.0)]


def test_mean_short_error_zero_without_noise(catalog):
    assert mean_short_error(catalog["VGG19"], NoiseModel.noiseless(), range(3)) == 0
    pt = CalibrationPoint(NoiseModel.noiseless(), {"VGG19": 1.1, "ResNet50": 2.3})
    assert pt.admissible and pt.distance == pytest.approx(0)
