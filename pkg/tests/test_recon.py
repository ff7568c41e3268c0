import pytest
from hypothesis import given, settings, strategies as st

from archleak.catalog import FunctionCode as F, attributes_of, expand_events
from archleak.errors import ContractViolation, EmptyObservationError, ParseError
from archleak.recon import (
    BlockStructure,
    ExtractionReport,
    RBlock,
    attack_report,
    detect_freeze,
    edit_distance,
    extract_attributes,
    identify,
    reconstruct,
    split_queries,
    template_signature,
)
from archleak.trace import NoiseModel, emit_trace, observe


def test_split_queries_discards_prefix():
    codes = [F.CONV, F.QUERY, F.CONV, F.RELU, F.QUERY, F.FC]
    assert split_queries(codes) == [[F.CONV, F.RELU], [F.FC]]
    with pytest.raises(EmptyObservationError):
        split_queries([F.CONV, F.RELU])


def test_extract_counts_only_attribute_codes():
    v = extract_attributes([F.CONV, F.BIAS, F.RELU, F.GRAD, F.MERGE, F.CONV])
    assert (v.convs, v.biases, v.relus, v.merges, v.fcs) == (2, 1, 1, 1, 0)


def test_short_and_long_reports(catalog, noise):
    t = catalog["VGG19"]
    truth = attributes_of(t)
    obs = [observe(emit_trace(t, 1), noise, s) for s in range(10)]
    short = attack_report(obs, "S", truth)
    assert len(short.per_query) == 10 and short.denominator == 62
    long_ = attack_report(observe(emit_trace(t, 10), noise, 3), "L", truth)
    assert long_.error_text().endswith("/62")
    with pytest.raises(ContractViolation):
        attack_report(obs[:3], "S")
    with pytest.raises(ContractViolation):
        attack_report(obs, "L")
    with pytest.raises(ContractViolation):
        attack_report(obs, "X")


def test_report_renderings(catalog):
    t = catalog["ResNet50"]
    rep = attack_report(observe(emit_trace(t, 10), NoiseModel.noiseless(), 0), "L", attributes_of(t))
    csv = rep.to_csv().splitlines()
    assert csv[0].startswith("arch,data,convs")
    assert csv[1].startswith("ResNet50,G,53,1,1,49")
    assert csv[2].endswith("0.0/172")
    assert "| ResNet50 | L |" in rep.to_markdown()
    assert ExtractionReport.from_json(rep.to_json()) == rep
    with pytest.raises(ParseError):
        ExtractionReport.from_json('{"format": 1, "kind": "block_structure"}')


def test_reconstruct_small_sequence():
    seq = [F.CONV, F.MPOOL, F.CONV, F.CONV, F.CONV, F.CONV, F.MERGE, F.CONV, F.CONV, F.CONV, F.MERGE]
    seq += [F.APOOL, F.FC, F.BIAS, F.SOFTM]
    st_ = reconstruct(seq)
    assert [b.kind for b in st_.blocks] == ["stem", "residual", "identity"]
    assert st_.fc_tail == 1 and st_.softmax
    assert st_.describe()[-1] == "classifier(1 fc, softmax)"
    assert BlockStructure.from_json(st_.to_json()) == st_
    assert st_.to_csv().splitlines()[0] == "index,kind,convs,closed_by"


def test_catalog_signatures_unique_and_self_identify(catalog):
    sigs = {template_signature(t) for t in catalog.values()}
    assert len(sigs) == len(catalog)
    for name, t in catalog.items():
        assert identify(reconstruct(expand_events(t)[1:]), catalog)[0] == (name, 0)


def test_edit_distance_basics():
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance([], [1, 2]) == 2
    assert edit_distance([RBlock("stem", 1)], [RBlock("stem", 1)]) == 0


def test_detect_freeze(catalog):
    t = catalog["VGG16"]
    for k in (0, 4, t.bias_layer_count()):
        obs = observe(emit_trace(t, 3, "training", k), NoiseModel.noiseless(), 0)
        updated, frozen = detect_freeze(obs, t)
        assert frozen == k and updated == t.bias_layer_count() - k


def test_detect_freeze_tolerates_light_noise(catalog, noise):
    t = catalog["ResNet50"]
    obs = observe(emit_trace(t, 10, "training", 20), noise, 1)
    assert abs(detect_freeze(obs, t)[1] - 20) <= 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from([F.CONV, F.RELU, F.BIAS, F.MPOOL, F.MERGE, F.FC]), max_size=60))
def test_reconstruct_conserves_convs(seq):
    st_ = reconstruct(seq)
    assert sum(b.convs for b in st_.blocks) == seq.count(F.CONV)
    assert all(b.convs > 0 or b.kind == "stem" for b in st_.blocks)
    assert st_.fc_tail <= seq.count(F.FC)
