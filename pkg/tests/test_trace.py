import pytest
from hypothesis import given, settings, strategies as st

from archleak.catalog import FunctionCode as F, attributes_of, expand_events, layers_events
from archleak.errors import ContractViolation, ParseError
from archleak.trace import (
    DecoySpec,
    NoiseModel,
    ObfuscationSpec,
    Observation,
    apply_obfuscation,
    decoy_iterations,
    emit_trace,
    merge_decoy,
    observe,
    read_trace,
    unravel_order,
    write_trace,
)


def is_subsequence(small, big) -> bool:
    it = iter(big)
    return all(any(x == y for y in it) for x in small)


def test_emit_repeats_single_query(catalog):
    t = catalog["VGG19"]
    trace = emit_trace(t, 4)
    assert trace.codes == tuple(expand_events(t) * 4)
    assert trace.codes.count(F.QUERY) == 4


def test_training_mode_adds_grads(catalog):
    t = catalog["VGG16"]
    n_bias = t.bias_layer_count()
    trace = emit_trace(t, 2, "training", frozen_prefix=6)
    assert trace.codes.count(F.GRAD) == 2 * (n_bias - 6)
    assert trace.freeze_boundary == 6
    with pytest.raises(ContractViolation):
        emit_trace(t, 1, "training", frozen_prefix=n_bias + 1)
    with pytest.raises(ContractViolation):
        emit_trace(t, 1, "inference", frozen_prefix=2)
    with pytest.raises(ContractViolation):
        emit_trace(t, 0)


def test_noiseless_observation_is_identity(catalog):
    trace = emit_trace(catalog["ResNet50"], 3)
    obs = observe(trace, NoiseModel.noiseless(), 11)
    assert obs.codes == trace.codes
    assert obs.slots == tuple(range(len(trace.codes)))


def test_total_miss_keeps_only_queries(catalog):
    trace = emit_trace(catalog["ResNet50"], 5)
    obs = observe(trace, NoiseModel(1.0, {}), 0)
    assert obs.codes == (F.QUERY,) * 5


def test_noise_model_validation():
    with pytest.raises(ContractViolation):
        NoiseModel(1.5)
    with pytest.raises(ContractViolation):
        NoiseModel(0.0, {F.QUERY: 0.1})
    with pytest.raises(ContractViolation):
        NoiseModel(0.0, {F.CONV: -1})
    n = NoiseModel(0.0, {F.MERGE: 0.3, F.CONV: 0.2})
    assert n.rates_text() == "CONV:0.2;MERGE:0.3"
    assert NoiseModel(0.0, NoiseModel.parse_rates(n.rates_text())) == n


def test_decoy_spec_parse():
    d = DecoySpec.parse("C:2,R:2,M:1", 10)
    assert layers_events(d.layers) == [F.CONV, F.BIAS, F.RELU, F.CONV, F.BIAS, F.RELU, F.MERGE]
    assert d.label() == "C:2 R:2 M:1"
    with pytest.raises(ContractViolation):
        DecoySpec.parse("C:1,R:2", 1)
    with pytest.raises(ContractViolation):
        DecoySpec.parse("X:1", 1)
    with pytest.raises(ContractViolation):
        DecoySpec.parse("C:1", 0)


def test_decoy_merge_counts(catalog):
    trace = emit_trace(catalog["ResNet50"], 2)
    d = DecoySpec.parse("C:1", 2.5)
    merged = merge_decoy(trace, d, 3)
    assert decoy_iterations(d, 2) == 5
    assert len(merged.codes) == len(trace.codes) + 5 * 2
    assert merged.codes[0] is F.QUERY
    assert is_subsequence(trace.codes, merged.codes)


def test_unravel_order():
    assert unravel_order(1) == [0]
    assert unravel_order(3) == [0, 0, 1, 0, 0, 1, 2]
    assert len(unravel_order(5)) == 2**5 - 1


def test_unravel_resnet50_inflates_counts(catalog):
    t = catalog["ResNet50"]
    u = apply_obfuscation(t, ObfuscationSpec("unravel", k_blocks=3))
    a, b = attributes_of(t), attributes_of(u)
    # R R I R R I I replaces R I I: three extra residual blocks, one extra identity
    assert b.convs == a.convs + 3 * 4 + 1 * 3
    assert b.merges == a.merges + 4
    with pytest.raises(ContractViolation):
        apply_obfuscation(catalog["VGG16"], ObfuscationSpec("unravel", k_blocks=1))


def test_insert_preserving_adds_layers(catalog):
    t = catalog["VGG16"]
    spec = ObfuscationSpec("insert_preserving", 4, seed=9)
    o = apply_obfuscation(t, spec)
    assert attributes_of(o).convs == attributes_of(t).convs + 4
    assert apply_obfuscation(t, spec) == o
    ident = apply_obfuscation(catalog["ResNet50"], ObfuscationSpec("insert_preserving", 2, insert_layer="identity"))
    assert attributes_of(ident).merges == 18
    with pytest.raises(ContractViolation):
        apply_obfuscation(t, ObfuscationSpec("insert_preserving", 1, insert_layer="identity"))


def test_trace_file_round_trip(catalog):
    trace = emit_trace(catalog["VGG16"], 2, "training", 3)
    assert read_trace(write_trace(trace)) == trace
    obs = observe(trace, NoiseModel(0.1, {F.CONV: 0.5}), 4)
    again = read_trace(write_trace(obs))
    assert isinstance(again, Observation) and again == obs


def test_trace_file_errors():
    good = "# format=1\n# kind=trace\n# arch=x\n# n_queries=1\n# mode=inference\n# freeze_boundary=none\n0,QUERY\n"
    assert read_trace(good).codes == (F.QUERY,)
    with pytest.raises(ParseError) as exc:
        read_trace(good + "1,NOPE\n", "t.trace")
    assert exc.value.line == 8 and "t.trace" in str(exc.value)
    with pytest.raises(ParseError):
        read_trace(good.replace("format=1", "format=9"))
    with pytest.raises(ParseError):
        read_trace(good.replace("# arch=x\n", ""))


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(["VGG16", "ResNet50", "MobileNet"]),
    st.integers(1, 3),
    st.floats(0, 1),
    st.floats(0, 3),
    st.integers(0, 2**64 - 1),
)
def test_observation_invariants(catalog, name, nq, p, rate, seed):
    trace = emit_trace(catalog[name], nq)
    obs = observe(trace, NoiseModel(p, {F.CONV: rate, F.MERGE: rate}), seed)
    assert obs.codes.count(F.QUERY) == nq
    assert obs.codes[0] is F.QUERY
    assert all(b > a for a, b in zip(obs.slots, obs.slots[1:]))
    assert observe(trace, obs.noise, seed) == obs
    if rate == 0:
        assert is_subsequence(obs.codes, trace.codes)
    if p == 0:
        assert is_subsequence(trace.codes, obs.codes)
