"""Network templates and their monitored-function event expansion.

A template is an ordered list of blocks, each an ordered list of layers.
Expanding a template yields the sequence of monitored framework calls one
inference query makes: ``QUERY`` first, then per layer the op itself,
its bias add, and its activation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple

from .errors import ContractViolation, ParseError

FORMAT_VERSION = 1


class FunctionCode(str, Enum):
    QUERY = "QUERY"
    GRAD = "GRAD"
    CONV = "CONV"
    FC = "FC"
    SOFTM = "SOFTM"
    RELU = "RELU"
    MPOOL = "MPOOL"
    APOOL = "APOOL"
    MERGE = "MERGE"
    BIAS = "BIAS"

    def __str__(self) -> str:
        return self.value


CONTROL_CODES = (FunctionCode.QUERY, FunctionCode.GRAD)
ATTRIBUTE_CODES = (
    FunctionCode.CONV,
    FunctionCode.FC,
    FunctionCode.SOFTM,
    FunctionCode.RELU,
    FunctionCode.MPOOL,
    FunctionCode.APOOL,
    FunctionCode.MERGE,
    FunctionCode.BIAS,
)
ATTRIBUTE_NAMES = ("convs", "fcs", "softms", "relus", "mpools", "apools", "merges", "biases")


class AttributeVector(NamedTuple):
    """Per-query attribute counts, in table column order."""

    convs: float = 0
    fcs: float = 0
    softms: float = 0
    relus: float = 0
    mpools: float = 0
    apools: float = 0
    merges: float = 0
    biases: float = 0

    @classmethod
    def from_codes(cls, codes: Iterable[FunctionCode]) -> "AttributeVector":
        counts = dict.fromkeys(ATTRIBUTE_CODES, 0)
        for c in codes:
            if c in counts:
                counts[c] += 1
        return cls(*(counts[c] for c in ATTRIBUTE_CODES))

    @classmethod
    def mean(cls, vectors: Iterable["AttributeVector"]) -> "AttributeVector":
        vectors = list(vectors)
        if not vectors:
            raise ContractViolation("mean of zero vectors")
        n = len(vectors)
        return cls(*(sum(col) / n for col in zip(*vectors)))

    def total(self) -> float:
        return sum(self)


def l1_error(observed: Iterable[float], truth: Iterable[float]) -> float:
    """Sum of absolute per-attribute deviations."""
    observed, truth = list(observed), list(truth)
    if len(observed) != len(truth):
        raise ContractViolation(f"vectors differ in length ({len(observed)} vs {len(truth)})")
    return float(sum(abs(a - b) for a, b in zip(observed, truth)))


LAYER_KINDS = ("conv", "fc", "maxpool", "avgpool", "merge")
ACTIVATIONS = ("none", "relu", "softmax")
BLOCK_LABELS = ("stem", "convnet", "residual", "identity", "dense", "inception-like", "classifier")
FAMILIES = ("V", "R", "D", "I", "M")


@dataclass(frozen=True)
class LayerDesc:
    kind: str
    activation: str = "none"
    has_bias: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ContractViolation(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation {self.activation!r}")
        if self.kind in ("maxpool", "avgpool", "merge") and self.has_bias:
            raise ContractViolation(f"{self.kind} layers carry no bias")
        if self.kind in ("maxpool", "avgpool") and self.activation != "none":
            raise ContractViolation("pooling layers carry no activation")


@dataclass(frozen=True)
class Block:
    label: str
    layers: tuple[LayerDesc, ...]

    def __post_init__(self):
        base = self.label.split("-")[0] if self.label.startswith("convnet") else self.label
        if base not in BLOCK_LABELS:
            raise ContractViolation(f"unknown block label {self.label!r}")

    @property
    def is_skip(self) -> bool:
        return self.label in ("residual", "identity")


@dataclass(frozen=True)
class ArchTemplate:
    name: str
    family: str
    blocks: tuple[Block, ...]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractViolation(f"unknown family {self.family!r}")
        layers = self.layers()
        for i, layer in enumerate(layers):
            if layer.activation == "softmax" and (layer.kind != "fc" or i != _last_fc(layers)):
                raise ContractViolation(f"{self.name}: softmax only allowed on the final fc layer")

    def layers(self) -> list[LayerDesc]:
        return [layer for block in self.blocks for layer in block.layers]

    def bias_layer_count(self) -> int:
        return sum(layer.has_bias for layer in self.layers())


def _last_fc(layers: list[LayerDesc]) -> int:
    idx = -1
    for i, layer in enumerate(layers):
        if layer.kind == "fc":
            idx = i
    return idx


_OP_CODE = {
    "conv": FunctionCode.CONV,
    "fc": FunctionCode.FC,
    "maxpool": FunctionCode.MPOOL,
    "avgpool": FunctionCode.APOOL,
    "merge": FunctionCode.MERGE,
}
_ACT_CODE = {"relu": FunctionCode.RELU, "softmax": FunctionCode.SOFTM}


def layer_events(layer: LayerDesc) -> list[FunctionCode]:
    out = [_OP_CODE[layer.kind]]
    if layer.has_bias:
        out.append(FunctionCode.BIAS)
    if layer.activation != "none":
        out.append(_ACT_CODE[layer.activation])
    return out


def layers_events(layers: Iterable[LayerDesc]) -> list[FunctionCode]:
    out: list[FunctionCode] = []
    for layer in layers:
        out.extend(layer_events(layer))
    return out


def expand_events(template: ArchTemplate) -> list[FunctionCode]:
    """Events of one inference query, starting with its QUERY marker."""
    return [FunctionCode.QUERY] + layers_events(template.layers())


def attributes_of(template: ArchTemplate) -> AttributeVector:
    layers = template.layers()
    kinds = [layer.kind for layer in layers]
    return AttributeVector(
        convs=kinds.count("conv"),
        fcs=kinds.count("fc"),
        softms=sum(layer.activation == "softmax" for layer in layers),
        relus=sum(layer.activation == "relu" for layer in layers),
        mpools=kinds.count("maxpool"),
        apools=kinds.count("avgpool"),
        merges=kinds.count("merge"),
        biases=sum(layer.has_bias for layer in layers),
    )


# ---------------------------------------------------------------------------
# Layer shorthands
# ---------------------------------------------------------------------------


def conv(relu: bool = True, bias: bool = True) -> LayerDesc:
    return LayerDesc("conv", "relu" if relu else "none", bias)


def fc(activation: str = "relu", bias: bool = True) -> LayerDesc:
    return LayerDesc("fc", activation, bias)


def merge(relu: bool = False) -> LayerDesc:
    return LayerDesc("merge", "relu" if relu else "none", False)


MAXPOOL = LayerDesc("maxpool")
AVGPOOL = LayerDesc("avgpool")


def _block(label: str, *layers: LayerDesc) -> Block:
    return Block(label, tuple(layers))


def _vgg(name: str, per_block: tuple[int, ...]) -> ArchTemplate:
    blocks = [_block(f"convnet-{n}", *([conv()] * n), MAXPOOL) for n in per_block]
    blocks.append(_block("classifier", fc("relu"), fc("relu"), fc("softmax")))
    return ArchTemplate(name, "V", tuple(blocks))


def residual_block(bias: bool = True, shortcut_bias: bool = False, relu_out: bool = True) -> Block:
    # main path conv-relu, conv-relu, conv; projection shortcut conv; add-relu
    return _block(
        "residual",
        conv(True, bias),
        conv(True, bias),
        conv(False, bias),
        conv(False, shortcut_bias),
        merge(relu_out),
    )


def identity_block(bias: bool = True, relu_out: bool = True) -> Block:
    return _block("identity", conv(True, bias), conv(True, bias), conv(False, bias), merge(relu_out))


def _resnet(name: str, stages: tuple[int, ...], conv_bias: bool, plain_last_merge: bool = False) -> ArchTemplate:
    blocks = [_block("stem", conv(True, conv_bias), MAXPOOL)]
    for depth in stages:
        blocks.append(residual_block(conv_bias))
        blocks.extend(identity_block(conv_bias) for _ in range(depth - 1))
    if plain_last_merge:
        blocks[-1] = identity_block(conv_bias, relu_out=False)
    blocks.append(_block("classifier", AVGPOOL, fc("softmax")))
    return ArchTemplate(name, "R", tuple(blocks))


def _densenet(name: str, stages: tuple[int, ...]) -> ArchTemplate:
    nb = dict(bias=False)
    blocks = [_block("stem", conv(**nb), MAXPOOL)]
    for s, depth in enumerate(stages):
        for i in range(depth):
            last = s == len(stages) - 1 and i == depth - 1
            # bottleneck conv pair, then concatenation; the closing norm-relu
            # of the network rides on the final concatenation
            blocks.append(_block("dense", conv(**nb), conv(**nb), merge(relu=last)))
        if s < len(stages) - 1:
            blocks.append(_block("convnet-1", conv(**nb), AVGPOOL))
    # global average pooling is a mean reduction, not an avg-pool kernel call
    blocks.append(_block("classifier", fc("softmax")))
    return ArchTemplate(name, "D", tuple(blocks))


def _inception_v3() -> ArchTemplate:
    c = conv(True, False)
    c_lin = conv(False, False)
    blocks = [_block("stem", c, c, c, MAXPOOL, c, c, MAXPOOL)]
    blocks += [_block("inception-like", *([c] * 6), AVGPOOL, c, merge()) for _ in range(3)]
    blocks.append(_block("inception-like", *([c] * 4), MAXPOOL, merge()))
    blocks += [_block("inception-like", *([c] * 9), AVGPOOL, c, merge()) for _ in range(4)]
    blocks.append(_block("inception-like", *([c] * 6), MAXPOOL, merge()))
    for _ in range(2):
        blocks.append(
            _block(
                "inception-like",
                c_lin,
                c_lin, c_lin, c_lin, merge(),
                c_lin, c_lin, c_lin, c_lin, merge(),
                AVGPOOL, c_lin,
                merge(),
            )
        )
    blocks.append(_block("classifier", fc("softmax")))
    return ArchTemplate("InceptionV3", "I", tuple(blocks))


def _inception_resnet() -> ArchTemplate:
    c = conv(True, False)
    up = conv(False, True)
    blocks = [_block("stem", c, c, c, MAXPOOL, c, c, MAXPOOL)]
    blocks.append(_block("inception-like", *([c] * 6), AVGPOOL, c, merge()))
    blocks += [_block("residual", *([c] * 6), merge(), up, merge()) for _ in range(10)]
    blocks.append(_block("inception-like", *([c] * 4), MAXPOOL, merge()))
    blocks += [_block("residual", *([c] * 4), merge(), up, merge()) for _ in range(20)]
    blocks.append(_block("inception-like", *([c] * 7), MAXPOOL, merge()))
    blocks += [_block("residual", *([c] * 4), merge(), up, merge()) for _ in range(9)]
    blocks.append(_block("residual", *([c] * 4), merge(), conv(False, False), merge()))
    blocks.append(_block("convnet-1", conv(False, False)))
    blocks.append(_block("classifier", fc("softmax")))
    return ArchTemplate("InceptionResNet", "I", tuple(blocks))


def _xception() -> ArchTemplate:
    c = conv(True, False)
    c_lin = conv(False, False)
    blocks = [_block("stem", c, c)]
    blocks += [_block("residual", c_lin, c, c, MAXPOOL, merge()) for _ in range(3)]
    blocks += [_block("identity", c, c, c, merge()) for _ in range(8)]
    blocks.append(_block("residual", c_lin, c, c_lin, MAXPOOL, merge()))
    blocks.append(_block("convnet-3", c, c, c))
    blocks.append(_block("classifier", fc("softmax")))
    return ArchTemplate("Xception", "I", tuple(blocks))


def _mobilenet_v1() -> ArchTemplate:
    c = conv(True, False)
    # the depthwise stage of each separable unit is not a conv-kernel call;
    # it is represented by an elementwise event followed by its relu
    blocks = [_block("stem", c)]
    blocks += [_block("convnet-1", merge(relu=True), c) for _ in range(13)]
    blocks.append(_block("classifier", conv(False, True)))
    return ArchTemplate("MobileNet", "M", tuple(blocks))


def _mobilenet_v2() -> ArchTemplate:
    c = conv(True, False)
    blocks = [_block("stem", c), _block("convnet-1", conv(False, False))]
    residual_ids = {2, 4, 5, 7, 8, 9, 11, 12, 14, 15}
    for i in range(1, 17):
        if i in residual_ids:
            blocks.append(_block("identity", c, c, merge()))
        else:
            blocks.append(_block("convnet-2", c, c))
    blocks.append(_block("convnet-1", c))
    blocks.append(_block("classifier", fc("softmax")))
    return ArchTemplate("MobileNetV2", "M", tuple(blocks))


NETWORK_NAMES = (
    "VGG16",
    "VGG19",
    "ResNet50",
    "ResNet101",
    "ResNet152",
    "DenseNet121",
    "DenseNet169",
    "DenseNet201",
    "InceptionV3",
    "InceptionResNet",
    "Xception",
    "MobileNet",
    "MobileNetV2",
)

# Reference counts: (convs, fcs, softms, relus, mpools, apools, merges, biases).
# None marks a field with no published reference value.
REFERENCE_ATTRIBUTES: dict[str, tuple] = {
    "VGG16": (13, 3, 1, 15, 5, 0, 0, 16),
    "VGG19": (16, 3, 1, 18, 5, 0, 0, 19),
    "ResNet50": (53, 1, 1, 49, 1, 1, 16, 50),
    "ResNet101": (101, 1, 1, 97, 1, 1, 32, 1),
    "ResNet152": (155, 1, 1, 150, 1, 1, 50, 1),
    "DenseNet121": (120, 1, 1, 121, 1, 3, 58, 1),
    "DenseNet169": (168, 1, 1, 169, 1, 3, 82, 1),
    "DenseNet201": (200, 1, 1, 201, 1, 3, 98, 1),
    "InceptionV3": (94, 1, 1, 76, 4, 9, 15, 1),
    "InceptionResNet": (244, 1, 1, 203, 4, 1, 83, 40),
    "Xception": (41, 1, 1, 36, 4, 0, None, 1),
    "MobileNet": (15, 0, 0, 27, 0, 0, None, 1),
    "MobileNetV2": (35, 1, 1, 34, 0, 0, None, 1),
}


class Catalog(dict):
    """Mapping of network name to template, in canonical order."""

    def ground_truth(self, name: str) -> AttributeVector:
        return attributes_of(self[name])

    def families(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {f: [] for f in FAMILIES}
        for name, t in self.items():
            out[t.family].append(name)
        return out


def build_catalog() -> Catalog:
    templates = [
        _vgg("VGG16", (2, 2, 3, 3, 3)),
        _vgg("VGG19", (2, 2, 4, 4, 4)),
        _resnet("ResNet50", (3, 4, 6, 3), conv_bias=True),
        _resnet("ResNet101", (3, 4, 22, 3), conv_bias=False),
        _resnet("ResNet152", (3, 8, 36, 3), conv_bias=False, plain_last_merge=True),
        _densenet("DenseNet121", (6, 12, 24, 16)),
        _densenet("DenseNet169", (6, 12, 32, 32)),
        _densenet("DenseNet201", (6, 12, 48, 32)),
        _inception_v3(),
        _inception_resnet(),
        _xception(),
        _mobilenet_v1(),
        _mobilenet_v2(),
    ]
    return Catalog((t.name, t) for t in templates)


def get_template(catalog: Catalog, name: str) -> ArchTemplate:
    try:
        return catalog[name]
    except KeyError:
        valid = ", ".join(catalog)
        raise ContractViolation(f"unknown architecture {name!r}; valid names: {valid}") from None


# ---------------------------------------------------------------------------
# Interchange document
# ---------------------------------------------------------------------------


def template_to_dict(t: ArchTemplate) -> dict:
    return {
        "name": t.name,
        "family": t.family,
        "attributes": list(attributes_of(t)),
        "blocks": [
            {
                "label": b.label,
                "layers": [
                    {"kind": l.kind, "activation": l.activation, "has_bias": l.has_bias} for l in b.layers
                ],
            }
            for b in t.blocks
        ],
    }


def export_catalog(catalog: Catalog) -> str:
    doc = {"format": FORMAT_VERSION, "templates": [template_to_dict(t) for t in catalog.values()]}
    return json.dumps(doc, indent=1) + "\n"


def _line_of(text: str, needle: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def template_from_dict(d: dict) -> ArchTemplate:
    blocks = []
    for b in d["blocks"]:
        layers = []
        for l in b["layers"]:
            if not isinstance(l["has_bias"], bool):
                raise ContractViolation("has_bias must be a boolean")
            layers.append(LayerDesc(l["kind"], l["activation"], l["has_bias"]))
        blocks.append(Block(b["label"], tuple(layers)))
    return ArchTemplate(d["name"], d["family"], tuple(blocks))


def import_catalog(text: str) -> Catalog:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_VERSION:
        raise ParseError(f"expected an object with \"format\": {FORMAT_VERSION}", 1)
    if not isinstance(doc.get("templates"), list):
        raise ParseError("missing \"templates\" list", _line_of(text, '"format"') or 1)
    out = Catalog()
    for entry in doc["templates"]:
        name = entry.get("name") if isinstance(entry, dict) else None
        line = _line_of(text, f'"name": {json.dumps(name)}') if name else None
        try:
            t = template_from_dict(entry)
        except (KeyError, TypeError, ContractViolation) as exc:
            raise ParseError(f"bad template {name!r}: {exc}", line) from None
        if "attributes" in entry and tuple(entry["attributes"]) != tuple(attributes_of(t)):
            raise ParseError(f"template {name!r}: attributes do not match its layers", line)
        out[t.name] = t
    return out
