"""Branch network: convolutional feature extractor plus fully connected head.

A backbone is a list of conv / relu / maxpool stages followed by a head of
fully connected layers (optional hidden relu layers, then one output per
class). Parameters are named ``features.<layer index>.weight|bias`` and
``head.<index>.weight|bias``.
"""
import hashlib
from collections import OrderedDict

import numpy as np

from . import layers
from .exceptions import ArgumentError, ShapeError, SpecError
from .gradcheck import pool_tie_gap
from .layers import LayerSpec
from .tensor import Tensor, as_tensor, reshape

FEATURE_KINDS = ("conv", "relu", "maxpool")


def _stage(out_channels):
    return [
        {"kind": "conv", "kernel": 3, "stride": 1, "padding": 1, "out_channels": out_channels},
        {"kind": "relu"},
        {"kind": "maxpool", "kernel": 2, "stride": 2},
    ]


PRESETS = {
    "desk": _stage(8) + _stage(16),
    "desk-wide": _stage(16) + _stage(32),
    "desk-deep": _stage(8) + _stage(16) + _stage(32),
}


class BackboneSpec:
    """Network description: feature stages, head widths, class count, init.

    ``input_shape`` is the unbatched image shape ``(C, H, W)``.
    """

    def __init__(
        self, layers, input_shape, num_classes=2, hidden=(), init="he", seed=0
    ):
        self.layers = []
        for ii, layer in enumerate(layers):
            if not isinstance(layer, LayerSpec):
                try:
                    layer = LayerSpec.from_dict(layer)
                except (ArgumentError, TypeError) as e:
                    raise SpecError(str(e), ii, dict(layer).get("kind")) from e
            self.layers.append(layer)
        self.input_shape = tuple(int(x) for x in input_shape)
        self.num_classes = int(num_classes)
        self.hidden = tuple(int(x) for x in hidden)
        self.init = init
        self.seed = int(seed)
        self.validate()

    def validate(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise SpecError(f"input shape must be (C, H, W) >= 1, got {self.input_shape}")
        if self.num_classes < 2:
            raise SpecError(f"need at least 2 classes, got {self.num_classes}")
        if self.init != "he":
            raise SpecError(f"unknown init scheme '{self.init}'")
        if any(h < 1 for h in self.hidden):
            raise SpecError(f"hidden widths must be positive, got {self.hidden}")
        self.feature_shape()

    def feature_shapes(self):
        """Unbatched shape after every feature stage."""
        shape = self.input_shape
        shapes = []
        for ii, layer in enumerate(self.layers):
            if layer.kind not in FEATURE_KINDS:
                raise SpecError(
                    "only conv, relu and maxpool belong in the feature extractor",
                    ii,
                    layer.kind,
                )
            shape = layer.output_shape(shape)
            if min(shape[1:]) < 1:
                raise SpecError(
                    f"spatial extent collapses below 1 (shape {shape})", ii, layer.kind
                )
            shapes.append(shape)
        return shapes

    def feature_shape(self):
        shapes = self.feature_shapes()
        return shapes[-1] if shapes else self.input_shape

    @property
    def head_input_size(self):
        return int(np.prod(self.feature_shape()))

    def head_layers(self):
        result = []
        for width in self.hidden:
            result.append(LayerSpec("linear", out_features=width))
            result.append(LayerSpec("relu"))
        result.append(LayerSpec("linear", out_features=self.num_classes))
        return result

    def to_dict(self):
        return {
            "layers": [x.to_dict() for x in self.layers],
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "hidden": list(self.hidden),
            "init": self.init,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            layers=d["layers"],
            input_shape=d["input_shape"],
            num_classes=d.get("num_classes", 2),
            hidden=d.get("hidden", ()),
            init=d.get("init", "he"),
            seed=d.get("seed", 0),
        )

    def __eq__(self, other):
        return isinstance(other, BackboneSpec) and self.to_dict() == other.to_dict()


BACKBONE_KEYS = ("layers", "hidden")


def spec_from_config(backbone, input_shape, num_classes, seed):
    """Build a BackboneSpec from a preset name or a ``{"layers", "hidden"}`` mapping"""
    if isinstance(backbone, str):
        if backbone not in PRESETS:
            raise ArgumentError(
                f"unknown backbone preset '{backbone}', known: {sorted(PRESETS)}"
            )
        layer_list, hidden = PRESETS[backbone], ()
    else:
        unknown = set(backbone) - set(BACKBONE_KEYS)
        if unknown:
            raise ArgumentError(
                f"unknown backbone keys {sorted(unknown)}, known: {list(BACKBONE_KEYS)}"
            )
        layer_list = backbone.get("layers", PRESETS["desk"])
        hidden = backbone.get("hidden", ())
    return BackboneSpec(
        layer_list, input_shape, num_classes=num_classes, hidden=hidden, seed=seed
    )


class BranchParams:
    """Feature extractor (``feature``) and head (``head``) parameters of one branch"""

    def __init__(self, spec, feature, head):
        self.spec = spec
        self.feature = OrderedDict(feature)
        self.head = OrderedDict(head)

    def tensors(self):
        """All (name, Tensor) pairs, feature extractor first"""
        return list(self.feature.items()) + list(self.head.items())

    def named(self):
        return OrderedDict(self.tensors())

    def group_of(self, name):
        return "feature" if name in self.feature else "head"

    @property
    def dtype(self):
        return self.tensors()[0][1].dtype

    def copy(self):
        return BranchParams(
            self.spec,
            [(k, v.copy()) for k, v in self.feature.items()],
            [(k, v.copy()) for k, v in self.head.items()],
        )

    def astype(self, dtype):
        return BranchParams(
            self.spec,
            [(k, v.astype(dtype)) for k, v in self.feature.items()],
            [(k, v.astype(dtype)) for k, v in self.head.items()],
        )

    def requires_grad_(self, flag=True):
        for _, t in self.tensors():
            t.requires_grad = flag
            t.grad = None
        return self

    def checksum(self):
        h = hashlib.sha256()
        for name, t in self.tensors():
            h.update(name.encode("utf-8"))
            h.update(str(t.shape).encode("utf-8"))
            h.update(np.ascontiguousarray(t.values).tobytes())
        return h.hexdigest()

    def equals(self, other):
        a = self.tensors()
        b = other.tensors()
        return [k for k, _ in a] == [k for k, _ in b] and all(
            x.shape == y.shape and np.array_equal(x.values, y.values)
            for (_, x), (_, y) in zip(a, b)
        )


def init_backbone(spec, seed=None):
    """He (fan-in) normal weights, zero biases; deterministic per seed"""
    if seed is None:
        seed = spec.seed
    spec.validate()
    rng = np.random.default_rng(seed)
    feature = []
    channels = spec.input_shape[0]
    for ii, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            fan_in = channels * layer.kernel * layer.kernel
            weight = rng.standard_normal(
                (layer.out_channels, channels, layer.kernel, layer.kernel)
            ) * np.sqrt(2.0 / fan_in)
            feature.append((f"features.{ii}.weight", Tensor(weight)))
            feature.append((f"features.{ii}.bias", Tensor(np.zeros(layer.out_channels))))
            channels = layer.out_channels
    head = []
    width = spec.head_input_size
    linear_index = 0
    for layer in spec.head_layers():
        if layer.kind != "linear":
            continue
        weight = rng.standard_normal((layer.out_features, width)) * np.sqrt(2.0 / width)
        head.append((f"head.{linear_index}.weight", Tensor(weight)))
        head.append((f"head.{linear_index}.bias", Tensor(np.zeros(layer.out_features))))
        width = layer.out_features
        linear_index += 1
    return BranchParams(spec, feature, head)


def feature_extract(X, params, trace=None):
    """Feature map of ``[N, C, H, W]`` or ``[C, H, W]`` images.

    If ``trace`` is a list, relu inputs and max-pool tie gaps are appended to
    it (see :func:`mbf_amen.gradcheck.nondifferentiable_margin`).
    """
    x = as_tensor(X, dtype=params.dtype)
    spec = params.spec
    if x.shape[-3:] != spec.input_shape or x.ndim not in (3, 4):
        raise ShapeError("images do not match the backbone input", x.shape, spec.input_shape)
    after_relu = False
    for ii, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            x = layers.conv2d(
                x,
                params.feature[f"features.{ii}.weight"],
                params.feature[f"features.{ii}.bias"],
                stride=layer.stride,
                padding=layer.padding,
            )
        elif layer.kind == "relu":
            if trace is not None:
                trace.append(("relu", x.values.copy()))
            x = layers.relu(x)
        elif layer.kind == "maxpool":
            if trace is not None:
                trace.append(
                    (
                        "maxpool",
                        pool_tie_gap(
                            x, layer.kernel, layer.stride, 0.0 if after_relu else None
                        ),
                    )
                )
            x = layers.max_pool2d(x, layer.kernel, layer.stride)
        after_relu = layer.kind == "relu" or (after_relu and layer.kind == "maxpool")
    return x


def head_logits(F, params):
    """Head output before the softmax"""
    f = as_tensor(F)
    spec = params.spec
    if f.shape[-3:] != spec.feature_shape() or f.ndim not in (3, 4):
        raise ShapeError(
            "feature map does not match the head input", f.shape, spec.feature_shape()
        )
    x = reshape(f, (-1,)) if f.ndim == 3 else layers.flatten(f)
    n_linear = len(params.head) // 2
    for j in range(n_linear):
        x = layers.linear(x, params.head[f"head.{j}.weight"], params.head[f"head.{j}.bias"])
        if j < n_linear - 1:
            x = layers.relu(x)
    return x


def classify(F, params):
    """Class probabilities of a feature map"""
    return layers.softmax(head_logits(F, params))


def clone_into_next_branch(params):
    return params.copy()
