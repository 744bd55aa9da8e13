"""RVNN and CVNN model builders, parameter accounting and ablation.

Both networks follow the same two-conv-layer template: conv -> batch norm
-> ReLU, twice, then average pooling down to one value per class. The
real network reads a slice as a 1x2x100 image; the complex network reads
the I row as the real part and the Q row as the imaginary part of a
1x1x100 complex signal and classifies on the magnitude of the pooled
output. Widths are chosen so both have the same number of convolutional
weights for any class count K.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import clayers as C
from . import tensor as T
from .clayers import ComplexConvFilter, ComplexTensor
from .tensor import RealTensor

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class ArchConfig:
    num_classes: int = 20
    rvnn_width: int = 128
    cvnn_width: int = 64
    filter1: tuple = (1, 25)
    filter2: tuple = (1, 20)
    stride: tuple = (1, 3)
    rvnn_pool: tuple = (2, 3)
    cvnn_pool: tuple = (1, 3)


_VALID_LAYERS = ("L1", "L2", "L12")
_VALID_TARGETS = ("C", "O")
_VALID_PARTS = ("RE", "IM")


@dataclass(frozen=True)
class AblationConfig:
    """Which layer(s), component and part of a CVNN to zero out.

    Canonical name form is ``L{1|2|12}_{C|O}_{RE|IM}`` ("NONE" for no
    ablation). Target C zeroes the chosen part of the layer's filters
    (with gradients masked so training keeps them zero); target O zeroes
    the chosen part of the layer's output on every forward pass.
    """

    layers: str = "NONE"
    target: str | None = None
    part: str | None = None

    def __post_init__(self):
        if self.layers == "NONE":
            if self.target is not None or self.part is not None:
                raise ValueError("NONE ablation must leave target/part unset")
            return
        if self.layers not in _VALID_LAYERS:
            raise ValueError(f"bad ablation layers {self.layers!r}")
        if self.target not in _VALID_TARGETS:
            raise ValueError(f"bad ablation target {self.target!r}")
        if self.part not in _VALID_PARTS:
            raise ValueError(f"bad ablation part {self.part!r}")

    @property
    def enabled(self) -> bool:
        return self.layers != "NONE"

    @property
    def layer_indices(self) -> tuple[int, ...]:
        return {"L1": (0,), "L2": (1,), "L12": (0, 1), "NONE": ()}[self.layers]

    @property
    def name(self) -> str:
        if not self.enabled:
            return "NONE"
        return f"{self.layers}_{self.target}_{self.part}"

    def __str__(self) -> str:
        return self.name

    @classmethod
    def parse(cls, name: str) -> "AblationConfig":
        name = name.strip().upper()
        if name in ("", "NONE"):
            return cls()
        parts = name.split("_")
        if len(parts) != 3:
            raise ValueError(f"cannot parse ablation name {name!r}")
        return cls(layers=parts[0], target=parts[1], part=parts[2])

    @classmethod
    def all_ablations(cls) -> list["AblationConfig"]:
        """The full 12-cell matrix (3 layers x 2 targets x 2 parts)."""
        return [cls(lay, tgt, prt)
                for lay in _VALID_LAYERS
                for tgt in _VALID_TARGETS
                for prt in _VALID_PARTS]


# ---------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------

class Conv2D:
    def __init__(self, weight: np.ndarray, stride):
        self.weight = RealTensor(weight, requires_grad=True)
        self.stride = tuple(stride)

    def forward(self, x: RealTensor, mode: str) -> RealTensor:
        return T.conv2d(x, self.weight, self.stride)

    def params(self):
        return [self.weight]

    def conv_weights(self):
        return [self.weight]

    def state(self, prefix):
        return {f"{prefix}.weight": self.weight.data}


class BatchNorm:
    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float64):
        self.bn = T.BatchNormState(channels, eps=eps, momentum=momentum, dtype=dtype)

    def forward(self, x, mode):
        return T.batchnorm_real(x, self.bn, mode)

    def params(self):
        return [self.bn.gamma, self.bn.beta]

    def conv_weights(self):
        return []

    def state(self, prefix):
        return {f"{prefix}.gamma": self.bn.gamma.data,
                f"{prefix}.beta": self.bn.beta.data,
                f"{prefix}.running_mean": self.bn.running_mean,
                f"{prefix}.running_var": self.bn.running_var}


class ReLU:
    def forward(self, x, mode):
        return T.relu(x)

    def params(self):
        return []

    def conv_weights(self):
        return []

    def state(self, prefix):
        return {}


class AvgPool:
    def __init__(self, window, stride=(1, 1)):
        self.window = tuple(window)
        self.stride = tuple(stride)

    def forward(self, x, mode):
        return T.avgpool2d(x, self.window, self.stride)

    params = ReLU.params
    conv_weights = ReLU.conv_weights
    state = ReLU.state


class CConv2D:
    def __init__(self, A: np.ndarray, B: np.ndarray, stride):
        self.filt = ComplexConvFilter(RealTensor(A, requires_grad=True),
                                      RealTensor(B, requires_grad=True))
        self.stride = tuple(stride)
        self.ablate_output: str | None = None  # "RE" | "IM" | None

    def forward(self, h: ComplexTensor, mode: str) -> ComplexTensor:
        out = C.cconv2d(h, self.filt, self.stride)
        if self.ablate_output == "RE":
            out = ComplexTensor(re=out.re * 0.0, im=out.im)
        elif self.ablate_output == "IM":
            out = ComplexTensor(re=out.re, im=out.im * 0.0)
        return out

    def params(self):
        return [self.filt.A, self.filt.B]

    def conv_weights(self):
        return [self.filt.A, self.filt.B]

    def state(self, prefix):
        return {f"{prefix}.A": self.filt.A.data, f"{prefix}.B": self.filt.B.data}


class CBatchNorm:
    def __init__(self, channels, eps=1e-5, momentum=0.1, whiten=True, dtype=np.float64):
        self.bn = C.ComplexBNState(channels, eps=eps, momentum=momentum,
                                   whiten=whiten, dtype=dtype)

    def forward(self, h, mode):
        return C.cbatchnorm(h, self.bn, mode)

    def params(self):
        return [self.bn.gamma_rr, self.bn.gamma_ii, self.bn.gamma_ri,
                self.bn.beta_r, self.bn.beta_i]

    def conv_weights(self):
        return []

    def state(self, prefix):
        return {f"{prefix}.gamma_rr": self.bn.gamma_rr.data,
                f"{prefix}.gamma_ii": self.bn.gamma_ii.data,
                f"{prefix}.gamma_ri": self.bn.gamma_ri.data,
                f"{prefix}.beta_r": self.bn.beta_r.data,
                f"{prefix}.beta_i": self.bn.beta_i.data,
                f"{prefix}.running_mean_r": self.bn.running_mean_r,
                f"{prefix}.running_mean_i": self.bn.running_mean_i,
                f"{prefix}.running_vrr": self.bn.running_vrr,
                f"{prefix}.running_vii": self.bn.running_vii,
                f"{prefix}.running_vri": self.bn.running_vri}


class CReLU:
    def forward(self, h, mode):
        return C.crelu(h)

    params = ReLU.params
    conv_weights = ReLU.conv_weights
    state = ReLU.state


class CAvgPool:
    def __init__(self, window, stride=(1, 1)):
        self.window = tuple(window)
        self.stride = tuple(stride)

    def forward(self, h, mode):
        return C.cavgpool(h, self.window, self.stride)

    params = ReLU.params
    conv_weights = ReLU.conv_weights
    state = ReLU.state


# ---------------------------------------------------------------------
# model
# ---------------------------------------------------------------------

class Model:
    """Ordered layer list plus the bookkeeping the trainer needs."""

    def __init__(self, kind: str, num_classes: int, seed: int, layers: list,
                 ablation: AblationConfig, dtype):
        self.kind = kind
        self.num_classes = num_classes
        self.seed = seed
        self.layers = layers
        self.ablation = ablation
        self.dtype = np.dtype(dtype)
        self.grad_masks: list[tuple[RealTensor, np.ndarray]] = []

    # -- forward -------------------------------------------------------
    def _prepare(self, batch: np.ndarray):
        batch = np.asarray(batch, dtype=self.dtype)
        if batch.ndim != 3 or batch.shape[1] != 2:
            raise ValueError("batch must be [N, 2, 100] slices")
        if self.kind == "RVNN":
            return RealTensor(np.ascontiguousarray(batch[:, None, :, :]))
        re = np.ascontiguousarray(batch[:, 0][:, None, None, :])
        im = np.ascontiguousarray(batch[:, 1][:, None, None, :])
        return ComplexTensor(RealTensor(re), RealTensor(im))

    def forward(self, batch: np.ndarray, mode: str = "eval") -> RealTensor:
        """Logits [N, K]. CVNN logits are magnitudes, hence >= 0."""
        h = self._prepare(batch)
        for layer in self.layers:
            h = layer.forward(h, mode)
        if self.kind == "CVNN":
            h = C.magnitude(h)
            logits = T.reshape(h, (h.shape[0], self.num_classes))
        else:
            logits = T.reshape(h, (h.data.shape[0], self.num_classes))
        return logits

    def loss(self, batch: np.ndarray, labels: np.ndarray, mode: str = "train") -> T.RealTensor:
        return T.softmax_cross_entropy(self.forward(batch, mode), labels)

    def predict(self, batch: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(batch, "eval").data, axis=1)

    # -- parameters ----------------------------------------------------
    def parameters(self) -> list[RealTensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def conv_weight_tensors(self) -> list[RealTensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.conv_weights())
        return out

    def mask_gradients(self) -> None:
        """Zero the gradients of ablated filter parts (call after backward)."""
        for param, mask in self.grad_masks:
            param.grad *= mask

    # -- checkpointing -------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.state(f"layer{i}"))
        return out

    def save(self, path) -> None:
        np.savez(path,
                 _version=CHECKPOINT_VERSION,
                 _kind=self.kind,
                 _num_classes=self.num_classes,
                 _seed=self.seed,
                 _ablation=self.ablation.name,
                 _dtype=self.dtype.name,
                 **self.state_dict())

    @classmethod
    def load(cls, path) -> "Model":
        with np.load(path, allow_pickle=False) as z:
            if int(z["_version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {z['_version']}")
            kind = str(z["_kind"])
            model = build_model(kind, int(z["_num_classes"]), int(z["_seed"]),
                                dtype=np.dtype(str(z["_dtype"])))
            cfg = AblationConfig.parse(str(z["_ablation"]))
            if cfg.enabled:
                apply_ablation(model, cfg)
            state = model.state_dict()
            for name, arr in state.items():
                arr[...] = z[name]
        return model


# ---------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------

def _kaiming_uniform(rng, shape, dtype):
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _complex_init(rng, shape, dtype):
    """Rayleigh modulus with sigma = 1/sqrt(fan_in), uniform phase."""
    fan_in = int(np.prod(shape[1:]))
    modulus = rng.rayleigh(scale=1.0 / np.sqrt(fan_in), size=shape)
    phase = rng.uniform(-np.pi, np.pi, size=shape)
    return ((modulus * np.cos(phase)).astype(dtype),
            (modulus * np.sin(phase)).astype(dtype))


def build_rvnn(num_classes: int, seed: int, dtype=np.float64,
               arch: ArchConfig | None = None) -> Model:
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    arch = arch or ArchConfig(num_classes=num_classes)
    rng = np.random.default_rng(seed)
    w1 = _kaiming_uniform(rng, (arch.rvnn_width, 1) + arch.filter1, dtype)
    w2 = _kaiming_uniform(rng, (num_classes, arch.rvnn_width) + arch.filter2, dtype)
    layers = [
        Conv2D(w1, arch.stride),
        BatchNorm(arch.rvnn_width, dtype=dtype),
        ReLU(),
        Conv2D(w2, arch.stride),
        BatchNorm(num_classes, dtype=dtype),
        ReLU(),
        AvgPool(arch.rvnn_pool),
    ]
    return Model("RVNN", num_classes, seed, layers, AblationConfig(), dtype)


def build_cvnn(num_classes: int, seed: int, dtype=np.float64,
               arch: ArchConfig | None = None, whiten_bn: bool = True) -> Model:
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    arch = arch or ArchConfig(num_classes=num_classes)
    rng = np.random.default_rng(seed)
    a1, b1 = _complex_init(rng, (arch.cvnn_width, 1) + arch.filter1, dtype)
    a2, b2 = _complex_init(rng, (num_classes, arch.cvnn_width) + arch.filter2, dtype)
    layers = [
        CConv2D(a1, b1, arch.stride),
        CBatchNorm(arch.cvnn_width, whiten=whiten_bn, dtype=dtype),
        CReLU(),
        CConv2D(a2, b2, arch.stride),
        CBatchNorm(num_classes, whiten=whiten_bn, dtype=dtype),
        CReLU(),
        CAvgPool(arch.cvnn_pool),
    ]
    return Model("CVNN", num_classes, seed, layers, AblationConfig(), dtype)


def build_model(kind: str, num_classes: int, seed: int, dtype=np.float64) -> Model:
    kind = kind.upper()
    if kind == "RVNN":
        return build_rvnn(num_classes, seed, dtype)
    if kind == "CVNN":
        return build_cvnn(num_classes, seed, dtype)
    raise ValueError(f"unknown model kind {kind!r}")


def param_count(model: Model) -> int:
    """Headline count: convolutional weights only (BN affine excluded)."""
    return sum(w.size for w in model.conv_weight_tensors())


def bn_param_count(model: Model) -> int:
    conv = set(id(w) for w in model.conv_weight_tensors())
    return sum(p.size for p in model.parameters() if id(p) not in conv)


def apply_ablation(model: Model, cfg: AblationConfig) -> Model:
    """Zero out the configured part of the configured layers, in place."""
    if not cfg.enabled:
        return model
    if model.kind != "CVNN":
        raise ValueError("ablation is defined only for CVNN models")
    cconvs = [l for l in model.layers if isinstance(l, CConv2D)]
    for idx in cfg.layer_indices:
        layer = cconvs[idx]
        if cfg.target == "O":
            layer.ablate_output = cfg.part
        else:
            target = layer.filt.A if cfg.part == "RE" else layer.filt.B
            target.data[...] = 0.0
            model.grad_masks.append((target, np.zeros_like(target.data)))
    model.ablation = cfg
    return model
