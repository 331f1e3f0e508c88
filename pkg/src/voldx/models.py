"""The three diagnostic models, built from the layer primitives.

* ``rcnn``     — imaging only: six residual blocks (stride 2 each, subject to
                 the per-axis floor rule), flatten, dense 256 / 64 / 1, sigmoid.
* ``mrcnn``    — the multi-modal variant: the imaging trunk up to its 64-unit
                 penultimate feature, a clinical branch (dense 16 + PReLU), an
                 infusion layer concatenating both (80 -> 1), sigmoid.
* ``clinical`` — tabular baseline: dense 16 / 8 / 1 on the encoded record.

Forward passes are pure functions of (input, parameters); per-call caches make
concurrent forwards against one parameter store safe. ``backward_from_logit``
propagates an arbitrary gradient seeded at the pre-sigmoid logit, which serves
both training (BCE) and Grad-CAM (d prob / d activation).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .clinical import EncodingSchema
from .errors import MissingTrace, ShapeMismatch
from .layers import (
    Dense,
    PReLU,
    ResidualBlock,
    conv_output_size,
    sigmoid,
)

VARIANTS = ("clinical", "rcnn", "mrcnn")

DEFAULT_BLOCK_CHANNELS = (16, 32, 64, 64, 128, 128)
DESK_BLOCK_CHANNELS = (8, 16, 32, 32, 64, 64)

BCE_EPS = 1e-7


@dataclass
class ModelSpec:
    variant: str = "rcnn"
    input_shape: tuple[int, int, int] = (128, 128, 64)
    block_channels: tuple[int, ...] = DEFAULT_BLOCK_CHANNELS
    fc_sizes: tuple[int, int] = (256, 64)
    clinical_branch_width: int = 16
    norm_epsilon: float = 1e-5
    prelu_init: float = 0.25
    schema: EncodingSchema = field(default_factory=EncodingSchema)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant in ("rcnn", "mrcnn") and len(self.block_channels) < 1:
            raise ValueError("need at least one residual block")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["block_channels"] = list(self.block_channels)
        d["fc_sizes"] = list(self.fc_sizes)
        d["schema"] = self.schema.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        d["block_channels"] = tuple(d["block_channels"])
        d["fc_sizes"] = tuple(d["fc_sizes"])
        d["schema"] = EncodingSchema.from_dict(d["schema"])
        return cls(**d)


def trunk_shapes(spec: ModelSpec) -> list[tuple[int, int, int]]:
    """Spatial shape after each residual block (stride 2, per-axis floor)."""
    shape = tuple(spec.input_shape)
    out = []
    for _ in spec.block_channels:
        shape = tuple(conv_output_size(s, 3, 2) for s in shape)
        out.append(shape)
    return out


def flatten_length(spec: ModelSpec) -> int:
    final = trunk_shapes(spec)[-1]
    return spec.block_channels[-1] * int(np.prod(final))


@dataclass
class ForwardTrace:
    """Activations retained during a traced forward pass.

    ``block_outputs[i]`` is the output of residual block i (1-based);
    ``block_grads`` is filled by the next backward pass with the gradient of
    the seeded output quantity w.r.t. those activations.
    """

    probability: np.ndarray | None = None
    block_outputs: dict = field(default_factory=dict)
    block_grads: dict = field(default_factory=dict)


class _Trunk:
    """Residual blocks + flatten + two PReLU dense layers (the shared CT path)."""

    def __init__(self, spec: ModelSpec, rng, dtype):
        self.spec = spec
        cin = 1
        self.blocks = []
        for cout in spec.block_channels:
            self.blocks.append(
                ResidualBlock(cin, cout, (2, 2, 2), spec.norm_epsilon,
                              spec.prelu_init, rng, dtype)
            )
            cin = cout
        flat = flatten_length(spec)
        f1, f2 = spec.fc_sizes
        self.fc1 = Dense(flat, f1, rng, dtype)
        self.act1 = PReLU(f1, spec.prelu_init, dtype)
        self.fc2 = Dense(f1, f2, rng, dtype)
        self.act2 = PReLU(f2, spec.prelu_init, dtype)

    def params(self):
        out = {}
        for i, blk in enumerate(self.blocks, start=1):
            out.update(blk.params(f"block{i}"))
        out.update(self.fc1.params("fc1"))
        out.update(self.act1.params("fc1.act"))
        out.update(self.fc2.params("fc2"))
        out.update(self.act2.params("fc2.act"))
        return out

    def forward(self, volumes, trace: ForwardTrace | None = None):
        if volumes.ndim != 4 or volumes.shape[1:] != tuple(self.spec.input_shape):
            raise ShapeMismatch(
                f"expected volumes [N,{self.spec.input_shape}], got {volumes.shape}"
            )
        x = volumes[:, None]
        caches = []
        for i, blk in enumerate(self.blocks, start=1):
            x, c = blk.forward(x)
            caches.append(c)
            if trace is not None:
                trace.block_outputs[i] = x
        pre_flat_shape = x.shape
        x = x.reshape(x.shape[0], -1)
        x, cf1 = self.fc1.forward(x)
        x, ca1 = self.act1.forward(x)
        x, cf2 = self.fc2.forward(x)
        feat, ca2 = self.act2.forward(x)
        return feat, (caches, pre_flat_shape, cf1, ca1, cf2, ca2)

    def backward(self, dfeat, cache, trace: ForwardTrace | None = None):
        caches, pre_flat_shape, cf1, ca1, cf2, ca2 = cache
        grads = {}
        dy, g = self.act2.backward(dfeat, ca2, "fc2.act")
        grads.update(g)
        dy, g = self.fc2.backward(dy, cf2, "fc2")
        grads.update(g)
        dy, g = self.act1.backward(dy, ca1, "fc1.act")
        grads.update(g)
        dy, g = self.fc1.backward(dy, cf1, "fc1")
        grads.update(g)
        dy = dy.reshape(pre_flat_shape)
        for i in range(len(self.blocks), 0, -1):
            if trace is not None:
                trace.block_grads[i] = dy
            dy, g = self.blocks[i - 1].backward(dy, caches[i - 1], f"block{i}")
            grads.update(g)
        return dy, grads


class Model:
    """A variant model with an ordered, in-place-updatable parameter store."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        feat_len = spec.schema.length
        if spec.variant == "clinical":
            self.fc1 = Dense(feat_len, 16, rng, dtype)
            self.act1 = PReLU(16, spec.prelu_init, dtype)
            self.fc2 = Dense(16, 8, rng, dtype)
            self.act2 = PReLU(8, spec.prelu_init, dtype)
            self.out = Dense(8, 1, rng, dtype)
        elif spec.variant == "rcnn":
            self.trunk = _Trunk(spec, rng, dtype)
            self.out = Dense(spec.fc_sizes[1], 1, rng, dtype)
        elif spec.variant == "mrcnn":
            self.trunk = _Trunk(spec, rng, dtype)
            w = spec.clinical_branch_width
            self.clin_fc = Dense(feat_len, w, rng, dtype)
            self.clin_act = PReLU(w, spec.prelu_init, dtype)
            self.out = Dense(spec.fc_sizes[1] + w, 1, rng, dtype)
        self.params = self._collect_params()

    def _collect_params(self):
        out = {}
        if self.spec.variant == "clinical":
            out.update(self.fc1.params("fc1"))
            out.update(self.act1.params("fc1.act"))
            out.update(self.fc2.params("fc2"))
            out.update(self.act2.params("fc2.act"))
            out.update(self.out.params("out"))
        elif self.spec.variant == "rcnn":
            out.update(self.trunk.params())
            out.update(self.out.params("out"))
        else:
            out.update(self.trunk.params())
            out.update(self.clin_fc.params("clinical.fc"))
            out.update(self.clin_act.params("clinical.act"))
            out.update(self.out.params("infusion"))
        return out

    # ---- forward ----

    def forward(self, volumes=None, clinical=None, want_trace: bool = False):
        """Return (probabilities [N], cache). Inputs depend on the variant."""
        trace = ForwardTrace() if want_trace else None
        v = self.spec.variant
        if v == "clinical":
            x = self._check_clinical(clinical)
            x, c1 = self.fc1.forward(x)
            x, a1 = self.act1.forward(x)
            x, c2 = self.fc2.forward(x)
            x, a2 = self.act2.forward(x)
            z, co = self.out.forward(x)
            cache = ("clinical", (c1, a1, c2, a2, co))
        elif v == "rcnn":
            feat, tc = self.trunk.forward(self._as_dtype(volumes), trace)
            z, co = self.out.forward(feat)
            cache = ("rcnn", (tc, co))
        else:
            feat, tc = self.trunk.forward(self._as_dtype(volumes), trace)
            x = self._check_clinical(clinical)
            cl, cc = self.clin_fc.forward(x)
            cl, ca = self.clin_act.forward(cl)
            fused = np.concatenate([feat, cl], axis=1)
            z, co = self.out.forward(fused)
            cache = ("mrcnn", (tc, cc, ca, feat.shape[1], co))
        p = sigmoid(z[:, 0])
        if trace is not None:
            trace.probability = p
        return p, _Cache(z=z, inner=cache, trace=trace)

    def _as_dtype(self, volumes):
        if volumes is None:
            raise ShapeMismatch(f"variant {self.spec.variant} requires volumes")
        return np.ascontiguousarray(volumes, dtype=self.dtype)

    def _check_clinical(self, clinical):
        if clinical is None:
            raise ShapeMismatch(f"variant {self.spec.variant} requires clinical features")
        x = np.ascontiguousarray(clinical, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.spec.schema.length:
            raise ShapeMismatch(
                f"expected clinical [N,{self.spec.schema.length}], got {x.shape}"
            )
        return x

    # ---- backward ----

    def backward_from_logit(self, dz, cache: "_Cache"):
        """Backpropagate dz (gradient at the pre-sigmoid logit, [N] or [N,1]).

        Returns a gradient dict mirroring ``self.params``. If the forward was
        traced, gradients w.r.t. each block output are stored on the trace.
        """
        dz = np.asarray(dz, dtype=self.dtype)
        if dz.ndim == 1:
            dz = dz[:, None]
        kind, inner = cache.inner
        grads = {}
        if kind == "clinical":
            c1, a1, c2, a2, co = inner
            dy, g = self.out.backward(dz, co, "out")
            grads.update(g)
            dy, g = self.act2.backward(dy, a2, "fc2.act")
            grads.update(g)
            dy, g = self.fc2.backward(dy, c2, "fc2")
            grads.update(g)
            dy, g = self.act1.backward(dy, a1, "fc1.act")
            grads.update(g)
            _, g = self.fc1.backward(dy, c1, "fc1")
            grads.update(g)
        elif kind == "rcnn":
            tc, co = inner
            dfeat, g = self.out.backward(dz, co, "out")
            grads.update(g)
            _, g = self.trunk.backward(dfeat, tc, cache.trace)
            grads.update(g)
        else:
            tc, cc, ca, feat_len, co = inner
            dfused, g = self.out.backward(dz, co, "infusion")
            grads.update(g)
            dfeat = dfused[:, :feat_len]
            dcl = dfused[:, feat_len:]
            dcl, g = self.clin_act.backward(dcl, ca, "clinical.act")
            grads.update(g)
            _, g = self.clin_fc.backward(dcl, cc, "clinical.fc")
            grads.update(g)
            _, g = self.trunk.backward(dfeat, tc, cache.trace)
            grads.update(g)
        return grads


@dataclass
class _Cache:
    z: np.ndarray
    inner: tuple
    trace: ForwardTrace | None


def bce_loss(p, y):
    """Binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def bce_logit_grad(p, y):
    """d(mean clamped BCE)/d logit — (p - y)/N inside the clamp, 0 outside."""
    p64 = np.asarray(p, dtype=np.float64)
    y64 = np.asarray(y, dtype=np.float64)
    inside = (p64 > BCE_EPS) & (p64 < 1.0 - BCE_EPS)
    return inside * (p64 - y64) / p64.shape[0]


def compute_gradients(model: Model, volumes, clinical, labels, want_trace=False):
    """Mean-BCE loss, probabilities, and exact parameter gradients for a batch.

    Returns (loss, probabilities, grads, trace). With ``want_trace`` the trace
    also carries the gradient of the loss w.r.t. every residual block output.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ShapeMismatch("empty batch")
    p, cache = model.forward(volumes=volumes, clinical=clinical, want_trace=want_trace)
    loss = bce_loss(p, labels)
    dz = bce_logit_grad(p, labels)
    grads = model.backward_from_logit(dz, cache)
    return loss, p, grads, cache.trace


def gradcam_block_gradient(model: Model, volumes, clinical, target_block: int):
    """Gradient of the output probability w.r.t. one block's activations.

    Runs a traced forward and a backward seeded with dp/dz = p(1-p). Returns
    (probabilities, activations [N,C,x,y,z], gradients of the same shape).
    """
    if model.spec.variant == "clinical":
        raise MissingTrace("clinical baseline has no volumetric trace")
    p, cache = model.forward(volumes=volumes, clinical=clinical, want_trace=True)
    trace = cache.trace
    if target_block not in trace.block_outputs:
        raise MissingTrace(f"no block {target_block} in trace")
    dz = (p * (1.0 - p)).astype(np.float64)
    model.backward_from_logit(dz, cache)
    return p, trace.block_outputs[target_block], trace.block_grads[target_block]
