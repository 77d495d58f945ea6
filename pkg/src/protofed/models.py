"""Multimodal network: per-modality encoders, attention fusion, projections.

Every modality encoder maps its input to a token of width n.  A multi-head
additive attention fuses the M tokens into e (width heads*n); g1 projects e
and g2 projects each token into the shared d-dimensional space; a small MLP
head classifies e.

Missing modalities are zero-filled at the input and still produce tokens, so
fusion always sees M tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ParamStore, Tape, Tensor, add, concat, constant, conv1d, matmul, maxpool1d,
    mul, relu, sigmoid, slice_, softmax, tanh,
)
from .errors import ConfigError, ShapeError

ENCODER_KINDS = ("mlp", "conv1d_gru", "gru")


@dataclass(frozen=True)
class EncoderSpec:
    """One modality encoder.

    input_dim is the feature width (mlp), channel count (conv1d_gru) or
    per-step feature width (gru).  hidden_dims are mlp hidden widths or conv
    channel widths.  token_dim is the output width n, shared by all encoders.
    """
    name: str
    kind: str
    input_dim: int
    token_dim: int
    hidden_dims: tuple = ()
    dropout: float = 0.0
    kernel: int = 5
    padding: int = 2
    pool: int = 2

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"encoder kind '{self.kind}' not one of {ENCODER_KINDS}")
        if self.kind == "conv1d_gru" and not self.hidden_dims:
            raise ConfigError("conv1d_gru encoder needs at least one conv channel width")


@dataclass(frozen=True)
class FusionSpec:
    """Additive attention over modality tokens; one softmax per head."""
    heads: int = 6
    att_hidden: int = 512


@dataclass(frozen=True)
class NetArchitecture:
    encoders: tuple
    n_classes: int
    fusion: FusionSpec = field(default_factory=FusionSpec)
    proj_dim: int = 64
    classifier_hidden: int = 64
    classifier_dropout: float = 0.0

    def __post_init__(self):
        dims = {e.token_dim for e in self.encoders}
        if len(dims) != 1:
            raise ConfigError(f"all encoders must share token_dim, got {sorted(dims)}")
        if self.fusion.heads < 1:
            raise ConfigError("fusion needs at least one head")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")

    @property
    def n_modalities(self) -> int:
        return len(self.encoders)

    @property
    def token_dim(self) -> int:
        return self.encoders[0].token_dim

    @property
    def fused_dim(self) -> int:
        return self.fusion.heads * self.token_dim


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------

def _param_shapes(arch: NetArchitecture) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    for i, enc in enumerate(arch.encoders):
        p = f"enc{i}"
        if enc.kind == "mlp":
            dims = [enc.input_dim, *enc.hidden_dims, enc.token_dim]
            for j in range(len(dims) - 1):
                shapes[f"{p}.lin{j}.w"] = (dims[j], dims[j + 1])
                shapes[f"{p}.lin{j}.b"] = (dims[j + 1],)
        elif enc.kind == "conv1d_gru":
            ch = [enc.input_dim, *enc.hidden_dims]
            for j in range(len(ch) - 1):
                shapes[f"{p}.conv{j}.w"] = (ch[j + 1], ch[j], enc.kernel)
                shapes[f"{p}.conv{j}.b"] = (ch[j + 1],)
            _gru_shapes(shapes, p, enc.hidden_dims[-1], enc.token_dim)
        else:  # gru
            _gru_shapes(shapes, p, enc.input_dim, enc.token_dim)
    n, H, A, d = arch.token_dim, arch.fusion.heads, arch.fusion.att_hidden, arch.proj_dim
    shapes["fuse.w1"] = (n, A)
    shapes["fuse.b1"] = (A,)
    shapes["fuse.w2"] = (A, H)
    shapes["fuse.b2"] = (H,)
    shapes["proj1.w"] = (arch.fused_dim, d)
    shapes["proj1.b"] = (d,)
    shapes["proj2.w"] = (n, d)
    shapes["proj2.b"] = (d,)
    shapes["cls.lin0.w"] = (arch.fused_dim, arch.classifier_hidden)
    shapes["cls.lin0.b"] = (arch.classifier_hidden,)
    shapes["cls.lin1.w"] = (arch.classifier_hidden, arch.n_classes)
    shapes["cls.lin1.b"] = (arch.n_classes,)
    return shapes


def _gru_shapes(shapes, prefix, input_dim, hidden):
    # gate order along the 3H axis: reset | update | candidate
    shapes[f"{prefix}.gru.w_ih"] = (input_dim, 3 * hidden)
    shapes[f"{prefix}.gru.w_hh"] = (hidden, 3 * hidden)
    shapes[f"{prefix}.gru.b_ih"] = (3 * hidden,)
    shapes[f"{prefix}.gru.b_hh"] = (3 * hidden,)


def _fan(name: str, shape: tuple) -> tuple[int, int]:
    if len(shape) == 3:          # conv (O, C, K)
        o, c, k = shape
        return c * k, o * k
    return shape[0], shape[1]    # linear / gru weight (in, out)


def init_params(arch: NetArchitecture, rng: np.random.Generator) -> ParamStore:
    """Glorot-uniform weights, zero biases.  Draw order is sorted-name order,
    so identical (arch, seed) gives identical parameters everywhere."""
    arrays = {}
    for name, shape in sorted(_param_shapes(arch).items()):
        if len(shape) == 1:  # every 1-D parameter is a bias
            arrays[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fan(name, shape)
            a = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-a, a, size=shape)
    return ParamStore(arrays)


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _linear(p, prefix, x):
    return add(matmul(x, p[f"{prefix}.w"]), p[f"{prefix}.b"])


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    """Inverted dropout.  Inactive (identity) unless a generator is supplied."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return mul(x, constant(keep))


def _gru_run(p, prefix, steps, hidden, batch):
    """Single-layer GRU over a list of (B, D) step tensors; returns last h."""
    w_ih, w_hh = p[f"{prefix}.gru.w_ih"], p[f"{prefix}.gru.w_hh"]
    b_ih, b_hh = p[f"{prefix}.gru.b_ih"], p[f"{prefix}.gru.b_hh"]
    H = hidden
    h = constant(np.zeros((batch, H)))
    for x_t in steps:
        gx = add(matmul(x_t, w_ih), b_ih)
        gh = add(matmul(h, w_hh), b_hh)
        r = sigmoid(add(slice_(gx, 1, 0, H), slice_(gh, 1, 0, H)))
        z = sigmoid(add(slice_(gx, 1, H, 2 * H), slice_(gh, 1, H, 2 * H)))
        n = tanh(add(slice_(gx, 1, 2 * H, 3 * H), mul(r, slice_(gh, 1, 2 * H, 3 * H))))
        # h <- (1 - z) * n + z * h
        h = add(add(n, mul(z, n) * -1.0), mul(z, h))
    return h


def encode(arch: NetArchitecture, p: dict[str, Tensor], x: np.ndarray, index: int,
           dropout_rng=None) -> Tensor:
    """Run modality encoder `index` on a raw input batch; returns (B, n) token."""
    enc = arch.encoders[index]
    prefix = f"enc{index}"
    if enc.kind == "mlp":
        if x.ndim != 2 or x.shape[1] != enc.input_dim:
            raise ShapeError(f"encoder '{enc.name}' expects (B, {enc.input_dim}), got {x.shape}")
        h = constant(x)
        n_layers = len(enc.hidden_dims) + 1
        for j in range(n_layers):
            h = _linear(p, f"{prefix}.lin{j}", h)
            if j < n_layers - 1:
                h = _dropout(relu(h), enc.dropout, dropout_rng)
        return h
    if enc.kind == "conv1d_gru":
        if x.ndim != 3 or x.shape[1] != enc.input_dim:
            raise ShapeError(f"encoder '{enc.name}' expects (B, {enc.input_dim}, L), got {x.shape}")
        h = constant(x)
        for j in range(len(enc.hidden_dims)):
            h = conv1d(h, p[f"{prefix}.conv{j}.w"], p[f"{prefix}.conv{j}.b"],
                       stride=1, padding=enc.padding)
        h = _dropout(maxpool1d(relu(h), kernel=enc.pool, stride=enc.pool),
                     enc.dropout, dropout_rng)
        steps = [slice_(h, 2, t) for t in range(h.data.shape[2])]
        return _gru_run(p, prefix, steps, enc.token_dim, x.shape[0])
    # gru over raw (B, L, D) input; the data is constant so steps are numpy slices
    if x.ndim != 3 or x.shape[2] != enc.input_dim:
        raise ShapeError(f"encoder '{enc.name}' expects (B, L, {enc.input_dim}), got {x.shape}")
    steps = [constant(x[:, t, :]) for t in range(x.shape[1])]
    h = _gru_run(p, prefix, steps, enc.token_dim, x.shape[0])
    return _dropout(h, enc.dropout, dropout_rng)


def fuse(arch: NetArchitecture, p: dict[str, Tensor], tokens: list[Tensor]) -> Tensor:
    """Multi-head additive attention over modality tokens -> (B, heads*n).

    Head h scores token j as w2_h . tanh(W1 z_j + b1) + b2_h, softmaxes the
    scores over j, and outputs the weighted token sum; e concatenates heads.
    """
    if len(tokens) != arch.n_modalities:
        raise ShapeError(f"fuse expects {arch.n_modalities} tokens, got {len(tokens)}")
    H = arch.fusion.heads
    scores = []
    for z in tokens:
        a = tanh(add(matmul(z, p["fuse.w1"]), p["fuse.b1"]))
        scores.append(add(matmul(a, p["fuse.w2"]), p["fuse.b2"]))  # (B, H)
    heads = []
    for h in range(H):
        col = concat([slice_(s, 1, h, h + 1) for s in scores], axis=1)  # (B, M)
        w = softmax(col, axis=1)
        out = None
        for j, z in enumerate(tokens):
            term = mul(slice_(w, 1, j, j + 1), z)  # (B,1)*(B,n)
            out = term if out is None else add(out, term)
        heads.append(out)
    return concat(heads, axis=1)


def project_shared(p: dict[str, Tensor], e: Tensor) -> Tensor:
    """g1: fused representation -> r in the shared d-space."""
    return _linear(p, "proj1", e)


def project_specific(p: dict[str, Tensor], z: Tensor) -> Tensor:
    """g2: one modality token -> z' in the shared d-space."""
    return _linear(p, "proj2", z)


def classify(arch: NetArchitecture, p: dict[str, Tensor], e: Tensor,
             dropout_rng=None) -> Tensor:
    h = _dropout(relu(_linear(p, "cls.lin0", e)), arch.classifier_dropout, dropout_rng)
    return _linear(p, "cls.lin1", h)


class MultimodalNet:
    """Architecture plus its parameters."""

    def __init__(self, arch: NetArchitecture, params: ParamStore):
        self.arch = arch
        self.params = params

    @classmethod
    def build(cls, arch: NetArchitecture, rng: np.random.Generator) -> "MultimodalNet":
        return cls(arch, init_params(arch, rng))

    def forward_full(self, features: list[np.ndarray], tape: Tape | None = None,
                     dropout_rng=None) -> dict:
        """Full pass over one batch.

        features holds one raw array per modality (missing ones zero-filled
        upstream).  With a tape, parameters are registered as tracked leaves;
        without one everything stays constant (eval mode).

        Returns {"tokens", "zprime", "e", "r", "logits", "params"}, the last
        being the name-to-leaf map so callers can pull gradients by name.
        """
        if len(features) != self.arch.n_modalities:
            raise ShapeError(f"expected {self.arch.n_modalities} modality arrays, "
                             f"got {len(features)}")
        if tape is not None:
            p = self.params.tracked(tape)
        else:
            p = {name: constant(a) for name, a in self.params.items()}
        tokens = [encode(self.arch, p, x, i, dropout_rng)
                  for i, x in enumerate(features)]
        zprime = [project_specific(p, z) for z in tokens]
        e = fuse(self.arch, p, tokens)
        r = project_shared(p, e)
        logits = classify(self.arch, p, e, dropout_rng)
        return {"tokens": tokens, "zprime": zprime, "e": e, "r": r,
                "logits": logits, "params": p}


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def preset(name: str, input_dims: list[int] | None = None, n_classes: int | None = None,
           proj_dim: int = 64) -> NetArchitecture:
    """Named architectures.

    "synthetic" takes per-modality feature widths via input_dims and a class
    count; the other three are fixed-shape and ignore input_dims.
    """
    if name == "ucihar":
        conv = dict(kind="conv1d_gru", input_dim=3, hidden_dims=(32, 64, 128),
                    token_dim=128, dropout=0.1)
        return NetArchitecture(
            encoders=(EncoderSpec(name="accelerometer", **conv),
                      EncoderSpec(name="gyroscope", **conv)),
            n_classes=6, proj_dim=proj_dim, classifier_dropout=0.1)
    if name == "hatefulmemes":
        return NetArchitecture(
            encoders=(EncoderSpec(name="image", kind="mlp", input_dim=1280,
                                  hidden_dims=(128,), token_dim=128, dropout=0.1),
                      EncoderSpec(name="text", kind="gru", input_dim=512, token_dim=128)),
            n_classes=2, proj_dim=proj_dim, classifier_dropout=0.1)
    if name == "meld":
        return NetArchitecture(
            encoders=(EncoderSpec(name="audio", kind="conv1d_gru", input_dim=80,
                                  hidden_dims=(32, 64, 128), token_dim=128, dropout=0.3),
                      EncoderSpec(name="text", kind="gru", input_dim=512,
                                  token_dim=128, dropout=0.3),
                      EncoderSpec(name="video", kind="gru", input_dim=1280,
                                  token_dim=128, dropout=0.3)),
            n_classes=4, proj_dim=proj_dim, classifier_dropout=0.3)
    if name == "synthetic":
        if not input_dims or n_classes is None:
            raise ConfigError("synthetic preset needs input_dims and n_classes")
        encoders = tuple(
            EncoderSpec(name=f"m{i}", kind="mlp", input_dim=dim,
                        hidden_dims=(128,), token_dim=64)
            for i, dim in enumerate(input_dims))
        return NetArchitecture(encoders=encoders, n_classes=n_classes,
                               fusion=FusionSpec(heads=6, att_hidden=128),
                               proj_dim=proj_dim)
    raise ConfigError(f"unknown preset '{name}'; valid: meld, hatefulmemes, synthetic, ucihar")


PRESET_NAMES = ("ucihar", "hatefulmemes", "meld", "synthetic")
