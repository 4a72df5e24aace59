"""CadeNet: convolution-attention fusion encoder-decoder classifier.

Tensors flowing between blocks are (batch, spatial, temporal, feature).
Convolutions run along the temporal axis per spatial position; attention runs
across spatial positions at each time step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import CheckpointMissing, ConfigInvalid, NonFiniteProbability, ShapeMismatch


@dataclass
class ModelConfig:
    n_channels: int = 4
    clip_len: int = 200
    in_features: int = 7
    widths: tuple = (40, 40, 40)
    factors: tuple = ((2, 4), (2, 5), (1, 1))  # (spatial p, temporal q) per stage
    heads: int = 5
    kernel_size: int = 3
    ds_kernel_size: int = 1
    decoder_blocks: int = 2
    query_len: int = 2
    dropout: float = 0.1
    n_classes: int = 2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.factors = tuple((int(p), int(q)) for p, q in self.factors)

    def stage_shapes(self):
        """(spatial, temporal, width) entering each stage, then after the last."""
        C, L = self.n_channels, self.clip_len
        shapes = []
        for i, (p, q) in enumerate(self.factors):
            shapes.append((C, L, self.widths[i]))
            C, L = C // p, L // q
        shapes.append((C, L, self.widths[-1]))
        return shapes

    def check(self):
        problems = []
        if len(self.widths) != len(self.factors):
            problems.append("one width per stage is required")
        if self.kernel_size % 2 != 1 or self.ds_kernel_size % 2 != 1:
            problems.append("kernel sizes must be odd")
        for w in self.widths:
            if w % self.heads:
                problems.append(f"width {w} is not divisible by {self.heads} heads")
        C, L = self.n_channels, self.clip_len
        for p, q in self.factors:
            if C % p or L % q:
                problems.append(f"downsample ({p}, {q}) does not divide ({C}, {L})")
                break
            C, L = C // p, L // q
        if self.decoder_blocks < 1:
            problems.append("at least one decoder block is required")
        if not 0 <= self.dropout < 1:
            problems.append("dropout must lie in [0, 1)")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigInvalid(f"unknown model config fields: {sorted(unknown)}")
        return cls(**known)


# Reference-size configurations.  The per-stage layout of the original model
# is not known; widths are chosen so the parameter counts land on 5.87 M and
# 11.79 M for 20-channel, 200-sample clips and six classes.
PRESETS = {
    "desk": ModelConfig(),
    "reference": ModelConfig(n_channels=20, clip_len=200, widths=(200, 230, 230),
                         factors=((2, 2), (2, 2), (1, 2)), n_classes=6),
    "large": ModelConfig(n_channels=20, clip_len=200, widths=(290, 315, 330),
                         factors=((2, 2), (2, 2), (1, 2)), n_classes=6),
}


def preset(name: str, **overrides) -> ModelConfig:
    base = asdict(PRESETS[name])
    base.update(overrides)
    return ModelConfig(**base)


# ------------------------------------------------------------------ modules

class Parameter(Tensor):
    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    training = True

    def children(self):
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    yield f"{key}.{i}", m

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + key, val
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def named_buffers(self, prefix=""):
        for key in getattr(self, "_buffers", ()):
            yield prefix + key, getattr(self, key)
        for key, child in self.children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ConvBlk(Module):
    """Temporal convolution, batch norm, exact GELU on channels-last (..., L, D_in) inputs."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, d_in, d_out, k, rng, eps=1e-5, momentum=0.1):
        self.weight = Parameter(_uniform(rng, (d_out, d_in, k), d_in * k))
        self.gamma = Parameter(np.ones(d_out))
        self.beta = Parameter(np.zeros(d_out))
        self.running_mean = np.zeros(d_out)
        self.running_var = np.ones(d_out)
        self.eps, self.momentum = eps, momentum

    def __call__(self, x):
        h = ag.conv1d(x, self.weight)
        h = ag.batch_norm(h, self.gamma, self.beta, self.running_mean, self.running_var,
                          self.training, self.momentum, self.eps)
        return ag.gelu(h)


def attention(q, k, v):
    """Softmax attention over the second-to-last axis; returns (out, weights)."""
    d = q.shape[-1]
    kt = ag.transpose(k, tuple(range(k.data.ndim - 2)) + (k.data.ndim - 1, k.data.ndim - 2))
    weights = ag.softmax(ag.scale(ag.matmul(q, kt), 1.0 / np.sqrt(d)), axis=-1)
    return ag.matmul(weights, v), weights


class _AttentionBase(Module):
    def _heads(self, h, parts):
        # (B, C, L, parts*D) -> (parts, B, L, H, C, D_head)
        B, C, L, _ = h.shape
        h = ag.reshape(h, (B, C, L, parts, self.heads, self.head_dim))
        return ag.transpose(h, (3, 0, 2, 4, 1, 5))

    def _merge(self, att):
        # (B, L, H, C, D_head) -> (B, C, L, D)
        B, L, H, C, _ = att.shape
        return ag.reshape(ag.transpose(att, (0, 3, 1, 2, 4)), (B, C, L, self.width))

    def _finish(self, att, residual):
        out = self.proj(self._merge(att))
        out = ag.dropout(out, self.rate, self.rng, self.training)
        return ag.add(residual, out)


class SelfConvAttention(_AttentionBase):
    """Joint Q/K/V ConvBlk, per-time-step multi-head attention across sensors,
    output ConvBlk, dropout and a residual connection."""

    def __init__(self, width, heads, k, rng, dropout=0.1, **bn):
        if width % heads:
            raise ShapeMismatch(f"width {width} not divisible by {heads} heads")
        self.width, self.heads, self.head_dim = width, heads, width // heads
        self.qkv = ConvBlk(width, 3 * width, k, rng, **bn)
        self.proj = ConvBlk(width, width, k, rng, **bn)
        self.rate, self.rng = dropout, rng
        self.last_weights = None

    def __call__(self, z):
        B, C, L, D = z.shape
        if D != self.width:
            raise ShapeMismatch(f"expected feature width {self.width}, got {D}")
        qkv = self._heads(self.qkv(z), 3)
        q, k, v = (ag.take(qkv, i, 0) for i in range(3))
        att, weights = attention(q, k, v)
        self.last_weights = weights.data
        return self._finish(att, z)


class CrossConvAttention(_AttentionBase):
    """Queries from the query stream, keys/values from the encoder stream."""

    def __init__(self, width, heads, k, rng, dropout=0.1, **bn):
        if width % heads:
            raise ShapeMismatch(f"width {width} not divisible by {heads} heads")
        self.width, self.heads, self.head_dim = width, heads, width // heads
        self.q = ConvBlk(width, width, k, rng, **bn)
        self.kv = ConvBlk(width, 2 * width, k, rng, **bn)
        self.proj = ConvBlk(width, width, k, rng, **bn)
        self.rate, self.rng = dropout, rng
        self.last_weights = None

    def __call__(self, z_cros, z_query):
        B, Cc, L, D = z_cros.shape
        Bq, Cq, Lq, Dq = z_query.shape
        if (B, L, D) != (Bq, Lq, Dq) or D != self.width:
            raise ShapeMismatch(
                f"cross attention needs matching batch/time/width: {z_cros.shape} vs {z_query.shape}"
            )
        q = ag.take(self._heads(self.q(z_query), 1), 0, 0)
        kv = self._heads(self.kv(z_cros), 2)
        att, weights = attention(q, ag.take(kv, 0, 0), ag.take(kv, 1, 0))
        self.last_weights = weights.data
        return self._finish(att, z_query)


class ConvFeedForward(Module):
    """Three ConvBlks, each followed by dropout, inside a residual connection."""

    def __init__(self, width, k, rng, dropout=0.1, **bn):
        self.width = width
        self.blocks = [ConvBlk(width, width, k, rng, **bn) for _ in range(3)]
        self.rate, self.rng = dropout, rng

    def __call__(self, z):
        B, C, L, D = z.shape
        if D != self.width:
            raise ShapeMismatch(f"expected feature width {self.width}, got {D}")
        h = z
        for blk in self.blocks:
            h = ag.dropout(blk(h), self.rate, self.rng, self.training)
        return ag.add(z, h)


def pixel_unshuffle(z, p, q):
    """(B, C, L, D) -> (B, C/p, L/q, D*p*q).

    Element (c, l, d) lands at (c // p, l // q, d*p*q + (c % p)*q + l % q).
    """
    B, C, L, D = z.shape
    if C % p or L % q:
        raise ShapeMismatch(f"({p}, {q}) does not divide spatial/temporal size ({C}, {L})")
    h = ag.reshape(z, (B, C // p, p, L // q, q, D))
    h = ag.transpose(h, (0, 1, 3, 5, 2, 4))
    return ag.reshape(h, (B, C // p, L // q, D * p * q))


class Downsample(Module):
    def __init__(self, d_in, d_out, p, q, k, rng):
        self.p, self.q = p, q
        fan_in = d_in * p * q * k
        self.weight = Parameter(_uniform(rng, (d_out, d_in * p * q, k), fan_in))
        self.bias = Parameter(_uniform(rng, (d_out,), fan_in))

    def __call__(self, z):
        return ag.conv1d(pixel_unshuffle(z, self.p, self.q), self.weight, self.bias)


class Linear(Module):
    def __init__(self, d_in, d_out, rng):
        self.weight = Parameter(_uniform(rng, (d_in, d_out), d_in))
        self.bias = Parameter(_uniform(rng, (d_out,), d_in))

    def __call__(self, x):
        return ag.add(ag.matmul(x, self.weight), self.bias)


def global_pool(z):
    """Concatenated mean and max over the spatial and temporal axes: (B, 2D)."""
    return ag.concat([ag.mean(z, (1, 2)), ag.amax(z, (1, 2))], axis=1)


class CadeNet(Module):
    def __init__(self, config: ModelConfig):
        config.check()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.rng = rng
        bn = dict(eps=config.bn_eps, momentum=config.bn_momentum)
        k, H, rate = config.kernel_size, config.heads, config.dropout
        widths = list(config.widths) + [config.widths[-1]]
        self.embed = ConvBlk(config.in_features, widths[0], k, rng, **bn)
        self.attn = [SelfConvAttention(widths[i], H, k, rng, rate, **bn)
                     for i in range(len(config.factors))]
        self.ff = [ConvFeedForward(widths[i], k, rng, rate, **bn)
                   for i in range(len(config.factors))]
        self.down = [Downsample(widths[i], widths[i + 1], p, q, config.ds_kernel_size, rng)
                     for i, (p, q) in enumerate(config.factors)]
        _, L_out, D = config.stage_shapes()[-1]
        self.query = Parameter(rng.standard_normal((1, config.query_len, L_out, D)) / np.sqrt(D))
        self.cross = [CrossConvAttention(D, H, k, rng, rate, **bn)
                      for _ in range(config.decoder_blocks)]
        self.dec_ff = [ConvFeedForward(D, k, rng, rate, **bn)
                       for _ in range(config.decoder_blocks)]
        self.fc = [Linear(2 * D, config.n_classes, rng) for _ in range(config.decoder_blocks)]
        self.head_weights = Parameter(np.full(config.decoder_blocks, 1.0 / config.decoder_blocks))

    # -- pieces
    def encode(self, x):
        """Stage outputs (after each downsample) for input (B, C, L, F)."""
        x = ag.as_tensor(x)
        B, C, L, F = x.shape
        cfg = self.config
        if (C, L, F) != (cfg.n_channels, cfg.clip_len, cfg.in_features):
            raise ShapeMismatch(
                f"input {x.shape} does not match config ({cfg.n_channels}, {cfg.clip_len}, {cfg.in_features})"
            )
        z = self.embed(x)
        outs = []
        for attn, ff, down in zip(self.attn, self.ff, self.down):
            z = down(ff(attn(z)))
            outs.append(z)
        return outs

    def decode(self, z_enc):
        B = z_enc.shape[0]
        query = ag.broadcast_to(self.query, (B,) + self.query.shape[1:])
        feats = []
        for cross, ff in zip(self.cross, self.dec_ff):
            query = ff(cross(z_enc, query))
            feats.append(query)
        return feats

    def head_logits(self, feats):
        return combine_logits(feats, self.fc, self.head_weights)

    def __call__(self, x):
        """Combined logits (B, n_classes)."""
        return self.head_logits(self.decode(self.encode(x)[-1]))

    def predict_proba(self, x, batch_size=64) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            out = []
            for i in range(0, len(x), batch_size):
                out.append(ag.softmax(self(x[i:i + batch_size])).data)
            return np.concatenate(out)
        finally:
            self.train(was)

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state(self) -> dict:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state(self, state: dict):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for name, arr in state.items():
            if name in params:
                if params[name].data.shape != arr.shape:
                    raise ShapeMismatch(f"{name}: checkpoint shape {arr.shape} != {params[name].shape}")
                params[name].data = np.array(arr, dtype=np.float64)
            elif name in buffers:
                buffers[name][...] = arr
            else:
                raise ShapeMismatch(f"unexpected checkpoint entry {name}")


# ------------------------------------------------------------------ head & loss

def combine_logits(feats, fcs, head_weights):
    """Sum over decoder blocks of w_j * FC_j(pool(Z_j))."""
    if len(feats) != len(fcs):
        raise ShapeMismatch(f"{len(feats)} decoder features for {len(fcs)} head layers")
    shape = feats[0].shape
    total = None
    for j, (z, fc) in enumerate(zip(feats, fcs)):
        if z.shape != shape:
            raise ShapeMismatch(f"decoder features differ in shape: {z.shape} vs {shape}")
        term = ag.mul(fc(global_pool(z)), ag.take(head_weights, j, 0))
        total = term if total is None else ag.add(total, term)
    return total


def classification_head(feats, fcs, head_weights) -> np.ndarray:
    """Class probabilities (B, N) from decoder features."""
    return ag.softmax(combine_logits(feats, fcs, head_weights)).data


def smoothed_targets(y, n_classes, eps=0.1, mode="uniform"):
    """Label-smoothed targets.

    ``mode="uniform"`` mixes in eps/N so rows sum to 1; ``mode="literal"`` adds
    eps/2 to every class regardless of N.
    """
    y = np.asarray(y)
    onehot = np.eye(n_classes)[y] if y.ndim == 1 else y.astype(np.float64)
    extra = eps / n_classes if mode == "uniform" else eps / 2.0
    return (1.0 - eps) * onehot + extra


def loss(P, Y, eps=0.1, mode="uniform") -> float:
    """Label-smoothed cross-entropy of probabilities ``P`` against one-hot ``Y``."""
    P = np.asarray(P, dtype=np.float64)
    if not np.all(np.isfinite(P)) or np.any(P <= 0):
        raise NonFiniteProbability("probabilities must be finite and strictly positive")
    T = smoothed_targets(Y, P.shape[1], eps, mode)
    return float(-(T * np.log(P)).sum() / P.shape[0])


def loss_from_logits(logits: Tensor, y, eps=0.1, mode="uniform") -> Tensor:
    B, N = logits.shape
    T = smoothed_targets(y, N, eps, mode)
    return ag.scale(ag.sum_all(ag.mul(ag.log_softmax(logits), T)), -1.0 / B)


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(model: CadeNet, directory, step: int = 0, extra: dict | None = None):
    """Write ``manifest.json`` and ``weights.bin`` (little-endian float64)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset, chunks = [], 0, []
    params = {n for n, _ in model.named_parameters()}
    for name, arr in model.state().items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f8",
                        "offset": offset, "kind": "param" if name in params else "buffer"})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {"config": asdict(model.config), "step": int(step), "entries": entries}
    if extra:
        manifest["extra"] = extra
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))
    (directory / "weights.bin").write_bytes(b"".join(chunks))


def load_checkpoint(directory) -> tuple[CadeNet, dict]:
    directory = Path(directory)
    if not (directory / "manifest.json").exists():
        raise CheckpointMissing(f"no checkpoint manifest in {directory}")
    manifest = json.loads((directory / "manifest.json").read_text())
    blob = (directory / "weights.bin").read_bytes()
    model = CadeNet(ModelConfig.from_dict(manifest["config"]))
    state = {}
    for e in manifest["entries"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype=e["dtype"], count=n, offset=e["offset"])
        state[e["name"]] = arr.reshape(e["shape"]).copy()
    model.load_state(state)
    return model, manifest
