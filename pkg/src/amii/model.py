"""The dyadic gesture network and its parameter registry.

Per person, each modality's 100-frame window runs through a linear input
projection, two-head self-attention, a ReLU dense layer, and a gated
recurrent memory cell, giving a [T x 16] modality memory. Two cross-
attentions (speech queries face and vice versa) fuse the memories into the
person's intra-personal code. A second cross-attention pair fuses the two
people into an inter-personal code. A shared two-layer decoder maps the
pooled codes to each person's next facial frame.

Ablation flags rewire the graph: ``use_memory_lstm=False`` makes the memory
cell an identity, ``use_dual_cross_attention=False`` concatenates the two
modality memories directly, ``use_inter_encoder=False`` decodes from the
intra-personal code alone (the decoder input shrinks accordingly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .diffcore import ParamSet, Tape, Tensor
from .errors import ConfigError, DimensionError
from .features import FACE_DIM, SPEECH_DIM, TrainingSample

ATTN_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
MODALITIES = ("speech", "face")
POOLING_MODES = ("last", "mean")


@dataclass(frozen=True)
class AmiiConfig:
    """Architecture hyperparameters plus ablation switches."""

    window: int = 100
    heads: int = 2
    cell: int = 16
    decoder_hidden: int = 20
    speech_dim: int = SPEECH_DIM
    face_dim: int = FACE_DIM
    use_memory_lstm: bool = True
    use_dual_cross_attention: bool = True
    use_inter_encoder: bool = True
    pooling: str = "last"

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.cell % self.heads != 0:
            raise ConfigError(
                f"cell size {self.cell} not divisible by head count {self.heads}")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}")

    def to_dict(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict[str, object]) -> "AmiiConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)  # type: ignore[arg-type]


ABLATIONS = {
    "none": {},
    "no_memory": {"use_memory_lstm": False},
    "no_dual_attention": {"use_dual_cross_attention": False},
    "no_inter_encoder": {"use_inter_encoder": False},
}


def apply_ablation(config: AmiiConfig, name: str) -> AmiiConfig:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    return replace(config, **ABLATIONS[name])


# ---------------------------------------------------------------------------
# parameter registry


def _attn_shapes(prefix: str, c: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for key in ATTN_KEYS:
        shapes[f"{prefix}.{key}"] = (c, c) if key.startswith("w") else (c,)
    return shapes


def param_shapes(config: AmiiConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter the configured wiring uses."""
    c = config.cell
    shapes: dict[str, tuple[int, ...]] = {}
    for mod in MODALITIES:
        d = config.speech_dim if mod == "speech" else config.face_dim
        shapes[f"intra.{mod}.in.W"] = (d, c)
        shapes[f"intra.{mod}.in.b"] = (c,)
        shapes.update(_attn_shapes(f"intra.{mod}.sa", c))
        shapes[f"intra.{mod}.post.W"] = (c, c)
        shapes[f"intra.{mod}.post.b"] = (c,)
        if config.use_memory_lstm:
            shapes[f"intra.{mod}.mem.wx"] = (c, 4 * c)
            shapes[f"intra.{mod}.mem.wh"] = (c, 4 * c)
            shapes[f"intra.{mod}.mem.b"] = (4 * c,)
    if config.use_dual_cross_attention:
        shapes.update(_attn_shapes("dual.ca_speech", c))
        shapes.update(_attn_shapes("dual.ca_face", c))
    shapes["dual.out.W"] = (2 * c, c)
    shapes["dual.out.b"] = (c,)
    if config.use_inter_encoder:
        shapes.update(_attn_shapes("inter.ca_a", c))
        shapes.update(_attn_shapes("inter.ca_u", c))
        shapes["inter.out.W"] = (2 * c, c)
        shapes["inter.out.b"] = (c,)
    dec_in = 2 * c if config.use_inter_encoder else c
    shapes["dec.hidden.W"] = (dec_in, config.decoder_hidden)
    shapes["dec.hidden.b"] = (config.decoder_hidden,)
    shapes["dec.out.W"] = (config.decoder_hidden, config.face_dim)
    shapes["dec.out.b"] = (config.face_dim,)
    return shapes


def param_count(config: AmiiConfig) -> int:
    """Total scalar parameters under the configured wiring."""
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def init_params(config: AmiiConfig, seed: int = 0) -> ParamSet:
    """Glorot-uniform weights, zero biases, forget-gate bias one."""
    rng = np.random.default_rng(seed)
    params = ParamSet()
    c = config.cell
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            data = np.zeros(shape)
            if name.endswith(".mem.b"):
                data[c:2 * c] = 1.0   # forget gate opens at init
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, size=shape)
        params.add(name, data)
    return params


# ---------------------------------------------------------------------------
# layers


def dense(tape: Tape, x: Tensor, params: ParamSet, prefix: str,
          activation: str | None = None) -> Tensor:
    """Per-row affine map: x @ W + b, optionally through ReLU."""
    y = tape.add_rowvec(tape.matmul(x, params[f"{prefix}.W"]), params[f"{prefix}.b"])
    if activation == "relu":
        y = tape.relu(y)
    elif activation is not None:
        raise ConfigError(f"unknown activation {activation!r}")
    return y


def attention(tape: Tape, q_src: Tensor, kv_src: Tensor, params: ParamSet,
              prefix: str, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention, queries from q_src and
    keys/values from kv_src; no temporal mask."""
    c = q_src.data.shape[-1]
    if kv_src.data.shape[-1] != c:
        raise DimensionError(
            f"attention feature dims disagree: {q_src.shape} vs {kv_src.shape}")
    q = tape.add_rowvec(tape.matmul(q_src, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    k = tape.add_rowvec(tape.matmul(kv_src, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    v = tape.add_rowvec(tape.matmul(kv_src, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])
    dh = c // heads
    scale = 1.0 / math.sqrt(dh)
    outs = []
    for h in range(heads):
        qh = tape.slice_cols(q, h * dh, (h + 1) * dh)
        kh = tape.slice_cols(k, h * dh, (h + 1) * dh)
        vh = tape.slice_cols(v, h * dh, (h + 1) * dh)
        weights = tape.softmax_rows(tape.scale(tape.matmul(qh, tape.transpose(kh)), scale))
        outs.append(tape.matmul(weights, vh))
    merged = outs[0]
    for other in outs[1:]:
        merged = tape.concat_feature(merged, other)
    return tape.add_rowvec(tape.matmul(merged, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def self_attention(tape: Tape, x: Tensor, params: ParamSet, prefix: str,
                   heads: int) -> Tensor:
    return attention(tape, x, x, params, prefix, heads)


def memory_cell(tape: Tape, x: Tensor, params: ParamSet, prefix: str) -> Tensor:
    """Gated recurrent memory over [B, T, c]; returns all hidden states.

    Gates follow the standard input/forget/candidate/output layout with
    sigmoid gates and tanh squashing, zero initial state.
    """
    b, t_len, c = x.data.shape
    wx, wh, bias = params[f"{prefix}.wx"], params[f"{prefix}.wh"], params[f"{prefix}.b"]
    h = Tensor(np.zeros((b, c)))
    cell = Tensor(np.zeros((b, c)))
    hs = []
    for t in range(t_len):
        xt = tape.take_time(x, t)
        z = tape.add_rowvec(tape.add(tape.matmul(xt, wx), tape.matmul(h, wh)), bias)
        gate_i = tape.sigmoid(tape.slice_cols(z, 0, c))
        gate_f = tape.sigmoid(tape.slice_cols(z, c, 2 * c))
        cand = tape.tanh(tape.slice_cols(z, 2 * c, 3 * c))
        gate_o = tape.sigmoid(tape.slice_cols(z, 3 * c, 4 * c))
        cell = tape.add(tape.mul(gate_f, cell), tape.mul(gate_i, cand))
        h = tape.mul(gate_o, tape.tanh(cell))
        hs.append(h)
    return tape.stack_time(hs)


def modality_memory_encode(tape: Tape, x: Tensor, params: ParamSet,
                           config: AmiiConfig, mod: str) -> Tensor:
    """dense -> self-attention -> dense -> memory cell, for one modality."""
    h = dense(tape, x, params, f"intra.{mod}.in")
    h = self_attention(tape, h, params, f"intra.{mod}.sa", config.heads)
    h = dense(tape, h, params, f"intra.{mod}.post", activation="relu")
    if config.use_memory_lstm:
        h = memory_cell(tape, h, params, f"intra.{mod}.mem")
    return h


def dual_modality_encode(tape: Tape, z_speech: Tensor, z_face: Tensor,
                         params: ParamSet, config: AmiiConfig) -> Tensor:
    """Fuse one person's two modality memories into the intra-personal code."""
    if config.use_dual_cross_attention:
        left = attention(tape, z_speech, z_face, params, "dual.ca_speech", config.heads)
        right = attention(tape, z_face, z_speech, params, "dual.ca_face", config.heads)
    else:
        left, right = z_speech, z_face
    return dense(tape, tape.concat_feature(left, right), params, "dual.out",
                 activation="relu")


def intra_encode(tape: Tape, speech: Tensor, face: Tensor, params: ParamSet,
                 config: AmiiConfig) -> tuple[Tensor, Tensor, Tensor]:
    zs = modality_memory_encode(tape, speech, params, config, "speech")
    zf = modality_memory_encode(tape, face, params, config, "face")
    return dual_modality_encode(tape, zs, zf, params, config), zs, zf


def inter_encode(tape: Tape, z_a: Tensor, z_u: Tensor, params: ParamSet,
                 config: AmiiConfig) -> Tensor:
    """Fuse the two people's intra-personal codes."""
    left = attention(tape, z_a, z_u, params, "inter.ca_a", config.heads)
    right = attention(tape, z_u, z_a, params, "inter.ca_u", config.heads)
    return dense(tape, tape.concat_feature(left, right), params, "inter.out",
                 activation="relu")


def _pool(tape: Tape, z: Tensor, config: AmiiConfig) -> Tensor:
    if config.pooling == "mean":
        return tape.mean_time(z)
    return tape.take_time(z, z.data.shape[1] - 1)


def generate_faces(tape: Tape, z_intra_a: Tensor, z_intra_u: Tensor,
                   z_inter: Tensor | None, params: ParamSet,
                   config: AmiiConfig) -> tuple[Tensor, Tensor]:
    """Decode the pooled codes into both people's next facial frames with
    one shared decoder."""
    pa = _pool(tape, z_intra_a, config)
    pu = _pool(tape, z_intra_u, config)
    if config.use_inter_encoder:
        if z_inter is None:
            raise DimensionError("inter code required when the inter encoder is on")
        pi = _pool(tape, z_inter, config)
        xa = tape.concat_feature(pa, pi)
        xu = tape.concat_feature(pu, pi)
    else:
        xa, xu = pa, pu

    def decode(xp: Tensor) -> Tensor:
        h = dense(tape, xp, params, "dec.hidden", activation="relu")
        return dense(tape, h, params, "dec.out")

    return decode(xa), decode(xu)


# ---------------------------------------------------------------------------
# full forward pass


@dataclass
class Activations:
    """Intermediate codes kept for inspection and tests."""

    z_speech_mem_a: Tensor
    z_face_mem_a: Tensor
    z_speech_mem_u: Tensor
    z_face_mem_u: Tensor
    z_intra_a: Tensor
    z_intra_u: Tensor
    z_inter: Tensor | None
    y_a: Tensor
    y_u: Tensor


@dataclass
class Batch:
    """Stacked sample windows: four [B, T, d] inputs plus [B, 10] targets."""

    a_speech: np.ndarray
    a_face: np.ndarray
    u_speech: np.ndarray
    u_face: np.ndarray
    y_a: np.ndarray | None = None
    y_u: np.ndarray | None = None

    @classmethod
    def from_samples(cls, samples: list[TrainingSample]) -> "Batch":
        return cls(
            a_speech=np.stack([s.a_speech for s in samples]),
            a_face=np.stack([s.a_face for s in samples]),
            u_speech=np.stack([s.u_speech for s in samples]),
            u_face=np.stack([s.u_face for s in samples]),
            y_a=np.stack([s.y_a for s in samples]),
            y_u=np.stack([s.y_u for s in samples]),
        )

    def __len__(self) -> int:
        return self.a_speech.shape[0]


def forward(tape: Tape, batch: Batch, params: ParamSet,
            config: AmiiConfig) -> Activations:
    """Full composition: shared intra encoder on both people, optional
    inter encoder, shared decoder. Honors all ablation flags."""
    t_len = batch.a_speech.shape[1]
    if t_len != config.window:
        raise DimensionError(
            f"batch window {t_len} does not match configured window {config.window}")
    z_a, zs_a, zf_a = intra_encode(tape, Tensor(batch.a_speech),
                                   Tensor(batch.a_face), params, config)
    z_u, zs_u, zf_u = intra_encode(tape, Tensor(batch.u_speech),
                                   Tensor(batch.u_face), params, config)
    z_inter = None
    if config.use_inter_encoder:
        z_inter = inter_encode(tape, z_a, z_u, params, config)
    y_a, y_u = generate_faces(tape, z_a, z_u, z_inter, params, config)
    return Activations(zs_a, zf_a, zs_u, zf_u, z_a, z_u, z_inter, y_a, y_u)


def forward_sample(sample: TrainingSample, params: ParamSet, config: AmiiConfig,
                   tape: Tape | None = None) -> tuple[np.ndarray, np.ndarray, Activations]:
    """Single-sample convenience wrapper returning plain [10] predictions."""
    if tape is None:
        tape = Tape(grad=False)
    acts = forward(tape, Batch.from_samples([sample]), params, config)
    return acts.y_a.data[0], acts.y_u.data[0], acts
