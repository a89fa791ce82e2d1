"""Tiny frozen transformer encoder with prefix-tuned attention.

Multi-head self-attention is implemented twice on purpose: a fused matrix
formulation (`msa_forward`, `prefix_msa_forward`) and an expert/gate
formulation (`moe_view_forward`, `prefix_moe_view_forward`) in which each
output position is a mixture over per-token value experts plus, when prompts
are attached, constant prefix experts. The two formulations are algebraically
identical and the verification suite holds them to 1e-10 of each other.

Prompts modify keys and values only; sequence positions and queries are
untouched, so entity positions are stable under prompting.

The training-time forward pass is built on the autodiff tape so gradients
reach prompt parameters through the frozen encoder. Encoder weights are
bit-frozen after initialization (arrays are made read-only) and a checksum
guards against mutation.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidArgumentError
from .numeric import check_finite, softmax, softmax_rows

LN_EPS = 1e-5


@dataclass
class Prompt:
    """A prefix prompt: key rows and value rows of identical (L, dim) shape."""

    p_k: np.ndarray
    p_v: np.ndarray

    def __post_init__(self):
        self.p_k = np.asarray(self.p_k, dtype=np.float64)
        self.p_v = np.asarray(self.p_v, dtype=np.float64)
        if self.p_k.shape != self.p_v.shape or self.p_k.ndim != 2:
            raise InvalidArgumentError(
                f"prompt key/value shapes must match: {self.p_k.shape} vs {self.p_v.shape}"
            )

    @property
    def length(self):
        return self.p_k.shape[0]

    @property
    def dim(self):
        return self.p_k.shape[1]


@dataclass
class EncoderOutput:
    hidden: np.ndarray        # (N, dim) final-layer token states
    query_repr: np.ndarray    # (dim,) pooled unprompted-style representation
    relation_repr: np.ndarray  # (2*dim,) entity-start concatenation


class LayerParams:
    """One transformer block: per-head attention projections plus FFN and
    layer-norm parameters."""

    def __init__(self, dim, n_heads, ffn_hidden, rng):
        if dim % n_heads != 0:
            raise InvalidArgumentError(f"dim {dim} not divisible by {n_heads} heads")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        s = 1.0 / np.sqrt(dim)
        self.w_q = [rng.normal((dim, self.head_dim), s) for _ in range(n_heads)]
        self.w_k = [rng.normal((dim, self.head_dim), s) for _ in range(n_heads)]
        self.w_v = [rng.normal((dim, self.head_dim), s) for _ in range(n_heads)]
        self.w_o = rng.normal((dim, dim), s)
        self.ffn_w1 = rng.normal((dim, ffn_hidden), s)
        self.ffn_b1 = np.zeros(ffn_hidden)
        self.ffn_w2 = rng.normal((ffn_hidden, dim), 1.0 / np.sqrt(ffn_hidden))
        self.ffn_b2 = np.zeros(dim)
        self.ln1_gain = np.ones(dim)
        self.ln1_bias = np.zeros(dim)
        self.ln2_gain = np.ones(dim)
        self.ln2_bias = np.zeros(dim)

    def arrays(self):
        for i in range(self.n_heads):
            yield f"w_q{i}", self.w_q[i]
            yield f"w_k{i}", self.w_k[i]
            yield f"w_v{i}", self.w_v[i]
        yield "w_o", self.w_o
        yield "ffn_w1", self.ffn_w1
        yield "ffn_b1", self.ffn_b1
        yield "ffn_w2", self.ffn_w2
        yield "ffn_b2", self.ffn_b2
        yield "ln1_gain", self.ln1_gain
        yield "ln1_bias", self.ln1_bias
        yield "ln2_gain", self.ln2_gain
        yield "ln2_bias", self.ln2_bias


class EncoderParams:
    """Frozen encoder weights: embeddings plus a stack of LayerParams.

    `query_pooling` selects how the query representation is pooled:
    "sentinel" takes the hidden state of the sequence-start token,
    "mean" averages all token states. `prefix_layers` lists the blocks whose
    attention receives prompt prefixes (default: all of them).
    """

    def __init__(self, vocab_size, dim, n_heads, n_layers, max_len, rng,
                 ffn_hidden=None, query_pooling="sentinel", prefix_layers=None):
        if query_pooling not in ("sentinel", "mean"):
            raise InvalidArgumentError(f"unknown query pooling {query_pooling!r}")
        self.vocab_size = vocab_size
        self.dim = dim
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.max_len = max_len
        self.ffn_hidden = ffn_hidden if ffn_hidden is not None else 4 * dim
        self.query_pooling = query_pooling
        self.prefix_layers = tuple(range(n_layers)) if prefix_layers is None else tuple(prefix_layers)
        self.token_embedding = rng.normal((vocab_size, dim), 1.0)
        self.position_embedding = rng.normal((max_len, dim), 0.5)
        self.layers = [LayerParams(dim, n_heads, self.ffn_hidden, rng) for _ in range(n_layers)]
        self.frozen = False

    def arrays(self):
        yield "token_embedding", self.token_embedding
        yield "position_embedding", self.position_embedding
        for li, layer in enumerate(self.layers):
            for name, arr in layer.arrays():
                yield f"layer{li}.{name}", arr

    def freeze(self):
        for _, arr in self.arrays():
            arr.flags.writeable = False
        self.frozen = True
        return self


def init_encoder(vocab_size, dim, n_heads, n_layers, max_len, rng, freeze=True, **kw):
    params = EncoderParams(vocab_size, dim, n_heads, n_layers, max_len, rng, **kw)
    if freeze:
        params.freeze()
    return params


def params_checksum(params):
    """SHA-256 over every weight array; constant across a run iff frozen."""
    h = hashlib.sha256()
    for name, arr in params.arrays():
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()


def _check_input(x, layer):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.dim:
        raise InvalidArgumentError(f"input shape {x.shape} incompatible with dim {layer.dim}")
    if x.shape[0] < 1:
        raise InvalidArgumentError("empty input sequence")
    check_finite(x, "attention input")
    return x


def _stack_prompts(prompts, dim):
    if not prompts:
        return np.zeros((0, dim)), np.zeros((0, dim))
    for p in prompts:
        if p.dim != dim:
            raise InvalidArgumentError(f"prompt dim {p.dim} != encoder dim {dim}")
    return (
        np.concatenate([p.p_k for p in prompts], axis=0),
        np.concatenate([p.p_v for p in prompts], axis=0),
    )


def msa_forward(x, layer):
    """Fused multi-head self-attention: Concat(head_1..head_m) @ W_O."""
    x = _check_input(x, layer)
    scale = 1.0 / np.sqrt(layer.head_dim)
    heads = []
    for i in range(layer.n_heads):
        q = x @ layer.w_q[i]
        k = x @ layer.w_k[i]
        v = x @ layer.w_v[i]
        attn = softmax_rows((q @ k.T) * scale)
        heads.append(attn @ v)
    out = np.concatenate(heads, axis=1) @ layer.w_o
    return check_finite(out, "attention output")


def prefix_msa_forward(x, layer, prompts):
    """Attention with prompt rows prepended to keys and values only."""
    if not prompts:
        return msa_forward(x, layer)
    x = _check_input(x, layer)
    pk, pv = _stack_prompts(prompts, layer.dim)
    k_in = np.concatenate([pk, x], axis=0)
    v_in = np.concatenate([pv, x], axis=0)
    scale = 1.0 / np.sqrt(layer.head_dim)
    heads = []
    for i in range(layer.n_heads):
        q = x @ layer.w_q[i]
        k = k_in @ layer.w_k[i]
        v = v_in @ layer.w_v[i]
        attn = softmax_rows((q @ k.T) * scale)
        heads.append(attn @ v)
    out = np.concatenate(heads, axis=1) @ layer.w_o
    return check_finite(out, "attention output")


def moe_view_forward(x, layer, _fault=None):
    """Attention recomputed as per-position mixtures of value experts.

    Position i of head l is sum_j gate_ij * expert_j with expert_j the value
    vector of token j and gate scores the bilinear form x_i W_Q W_K^T x_j.
    Must agree with `msa_forward` to 1e-10. `_fault` is a verification-only
    hook that perturbs one value projection entry to prove the equivalence
    check can fail.
    """
    out, _ = prefix_moe_view_forward(x, layer, [], return_gates=True, _fault=_fault)
    return out


def prefix_moe_view_forward(x, layer, prompts, return_gates=False, _fault=None):
    """Prefix-tuned attention in the expert/gate formulation.

    Prompts contribute constant "prefix experts" (projected value rows) whose
    gate scores come from the same bilinear form applied to the prompt key
    rows. Must agree with `prefix_msa_forward` to 1e-10. With
    `return_gates=True` also returns the (n_heads, N, N+L) gate array; each
    gate row is a distribution over the N token experts and L prefix experts.
    """
    x = _check_input(x, layer)
    pk, pv = _stack_prompts(prompts, layer.dim)
    n = x.shape[0]
    n_prefix = pk.shape[0]
    scale = 1.0 / np.sqrt(layer.head_dim)
    gates = np.zeros((layer.n_heads, n, n + n_prefix))
    head_outs = []
    for l in range(layer.n_heads):
        w_v = layer.w_v[l]
        if _fault == "perturb_w_v" and l == 0:
            w_v = w_v.copy()
            w_v[0, 0] += 1e-3
        bilinear = layer.w_q[l] @ layer.w_k[l].T
        token_experts = [w_v.T @ x[j] for j in range(n)]
        prefix_experts = [w_v.T @ pv[j] for j in range(n_prefix)]
        experts = token_experts + prefix_experts
        out_l = np.zeros((n, layer.head_dim))
        for i in range(n):
            scores = np.empty(n + n_prefix)
            for j in range(n):
                scores[j] = (x[i] @ bilinear @ x[j]) * scale
            for j in range(n_prefix):
                scores[n + j] = (x[i] @ bilinear @ pk[j]) * scale
            gate = softmax(scores)
            gates[l, i] = gate
            mix = np.zeros(layer.head_dim)
            for j, expert in enumerate(experts):
                mix += gate[j] * expert
            out_l[i] = mix
        head_outs.append(out_l)
    out = np.concatenate(head_outs, axis=1) @ layer.w_o
    check_finite(out, "attention output")
    if return_gates:
        return out, gates
    return out


def _tape_msa(x_t, layer, prompt_tensors):
    """Attention sublayer on the autodiff tape; mirrors prefix_msa_forward."""
    scale = 1.0 / np.sqrt(layer.head_dim)
    if prompt_tensors:
        pk = ad.concat_rows([pt[0] for pt in prompt_tensors])
        pv = ad.concat_rows([pt[1] for pt in prompt_tensors])
        k_in = ad.concat_rows([pk, x_t])
        v_in = ad.concat_rows([pv, x_t])
    else:
        k_in = x_t
        v_in = x_t
    heads = []
    for i in range(layer.n_heads):
        q = ad.matmul(x_t, ad.constant(layer.w_q[i]))
        k = ad.matmul(k_in, ad.constant(layer.w_k[i]))
        v = ad.matmul(v_in, ad.constant(layer.w_v[i]))
        attn = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)), scale))
        heads.append(ad.matmul(attn, v))
    return ad.matmul(ad.concat_cols(heads), ad.constant(layer.w_o))


def _tape_block(x_t, layer, prompt_tensors):
    attn = _tape_msa(x_t, layer, prompt_tensors)
    h = ad.layer_norm(ad.add(x_t, attn), ad.constant(layer.ln1_gain),
                      ad.constant(layer.ln1_bias), LN_EPS)
    inner = ad.gelu(ad.add_bias(ad.matmul(h, ad.constant(layer.ffn_w1)),
                                ad.constant(layer.ffn_b1)))
    ffn = ad.add_bias(ad.matmul(inner, ad.constant(layer.ffn_w2)),
                      ad.constant(layer.ffn_b2))
    return ad.layer_norm(ad.add(h, ffn), ad.constant(layer.ln2_gain),
                         ad.constant(layer.ln2_bias), LN_EPS)


def _embed(tokens, params):
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InvalidArgumentError("token sequence must be a non-empty 1-d list")
    if ids.size > params.max_len:
        raise InvalidArgumentError(f"sequence length {ids.size} exceeds max_len {params.max_len}")
    if np.any(ids < 0) or np.any(ids >= params.vocab_size):
        raise InvalidArgumentError("token id outside vocabulary")
    return params.token_embedding[ids] + params.position_embedding[: ids.size]


def encoder_graph(tokens, params, prompt_tensors=None):
    """Full forward pass on the tape; returns the final hidden-state tensor.

    `prompt_tensors` is a list of (key_tensor, value_tensor) pairs injected
    into the attention of every block listed in params.prefix_layers. Pass
    tensors with requires_grad for training, or None for a plain forward.
    """
    x_t = ad.constant(_embed(tokens, params))
    for li, layer in enumerate(params.layers):
        inject = prompt_tensors if (prompt_tensors and li in params.prefix_layers) else None
        x_t = _tape_block(x_t, layer, inject)
    return x_t


def _pool_query(hidden, params):
    if params.query_pooling == "mean":
        return np.mean(hidden, axis=0)
    return hidden[0].copy()


def _entity_starts(seq):
    e1, e2 = seq.e1_span, seq.e2_span
    n = len(seq.tokens)
    for span in (e1, e2):
        if not (0 <= span[0] < span[1] <= n):
            raise InvalidArgumentError(f"entity span {span} outside sequence of length {n}")
    return e1[0], e2[0]


def forward_encoder(seq, params, prompts=None):
    """EncoderOutput for a token sequence, prompted or not."""
    prompt_tensors = None
    if prompts:
        prompt_tensors = [(ad.constant(p.p_k), ad.constant(p.p_v)) for p in prompts]
    hidden = encoder_graph(seq.tokens, params, prompt_tensors).value
    check_finite(hidden, "encoder hidden states")
    i1, i2 = _entity_starts(seq)
    return EncoderOutput(
        hidden=hidden,
        query_repr=_pool_query(hidden, params),
        relation_repr=np.concatenate([hidden[i1], hidden[i2]]),
    )


def encode_query(seq, params):
    """Unprompted query representation q(x); ignores any prompts by contract."""
    return forward_encoder(seq, params, prompts=None).query_repr


def encode_prompted(seq, params, selected_prompts):
    """Prompted relation representation z(x): entity-start states concatenated."""
    if not selected_prompts:
        raise InvalidArgumentError("encode_prompted requires at least one prompt")
    return forward_encoder(seq, params, prompts=selected_prompts).relation_repr


def prompted_graph(seq, params, prompt_tensors):
    """Training-time graph: returns the (1, 2*dim) relation representation
    tensor wired to the given prompt key/value leaf tensors."""
    hidden_t = encoder_graph(seq.tokens, params, prompt_tensors)
    i1, i2 = _entity_starts(seq)
    r1 = ad.slice_rows(hidden_t, i1, i1 + 1)
    r2 = ad.slice_rows(hidden_t, i2, i2 + 1)
    return ad.concat_cols([r1, r2])
