"""A numpy encoder-decoder for long inputs, with hand-written backprop.

Architecture: pre-norm residual blocks with RMS normalization, tied
input/output embeddings, relative-position bias tables shared across layers
(separate tables for encoder token-token, encoder token-to-global, and
decoder causal attention), GELU feed-forward, no biases on projections.
The encoder self-attention is banded-plus-global; the decoder uses full
causal self-attention and unbiased cross attention.

Everything runs unbatched in float64 by default so finite-difference
gradient checks are meaningful; the trainer loops examples and averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

from longspan.attention import (
    AttentionConfig,
    attend,
    local_attention_mask,
    relpos_bucket,
)
from longspan.vocab import PAD_ID

Params = dict[str, np.ndarray]

_NORM_EPS = 1e-6
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 362
    d_model: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 4
    head_dim: int = 16
    d_ff: int = 128
    attention: AttentionConfig = AttentionConfig()

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d_model", "n_enc_layers", "n_dec_layers",
                     "n_heads", "head_dim", "d_ff"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_heads * self.head_dim != self.d_model:
            raise ValueError(
                f"n_heads * head_dim must equal d_model "
                f"({self.n_heads} * {self.head_dim} != {self.d_model})"
            )


def preset(name: str, vocab_size: int = 362, attention: AttentionConfig | None = None) -> ModelConfig:
    """Named configurations. Only ``tiny`` is meant to be trained here;
    the larger ones exist for shape math."""
    table = {
        "tiny": dict(d_model=64, n_enc_layers=2, n_dec_layers=2, n_heads=4, head_dim=16, d_ff=128),
        "base": dict(d_model=768, n_enc_layers=12, n_dec_layers=12, n_heads=12, head_dim=64, d_ff=2048),
        "large": dict(d_model=1024, n_enc_layers=24, n_dec_layers=24, n_heads=16, head_dim=64, d_ff=2816),
        "xl": dict(d_model=2048, n_enc_layers=24, n_dec_layers=24, n_heads=32, head_dim=64, d_ff=5120),
    }
    if name not in table:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(table)}")
    return ModelConfig(
        vocab_size=vocab_size,
        attention=attention if attention is not None else AttentionConfig(),
        **table[name],
    )


def _layer_param_specs(config: ModelConfig):
    """Yield (name, shape, init_std) in creation order; std None means ones."""
    d, ff = config.d_model, config.d_ff
    hd = config.n_heads * config.head_dim
    proj = d ** -0.5
    yield "embed", (config.vocab_size, d), proj
    for i in range(config.n_enc_layers):
        pre = f"enc{i}"
        yield f"{pre}.attn_norm", (d,), None
        yield f"{pre}.global_norm", (d,), None
        yield f"{pre}.wq", (d, hd), proj
        yield f"{pre}.wk", (d, hd), proj
        yield f"{pre}.wv", (d, hd), proj
        yield f"{pre}.wo", (hd, d), hd ** -0.5
        yield f"{pre}.ffn_norm", (d,), None
        yield f"{pre}.ffn_wi", (d, ff), proj
        yield f"{pre}.ffn_wo", (ff, d), ff ** -0.5
    yield "enc_final_norm", (d,), None
    buckets = config.attention.relpos_buckets
    yield "enc_relbias", (buckets, config.n_heads), 0.0
    yield "enc_gbias", (buckets, config.n_heads), 0.0
    for i in range(config.n_dec_layers):
        pre = f"dec{i}"
        yield f"{pre}.self_norm", (d,), None
        yield f"{pre}.self_wq", (d, hd), proj
        yield f"{pre}.self_wk", (d, hd), proj
        yield f"{pre}.self_wv", (d, hd), proj
        yield f"{pre}.self_wo", (hd, d), hd ** -0.5
        yield f"{pre}.cross_norm", (d,), None
        yield f"{pre}.cross_wq", (d, hd), proj
        yield f"{pre}.cross_wk", (d, hd), proj
        yield f"{pre}.cross_wv", (d, hd), proj
        yield f"{pre}.cross_wo", (hd, d), hd ** -0.5
        yield f"{pre}.ffn_norm", (d,), None
        yield f"{pre}.ffn_wi", (d, ff), proj
        yield f"{pre}.ffn_wo", (ff, d), ff ** -0.5
    yield "dec_final_norm", (d,), None
    yield "dec_relbias", (buckets, config.n_heads), 0.0


def init_params(config: ModelConfig, seed: int = 0) -> Params:
    """Seeded init: projections scaled by 1/sqrt(fan_in), norm gains at 1,
    relative-position bias tables at 0."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape, std in _layer_param_specs(config):
        if std is None:
            params[name] = np.ones(shape)
        elif std == 0.0:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, std, shape)
    return params


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {name: shape for name, shape, _ in _layer_param_specs(config)}


def validate_params(params: Params, config: ModelConfig) -> None:
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"parameter names mismatch: missing {missing[:3]}, extra {extra[:3]}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")


def _zero_grads(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _rmsnorm(x: np.ndarray, gain: np.ndarray):
    sigma = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + _NORM_EPS)
    xhat = x / sigma
    return gain * xhat, (xhat, sigma)


def _rmsnorm_bwd(dy: np.ndarray, gain: np.ndarray, cache):
    xhat, sigma = cache
    dgain = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    dot = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = (dxhat - xhat * dot) / sigma
    return dx, dgain


def _gelu(u: np.ndarray):
    cdf = 0.5 * (1.0 + erf(u * _INV_SQRT2))
    return u * cdf, cdf


def _gelu_bwd(da: np.ndarray, u: np.ndarray, cdf: np.ndarray) -> np.ndarray:
    pdf = np.exp(-0.5 * u * u) * _INV_SQRT2PI
    return da * (cdf + u * pdf)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, hd = x.shape
    return x.reshape(n, n_heads, hd // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _attend_bwd(dctx, q, k, v, probs):
    """Gradient of attend(); returns (dq, dk, dv, dscores)."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    dv = probs.swapaxes(-1, -2) @ dctx
    dp = dctx @ v.swapaxes(-1, -2)
    ds = probs * (dp - np.sum(dp * probs, axis=-1, keepdims=True))
    dq = ds @ k * scale
    dk = ds.swapaxes(-1, -2) @ q * scale
    return dq, dk, dv, ds


def _gather_bias(table: np.ndarray, buckets: np.ndarray) -> np.ndarray:
    # table [buckets, H], buckets [n, m] -> bias [H, n, m]
    return np.moveaxis(table[buckets], -1, 0)


def _scatter_bias(dtable: np.ndarray, buckets: np.ndarray, dbias: np.ndarray) -> None:
    flat = buckets.ravel()
    for h in range(dbias.shape[0]):
        np.add.at(dtable[:, h], flat, dbias[h].ravel())


def _check_ids(ids: np.ndarray, config: ModelConfig, what: str) -> None:
    if ids.size == 0:
        raise ValueError(f"empty {what}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ValueError(f"{what} ids out of range [0, {config.vocab_size})")


def _enc_prep(params: Params, config: ModelConfig, inputs: np.ndarray) -> dict:
    att = config.attention
    n = len(inputs)
    pos = np.arange(n)
    rel = pos[None, :] - pos[:, None]
    tok_buckets = relpos_bucket(
        rel, bidirectional=True,
        num_buckets=att.relpos_buckets, max_distance=att.relpos_max_distance,
    )
    padmask = inputs != PAD_ID
    band = local_attention_mask(n, att.local_radius)
    mask_tok = band & padmask[None, :]
    blocks = pos // att.block_size
    g = math.ceil(n / att.block_size)
    grel = np.arange(g)[None, :] - blocks[:, None]
    g_buckets = relpos_bucket(
        grel, bidirectional=True,
        num_buckets=att.relpos_buckets, max_distance=att.relpos_max_distance,
    )
    block_real = np.zeros(g, dtype=bool)
    block_real[blocks[padmask]] = True
    if att.disable_global:
        mask_glob = np.zeros((n, g), dtype=bool)
    else:
        mask_glob = np.repeat(block_real[None, :], n, axis=0)
    bias = np.concatenate(
        [_gather_bias(params["enc_relbias"], tok_buckets),
         _gather_bias(params["enc_gbias"], g_buckets)],
        axis=-1,
    )
    mask = np.concatenate([mask_tok, mask_glob], axis=-1)
    return dict(
        n=n, g=g, padmask=padmask, blocks=blocks,
        tok_buckets=tok_buckets, g_buckets=g_buckets,
        bias=bias, mask=mask,
    )


def _block_sum(x: np.ndarray, blocks: np.ndarray, g: int) -> np.ndarray:
    out = np.zeros((g, x.shape[-1]), dtype=x.dtype)
    np.add.at(out, blocks, x)
    return out


def _enc_layer_fwd(params: Params, pre: str, x: np.ndarray, prep: dict, config: ModelConfig):
    h, norm_c = _rmsnorm(x, params[f"{pre}.attn_norm"])
    hm = h * prep["padmask"][:, None]
    g_raw = _block_sum(hm, prep["blocks"], prep["g"])
    gn, gnorm_c = _rmsnorm(g_raw, params[f"{pre}.global_norm"])
    nh = config.n_heads
    q = _split_heads(h @ params[f"{pre}.wq"], nh)
    kt = _split_heads(h @ params[f"{pre}.wk"], nh)
    vt = _split_heads(h @ params[f"{pre}.wv"], nh)
    gk = _split_heads(gn @ params[f"{pre}.wk"], nh)
    gv = _split_heads(gn @ params[f"{pre}.wv"], nh)
    k_all = np.concatenate([kt, gk], axis=1)
    v_all = np.concatenate([vt, gv], axis=1)
    ctx, probs = attend(q, k_all, v_all, bias=prep["bias"], mask=prep["mask"], return_probs=True)
    merged = _merge_heads(ctx)
    x1 = x + merged @ params[f"{pre}.wo"]
    h2, fnorm_c = _rmsnorm(x1, params[f"{pre}.ffn_norm"])
    u = h2 @ params[f"{pre}.ffn_wi"]
    a, cdf = _gelu(u)
    x2 = x1 + a @ params[f"{pre}.ffn_wo"]
    cache = dict(
        x=x, h=h, norm_c=norm_c, gn=gn, gnorm_c=gnorm_c,
        q=q, k_all=k_all, v_all=v_all, probs=probs, merged=merged,
        x1=x1, h2=h2, fnorm_c=fnorm_c, u=u, cdf=cdf, a=a,
    )
    return x2, cache


def _enc_layer_bwd(params: Params, grads: Params, pre: str, dx2: np.ndarray,
                   cache: dict, prep: dict, config: ModelConfig, dbias_acc: np.ndarray):
    n, nh = prep["n"], config.n_heads
    # feed-forward
    grads[f"{pre}.ffn_wo"] += cache["a"].T @ dx2
    da = dx2 @ params[f"{pre}.ffn_wo"].T
    du = _gelu_bwd(da, cache["u"], cache["cdf"])
    grads[f"{pre}.ffn_wi"] += cache["h2"].T @ du
    dh2 = du @ params[f"{pre}.ffn_wi"].T
    dx1_norm, dgain = _rmsnorm_bwd(dh2, params[f"{pre}.ffn_norm"], cache["fnorm_c"])
    grads[f"{pre}.ffn_norm"] += dgain
    dx1 = dx2 + dx1_norm
    # attention output projection
    grads[f"{pre}.wo"] += cache["merged"].T @ dx1
    dctx = _split_heads(dx1 @ params[f"{pre}.wo"].T, nh)
    dq, dk_all, dv_all, ds = _attend_bwd(
        dctx, cache["q"], cache["k_all"], cache["v_all"], cache["probs"]
    )
    dbias_acc += ds
    dkt, dgk = dk_all[:, :n], dk_all[:, n:]
    dvt, dgv = dv_all[:, :n], dv_all[:, n:]
    h, gn = cache["h"], cache["gn"]
    mq, mkt, mvt = _merge_heads(dq), _merge_heads(dkt), _merge_heads(dvt)
    mgk, mgv = _merge_heads(dgk), _merge_heads(dgv)
    grads[f"{pre}.wq"] += h.T @ mq
    grads[f"{pre}.wk"] += h.T @ mkt + gn.T @ mgk
    grads[f"{pre}.wv"] += h.T @ mvt + gn.T @ mgv
    dh = mq @ params[f"{pre}.wq"].T + mkt @ params[f"{pre}.wk"].T + mvt @ params[f"{pre}.wv"].T
    dgn = mgk @ params[f"{pre}.wk"].T + mgv @ params[f"{pre}.wv"].T
    dg_raw, dgain_g = _rmsnorm_bwd(dgn, params[f"{pre}.global_norm"], cache["gnorm_c"])
    grads[f"{pre}.global_norm"] += dgain_g
    # block-sum backward: each position inherits its block's gradient row
    dh += dg_raw[prep["blocks"]] * prep["padmask"][:, None]
    dx_norm, dgain_a = _rmsnorm_bwd(dh, params[f"{pre}.attn_norm"], cache["norm_c"])
    grads[f"{pre}.attn_norm"] += dgain_a
    return dx1 + dx_norm


def _encode(params: Params, config: ModelConfig, inputs: np.ndarray, want_cache: bool = False):
    prep = _enc_prep(params, config, inputs)
    x = params["embed"][inputs]
    layer_caches = []
    for i in range(config.n_enc_layers):
        x, cache = _enc_layer_fwd(params, f"enc{i}", x, prep, config)
        if want_cache:
            layer_caches.append(cache)
    enc_out, final_c = _rmsnorm(x, params["enc_final_norm"])
    if not want_cache:
        return enc_out, prep["padmask"], None
    return enc_out, prep["padmask"], dict(prep=prep, layers=layer_caches, final_c=final_c)


def _encode_bwd(params: Params, grads: Params, config: ModelConfig,
                inputs: np.ndarray, d_enc_out: np.ndarray, cache: dict) -> None:
    prep = cache["prep"]
    dx, dgain = _rmsnorm_bwd(d_enc_out, params["enc_final_norm"], cache["final_c"])
    grads["enc_final_norm"] += dgain
    n = prep["n"]
    dbias_acc = np.zeros((config.n_heads, n, n + prep["g"]))
    for i in reversed(range(config.n_enc_layers)):
        dx = _enc_layer_bwd(params, grads, f"enc{i}", dx, cache["layers"][i], prep, config, dbias_acc)
    _scatter_bias(grads["enc_relbias"], prep["tok_buckets"], dbias_acc[:, :, :n])
    _scatter_bias(grads["enc_gbias"], prep["g_buckets"], dbias_acc[:, :, n:])
    np.add.at(grads["embed"], inputs, dx)


def _dec_prep(params: Params, config: ModelConfig, m: int, enc_padmask: np.ndarray) -> dict:
    att = config.attention
    pos = np.arange(m)
    drel = pos[:, None] - pos[None, :]
    buckets = relpos_bucket(
        drel, bidirectional=False,
        num_buckets=att.relpos_buckets, max_distance=att.relpos_max_distance,
    )
    return dict(
        m=m,
        buckets=buckets,
        bias=_gather_bias(params["dec_relbias"], buckets),
        causal=drel >= 0,
        cross_mask=np.repeat(enc_padmask[None, :], m, axis=0),
    )


def _dec_layer_fwd(params: Params, pre: str, y: np.ndarray, enc_out: np.ndarray,
                   prep: dict, config: ModelConfig):
    nh = config.n_heads
    h, norm_c = _rmsnorm(y, params[f"{pre}.self_norm"])
    q = _split_heads(h @ params[f"{pre}.self_wq"], nh)
    k = _split_heads(h @ params[f"{pre}.self_wk"], nh)
    v = _split_heads(h @ params[f"{pre}.self_wv"], nh)
    ctx, probs = attend(q, k, v, bias=prep["bias"], mask=prep["causal"], return_probs=True)
    merged = _merge_heads(ctx)
    y1 = y + merged @ params[f"{pre}.self_wo"]
    h2, cross_norm_c = _rmsnorm(y1, params[f"{pre}.cross_norm"])
    qc = _split_heads(h2 @ params[f"{pre}.cross_wq"], nh)
    kc = _split_heads(enc_out @ params[f"{pre}.cross_wk"], nh)
    vc = _split_heads(enc_out @ params[f"{pre}.cross_wv"], nh)
    ctx2, probs2 = attend(qc, kc, vc, mask=prep["cross_mask"], return_probs=True)
    merged2 = _merge_heads(ctx2)
    y2 = y1 + merged2 @ params[f"{pre}.cross_wo"]
    h3, fnorm_c = _rmsnorm(y2, params[f"{pre}.ffn_norm"])
    u = h3 @ params[f"{pre}.ffn_wi"]
    a, cdf = _gelu(u)
    y3 = y2 + a @ params[f"{pre}.ffn_wo"]
    cache = dict(
        y=y, h=h, norm_c=norm_c, q=q, k=k, v=v, probs=probs, merged=merged,
        y1=y1, h2=h2, cross_norm_c=cross_norm_c, qc=qc, kc=kc, vc=vc,
        probs2=probs2, merged2=merged2, y2=y2, h3=h3, fnorm_c=fnorm_c,
        u=u, cdf=cdf, a=a,
    )
    return y3, cache


def _dec_layer_bwd(params: Params, grads: Params, pre: str, dy3: np.ndarray,
                   cache: dict, config: ModelConfig, dbias_acc: np.ndarray):
    """Returns (dy, d_enc_out contribution)."""
    nh = config.n_heads
    grads[f"{pre}.ffn_wo"] += cache["a"].T @ dy3
    da = dy3 @ params[f"{pre}.ffn_wo"].T
    du = _gelu_bwd(da, cache["u"], cache["cdf"])
    grads[f"{pre}.ffn_wi"] += cache["h3"].T @ du
    dh3 = du @ params[f"{pre}.ffn_wi"].T
    dy2_norm, dgain = _rmsnorm_bwd(dh3, params[f"{pre}.ffn_norm"], cache["fnorm_c"])
    grads[f"{pre}.ffn_norm"] += dgain
    dy2 = dy3 + dy2_norm
    # cross attention
    grads[f"{pre}.cross_wo"] += cache["merged2"].T @ dy2
    dctx2 = _split_heads(dy2 @ params[f"{pre}.cross_wo"].T, nh)
    dqc, dkc, dvc, _ = _attend_bwd(dctx2, cache["qc"], cache["kc"], cache["vc"], cache["probs2"])
    mqc, mkc, mvc = _merge_heads(dqc), _merge_heads(dkc), _merge_heads(dvc)
    grads[f"{pre}.cross_wq"] += cache["h2"].T @ mqc
    grads[f"{pre}.cross_wk"] += cache["enc_out"].T @ mkc
    grads[f"{pre}.cross_wv"] += cache["enc_out"].T @ mvc
    d_enc = mkc @ params[f"{pre}.cross_wk"].T + mvc @ params[f"{pre}.cross_wv"].T
    dh2 = mqc @ params[f"{pre}.cross_wq"].T
    dy1_norm, dgain_c = _rmsnorm_bwd(dh2, params[f"{pre}.cross_norm"], cache["cross_norm_c"])
    grads[f"{pre}.cross_norm"] += dgain_c
    dy1 = dy2 + dy1_norm
    # causal self attention
    grads[f"{pre}.self_wo"] += cache["merged"].T @ dy1
    dctx = _split_heads(dy1 @ params[f"{pre}.self_wo"].T, nh)
    dq, dk, dv, ds = _attend_bwd(dctx, cache["q"], cache["k"], cache["v"], cache["probs"])
    dbias_acc += ds
    mq, mk, mv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
    grads[f"{pre}.self_wq"] += cache["h"].T @ mq
    grads[f"{pre}.self_wk"] += cache["h"].T @ mk
    grads[f"{pre}.self_wv"] += cache["h"].T @ mv
    dh = mq @ params[f"{pre}.self_wq"].T + mk @ params[f"{pre}.self_wk"].T + mv @ params[f"{pre}.self_wv"].T
    dy_norm, dgain_s = _rmsnorm_bwd(dh, params[f"{pre}.self_norm"], cache["norm_c"])
    grads[f"{pre}.self_norm"] += dgain_s
    return dy1 + dy_norm, d_enc


def _decode(params: Params, config: ModelConfig, dec_in: np.ndarray,
            enc_out: np.ndarray, enc_padmask: np.ndarray, want_cache: bool = False):
    prep = _dec_prep(params, config, len(dec_in), enc_padmask)
    y = params["embed"][dec_in]
    layer_caches = []
    for i in range(config.n_dec_layers):
        y, cache = _dec_layer_fwd(params, f"dec{i}", y, enc_out, prep, config)
        if want_cache:
            cache["enc_out"] = enc_out
            layer_caches.append(cache)
    y_out, final_c = _rmsnorm(y, params["dec_final_norm"])
    if not want_cache:
        return y_out, None
    return y_out, dict(prep=prep, layers=layer_caches, final_c=final_c)


def _as_ids(seq, config: ModelConfig, what: str) -> np.ndarray:
    ids = np.asarray(seq, dtype=np.int64)
    _check_ids(ids, config, what)
    return ids


def forward(params: Params, config: ModelConfig, inputs, targets) -> np.ndarray:
    """Logits [len(targets), vocab_size]; the decoder input is the
    right-shifted target sequence starting from pad."""
    inputs = _as_ids(inputs, config, "inputs")
    targets = _as_ids(targets, config, "targets")
    enc_out, padmask, _ = _encode(params, config, inputs)
    dec_in = np.concatenate([[PAD_ID], targets[:-1]])
    y_out, _ = _decode(params, config, dec_in, enc_out, padmask)
    return y_out @ params["embed"].T


def loss(logits: np.ndarray, targets, pad_id: int = PAD_ID) -> float:
    """Mean cross-entropy over non-pad target positions."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[0] != len(targets):
        raise ValueError("logits and targets length mismatch")
    valid = targets != pad_id
    count = int(valid.sum())
    if count == 0:
        raise ValueError("no non-pad target positions")
    peak = logits.max(axis=-1, keepdims=True)
    logz = peak[:, 0] + np.log(np.sum(np.exp(logits - peak), axis=-1))
    picked = logits[np.arange(len(targets)), targets]
    return float(np.sum((logz - picked)[valid]) / count)


def forward_backward(params: Params, config: ModelConfig, inputs, targets):
    """Loss and exact gradients for one example.

    Returns (nll_sum, n_valid, grads) where grads are gradients of the
    summed negative log-likelihood over non-pad target positions; divide by
    n_valid for the mean-loss gradient.
    """
    inputs = _as_ids(inputs, config, "inputs")
    targets = _as_ids(targets, config, "targets")
    enc_out, padmask, enc_cache = _encode(params, config, inputs, want_cache=True)
    dec_in = np.concatenate([[PAD_ID], targets[:-1]])
    y_out, dec_cache = _decode(params, config, dec_in, enc_out, padmask, want_cache=True)
    logits = y_out @ params["embed"].T
    valid = targets != PAD_ID
    count = int(valid.sum())
    if count == 0:
        raise ValueError("no non-pad target positions")
    peak = logits.max(axis=-1, keepdims=True)
    expd = np.exp(logits - peak)
    z = expd.sum(axis=-1, keepdims=True)
    probs = expd / z
    logz = peak[:, 0] + np.log(z[:, 0])
    picked = logits[np.arange(len(targets)), targets]
    nll_sum = float(np.sum((logz - picked)[valid]))

    grads = _zero_grads(params)
    dlogits = probs.copy()
    dlogits[np.arange(len(targets)), targets] -= 1.0
    dlogits[~valid] = 0.0
    grads["embed"] += dlogits.T @ y_out
    dy_out = dlogits @ params["embed"]
    dy, dgain = _rmsnorm_bwd(dy_out, params["dec_final_norm"], dec_cache["final_c"])
    grads["dec_final_norm"] += dgain
    m = len(dec_in)
    dbias_dec = np.zeros((config.n_heads, m, m))
    d_enc_total = np.zeros_like(enc_out)
    for i in reversed(range(config.n_dec_layers)):
        dy, d_enc = _dec_layer_bwd(params, grads, f"dec{i}", dy, dec_cache["layers"][i], config, dbias_dec)
        d_enc_total += d_enc
    _scatter_bias(grads["dec_relbias"], dec_cache["prep"]["buckets"], dbias_dec)
    np.add.at(grads["embed"], dec_in, dy)
    _encode_bwd(params, grads, config, inputs, d_enc_total, enc_cache)
    return nll_sum, count, grads


def grad_check(params: Params, config: ModelConfig, inputs, targets,
               *, n_coords: int = 200, seed: int = 0, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    Coordinates are sampled round-robin across every parameter tensor so
    each layer type is covered. Relative error divides by
    max(|fd|, 1e-8).
    """
    _, count, grads = forward_backward(params, config, inputs, targets)
    rng = np.random.default_rng(seed)
    names = sorted(params)
    worst = 0.0
    for i in range(n_coords):
        name = names[i % len(names)]
        arr = params[name]
        idx = int(rng.integers(arr.size))
        orig = arr.flat[idx]
        arr.flat[idx] = orig + eps
        lp = loss(forward(params, config, inputs, targets), targets)
        arr.flat[idx] = orig - eps
        lm = loss(forward(params, config, inputs, targets), targets)
        arr.flat[idx] = orig
        fd = (lp - lm) / (2.0 * eps)
        analytic = grads[name].flat[idx] / count
        rel = abs(analytic - fd) / max(abs(fd), 1e-8)
        worst = max(worst, rel)
    return worst


def generate(params: Params, config: ModelConfig, inputs, max_len: int = 64,
             eos_id: int = 1) -> list[int]:
    """Greedy decode; stops after emitting eos (which is included)."""
    if max_len < 0:
        raise ValueError("max_len must be >= 0")
    inputs = _as_ids(inputs, config, "inputs")
    enc_out, padmask, _ = _encode(params, config, inputs)
    out: list[int] = []
    for _ in range(max_len):
        dec_in = np.array([PAD_ID] + out, dtype=np.int64)
        y_out, _ = _decode(params, config, dec_in, enc_out, padmask)
        logits = y_out[-1] @ params["embed"].T
        nxt = int(np.argmax(logits))
        out.append(nxt)
        if nxt == eos_id:
            break
    return out


_DTYPE_CODES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(params: Params, path, dtype: str = "float32") -> None:
    """Write a checkpoint: text manifest lines ``name shape dtype offset``,
    a blank line, then raw little-endian arrays in manifest order (row
    major). Offsets are bytes from the start of the data section."""
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPE_CODES)}")
    lines = []
    blobs = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name]).astype(_DTYPE_CODES[dtype])
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"{name} {shape} {dtype} {offset}")
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n\n").encode("utf-8"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Params:
    """Inverse of save_checkpoint; arrays come back as float64."""
    data = Path(path).read_bytes()
    head, sep, body = data.partition(b"\n\n")
    if not sep:
        raise ValueError("missing manifest separator")
    params: Params = {}
    for line in head.decode("utf-8").splitlines():
        fields = line.split(" ")
        if len(fields) != 4:
            raise ValueError(f"bad manifest line: {line!r}")
        name, shape_s, dtype_s, offset_s = fields
        if dtype_s not in _DTYPE_CODES:
            raise ValueError(f"{name}: unsupported dtype {dtype_s}")
        shape = tuple(int(s) for s in shape_s.split("x"))
        n_items = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(
            body, dtype=_DTYPE_CODES[dtype_s], count=n_items, offset=int(offset_s)
        ).reshape(shape)
        params[name] = arr.astype(np.float64)
    return params
