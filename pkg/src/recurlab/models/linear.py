"""Recurrence-incomplete attention: RWKV time-mix and the linear Transformer.

Each mechanism has two evaluation routes that must agree numerically:

* parallel -- direct evaluation of the attention sums over all past
  positions (what training would use);
* recurrent -- constant-size accumulator pairs (a, b) updated by the fixed
  shifting operation, consuming one token at a time.

The accumulator update never applies the learned function to the carried
state, only to the current input; that is precisely what makes these models
recurrence-incomplete.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import Value
from .common import (ModelError, ParamGraph, as_row, embed_one, embed_tokens,
                     ffn, layer_norm, readout, split_heads, stacked_sum)


class NonFiniteStateError(ModelError):
    def __init__(self, t: int):
        super().__init__(f"non-finite accumulator state at step {t}")
        self.t = t


def _decay(pg: ParamGraph, prefix: str) -> Value:
    # per-channel decay w > 0 via elu_plus_one of an unconstrained parameter
    return T.nonlinearity(pg[f"{prefix}.w_raw"], "elu_plus_one")


# -- RWKV time-mix ----------------------------------------------------------

def rwkv_attn_parallel(cfg, pg: ParamGraph, prefix: str, ks: list, vs: list,
                       t: int) -> Value:
    """Channel-wise weighted average over positions 1..t: past positions decay
    as exp(-(t-1-j) w + k_j); the current position carries the bonus u."""
    w = _decay(pg, prefix)
    u = pg[f"{prefix}.u"]
    num_terms, den_terms = [], []
    for j in range(t):  # positions j < t (0-based: 0..t-1 exclusive of current)
        weight = T.exp(ks[j] - w * T.constant(float(t - 1 - j)))
        num_terms.append(weight * vs[j])
        den_terms.append(weight)
    bonus = T.exp(u + ks[t])
    num_terms.append(bonus * vs[t])
    den_terms.append(bonus)
    if len(num_terms) == 1:
        return num_terms[0] / den_terms[0]
    return stacked_sum(num_terms) / stacked_sum(den_terms)


def rwkv_attn_recurrent(cfg, pg: ParamGraph, prefix: str, ab, k_t: Value,
                        v_t: Value, t: int) -> tuple:
    """(a, b) carry the decayed numerator/denominator sums over positions < t;
    state size is constant in t."""
    w = _decay(pg, prefix)
    z = T.exp(-w)
    a, b = ab
    bonus = T.exp(pg[f"{prefix}.u"] + k_t)
    if a is None:
        h = v_t  # empty history: bonus cancels
        ek = T.exp(k_t)
        state = (ek * v_t, ek)
    else:
        h = (a + bonus * v_t) / (b + bonus)
        ek = T.exp(k_t)
        state = (z * a + ek * v_t, z * b + ek)
    for s in state:
        if not np.all(np.isfinite(s.data)):
            raise NonFiniteStateError(t)
    return h, state


def _rwkv_layer_inner(cfg, pg, prefix, h_t, route_fn):
    x = layer_norm(pg, f"{prefix}.ln1", h_t) if cfg.use_residual else h_t
    k = T.matmul(x, pg[f"{prefix}.wk"])
    v = T.matmul(x, pg[f"{prefix}.wv"])
    attn = route_fn(k, v)
    if not cfg.use_residual:
        return attn
    h = h_t + attn
    return h + ffn(pg, f"{prefix}.ffn", layer_norm(pg, f"{prefix}.ln2", h), cfg.nonlin)


def rwkv_forward_parallel(cfg, pg: ParamGraph, token_ids: np.ndarray) -> list:
    hs = embed_tokens(pg, token_ids, cfg.use_positional)
    for layer in range(cfg.n_layers):
        prefix = f"l{layer}"
        normed = [layer_norm(pg, f"{prefix}.ln1", h) if cfg.use_residual else h
                  for h in hs]
        ks = [T.matmul(x, pg[f"{prefix}.wk"]) for x in normed]
        vs = [T.matmul(x, pg[f"{prefix}.wv"]) for x in normed]
        new_hs = []
        for t in range(len(hs)):
            attn = rwkv_attn_parallel(cfg, pg, prefix, ks, vs, t)
            if cfg.use_residual:
                h = hs[t] + attn
                h = h + ffn(pg, f"{prefix}.ffn", layer_norm(pg, f"{prefix}.ln2", h),
                            cfg.nonlin)
            else:
                h = attn
            new_hs.append(h)
        hs = new_hs
    return [readout(pg, h) for h in hs]


def rwkv_init(cfg, batch: int) -> dict:
    return {"t": 0, "layers": [(None, None) for _ in range(cfg.n_layers)]}


def rwkv_step(cfg, pg: ParamGraph, state: dict, token_ids_t: np.ndarray) -> tuple:
    t = state["t"]
    h = embed_one(pg, token_ids_t, t, cfg.use_positional)
    new_layers = []
    for layer in range(cfg.n_layers):
        prefix = f"l{layer}"
        ab = state["layers"][layer]
        ab = ab if ab != (None, None) else (None, None)
        holder = {}

        def route(k, v, _prefix=prefix, _ab=ab, _holder=holder):
            out, new_ab = rwkv_attn_recurrent(cfg, pg, _prefix, _ab, k, v, t)
            _holder["ab"] = new_ab
            return out

        h = _rwkv_layer_inner(cfg, pg, prefix, h, route)
        new_layers.append(holder["ab"])
    return readout(pg, h), {"t": t + 1, "layers": new_layers}


# -- linear transformer -----------------------------------------------------

def _phi(cfg, x: Value) -> Value:
    return T.nonlinearity(x, cfg.feature_map)


def linear_attn_parallel(cfg, qh: list, kh: list, vh: list, t: int) -> Value:
    """sum_i (phi(q_t).phi(k_i)) v_i / sum_i phi(q_t).phi(k_i), i = 1..t."""
    pq = qh[t]
    num_terms, den_terms = [], []
    for i in range(t + 1):
        s = (pq * kh[i]).sum(axis=-1, keepdims=True)   # (B, 1)
        num_terms.append(s * vh[i])
        den_terms.append(s)
    if t == 0:
        return num_terms[0] / den_terms[0]
    num = stacked_sum(num_terms)
    den = T.concat(den_terms, axis=-1).sum(axis=-1, keepdims=True)
    return num / den


def linear_attn_recurrent(cfg, ab, pq: Value, pk: Value, v_t: Value, t: int) -> tuple:
    """a accumulates rank-1 outer products phi(k) v^T; b accumulates phi(k).
    The current token's contribution is folded in before the read-out, so the
    result covers positions 1..t."""
    batch, dh = pk.shape
    outer = T.matmul(pk.reshape((batch, dh, 1)), v_t.reshape((batch, 1, dh)))
    a, b = ab
    a = outer if a is None else a + outer
    b = pk if b is None else b + pk
    for s in (a, b):
        if not np.all(np.isfinite(s.data)):
            raise NonFiniteStateError(t)
    num = T.matmul(pq.reshape((batch, 1, dh)), a).reshape((batch, dh))
    den = (pq * b).sum(axis=-1, keepdims=True)
    return num / den, (a, b)


def _linear_layer_heads(cfg, pg, prefix, x):
    q = _phi(cfg, T.matmul(x, pg[f"{prefix}.wq"]))
    k = _phi(cfg, T.matmul(x, pg[f"{prefix}.wk"]))
    v = T.matmul(x, pg[f"{prefix}.wv"])
    return (split_heads(q, cfg.n_heads), split_heads(k, cfg.n_heads),
            split_heads(v, cfg.n_heads))


def linear_forward_parallel(cfg, pg: ParamGraph, token_ids: np.ndarray) -> list:
    hs = embed_tokens(pg, token_ids, cfg.use_positional)
    for layer in range(cfg.n_layers):
        prefix = f"l{layer}"
        normed = [layer_norm(pg, f"{prefix}.ln1", h) if cfg.use_residual else h
                  for h in hs]
        per_pos = [_linear_layer_heads(cfg, pg, prefix, x) for x in normed]
        new_hs = []
        for t in range(len(hs)):
            heads = []
            for head in range(cfg.n_heads):
                qh = [p[0][head] for p in per_pos]
                kh = [p[1][head] for p in per_pos]
                vh = [p[2][head] for p in per_pos]
                heads.append(linear_attn_parallel(cfg, qh, kh, vh, t))
            attn = heads[0] if len(heads) == 1 else T.concat(heads, axis=-1)
            if cfg.use_residual:
                h = hs[t] + attn
                h = h + ffn(pg, f"{prefix}.ffn", layer_norm(pg, f"{prefix}.ln2", h),
                            cfg.nonlin)
            else:
                h = attn
            new_hs.append(h)
        hs = new_hs
    return [readout(pg, h) for h in hs]


def linear_init(cfg, batch: int) -> dict:
    return {"t": 0,
            "layers": [[(None, None) for _ in range(cfg.n_heads)]
                       for _ in range(cfg.n_layers)]}


def linear_step(cfg, pg: ParamGraph, state: dict, token_ids_t: np.ndarray) -> tuple:
    t = state["t"]
    h = embed_one(pg, token_ids_t, t, cfg.use_positional)
    new_layers = []
    for layer in range(cfg.n_layers):
        prefix = f"l{layer}"
        x = layer_norm(pg, f"{prefix}.ln1", h) if cfg.use_residual else h
        qs, ks, vs = _linear_layer_heads(cfg, pg, prefix, x)
        heads, new_abs = [], []
        for head in range(cfg.n_heads):
            out, ab = linear_attn_recurrent(cfg, state["layers"][layer][head],
                                            qs[head], ks[head], vs[head], t)
            heads.append(out)
            new_abs.append(ab)
        attn = heads[0] if len(heads) == 1 else T.concat(heads, axis=-1)
        if cfg.use_residual:
            h = h + attn
            h = h + ffn(pg, f"{prefix}.ffn", layer_norm(pg, f"{prefix}.ln2", h),
                        cfg.nonlin)
        else:
            h = attn
        new_layers.append(new_abs)
    return readout(pg, h), {"t": t + 1, "layers": new_layers}
