"""Route equivalences and state-resume properties.

Small-scale versions of the equivalence claims: the full-tolerance,
many-seed runs live in test_acceptance.py.
"""

import numpy as np
import pytest

from recurlab.models import (STEP_CAPABLE, ModelConfig, ParamGraph,
                             init_params, init_state, model_forward, step)
from recurlab.models import linear as L
from recurlab import tensor as T

VOCAB = 9


def cfg_for(arch, **kw):
    kw.setdefault("d_model", 8)
    kw.setdefault("n_layers", 2)
    kw.setdefault("n_heads", 2)
    return ModelConfig(arch=arch, vocab_size=VOCAB, **kw)


def route_gap(arch, seed, n, **kw):
    cfg = cfg_for(arch, seed=seed, **kw)
    params = init_params(cfg)
    toks = np.random.default_rng(seed).integers(0, VOCAB, size=(2, n))
    par = model_forward(cfg, params, toks, mode="parallel").logits
    rec = model_forward(cfg, params, toks, mode="recurrent").logits
    return max(float(np.abs(a.data - b.data).max()) for a, b in zip(par, rec))


@pytest.mark.parametrize("arch", ["rwkv", "linear-transformer"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ri_routes_agree(arch, seed):
    assert route_gap(arch, seed, n=12) < 1e-10


def test_kv_cache_routes_agree():
    for seed in range(3):
        assert route_gap("transformer", seed, n=10) < 1e-12


@pytest.mark.parametrize("arch", ["rwkv", "linear-transformer", "transformer"])
def test_routes_agree_without_residual(arch):
    assert route_gap(arch, 0, n=8, use_residual=False) < 1e-10


def test_rwkv_single_token_is_value_projection():
    """With one token there is no history: the u-bonus cancels and the mix
    returns exactly the value vector."""
    cfg = cfg_for("rwkv", n_layers=1, use_residual=False, use_positional=False)
    params = init_params(cfg)
    toks = np.array([[3]])
    out = model_forward(cfg, params, toks).logits[0].data
    emb = params["embed"][3]
    v = emb @ params["l0.wv"]
    expected = v @ params["out_w"] + params["out_b"]
    np.testing.assert_allclose(out[0], expected, atol=1e-12)


def test_rwkv_decay_weights_match_hand_sum():
    """n=3, single channel block: the parallel mix at t=3 must equal the
    explicit decayed softmax-like average."""
    cfg = cfg_for("rwkv", n_layers=1, use_residual=False, use_positional=False, seed=4)
    params = init_params(cfg)
    toks = np.array([[1, 5, 2]])
    logits = model_forward(cfg, params, toks).logits

    w = np.where(params["l0.w_raw"] > 0, params["l0.w_raw"] + 1.0,
                 np.exp(params["l0.w_raw"]))          # elu_plus_one
    u = params["l0.u"]
    ks = [params["embed"][t] @ params["l0.wk"] for t in toks[0]]
    vs = [params["embed"][t] @ params["l0.wv"] for t in toks[0]]
    t = 2  # 0-based third position
    num = np.exp(u + ks[t]) * vs[t]
    den = np.exp(u + ks[t])
    for j in range(t):
        wt = np.exp(-(t - 1 - j) * w + ks[j])
        num += wt * vs[j]
        den += wt
    expected = (num / den) @ params["out_w"] + params["out_b"]
    np.testing.assert_allclose(logits[2].data[0], expected, atol=1e-10)


def test_linear_attention_matches_hand_sum():
    cfg = cfg_for("linear-transformer", n_layers=1, n_heads=1,
                  use_residual=False, use_positional=False, seed=2)
    params = init_params(cfg)
    toks = np.array([[4, 1, 7]])
    logits = model_forward(cfg, params, toks).logits

    def phi(x):
        return np.where(x > 0, x + 1.0, np.exp(x))
    qs = [phi(params["embed"][t] @ params["l0.wq"]) for t in toks[0]]
    ks = [phi(params["embed"][t] @ params["l0.wk"]) for t in toks[0]]
    vs = [params["embed"][t] @ params["l0.wv"] for t in toks[0]]
    t = 2
    num = sum((qs[t] @ ks[i]) * vs[i] for i in range(t + 1))
    den = sum(qs[t] @ ks[i] for i in range(t + 1))
    expected = (num / den) @ params["out_w"] + params["out_b"]
    np.testing.assert_allclose(logits[2].data[0], expected, atol=1e-10)


def test_linear_state_size_constant_in_t():
    cfg = cfg_for("linear-transformer")
    params = init_params(cfg)
    pg = ParamGraph(params)
    state = init_state(cfg, pg, batch=1)
    sizes = []
    for tok in range(1, 7):
        _, state = step(cfg, pg, state, np.array([tok]))
        sizes.append(sum(a.data.size + b.data.size
                         for heads in state["layers"] for a, b in heads))
    assert len(set(sizes)) == 1


def test_rwkv_state_size_constant_in_t():
    cfg = cfg_for("rwkv")
    params = init_params(cfg)
    pg = ParamGraph(params)
    state = init_state(cfg, pg, batch=1)
    sizes = []
    for tok in range(1, 7):
        _, state = step(cfg, pg, state, np.array([tok]))
        sizes.append(sum(a.data.size + b.data.size for a, b in state["layers"]))
    assert len(set(sizes)) == 1


@pytest.mark.parametrize("arch", sorted(STEP_CAPABLE))
def test_prefix_state_resume_bit_identical(arch):
    """Run n steps straight; separately run j steps, keep the state, resume.
    The suffix logits must be bit-identical."""
    cfg = cfg_for(arch)
    params = init_params(cfg)
    rng = np.random.default_rng(11)
    toks = rng.integers(0, VOCAB, size=(2, 8))
    n, j = 8, 3

    pg = ParamGraph(params)
    state = init_state(cfg, pg, 2, length=n)
    straight = []
    for t in range(n):
        out, state = step(cfg, pg, state, toks[:, t])
        straight.append(out.data)

    pg2 = ParamGraph(params)
    state = init_state(cfg, pg2, 2, length=n)
    for t in range(j):
        out, state = step(cfg, pg2, state, toks[:, t])
    kept = state                      # snapshot; steps never mutate input state
    resumed = []
    for t in range(j, n):
        out, kept = step(cfg, pg2, kept, toks[:, t])
        resumed.append(out.data)
    for a, b in zip(straight[j:], resumed):
        np.testing.assert_array_equal(a, b)


def test_step_state_not_mutated():
    """A retained earlier state stays usable: stepping from it twice gives
    identical results."""
    cfg = cfg_for("transformer")
    params = init_params(cfg)
    pg = ParamGraph(params)
    state0 = init_state(cfg, pg, 1)
    out1, _ = step(cfg, pg, state0, np.array([2]))
    out2, _ = step(cfg, pg, state0, np.array([2]))
    np.testing.assert_array_equal(out1.data, out2.data)
