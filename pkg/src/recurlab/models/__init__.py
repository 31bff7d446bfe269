"""Architecture zoo: a single forward entry point plus a uniform step API.

``model_forward`` builds one graph for a whole batch of sequences and returns
per-position logits.  ``init_state``/``step`` expose token-at-a-time decoding
for every architecture that supports it; states are plain value-semantic
containers (tuples/lists/dicts of graph Values), so a state can be kept, the
model resumed from it later, and the results are bit-identical to an
uninterrupted run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .common import ModelError, ParamGraph, embed_one, readout
from .config import (ARCHS, TRANSFORMER_FAMILY, ModelConfig, init_params,
                     load_checkpoint, save_checkpoint)
from . import linear, recurrent, transformer
from .linear import NonFiniteStateError

__all__ = [
    "ARCHS", "TRANSFORMER_FAMILY", "ModelConfig", "ModelError",
    "NonFiniteStateError", "ParamGraph", "ForwardResult", "init_params",
    "save_checkpoint", "load_checkpoint", "model_forward", "init_state",
    "step", "STEP_CAPABLE",
]


@dataclass
class ForwardResult:
    logits: list          # one (B, vocab) Value per position
    pgraph: ParamGraph    # parameter nodes of this graph, for .grads()


# -- uniform step API -------------------------------------------------------
# Wrapped states carry the position counter; the inner layout is per-arch.

def _rc_init(inner_init):
    def init(cfg, pg, batch, length=None):
        if cfg.arch == "tape-rnn":
            if length is None:
                raise ModelError("tape-rnn needs the sequence length up front")
            inner = recurrent.tape_rnn_init(cfg, batch, length + cfg.tape_extra_cells)
        else:
            inner = inner_init(cfg, batch)
        return {"t": 0, "inner": inner}
    return init


def _rc_step(inner_step):
    def do_step(cfg, pg, state, token_ids_t):
        t = state["t"]
        x_t = embed_one(pg, token_ids_t, t, use_positional=False)
        h, inner = inner_step(cfg, pg, state["inner"], x_t)
        return readout(pg, h), {"t": t + 1, "inner": inner}
    return do_step


def _plain(init_fn, step_fn):
    return (lambda cfg, pg, batch, length=None: init_fn(cfg, batch), step_fn)


_STEP_API = {
    "rnn": (_rc_init(recurrent.rnn_init), _rc_step(recurrent.rnn_step)),
    "lstm": (_rc_init(recurrent.lstm_init), _rc_step(recurrent.lstm_step)),
    "stack-rnn": (_rc_init(recurrent.stack_rnn_init), _rc_step(recurrent.stack_rnn_step)),
    "tape-rnn": (_rc_init(recurrent.tape_rnn_init), _rc_step(recurrent.tape_rnn_step)),
    "transformer": _plain(transformer.transformer_init, transformer.transformer_step),
    "recurrent-transformer": _plain(transformer.recurrent_transformer_init,
                                    transformer.recurrent_transformer_step),
    "feedback-transformer": _plain(transformer.feedback_init, transformer.feedback_step),
    "rwkv": _plain(linear.rwkv_init, linear.rwkv_step),
    "linear-transformer": _plain(linear.linear_init, linear.linear_step),
}

STEP_CAPABLE = frozenset(_STEP_API)


def init_state(cfg: ModelConfig, pg: ParamGraph, batch: int, length: int | None = None):
    if cfg.arch not in _STEP_API:
        raise ModelError(f"{cfg.arch} has no token-level step form")
    return _STEP_API[cfg.arch][0](cfg, pg, batch, length)


def step(cfg: ModelConfig, pg: ParamGraph, state, token_ids_t: np.ndarray):
    """Consume one token per sequence; returns (logits, new_state).  The input
    state is not mutated, so any retained copy stays resumable."""
    return _STEP_API[cfg.arch][1](cfg, pg, state, np.asarray(token_ids_t))


def _step_route(cfg, pg, token_ids) -> list:
    token_ids = np.asarray(token_ids)
    batch, length = token_ids.shape
    state = init_state(cfg, pg, batch, length)
    logits = []
    for t in range(length):
        out, state = step(cfg, pg, state, token_ids[:, t])
        logits.append(out)
    return logits


# -- whole-sequence forward -------------------------------------------------

def model_forward(cfg: ModelConfig, params: dict, token_ids: np.ndarray,
                  mode: str = "parallel", T_steps: int | None = None) -> ForwardResult:
    """Run ``cfg.arch`` over a (B, L) int batch, producing (B, vocab) logits
    at every position.

    ``mode`` selects the evaluation route where an architecture has two:
    "parallel" evaluates attention sums directly, "recurrent" threads the
    constant-size state token by token.  Architectures with a single route
    accept either value.
    """
    if mode not in ("parallel", "recurrent"):
        raise ModelError(f"unknown mode {mode!r}")
    token_ids = np.asarray(token_ids)
    if token_ids.ndim != 2:
        raise ModelError(f"token_ids must be (batch, length), got {token_ids.shape}")
    pg = ParamGraph(params)
    arch = cfg.arch

    if arch == "mlp":
        logits = recurrent.mlp_forward(cfg, pg, token_ids)
    elif arch in ("rnn", "lstm", "stack-rnn", "tape-rnn"):
        logits = recurrent.recurrent_forward(cfg, pg, token_ids)
    elif arch == "transformer":
        logits = (transformer.transformer_forward(cfg, pg, token_ids)
                  if mode == "parallel" else _step_route(cfg, pg, token_ids))
    elif arch in ("recurrent-transformer", "feedback-transformer"):
        logits = _step_route(cfg, pg, token_ids)
    elif arch == "block-recurrent-transformer":
        logits = transformer.block_recurrent_forward(cfg, pg, token_ids)
    elif arch == "universal-transformer":
        logits = transformer.universal_forward(
            cfg, pg, token_ids, T_steps if T_steps is not None else cfg.max_halting_steps)
    elif arch == "rwkv":
        logits = (linear.rwkv_forward_parallel(cfg, pg, token_ids)
                  if mode == "parallel" else _step_route(cfg, pg, token_ids))
    elif arch == "linear-transformer":
        logits = (linear.linear_forward_parallel(cfg, pg, token_ids)
                  if mode == "parallel" else _step_route(cfg, pg, token_ids))
    else:
        raise ModelError(f"unknown arch {arch!r}")
    return ForwardResult(logits=logits, pgraph=pg)
