"""Multimodal interaction: cross-modal attention blocks and the acoustic gate.

Wiring, with tokens ``T`` (M x d) and frames ``A`` (J x d)::

    P = block_a(query=A, kv=T)        J x d
    R = block_b(query=T, kv=P)        M x d   speech-aware word reps
    Q = block_d(query=T, kv=A)        M x d   word-aware speech reps
    g = sigmoid([R ; Q] W_g + b_g)    M x d
    fused = [g * Q ; R]               M x 2d
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .numcore import ParamStore, Tensor

BLOCKS = ("block_a", "block_b", "block_d")


@dataclass(frozen=True)
class CmeConfig:
    d: int = 16
    heads: int = 2
    ffn_dim: int | None = None
    eps: float = 1e-5
    activation: str = "gelu"
    layers: int = 1

    def __post_init__(self):
        if self.d < 1 or self.heads < 1 or self.layers < 1:
            raise ValueError("d, heads and layers must be >= 1")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.activation != "gelu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def hidden(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.d


@dataclass
class MmiOutput:
    R: Tensor
    Q_gated: Tensor
    fused: Tensor
    gate: Tensor
    P: Tensor
    Q: Tensor
    attention: dict[str, list[np.ndarray]] = field(default_factory=dict)


def init_cme_params(params: ParamStore, prefix: str, config: CmeConfig) -> None:
    d, hid = config.d, config.hidden
    for layer in range(config.layers):
        p = f"{prefix}.{layer}"
        for name in ("wq", "wk", "wv", "wo"):
            params.add(f"{p}.attn.{name}", (d, d))
        # no key bias: it shifts every score in a row equally, so softmax ignores it
        for name in ("bq", "bv", "bo"):
            params.add(f"{p}.attn.{name}", (1, d), init="zeros")
        params.add(f"{p}.ln1.gamma", (1, d), init="ones")
        params.add(f"{p}.ln1.beta", (1, d), init="zeros")
        params.add(f"{p}.ffn.w1", (d, hid))
        params.add(f"{p}.ffn.b1", (1, hid), init="zeros")
        params.add(f"{p}.ffn.w2", (hid, d))
        params.add(f"{p}.ffn.b2", (1, d), init="zeros")
        params.add(f"{p}.ln2.gamma", (1, d), init="ones")
        params.add(f"{p}.ln2.beta", (1, d), init="zeros")


def init_mmi_params(params: ParamStore, config: CmeConfig, gated: bool = True) -> None:
    for block in BLOCKS:
        init_cme_params(params, f"mmi.{block}", config)
    if gated:
        params.add("mmi.gate.w", (2 * config.d, config.d))
        params.add("mmi.gate.b", (1, config.d), init="zeros")


def cma(
    queries: Tensor,
    keys_values: Tensor,
    params: ParamStore,
    prefix: str,
    config: CmeConfig,
    weights_out: list | None = None,
) -> Tensor:
    """h-head cross-modal attention with output projection.

    ``prefix`` names the attention sublayer, e.g. ``"mmi.block_a.0.attn"``.
    Attention matrices (n_q x n_kv per head) are appended to ``weights_out``
    when given.
    """
    d = config.d
    if queries.shape[1] != d or keys_values.shape[1] != d:
        raise nc.DimensionError(f"cma: widths {queries.shape[1]}, {keys_values.shape[1]} != d={d}")
    q = nc.linear(queries, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = nc.linear(keys_values, params[f"{prefix}.wk"])
    v = nc.linear(keys_values, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    hd = config.head_dim
    inv_scale = 1.0 / math.sqrt(hd)
    heads = []
    for i in range(config.heads):
        lo, hi = i * hd, (i + 1) * hd
        if config.heads == 1:
            qi, ki, vi = q, k, v
        else:
            qi, ki, vi = nc.slice_cols(q, lo, hi), nc.slice_cols(k, lo, hi), nc.slice_cols(v, lo, hi)
        scores = nc.scale(nc.matmul(qi, nc.transpose(ki)), inv_scale)
        attn = nc.softmax_rows(scores)
        if weights_out is not None:
            weights_out.append(attn.data)
        heads.append(nc.matmul(attn, vi))
    merged = heads[0] if len(heads) == 1 else nc.concat_cols(heads)
    return nc.linear(merged, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def cme_block(
    x_query: Tensor,
    x_kv: Tensor,
    params: ParamStore,
    prefix: str,
    config: CmeConfig,
    weights_out: list | None = None,
) -> Tensor:
    """Post-LN transformer layer(s) whose attention is cross-modal.

    ``y = LN(x + cma(x, kv))``, ``out = LN(y + FFN(y))``. With more than one
    layer, the output of each layer is the query input of the next; keys and
    values stay fixed.
    """
    x = x_query
    for layer in range(config.layers):
        p = f"{prefix}.{layer}"
        attended = cma(x, x_kv, params, f"{p}.attn", config, weights_out)
        y = nc.layer_norm(nc.add(x, attended), params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"], config.eps)
        h = nc.gelu(nc.linear(y, params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"]))
        h = nc.linear(h, params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"])
        x = nc.layer_norm(nc.add(y, h), params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"], config.eps)
    return x


def acoustic_gate(R: Tensor, Q: Tensor, w_g: Tensor, b_g: Tensor) -> tuple[Tensor, Tensor]:
    """Return ``(g, g * Q)`` with ``g = sigmoid([R ; Q] w_g + b_g)``."""
    if R.shape != Q.shape:
        raise nc.DimensionError(f"acoustic_gate: R {R.shape} vs Q {Q.shape}")
    g = nc.sigmoid(nc.linear(nc.concat_cols([R, Q]), w_g, b_g))
    return g, nc.mul(g, Q)


def mmi_forward(
    T,
    A,
    params: ParamStore,
    config: CmeConfig,
    text_only: bool = False,
    keep_attention: bool = False,
) -> MmiOutput:
    """Run the three CME blocks and the gate.

    ``text_only`` is the audio ablation: frames are replaced by zeros of the
    same shape and the gate is held fully open (``g = 1``).
    """
    T = nc.as_tensor(T)
    A = nc.as_tensor(A)
    if T.shape[0] < 1 or A.shape[0] < 1:
        raise nc.DimensionError("mmi_forward: need at least one token and one frame")
    if T.shape[1] != config.d or A.shape[1] != config.d:
        raise nc.DimensionError(f"mmi_forward: T {T.shape}, A {A.shape} do not have width d={config.d}")
    if text_only:
        A = nc.Tensor(np.zeros_like(A.data))

    attention: dict[str, list[np.ndarray]] = {b: [] for b in BLOCKS} if keep_attention else {}
    P = cme_block(A, T, params, "mmi.block_a", config, attention.get("block_a"))
    R = cme_block(T, P, params, "mmi.block_b", config, attention.get("block_b"))
    Q = cme_block(T, A, params, "mmi.block_d", config, attention.get("block_d"))
    if text_only:
        gate = nc.Tensor(np.ones_like(Q.data))
        Q_gated = Q
    else:
        gate, Q_gated = acoustic_gate(R, Q, params["mmi.gate.w"], params["mmi.gate.b"])
    fused = nc.concat_cols([Q_gated, R])
    return MmiOutput(R=R, Q_gated=Q_gated, fused=fused, gate=gate, P=P, Q=Q, attention=attention)
