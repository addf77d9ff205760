"""Learnable prior-attention weighting network.

Each logit row f (width C) is projected into a latent embedding
e = f W_p. A learnable prior table psi (one d-vector per logit channel)
provides keys and values for single-head cross-attention against the query
derived from e:

    q = e W_q,  key_j = psi_j W_k,  val_j = psi_j W_v
    a = softmax(q . key / sqrt(d))        (over the C prior rows)
    z = sum_j a_j val_j
    w = ReLU(w_head . [e, z]) + 1

The scalar w >= 1 multiplies a static anomaly score. The weight head is
zero-initialized so a fresh network is exactly the identity reweighting
(w == 1 everywhere). The module also owns the trainable scalar bias b used
by the score-level loss terms.

The backward pass is exact (hand-derived); the ReLU subgradient at 0 is 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import ContractError, LogitField

__all__ = ["PriorParams", "PriorTape", "init_params", "prior_weight", "prior_backward",
           "save_params", "load_params", "zeros_like_params"]

_MAGIC = b"PRW1"


@dataclass
class PriorParams:
    """All trainable tensors of the weighting network plus the loss bias b.

    The prior table has one row per logit channel (C rows), so extended
    2K-channel models get a prior row for every channel. ``version`` is
    bumped by the optimizer after in-place updates; tapes check it to refuse
    stale backward passes.
    """

    w_proj: np.ndarray   # (C, d)
    psi: np.ndarray      # (C, d) prior table
    w_q: np.ndarray      # (d, d)
    w_k: np.ndarray      # (d, d)
    w_v: np.ndarray      # (d, d)
    w_head: np.ndarray   # (2d,)
    b: float = 0.0
    version: int = 0

    @property
    def logit_width(self) -> int:
        return self.w_proj.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.w_proj.shape[1]

    def validate(self):
        c, d = self.w_proj.shape
        if self.psi.shape != (c, d):
            raise ContractError("prior table must be (C, d)")
        for name in ("w_q", "w_k", "w_v"):
            if getattr(self, name).shape != (d, d):
                raise ContractError(f"{name} must be (d, d)")
        if self.w_head.shape != (2 * d,):
            raise ContractError("weight head must be a 2d vector")
        for name in ("w_proj", "psi", "w_q", "w_k", "w_v", "w_head"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractError(f"{name} contains non-finite entries")
        if not np.isfinite(self.b):
            raise ContractError("b must be finite")

    def tensors(self) -> dict[str, np.ndarray]:
        return {"w_proj": self.w_proj, "psi": self.psi, "w_q": self.w_q,
                "w_k": self.w_k, "w_v": self.w_v, "w_head": self.w_head}

    def mark_updated(self):
        self.version += 1


@dataclass(frozen=True, eq=False)
class PriorTape:
    """Forward intermediates for one exact backward pass."""

    params: PriorParams
    version: int
    logits: np.ndarray
    e: np.ndarray       # (M, d)
    q: np.ndarray       # (M, d)
    keys: np.ndarray    # (C, d)
    vals: np.ndarray    # (C, d)
    att: np.ndarray     # (M, C) softmax rows
    z: np.ndarray       # (M, d)
    pre: np.ndarray     # (M,) head pre-activation


def _glorot(rng, shape):
    a = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-a, a, size=shape)


def init_params(c: int, d: int = 16, seed: int = 0) -> PriorParams:
    """Seeded initialization: Glorot-uniform projections and prior table,
    zero weight head (so w == 1 on any input), zero bias."""
    if c < 2:
        raise ContractError("logit width must be >= 2")
    if d < 1:
        raise ContractError("latent dimension must be >= 1")
    rng = np.random.default_rng(seed)
    return PriorParams(
        w_proj=_glorot(rng, (c, d)),
        psi=_glorot(rng, (c, d)),
        w_q=_glorot(rng, (d, d)),
        w_k=_glorot(rng, (d, d)),
        w_v=_glorot(rng, (d, d)),
        w_head=np.zeros(2 * d),
        b=0.0,
    )


def zeros_like_params(params: PriorParams) -> PriorParams:
    return PriorParams(
        w_proj=np.zeros_like(params.w_proj),
        psi=np.zeros_like(params.psi),
        w_q=np.zeros_like(params.w_q),
        w_k=np.zeros_like(params.w_k),
        w_v=np.zeros_like(params.w_v),
        w_head=np.zeros_like(params.w_head),
        b=0.0,
    )


def prior_weight(field_or_values, params: PriorParams) -> tuple[np.ndarray, PriorTape]:
    """Per-point weights w >= 1 plus the tape needed for the backward pass.

    Accepts a LogitField or a raw (M, C) array.
    """
    params.validate()
    values = field_or_values.values if isinstance(field_or_values, LogitField) else np.asarray(
        field_or_values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != params.logit_width:
        raise ContractError(
            f"logit width {values.shape[-1]} does not match params (C={params.logit_width})"
        )
    d = params.latent_dim

    e = values @ params.w_proj
    q = e @ params.w_q
    keys = params.psi @ params.w_k
    vals = params.psi @ params.w_v

    att_logits = (q @ keys.T) / np.sqrt(d)
    att_logits -= att_logits.max(axis=1, keepdims=True)
    att = np.exp(att_logits)
    att /= att.sum(axis=1, keepdims=True)

    z = att @ vals
    pre = e @ params.w_head[:d] + z @ params.w_head[d:]
    w = np.maximum(pre, 0.0) + 1.0

    tape = PriorTape(params=params, version=params.version, logits=values,
                     e=e, q=q, keys=keys, vals=vals, att=att, z=z, pre=pre)
    return w, tape


def prior_backward(tape: PriorTape, grad_w: np.ndarray) -> tuple[PriorParams, np.ndarray]:
    """Exact gradients of sum_i grad_w[i] * w[i].

    Returns (parameter gradients as a PriorParams-shaped container with the
    b slot zero, gradients w.r.t. the input logits). Raises ContractError if
    the parameters were updated since the forward pass.
    """
    params = tape.params
    if tape.version != params.version:
        raise ContractError("stale tape: parameters were updated after the forward pass")
    grad_w = np.asarray(grad_w, dtype=np.float64).reshape(-1)
    if grad_w.shape[0] != tape.pre.shape[0]:
        raise ContractError("grad_w length does not match the taped forward pass")
    d = params.latent_dim

    dpre = grad_w * (tape.pre > 0.0)         # ReLU subgradient at 0 is 0
    g = zeros_like_params(params)
    g.w_head[:d] = tape.e.T @ dpre
    g.w_head[d:] = tape.z.T @ dpre

    de = np.outer(dpre, params.w_head[:d])
    dz = np.outer(dpre, params.w_head[d:])

    datt = dz @ tape.vals.T                   # (M, C)
    g_vals = tape.att.T @ dz                  # (C, d)

    # softmax backward, row-wise
    dot = (datt * tape.att).sum(axis=1, keepdims=True)
    dlogits_att = tape.att * (datt - dot)     # (M, C)

    scale = 1.0 / np.sqrt(d)
    dq = dlogits_att @ tape.keys * scale
    g_keys = dlogits_att.T @ tape.q * scale

    g.w_k[:] = params.psi.T @ g_keys
    g.w_v[:] = params.psi.T @ g_vals
    g.psi[:] = g_keys @ params.w_k.T + g_vals @ params.w_v.T

    de += dq @ params.w_q.T
    g.w_q[:] = tape.e.T @ dq

    g.w_proj[:] = tape.logits.T @ de
    dlogits = de @ params.w_proj.T
    return g, dlogits


# --------------------------------------------------------------------------
# checkpoint container: little-endian, dims header then row-major float32
# matrices in the order (w_proj, psi, w_q, w_k, w_v, w_head, b)
# --------------------------------------------------------------------------

def save_params(params: PriorParams, fh) -> None:
    """Write to an open binary file handle."""
    params.validate()
    fh.write(_MAGIC)
    fh.write(struct.pack("<III", 1, params.logit_width, params.latent_dim))
    for name in ("w_proj", "psi", "w_q", "w_k", "w_v", "w_head"):
        fh.write(getattr(params, name).astype("<f4").tobytes())
    fh.write(struct.pack("<f", params.b))


def load_params(fh) -> PriorParams:
    magic = fh.read(4)
    if magic != _MAGIC:
        raise ContractError(f"bad checkpoint magic {magic!r}")
    version, c, d = struct.unpack("<III", fh.read(12))
    if version != 1:
        raise ContractError(f"unsupported checkpoint version {version}")

    def mat(rows, cols):
        buf = fh.read(rows * cols * 4)
        return np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(rows, cols)

    w_proj = mat(c, d)
    psi = mat(c, d)
    w_q = mat(d, d)
    w_k = mat(d, d)
    w_v = mat(d, d)
    w_head = mat(1, 2 * d).reshape(-1)
    (b,) = struct.unpack("<f", fh.read(4))
    params = PriorParams(w_proj=w_proj, psi=psi, w_q=w_q, w_k=w_k, w_v=w_v,
                         w_head=w_head, b=float(b))
    params.validate()
    return params
