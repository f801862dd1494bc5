"""Alias-gate cross-attention block with analytic forward and backward.

The block output is

    Z = WSA(X_L) + CrossAttn(Q = X_L, K = V = E_a[alias_ids])

where ``X_L = E[structure_ids] + pos[:N]``. WSA is single-head self-attention
restricted to a causal window (``i - window < j <= i``). Cross-attention is
unmasked and position-free over the alias tokens. Each branch owns its own
q/k/v projections (``d x d_h``) and an output projection (``d_h x d``).

Dropping the cross branch gives the student / deployment block. When the
sequence carries per-token scale ids, ``cross_scales=M`` restricts the alias
branch to queries from the final ``M`` scales.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

WSA_NAMES = ("wsa_q", "wsa_k", "wsa_v", "wsa_o")
CROSS_NAMES = ("xa_q", "xa_k", "xa_v", "xa_o")
EMBED_NAMES = ("E", "pos", "E_a")
BLOB_MAGIC = b"RFATTN1\n"


class FlopCounter:
    """Tally of floating-point operations executed by a forward pass."""

    def __init__(self):
        self.total = 0
        self.by_op = {}

    def add(self, op: str, n: int) -> None:
        self.total += int(n)
        self.by_op[op] = self.by_op.get(op, 0) + int(n)


def _mm(a, b, counter, op="matmul"):
    out = a @ b
    if counter is not None:
        counter.add(op, 2 * out.size * a.shape[-1])
    return out


def _tmm(a, b):
    """sum over leading batch axes of a^T b."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _T(a):
    return np.swapaxes(a, -1, -2)


@dataclass
class AttnParams:
    E: np.ndarray | None  # embedding tables are None on stacked (non-first) blocks
    pos: np.ndarray | None
    E_a: np.ndarray | None
    wsa_q: np.ndarray
    wsa_k: np.ndarray
    wsa_v: np.ndarray
    wsa_o: np.ndarray
    xa_q: np.ndarray | None = None
    xa_k: np.ndarray | None = None
    xa_v: np.ndarray | None = None
    xa_o: np.ndarray | None = None
    window: int = 4

    @property
    def d(self) -> int:
        return self.wsa_q.shape[0]

    @property
    def d_h(self) -> int:
        return self.wsa_q.shape[1]

    @property
    def has_cross(self) -> bool:
        return self.xa_q is not None

    def names(self) -> tuple:
        names = tuple(n for n in ("E", "pos") if getattr(self, n) is not None) + WSA_NAMES
        if self.E_a is not None:
            names = names + ("E_a",)
        if self.has_cross:
            names = names + CROSS_NAMES
        return names

    def tensors(self) -> dict:
        return {n: getattr(self, n) for n in self.names()}

    def copy(self) -> "AttnParams":
        kw = {n: (None if getattr(self, n) is None else getattr(self, n).copy())
              for n in EMBED_NAMES + WSA_NAMES + CROSS_NAMES}
        return AttnParams(window=self.window, **kw)

    def to_blob(self) -> bytes:
        """JSON shape header line followed by little-endian float64 data."""
        tensors = self.tensors()
        header = {"schema": "refocus.attn_params/1", "window": self.window,
                  "tensors": [[n, list(t.shape)] for n, t in tensors.items()]}
        data = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in tensors.values())
        return BLOB_MAGIC + json.dumps(header).encode() + b"\n" + data

    @classmethod
    def from_blob(cls, blob: bytes) -> "AttnParams":
        if not blob.startswith(BLOB_MAGIC):
            raise ValueError("not an attention parameter blob")
        head, _, data = blob[len(BLOB_MAGIC):].partition(b"\n")
        header = json.loads(head)
        kw, off = {}, 0
        for name, shape in header["tensors"]:
            count = int(np.prod(shape))
            kw[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
            off += 8 * count
        if off != len(data):
            raise ValueError("parameter blob has trailing or missing bytes")
        for n in EMBED_NAMES:
            kw.setdefault(n, None)
        return cls(window=header["window"], **kw)


def init_params(structure_size: int, alias_size: int, d: int = 16, d_h: int = 8,
                max_len: int = 64, window: int = 4, cross: bool = True, seed=0,
                out_scale: float = 1e-2, embeddings: bool = True,
                alias_table: bool | None = None) -> AttnParams:
    """Projections ~ N(0, 1/d), embeddings ~ U(-0.1, 0.1), output projections
    shrunk by ``out_scale`` so the residual path dominates at start.

    ``embeddings=False`` builds a stacked block without tables. ``alias_table``
    (default: ``cross``) controls whether ``E_a`` is allocated.
    """
    if d < 1 or d_h < 1 or window < 1:
        raise ValueError("d, d_h and window must be >= 1")
    alias_table = cross if alias_table is None else alias_table
    rng = np.random.default_rng(seed)
    s = 1.0 / math.sqrt(d)

    def proj():
        return rng.standard_normal((d, d_h)) * s

    def out():
        return rng.standard_normal((d_h, d)) * s * out_scale

    emb = lambda n: rng.uniform(-0.1, 0.1, (n, d)) if embeddings else None
    p = AttnParams(E=emb(structure_size), pos=emb(max_len), E_a=None,
                   wsa_q=proj(), wsa_k=proj(), wsa_v=proj(), wsa_o=out(), window=window)
    if cross:
        if alias_table:
            p.E_a = emb(alias_size)
        p.xa_q, p.xa_k, p.xa_v, p.xa_o = proj(), proj(), proj(), out()
    elif alias_table and embeddings:
        p.E_a = emb(alias_size)
    return p


# ---------------------------------------------------------------------------
# core attention


def embed(ids, table: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")
    return table[ids]


def window_mask(n: int, window: int) -> np.ndarray:
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    return (j <= i) & (i - j < window)


def softmax_rows(S: np.ndarray, mask=None) -> np.ndarray:
    if mask is not None:
        S = np.where(mask, S, -np.inf)
    S = S - S.max(axis=-1, keepdims=True)
    P = np.exp(S)
    return P / P.sum(axis=-1, keepdims=True)


def attention(Xq, Xkv, wq, wk, wv, wo, mask=None, counter=None):
    """Single-head attention; returns (output, cache for :func:`attention_backward`)."""
    c = 1.0 / math.sqrt(wq.shape[1])
    Q = _mm(Xq, wq, counter)
    K = _mm(Xkv, wk, counter)
    V = _mm(Xkv, wv, counter)
    S = _mm(Q, _T(K), counter) * c
    P = softmax_rows(S, mask)
    if counter is not None:
        counter.add("scale", S.size)
        counter.add("softmax", 4 * S.size)
    O = _mm(P, V, counter)
    Y = _mm(O, wo, counter)
    return Y, (Xq, Xkv, Q, K, V, P, O, wq, wk, wv, wo, c)


def attention_backward(dY, cache) -> dict:
    Xq, Xkv, Q, K, V, P, O, wq, wk, wv, wo, c = cache
    dwo = _tmm(O, dY)
    dO = dY @ wo.T
    dP = dO @ _T(V)
    dV = _T(P) @ dO
    dS = P * (dP - np.sum(dP * P, axis=-1, keepdims=True))
    dQ = c * dS @ K
    dK = c * _T(dS) @ Q
    return {"q": _tmm(Xq, dQ), "k": _tmm(Xkv, dK), "v": _tmm(Xkv, dV), "o": dwo,
            "Xq": dQ @ wq.T, "Xkv": dK @ wk.T + dV @ wv.T}


def wsa_forward(X, params: AttnParams, counter=None, return_cache=False):
    mask = window_mask(X.shape[-2], params.window)
    Y, cache = attention(X, X, params.wsa_q, params.wsa_k, params.wsa_v, params.wsa_o,
                         mask, counter)
    return (Y, cache) if return_cache else Y


def cross_attn_forward(X_L, A_emb, params: AttnParams, counter=None, return_cache=False):
    if A_emb.shape[-2] == 0:
        # no alias evidence: contributes nothing
        Y = np.zeros_like(X_L)
        return (Y, None) if return_cache else Y
    Y, cache = attention(X_L, A_emb, params.xa_q, params.xa_k, params.xa_v, params.xa_o,
                         None, counter)
    return (Y, cache) if return_cache else Y


@dataclass
class TokenSequence:
    """Structure ids ``(N,)`` and alias ids ``(M,)``, or batched ``(B, N)`` / ``(B, M)``.

    ``scale_ids`` optionally tags each structure token with its pyramid scale
    (0 = coarsest), for scale-restricted cross-attention.
    """

    structure_ids: np.ndarray
    alias_ids: np.ndarray = None
    scale_ids: np.ndarray = None

    def __post_init__(self):
        self.structure_ids = np.asarray(self.structure_ids, dtype=np.int64)
        if self.alias_ids is None:
            self.alias_ids = np.zeros(self.structure_ids.shape[:-1] + (0,), dtype=np.int64)
        self.alias_ids = np.asarray(self.alias_ids, dtype=np.int64)
        if self.structure_ids.shape[:-1] != self.alias_ids.shape[:-1]:
            raise ValueError("structure and alias ids disagree on batch shape")
        if self.scale_ids is not None:
            self.scale_ids = np.asarray(self.scale_ids, dtype=np.int64)
            if self.scale_ids.shape != self.structure_ids.shape:
                raise ValueError("scale ids must tag every structure token")

    def __len__(self):
        return self.structure_ids.shape[-1]


def structure_inputs(ids, params: AttnParams) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    n = ids.shape[-1]
    if n > params.pos.shape[0]:
        raise ValueError(f"sequence length {n} exceeds position table {params.pos.shape[0]}")
    return embed(ids, params.E) + params.pos[:n]


def final_scale_mask(scale_ids, cross_scales: int | None):
    """Queries allowed to read alias evidence: tokens of the final ``cross_scales`` scales."""
    if cross_scales is None or scale_ids is None:
        return None
    if cross_scales < 1:
        raise ValueError("cross_scales must be >= 1")
    scale_ids = np.asarray(scale_ids)
    return scale_ids > scale_ids.max() - cross_scales


def block_forward(X, A_emb, params: AttnParams, use_alias: bool = True, counter=None,
                  query_mask=None):
    """One block on embedded inputs: ``WSA(X) + [mask] * Cross(X, A_emb)``.

    Returns ``(Z, cache)``. ``A_emb=None`` or ``use_alias=False`` drops the
    cross branch.
    """
    Z, wcache = wsa_forward(X, params, counter, return_cache=True)
    xcache = None
    if use_alias and params.has_cross and A_emb is not None:
        C, xcache = cross_attn_forward(X, A_emb, params, counter, return_cache=True)
        if query_mask is not None:
            C = C * query_mask[..., None]
            if counter is not None:
                counter.add("scale_mask", C.size)
        Z = Z + C
        if counter is not None:
            counter.add("branch_add", Z.size)
    return Z, {"X_L": X, "A_emb": A_emb, "wsa": wcache, "cross": xcache, "qmask": query_mask}


def block_backward(cache: dict, dZ: np.ndarray, params: AttnParams) -> dict:
    """Projection gradients of ``sum(Z * dZ)`` plus ``X_L`` and ``A_emb`` input gradients."""
    g = attention_backward(dZ, cache["wsa"])
    grads = {"wsa_q": g["q"], "wsa_k": g["k"], "wsa_v": g["v"], "wsa_o": g["o"]}
    dX = g["Xq"] + g["Xkv"]
    A_emb = cache["A_emb"]
    grads["A_emb"] = None if A_emb is None else np.zeros_like(A_emb)
    if params.has_cross:
        for n in CROSS_NAMES:
            grads[n] = np.zeros_like(getattr(params, n))
        if cache["cross"] is not None:
            dC = dZ if cache["qmask"] is None else dZ * cache["qmask"][..., None]
            gx = attention_backward(dC, cache["cross"])
            grads.update(xa_q=gx["q"], xa_k=gx["k"], xa_v=gx["v"], xa_o=gx["o"])
            dX = dX + gx["Xq"]
            grads["A_emb"] = gx["Xkv"]
    grads["X_L"] = dX
    return grads


def agx_forward(seq: TokenSequence, params: AttnParams, use_alias: bool = True,
                counter=None, return_cache=False, cross_scales: int | None = None):
    """Teacher block output Z; ``use_alias=False`` is the student block."""
    X_L = structure_inputs(seq.structure_ids, params)
    if counter is not None:
        counter.add("embed_add", X_L.size)
    A_emb = None
    if use_alias and params.has_cross:
        A_emb = embed(seq.alias_ids, params.E_a)
    Z, cache = block_forward(X_L, A_emb, params, use_alias, counter,
                             final_scale_mask(seq.scale_ids, cross_scales))
    cache["seq"] = seq
    return (Z, cache) if return_cache else Z


def scatter_embedding_grads(grads: dict, seq: TokenSequence, params: AttnParams,
                            dX: np.ndarray, dA) -> None:
    """Accumulate input gradients into ``E``, ``pos`` and ``E_a`` entries of ``grads``."""
    dE = np.zeros_like(params.E)
    np.add.at(dE, seq.structure_ids, dX)
    dpos = np.zeros_like(params.pos)
    dpos[: len(seq)] = dX.reshape(-1, len(seq), params.d).sum(axis=0)
    grads["E"], grads["pos"] = dE, dpos
    if params.E_a is not None:
        dEa = np.zeros_like(params.E_a)
        if dA is not None:
            np.add.at(dEa, seq.alias_ids, dA)
        grads["E_a"] = dEa


def agx_backward(cache: dict, dZ: np.ndarray, params: AttnParams) -> dict:
    """Gradients of ``sum(Z * dZ)`` w.r.t. every tensor in ``params`` plus the
    input embeddings (``X_L`` and ``A_emb``)."""
    seq = cache["seq"]
    grads = block_backward(cache, dZ, params)
    if grads["A_emb"] is None and params.has_cross:
        grads["A_emb"] = np.zeros(seq.alias_ids.shape + (params.d,))
    scatter_embedding_grads(grads, seq, params, grads["X_L"], grads["A_emb"])
    return grads


# ---------------------------------------------------------------------------
# verification helpers


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def scaled_max_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |analytic - numeric| divided by max |numeric| (floored at 1e-8)."""
    scale = max(float(np.max(np.abs(numeric))) if numeric.size else 0.0, 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale if numeric.size else 0.0


def random_case(seed: int, N: int = 5, M: int = 3, d: int = 6, d_h: int = 4,
                window: int = 3, structure_size: int = 7, alias_size: int = 5):
    rng = np.random.default_rng(seed)
    params = init_params(structure_size, alias_size, d=d, d_h=d_h, max_len=N + 2,
                         window=window, seed=seed, out_scale=1.0)
    # larger embeddings so the softmax is far from uniform
    for n in ("E", "pos", "E_a"):
        getattr(params, n)[...] *= 10.0
    seq = TokenSequence(rng.integers(0, structure_size, N), rng.integers(0, alias_size, M))
    upstream = rng.standard_normal((N, d))
    return params, seq, upstream


def grad_check(seed: int = 0, eps: float = 1e-5, **case) -> dict:
    """Analytic vs central-difference gradients of ``sum(Z * G)`` for each tensor."""
    params, seq, G = random_case(seed, **case)
    _, cache = agx_forward(seq, params, return_cache=True)
    grads = agx_backward(cache, G, params)

    def loss():
        return float(np.sum(agx_forward(seq, params) * G))

    return {name: scaled_max_error(grads[name], numeric_grad(loss, tensor, eps))
            for name, tensor in params.tensors().items()}


def fit_gate_diagnostic(Z, X_L, A_tilde, tol: float = 0.0) -> dict:
    """Per-dimension least-squares gate for ``Z ~ X_L + alpha * A_tilde``.

    Columns of ``A_tilde`` with zero energy get ``nan`` and ``defined=False``.
    ``alpha_wiener`` is the raw value clamped into [0, 1].
    """
    Z, X_L, A = (np.asarray(a, dtype=np.float64) for a in (Z, X_L, A_tilde))
    num = np.sum((Z - X_L) * A, axis=0)
    den = np.sum(A * A, axis=0)
    defined = den > tol
    raw = np.full(den.shape, np.nan)
    raw[defined] = num[defined] / den[defined]
    return {"alpha_raw": raw, "alpha_wiener": np.clip(raw, 0.0, 1.0), "defined": defined}
