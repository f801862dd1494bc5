"""Teacher-to-student distillation objective and a toy online-distillation run.

The student minimises

    total = AR + lambda_feat * sum_l mean((F_stu - sg(F_tea))^2)
               + lambda_logit * KL(p_tea || p_stu)

while the teacher (which also sees alias tokens through the cross-attention
branch) is trained on its own AR loss only.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .agxattn import (AttnParams, FlopCounter, TokenSequence, _mm, _tmm, block_backward,
                      block_forward, embed, final_scale_mask, init_params,
                      scatter_embedding_grads, structure_inputs, wsa_forward)

# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class LossWeights:
    lambda_feat: float = 1.0
    lambda_logit: float = 0.5

    def __post_init__(self):
        for v in (self.lambda_feat, self.lambda_logit):
            if not (math.isfinite(v) and v >= 0):
                raise ValueError("loss weights must be finite and >= 0")


@dataclass(frozen=True)
class LossReport:
    ar: float
    feat: float
    logit_kl: float
    total: float


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _rows(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def ar_cross_entropy(logits, targets) -> float:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``."""
    lp = _rows(np.asarray(logits, dtype=np.float64))
    t = np.asarray(targets, dtype=np.int64).ravel()
    if t.size != lp.shape[0]:
        raise ValueError("one target per logit row required")
    if t.size and (t.min() < 0 or t.max() >= lp.shape[1]):
        raise IndexError(f"target id out of range [0, {lp.shape[1]})")
    lp = log_softmax(lp)
    return float(-np.mean(lp[np.arange(t.size), t]))


def ar_cross_entropy_grad(logits, targets) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    p = np.exp(log_softmax(_rows(logits)))
    t = np.asarray(targets, dtype=np.int64).ravel()
    p[np.arange(t.size), t] -= 1.0
    return (p / t.size).reshape(logits.shape)


def feature_mse(F_stu, F_tea) -> float:
    """Sum over levels of the mean squared student-teacher feature gap."""
    if len(F_stu) != len(F_tea):
        raise ValueError("student and teacher must supply the same number of levels")
    total = 0.0
    for fs, ft in zip(F_stu, F_tea):
        if fs.shape != ft.shape:
            raise ValueError(f"feature shape mismatch {fs.shape} vs {ft.shape}")
        total += float(np.mean((fs - ft) ** 2))
    return total


def feature_mse_grad(F_stu, F_tea) -> list:
    """Gradient w.r.t. the student features only; teacher features are constants."""
    return [2.0 * (fs - ft) / fs.size for fs, ft in zip(F_stu, F_tea)]


def kl_divergence(tea_logits, stu_logits) -> float:
    """Mean over positions of KL(softmax(tea) || softmax(stu)), evaluated in log space."""
    lt = log_softmax(_rows(np.asarray(tea_logits, dtype=np.float64)))
    ls = log_softmax(_rows(np.asarray(stu_logits, dtype=np.float64)))
    return float(np.mean(np.sum(np.exp(lt) * (lt - ls), axis=1)))


def kl_divergence_grad(tea_logits, stu_logits) -> np.ndarray:
    stu_logits = np.asarray(stu_logits, dtype=np.float64)
    pt = np.exp(log_softmax(_rows(np.asarray(tea_logits, dtype=np.float64))))
    ps = np.exp(log_softmax(_rows(stu_logits)))
    return ((ps - pt) / pt.shape[0]).reshape(stu_logits.shape)


def total_loss(ar: float, feat: float, logit_kl: float,
               weights: LossWeights = LossWeights()) -> LossReport:
    total = ar + weights.lambda_feat * feat + weights.lambda_logit * logit_kl
    return LossReport(ar=ar, feat=feat, logit_kl=logit_kl, total=total)


# ---------------------------------------------------------------------------
# tiny autoregressive network: H_{b+1} = H_b + block_b(H_b), logits = H W_out


@dataclass
class ARNet:
    """Stack of blocks over shared embeddings; ``attn`` is block 0 and owns the tables."""

    attn: AttnParams
    W_out: np.ndarray
    blocks: list = field(default_factory=list)  # blocks 1.. (no embedding tables)
    cross_scales: int | None = None

    @property
    def all_blocks(self) -> list:
        return [self.attn] + list(self.blocks)

    @property
    def has_cross(self) -> bool:
        return any(b.has_cross for b in self.all_blocks)

    def tensors(self) -> dict:
        t = dict(self.attn.tensors())
        for i, b in enumerate(self.blocks, start=1):
            t.update({f"b{i}.{n}": v for n, v in b.tensors().items()})
        t["W_out"] = self.W_out
        return t

    def forward(self, seq: TokenSequence, use_alias: bool = True, counter=None):
        """Returns (logits, final features H, cache)."""
        use_alias = use_alias and self.has_cross
        X_L = structure_inputs(seq.structure_ids, self.attn)
        if counter is not None:
            counter.add("embed_add", X_L.size)
        A_emb = embed(seq.alias_ids, self.attn.E_a) if use_alias else None
        qmask = final_scale_mask(seq.scale_ids, self.cross_scales) if use_alias else None
        H, caches = X_L, []
        for b in self.all_blocks:
            Z, c = block_forward(H, A_emb, b, use_alias, counter, qmask)
            H = H + Z
            if counter is not None:
                counter.add("residual_add", H.size)
            caches.append(c)
        return _mm(H, self.W_out, counter), H, {"seq": seq, "blocks": caches}

    def backward(self, cache, H, dlogits, dH_extra=None) -> dict:
        dH = dlogits @ self.W_out.T
        if dH_extra is not None:
            dH = dH + dH_extra
        grads, dA = {}, None
        for i in range(len(self.all_blocks) - 1, -1, -1):
            b = self.all_blocks[i]
            g = block_backward(cache["blocks"][i], dH, b)
            dH = dH + g.pop("X_L")  # residual plus block path
            ga = g.pop("A_emb")
            if ga is not None:
                dA = ga if dA is None else dA + ga
            prefix = f"b{i}." if i else ""
            grads.update({prefix + n: v for n, v in g.items()})
        scatter_embedding_grads(grads, cache["seq"], self.attn, dH, dA)
        grads["W_out"] = _tmm(H, dlogits)
        return grads

    def sgd(self, grads: dict, lr: float) -> None:
        for name, t in self.tensors().items():
            t -= lr * grads[name]


def make_net(structure_size: int, alias_size: int, d: int, d_h: int, max_len: int,
             window: int, cross: bool, seed: int, n_blocks: int = 1, cross_blocks: int = 2,
             cross_scales: int | None = None) -> ARNet:
    """``cross`` puts alias cross-attention on the final ``cross_blocks`` blocks."""
    if n_blocks < 1 or cross_blocks < 0:
        raise ValueError("need n_blocks >= 1 and cross_blocks >= 0")
    first_cross = n_blocks - min(cross_blocks, n_blocks) if cross else n_blocks
    has = [cross and i >= first_cross for i in range(n_blocks)]
    common = dict(d=d, d_h=d_h, max_len=max_len, window=window)
    first = init_params(structure_size, alias_size, cross=has[0], seed=seed,
                        alias_table=any(has), **common)
    rest = [init_params(structure_size, alias_size, cross=has[i], seed=[seed, i],
                        embeddings=False, **common) for i in range(1, n_blocks)]
    rng = np.random.default_rng([seed, 1])
    return ARNet(first, rng.standard_normal((d, structure_size)) / math.sqrt(d), rest,
                 cross_scales)


def vanilla_forward(attn: AttnParams, W_out: np.ndarray, structure_ids, counter=None,
                    blocks=()):
    """Plain structure-only path: embed, windowed self-attention blocks with residuals, readout."""
    H = structure_inputs(structure_ids, attn)
    if counter is not None:
        counter.add("embed_add", H.size)
    for b in [attn] + list(blocks):
        H = H + wsa_forward(H, b, counter)
        if counter is not None:
            counter.add("residual_add", H.size)
    return _mm(H, W_out, counter)


class DeployedStudent:
    """Inference-only student; alias tokens are accepted and ignored."""

    def __init__(self, net: ARNet):
        if net.has_cross:
            raise ValueError("a deployed student must not carry cross-attention weights")
        self.net = net

    def logits(self, seq: TokenSequence, counter=None) -> np.ndarray:
        plain = TokenSequence(seq.structure_ids)
        return self.net.forward(plain, use_alias=False, counter=counter)[0]


# ---------------------------------------------------------------------------
# toy corpus + training loop


@dataclass(frozen=True)
class ToyConfig:
    seq_len: int = 16
    d: int = 16
    d_h: int = 8
    window: int = 4
    structure_size: int = 32
    alias_size: int = 8
    patch: int = 4
    n_images: int = 32
    K: int = 4
    rho_max: float = 12.0
    kmeans_iters: int = 10
    steps: int = 200
    lr: float = 0.3
    seed: int = 0
    lambda_feat: float = 1.0
    lambda_logit: float = 0.5
    n_blocks: int = 1
    cross_blocks: int = 2  # teacher alias branch on the final blocks (clipped to n_blocks)
    cross_scales: int | None = None  # or restrict it to queries of the final scales

    def __post_init__(self):
        if self.n_blocks < 1 or self.cross_blocks < 0:
            raise ValueError("need n_blocks >= 1 and cross_blocks >= 0")
        if self.cross_scales is not None and self.cross_scales < 1:
            raise ValueError("cross_scales must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


class DivergenceError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass
class ToyCorpus:
    sequences: TokenSequence
    structure_codebook: object
    alias_codebook: object
    grid_side: int


def build_toy_corpus(cfg: ToyConfig) -> ToyCorpus:
    """Tokenize the s=2 scale of refocusing pyramids over random test patterns."""
    from .imagecore import PatternSpec, gen_pattern
    from .psf import focus_schedule
    from .pyramid import beta_schedule, build_pyramid, dyadic_factors
    from .vq import patchify, quantize, train_codebook

    side = math.ceil(math.sqrt(cfg.seq_len))
    size = 2 * cfg.patch * side
    rng = np.random.default_rng([cfg.seed, 7])
    schedule = focus_schedule(cfg.K, cfg.rho_max)
    factors = dyadic_factors(cfg.K)
    betas = beta_schedule(cfg.K, 1e-3, 1e-2)
    level = factors.index(2) if 2 in factors else cfg.K - 1
    L_patches, A_patches = [], []
    for i in range(cfg.n_images):
        kind = ("sinusoid", "zoneplate", "checkerboard")[i % 3]
        if kind == "sinusoid":
            spec = PatternSpec(kind, size, freq=float(rng.uniform(0.05, 0.5)),
                               angle=float(rng.uniform(0, 180)))
        elif kind == "zoneplate":
            spec = PatternSpec(kind, size, alpha=float(rng.uniform(0.2, 1.5)) * math.pi / size)
        else:
            spec = PatternSpec(kind, size, cell=int(rng.integers(1, 5)))
        pyr = build_pyramid(gen_pattern(spec), schedule, factors, betas, seed=cfg.seed + i)
        t = pyr.scales[level]
        L_patches.append(patchify(t.L, cfg.patch))
        A_patches.append(patchify(t.A, cfg.patch))
    Lp, Ap = np.concatenate(L_patches), np.concatenate(A_patches)
    cb_L = train_codebook(Lp, cfg.structure_size, cfg.kmeans_iters, cfg.seed, role="structure")
    cb_A = train_codebook(Ap, cfg.alias_size, cfg.kmeans_iters, cfg.seed, role="alias")
    per = side * side
    r = quantize(cb_L, Lp)[0].reshape(cfg.n_images, per)[:, : cfg.seq_len]
    a = quantize(cb_A, Ap)[0].reshape(cfg.n_images, per)[:, : cfg.seq_len]
    return ToyCorpus(TokenSequence(r, a), cb_L, cb_A, side)


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)

    def append(self, step, report: LossReport, teacher_ar: float):
        self.rows.append({"step": step, **asdict(report), "teacher_ar": teacher_ar})

    def column(self, key) -> np.ndarray:
        return np.array([r[key] for r in self.rows])

    def to_csv(self) -> str:
        lines = ["step,ar,feat,kl,total,teacher_ar"]
        for r in self.rows:
            lines.append(f"{r['step']},{r['ar']!r},{r['feat']!r},{r['logit_kl']!r},"
                         f"{r['total']!r},{r['teacher_ar']!r}")
        return "\n".join(lines) + "\n"


def distill_step(teacher: ARNet, student: ARNet, seq: TokenSequence,
                 weights: LossWeights, lr: float):
    """One online step: losses at current weights, then SGD on both networks."""
    ids = seq.structure_ids
    targets = ids[..., 1:]
    t_logits, t_H, t_cache = teacher.forward(seq, use_alias=True)
    s_logits, s_H, s_cache = student.forward(TokenSequence(ids), use_alias=False)

    t_pred, s_pred = t_logits[..., :-1, :], s_logits[..., :-1, :]
    teacher_ar = ar_cross_entropy(t_pred, targets)
    report = total_loss(ar_cross_entropy(s_pred, targets),
                        feature_mse([s_H], [t_H]),
                        kl_divergence(t_pred, s_pred), weights)

    # teacher: own AR loss only
    dt = np.zeros_like(t_logits)
    dt[..., :-1, :] = ar_cross_entropy_grad(t_pred, targets)
    t_grads = teacher.backward(t_cache, t_H, dt)

    # student: AR + distillation terms, teacher outputs held constant
    ds = np.zeros_like(s_logits)
    ds[..., :-1, :] = (ar_cross_entropy_grad(s_pred, targets)
                       + weights.lambda_logit * kl_divergence_grad(t_pred, s_pred))
    dH = weights.lambda_feat * feature_mse_grad([s_H], [t_H])[0]
    s_grads = student.backward(s_cache, s_H, ds, dH)

    teacher.sgd(t_grads, lr)
    student.sgd(s_grads, lr)
    return report, teacher_ar


def toy_distill_run(cfg: ToyConfig = ToyConfig(), corpus: ToyCorpus | None = None):
    """Train teacher and student jointly; returns (trace, deployed student, teacher)."""
    corpus = build_toy_corpus(cfg) if corpus is None else corpus
    seq = corpus.sequences
    n = len(seq)
    common = dict(structure_size=cfg.structure_size, alias_size=cfg.alias_size, d=cfg.d,
                  d_h=cfg.d_h, max_len=n, window=cfg.window, n_blocks=cfg.n_blocks,
                  cross_blocks=cfg.cross_blocks, cross_scales=cfg.cross_scales)
    teacher = make_net(cross=True, seed=cfg.seed * 2 + 1, **common)
    student = make_net(cross=False, seed=cfg.seed * 2 + 2, **common)
    weights = LossWeights(cfg.lambda_feat, cfg.lambda_logit)
    trace = TrainTrace()
    for step in range(1, cfg.steps + 1):
        # overflow on the way to a blow-up is reported through DivergenceError
        with np.errstate(over="ignore", invalid="ignore"):
            report, t_ar = distill_step(teacher, student, seq, weights, cfg.lr)
        if not all(math.isfinite(v) for v in (report.total, t_ar)):
            raise DivergenceError(f"non-finite loss at step {step}", trace)
        trace.append(step, report, t_ar)
    return trace, DeployedStudent(student), teacher


def forward_flops(fn) -> int:
    c = FlopCounter()
    fn(c)
    return c.total
