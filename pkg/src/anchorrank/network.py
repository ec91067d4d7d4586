"""Forward pass of the anchor-conditioned ranking network.

Pipeline per (graph, anchor set): four encoding branches (anchor/background
x semantic/structural), cross-attention fusion between the branches, an
auxiliary denoising auto-encoder on the fused background rows, attention
based aggregation down to one score per node, and a final sigmoid blend of
that score with two anchor-similarity vectors. The composite training loss
is a base BCE plus two similarity-weighted BCE terms plus the weighted
reconstruction error.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .features import (
    EmbeddingProvider,
    normalize_structural_matrix,
    semantic_matrix,
    structural_feature_matrix,
)
from .graphs import AnchorPair, Dataset, Graph, role_labels

STREAMS = ("ca_sem", "ca_str", "bg_sem", "bg_str")


def _live_streams(layer: int, n_layers: int) -> tuple[str, ...]:
    return STREAMS if layer < n_layers - 1 else ("bg_sem", "bg_str")


@dataclass
class ModelConfig:
    """Hyperparameters and ablation toggles for the ranking network."""

    d_sem: int = 64
    d_str: int = 5
    d_model: int = 64
    n_fusion_layers: int = 1
    heads: int = 1
    ae_drop_prob: float = 0.1
    ae_weight: float = 0.1
    mu: float = 0.5
    nu: float = 0.5
    enable_ca: bool = True
    enable_aa: bool = True
    enable_ae: bool = True
    enable_pp: bool = True
    seed: int = 0
    epochs: int = 30
    lr: float = 5e-3
    patience: int = 10

    def validate(self) -> None:
        for name in ("d_sem", "d_str", "d_model", "n_fusion_layers", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.ae_drop_prob < 1.0:
            raise ValueError(f"ae_drop_prob must be in [0, 1), got {self.ae_drop_prob}")
        if self.mu < 0 or self.nu < 0 or self.ae_weight < 0:
            raise ValueError("loss weights mu, nu, ae_weight must be >= 0")
        if self.d_model % self.heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by heads ({self.heads})"
            )
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass
class RawEncoding:
    """Cacheable, parameter-free inputs for one (graph, anchor set)."""

    graph_id: str
    node_ids: tuple[str, ...]
    ca_indices: tuple[int, ...]
    sem: np.ndarray  # [n, d_sem] anchor-conditioned embeddings
    strn: np.ndarray  # [n, d_str] normalized structural statistics


@dataclass
class ForwardOutput:
    """Everything the forward pass produces for one example."""

    i_init: Tensor  # [n, 1] pre-adjustment scores
    i_final: Tensor  # [n, 1] scores in (0, 1)
    recon_loss: Tensor  # scalar
    channel_scores: Tensor  # [n, 2] semantic/structural scores
    fused_sem: Tensor  # [n, d_model]
    fused_str: Tensor  # [n, d_model]
    loss: Tensor | None = None

    @property
    def scores(self) -> np.ndarray:
        return self.i_final.data[:, 0].copy()


def encode_raw(
    graph: Graph, ca_ids: Sequence[str], provider: EmbeddingProvider, config: ModelConfig
) -> RawEncoding:
    """Compute the parameter-free encoder inputs for one anchor set."""
    ca_sorted = tuple(sorted(set(ca_ids)))
    sem = semantic_matrix(graph, ca_sorted, provider)
    if sem.shape[1] != config.d_sem:
        raise ValueError(
            f"provider dim {sem.shape[1]} does not match config d_sem {config.d_sem}"
        )
    raw = structural_feature_matrix(graph, ca_sorted)
    strn = normalize_structural_matrix(raw, graph.n_nodes)
    return RawEncoding(
        graph_id=graph.id,
        node_ids=graph.node_ids,
        ca_indices=tuple(graph.id_to_index[c] for c in ca_sorted),
        sem=sem,
        strn=strn,
    )


# ---------------------------------------------------------------------------
# parameters


def init_params(config: ModelConfig) -> dict[str, Tensor]:
    """Seeded Glorot-style initialization of every trainable tensor."""
    rng = np.random.default_rng([config.seed, 0])
    d = config.d_model
    params: dict[str, Tensor] = {}

    def mat(name: str, rows: int, cols: int) -> None:
        scale = math.sqrt(2.0 / (rows + cols))
        params[name] = ad.parameter(rng.normal(0.0, scale, size=(rows, cols)))

    def bias(name: str, cols: int) -> None:
        params[name] = ad.parameter(np.zeros((1, cols)))

    def ln(name: str, cols: int) -> None:
        params[f"{name}.g"] = ad.parameter(np.ones((1, cols)))
        params[f"{name}.b"] = ad.parameter(np.zeros((1, cols)))

    mat("proj.sem", config.d_sem, d)
    mat("proj.str", config.d_str, d)
    for layer in range(config.n_fusion_layers):
        # Anchor-stream outputs only feed subsequent layers, so the last
        # layer carries blocks for the background streams alone.
        for stream in _live_streams(layer, config.n_fusion_layers):
            p = f"fuse{layer}.{stream}"
            for w in ("wq", "wk", "wv", "wo"):
                mat(f"{p}.{w}", d, d)
            mat(f"{p}.ffn.w1", d, 4 * d)
            bias(f"{p}.ffn.b1", 4 * d)
            mat(f"{p}.ffn.w2", 4 * d, d)
            bias(f"{p}.ffn.b2", d)
            ln(f"{p}.ln1", d)
            ln(f"{p}.ln2", d)
    width = 2 * d
    params["ae.placeholder"] = ad.parameter(rng.normal(0.0, 0.1, size=(1, width)))
    mat("ae.enc.w", width, width)
    bias("ae.enc.b", width)
    mat("ae.dec.w", width, width)
    bias("ae.dec.b", width)
    for stream in ("sem", "str"):
        mat(f"agg.{stream}.w1", d, d)
        bias(f"agg.{stream}.b1", d)
        mat(f"agg.{stream}.w2", d, d)
        bias(f"agg.{stream}.b2", d)
    mat("agg.matrix", d, 2 * d)
    for name in ("pp.alpha", "pp.beta", "pp.gamma"):
        params[name] = ad.parameter(np.ones((1, 1)))
    return params


def clone_param_data(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def set_param_data(params: Mapping[str, Tensor], data: Mapping[str, np.ndarray]) -> None:
    for k, v in params.items():
        v.data = data[k].copy()
        v.zero_grad()


# ---------------------------------------------------------------------------
# four-branch encoding and fusion


def four_branch_encode(
    graph: Graph,
    pair: AnchorPair,
    provider: EmbeddingProvider,
    params: Mapping[str, Tensor],
    config: ModelConfig,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Project the raw inputs into the four branch matrices.

    Background rows follow graph node order; anchor rows follow sorted
    anchor id order. Returns (anchor-sem, anchor-str, bg-sem, bg-str).
    """
    raw = encode_raw(graph, pair.ca_sorted, provider, config)
    return project_raw(raw, params, config)


def project_raw(
    raw: RawEncoding, params: Mapping[str, Tensor], config: ModelConfig
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    e_bg_sem = ad.matmul(ad.constant(raw.sem), params["proj.sem"])
    e_bg_str = ad.matmul(ad.constant(raw.strn), params["proj.str"])
    if config.enable_ca:
        ca_idx = list(raw.ca_indices)
        e_ca_sem = ad.matmul(ad.constant(raw.sem[ca_idx]), params["proj.sem"])
        e_ca_str = ad.matmul(ad.constant(raw.strn[ca_idx]), params["proj.str"])
    else:
        zeros = np.zeros((len(raw.ca_indices), config.d_model))
        e_ca_sem = ad.constant(zeros)
        e_ca_str = ad.constant(zeros.copy())
    return e_ca_sem, e_ca_str, e_bg_sem, e_bg_str


def _multihead(
    x: Tensor, ctx: Tensor, prefix: str, params: Mapping[str, Tensor], heads: int
) -> Tensor:
    q = ad.matmul(x, params[f"{prefix}.wq"])
    k = ad.matmul(ctx, params[f"{prefix}.wk"])
    v = ad.matmul(ctx, params[f"{prefix}.wv"])
    if heads == 1:
        att = ad.attention(q, k, v)
    else:
        dh = q.shape[1] // heads
        parts = [
            ad.attention(
                ad.narrow(q, 1, h * dh, (h + 1) * dh),
                ad.narrow(k, 1, h * dh, (h + 1) * dh),
                ad.narrow(v, 1, h * dh, (h + 1) * dh),
            )
            for h in range(heads)
        ]
        att = ad.concat(parts, axis=1)
    return ad.matmul(att, params[f"{prefix}.wo"])


def _fusion_block(
    x: Tensor, ctx: Tensor, prefix: str, params: Mapping[str, Tensor], heads: int
) -> Tensor:
    att = _multihead(x, ctx, prefix, params, heads)
    u = ad.layer_norm(ad.add(x, att))
    u = ad.add(ad.mul(u, params[f"{prefix}.ln1.g"]), params[f"{prefix}.ln1.b"])
    hidden = ad.relu(ad.add(ad.matmul(u, params[f"{prefix}.ffn.w1"]), params[f"{prefix}.ffn.b1"]))
    ff = ad.add(ad.matmul(hidden, params[f"{prefix}.ffn.w2"]), params[f"{prefix}.ffn.b2"])
    y = ad.layer_norm(ad.add(u, ff))
    return ad.add(ad.mul(y, params[f"{prefix}.ln2.g"]), params[f"{prefix}.ln2.b"])


def cross_attention_fuse(
    e_ca_sem: Tensor,
    e_ca_str: Tensor,
    e_bg_sem: Tensor,
    e_bg_str: Tensor,
    params: Mapping[str, Tensor],
    config: ModelConfig,
) -> tuple[Tensor, Tensor]:
    """Blend each branch with the other three via cross-attention.

    Every branch is the query of its own block while the row-concatenation
    of the remaining three branches provides keys and values; all four
    branches advance together through ``n_fusion_layers`` blocks, and the
    two background outputs are returned.
    """
    streams = {
        "ca_sem": e_ca_sem,
        "ca_str": e_ca_str,
        "bg_sem": e_bg_sem,
        "bg_str": e_bg_str,
    }
    for layer in range(config.n_fusion_layers):
        updated = dict(streams)
        for name in _live_streams(layer, config.n_fusion_layers):
            others = [streams[o] for o in STREAMS if o != name]
            ctx = ad.concat(others, axis=0)
            updated[name] = _fusion_block(
                streams[name], ctx, f"fuse{layer}.{name}", params, config.heads
            )
        streams = updated
    return streams["bg_sem"], streams["bg_str"]


# ---------------------------------------------------------------------------
# reconstruction auto-encoder


def reconstruction_ae(
    f_bg_sem: Tensor,
    f_bg_str: Tensor,
    drop_mask: np.ndarray,
    params: Mapping[str, Tensor],
) -> Tensor:
    """MSE of reconstructing dropped fused rows from a learned placeholder.

    Rows flagged by ``drop_mask`` are replaced with the placeholder vector,
    a row-wise MLP reconstructs the corrupted matrix, and the error is the
    mean squared difference on the dropped rows only. No dropped rows means
    an exact zero loss.
    """
    mask = np.asarray(drop_mask, dtype=bool).reshape(-1)
    n = f_bg_sem.shape[0]
    if mask.shape[0] != n:
        raise ad.AutodiffError(
            f"drop_mask length {mask.shape[0]} != node count {n}"
        )
    if not mask.any():
        return ad.constant(0.0)
    x = ad.concat([f_bg_sem, f_bg_str], axis=1)
    m_col = ad.constant(mask.astype(np.float64)[:, None])
    keep = ad.constant((~mask).astype(np.float64)[:, None])
    corrupted = ad.add(ad.mul(x, keep), ad.mul(params["ae.placeholder"], m_col))
    hidden = ad.relu(ad.add(ad.matmul(corrupted, params["ae.enc.w"]), params["ae.enc.b"]))
    recon = ad.add(ad.matmul(hidden, params["ae.dec.w"]), params["ae.dec.b"])
    err = ad.mul(ad.sub(recon, x), m_col)
    denom = float(mask.sum()) * x.shape[1]
    return ad.scalar_mul(ad.tsum(ad.mul(err, err)), 1.0 / denom)


# ---------------------------------------------------------------------------
# attention-based aggregation


def _agg_mlp(x: Tensor, stream: str, params: Mapping[str, Tensor]) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, params[f"agg.{stream}.w1"]), params[f"agg.{stream}.b1"]))
    return ad.add(ad.matmul(h, params[f"agg.{stream}.w2"]), params[f"agg.{stream}.b2"])


def attention_aggregate(
    f_bg_sem: Tensor,
    f_bg_str: Tensor,
    params: Mapping[str, Tensor],
    config: ModelConfig,
) -> tuple[Tensor, Tensor]:
    """Reduce the fused matrices to one score per node.

    Two MLP encoders produce key rows per channel; the aggregation matrix
    maps the averaged fused embedding to the matching query rows. A scaled
    Hadamard reduction yields a per-node (semantic, structural) score pair,
    combined by a per-node softmax over the two channels (or by a plain
    mean when the attention combiner is disabled).
    """
    d = config.d_model
    k_sem = _agg_mlp(f_bg_sem, "sem", params)
    k_str = _agg_mlp(f_bg_str, "str", params)
    h = ad.scalar_mul(ad.add(f_bg_sem, f_bg_str), 0.5)
    q_all = ad.matmul(h, params["agg.matrix"])
    q_sem = ad.narrow(q_all, 1, 0, d)
    q_str = ad.narrow(q_all, 1, d, 2 * d)
    scale = 1.0 / math.sqrt(d)
    s_sem = ad.scalar_mul(ad.tsum(ad.mul(k_sem, q_sem), axis=1, keepdims=True), scale)
    s_str = ad.scalar_mul(ad.tsum(ad.mul(k_str, q_str), axis=1, keepdims=True), scale)
    channel_scores = ad.concat([s_sem, s_str], axis=1)
    if config.enable_aa:
        weights = ad.softmax(channel_scores, axis=1)
        i_init = ad.tsum(ad.mul(weights, channel_scores), axis=1, keepdims=True)
    else:
        i_init = ad.mean(channel_scores, axis=1, keepdims=True)
    return i_init, channel_scores


# ---------------------------------------------------------------------------
# anchor similarity vectors


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def semantic_similarity_vector(
    graph: Graph, ca_ids: Sequence[str], provider: EmbeddingProvider
) -> np.ndarray:
    """Mean cosine similarity of each node's embedding to the anchor embeddings.

    Anchor members are pinned to exactly 1. Zero-norm embeddings contribute
    a cosine of 0.
    """
    ca_sorted = sorted(set(ca_ids))
    sem = semantic_matrix(graph, ca_sorted, provider)
    ca_set = set(ca_sorted)
    ca_rows = [sem[graph.id_to_index[c]] for c in ca_sorted]
    out = np.empty(graph.n_nodes, dtype=np.float64)
    for i, node in enumerate(graph.nodes):
        if node.id in ca_set:
            out[i] = 1.0
        else:
            out[i] = sum(_cosine(sem[i], row) for row in ca_rows) / len(ca_rows)
    return out


def fit_structural_regression(
    dataset: Dataset, sample_fraction: float = 0.05, seed: int = 0
) -> tuple[np.ndarray, float]:
    """Least-squares fit of importance membership on structural features.

    Samples a fraction of (graph, pair, node) triples from the train split,
    stratified by role so the anchor : important : background proportions
    are preserved, and regresses binary membership targets on the normalized
    5-vector with a bias term. A rank-deficient design falls back to the
    constant predictor with a warning.
    """
    if not 0.0 < sample_fraction <= 1.0:
        raise ValueError(f"sample_fraction must be in (0, 1], got {sample_fraction}")
    rows_by_role: dict[str, list[tuple[np.ndarray, float]]] = {
        "ca": [],
        "gt": [],
        "bg": [],
    }
    for graph in dataset.graphs_in("train"):
        for pair in graph.pairs:
            strn = normalize_structural_matrix(
                structural_feature_matrix(graph, pair.ca_sorted), graph.n_nodes
            )
            for i, node in enumerate(graph.nodes):
                y = 1.0 if node.id in pair.gt else 0.0
                if node.id in pair.ca:
                    role = "ca"
                elif node.id in pair.gt:
                    role = "gt"
                else:
                    role = "bg"
                rows_by_role[role].append((strn[i], y))
    total = sum(len(v) for v in rows_by_role.values())
    if total == 0:
        raise ValueError("train split holds no (graph, pair) examples")
    rng = np.random.default_rng([seed, 1])
    sampled: list[tuple[np.ndarray, float]] = []
    for role in ("ca", "gt", "bg"):
        rows = rows_by_role[role]
        if not rows:
            continue
        take = max(1, math.ceil(sample_fraction * len(rows)))
        chosen = rng.choice(len(rows), size=take, replace=False)
        sampled.extend(rows[j] for j in sorted(chosen))
    x = np.stack([r[0] for r in sampled])
    y = np.array([r[1] for r in sampled])
    return solve_linear_probe(x, y)


def solve_linear_probe(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Least squares with bias; constant-predictor fallback when rank-deficient."""
    design = np.hstack([x, np.ones((x.shape[0], 1))])
    solution, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        warnings.warn(
            "rank-deficient structural design matrix; falling back to the "
            "constant predictor",
            RuntimeWarning,
            stacklevel=2,
        )
        return np.zeros(x.shape[1]), float(y.mean())
    return solution[:-1].copy(), float(solution[-1])


def structural_similarity_vector(
    graph: Graph, ca_ids: Sequence[str], coef: np.ndarray, bias: float
) -> np.ndarray:
    """Frozen-regression structural similarity, clamped to [0, 1]."""
    strn = normalize_structural_matrix(
        structural_feature_matrix(graph, sorted(set(ca_ids))), graph.n_nodes
    )
    return np.clip(strn @ np.asarray(coef, dtype=np.float64) + bias, 0.0, 1.0)


# ---------------------------------------------------------------------------
# post-processing and loss


def post_process(
    i_init: Tensor,
    s_sem: np.ndarray,
    s_str: np.ndarray,
    params: Mapping[str, Tensor],
    config: ModelConfig,
) -> Tensor:
    """Sigmoid blend of the network score with the two similarity vectors."""
    if not config.enable_pp:
        return ad.sigmoid(i_init)
    if s_sem.shape[0] != i_init.shape[0] or s_str.shape[0] != i_init.shape[0]:
        raise ad.AutodiffError(
            f"post_process: lengths differ ({i_init.shape[0]}, {s_sem.shape[0]}, "
            f"{s_str.shape[0]})"
        )
    z = ad.mul(i_init, params["pp.alpha"])
    z = ad.add(z, ad.mul(ad.constant(s_sem[:, None]), params["pp.beta"]))
    z = ad.add(z, ad.mul(ad.constant(s_str[:, None]), params["pp.gamma"]))
    return ad.sigmoid(z)


def total_loss(
    i_final: Tensor,
    target: np.ndarray,
    s_sem: np.ndarray,
    s_str: np.ndarray,
    recon_loss: Tensor,
    config: ModelConfig,
) -> Tensor:
    """Composite objective: base BCE + similarity-weighted BCEs + AE term.

    ``target`` must already be scaled to [0, 1]. With mu = nu = 0 and the
    auto-encoder disabled this is exactly the plain BCE.
    """
    t = target.reshape(-1, 1)
    loss = ad.bce(i_final, t)
    if config.mu > 0.0:
        loss = ad.add(loss, ad.scalar_mul(ad.bce(i_final, s_sem.reshape(-1, 1) * t), config.mu))
    if config.nu > 0.0:
        loss = ad.add(loss, ad.scalar_mul(ad.bce(i_final, s_str.reshape(-1, 1) * t), config.nu))
    if config.enable_ae and config.ae_weight > 0.0:
        loss = ad.add(loss, ad.scalar_mul(recon_loss, config.ae_weight))
    return loss


def full_forward(
    raw: RawEncoding,
    s_sem: np.ndarray,
    s_str: np.ndarray,
    params: Mapping[str, Tensor],
    config: ModelConfig,
    drop_mask: np.ndarray | None = None,
    target: np.ndarray | None = None,
) -> ForwardOutput:
    """Run the whole network on one example; adds the loss when a target is given."""
    n = len(raw.node_ids)
    if not config.enable_ca:
        s_sem = np.full(n, 0.5)
        s_str = np.full(n, 0.5)
    branches = project_raw(raw, params, config)
    f_sem, f_str = cross_attention_fuse(*branches, params, config)
    if drop_mask is None:
        drop_mask = np.zeros(n, dtype=bool)
    recon = reconstruction_ae(f_sem, f_str, drop_mask, params)
    i_init, channel_scores = attention_aggregate(f_sem, f_str, params, config)
    i_final = post_process(i_init, s_sem, s_str, params, config)
    loss = None
    if target is not None:
        loss = total_loss(i_final, target, s_sem, s_str, recon, config)
    return ForwardOutput(
        i_init=i_init,
        i_final=i_final,
        recon_loss=recon,
        channel_scores=channel_scores,
        fused_sem=f_sem,
        fused_str=f_str,
        loss=loss,
    )


def normalized_target(graph: Graph, pair: AnchorPair) -> np.ndarray:
    """Importance targets scaled into [0, 1] for the BCE loss."""
    y = role_labels(graph, pair)
    top = y.max()
    return y / top if top > 0 else y
