"""Trainable anchor-conditioned node ranker with a scikit-learn style API.

``AnchorRanker`` fits on a multi-graph :class:`~anchorrank.graphs.Dataset`
(one optimizer step per (graph, anchor pair) example) and predicts a ranked
node list for any graph and anchor set, including graphs never seen during
training. Training is deterministic under a fixed seed: identical config
and data reproduce byte-identical checkpoints.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from . import network as net
from .features import EmbeddingProvider, default_hash_provider, provider_from_spec
from .graphs import AnchorPair, Dataset, Graph, dataset_to_jsonl, role_labels, split_to_json
from .metrics import ndcg_at_k, rank_nodes
from .validation import check_ca, check_fitted


class TrainingError(RuntimeError):
    """Training aborted (empty split, non-finite loss, ...)."""


@dataclass
class _Example:
    graph: Graph
    pair_index: int
    raw: net.RawEncoding
    s_sem: np.ndarray
    s_str: np.ndarray
    target: np.ndarray
    truth: dict[str, float]


class AnchorRanker(BaseEstimator):
    """Cross-graph node importance estimator conditioned on anchor nodes.

    Parameters mirror :class:`~anchorrank.network.ModelConfig`;
    ``provider=None`` selects the built-in hash embedding provider seeded
    with ``seed``.
    """

    def __init__(
        self,
        d_sem: int = 64,
        d_str: int = 5,
        d_model: int = 64,
        n_fusion_layers: int = 1,
        heads: int = 1,
        ae_drop_prob: float = 0.1,
        ae_weight: float = 0.1,
        mu: float = 0.5,
        nu: float = 0.5,
        enable_ca: bool = True,
        enable_aa: bool = True,
        enable_ae: bool = True,
        enable_pp: bool = True,
        seed: int = 0,
        epochs: int = 30,
        lr: float = 5e-3,
        patience: int = 10,
        sample_fraction: float = 0.05,
        semantic_seed: int | None = None,
        provider: EmbeddingProvider | None = None,
    ):
        self.d_sem = d_sem
        self.d_str = d_str
        self.d_model = d_model
        self.n_fusion_layers = n_fusion_layers
        self.heads = heads
        self.ae_drop_prob = ae_drop_prob
        self.ae_weight = ae_weight
        self.mu = mu
        self.nu = nu
        self.enable_ca = enable_ca
        self.enable_aa = enable_aa
        self.enable_ae = enable_ae
        self.enable_pp = enable_pp
        self.seed = seed
        self.epochs = epochs
        self.lr = lr
        self.patience = patience
        self.sample_fraction = sample_fraction
        self.semantic_seed = semantic_seed
        self.provider = provider

    # -- configuration ------------------------------------------------------

    def _config(self) -> net.ModelConfig:
        cfg = net.ModelConfig(
            d_sem=self.d_sem,
            d_str=self.d_str,
            d_model=self.d_model,
            n_fusion_layers=self.n_fusion_layers,
            heads=self.heads,
            ae_drop_prob=self.ae_drop_prob,
            ae_weight=self.ae_weight,
            mu=self.mu,
            nu=self.nu,
            enable_ca=self.enable_ca,
            enable_aa=self.enable_aa,
            enable_ae=self.enable_ae,
            enable_pp=self.enable_pp,
            seed=self.seed,
            epochs=self.epochs,
            lr=self.lr,
            patience=self.patience,
        )
        cfg.validate()
        return cfg

    def _resolve_provider(self) -> EmbeddingProvider:
        if self.provider is not None:
            return self.provider
        seed = self.seed if self.semantic_seed is None else self.semantic_seed
        return default_hash_provider(dim=self.d_sem, seed=seed)

    # -- fitting -------------------------------------------------------------

    def fit(self, dataset: Dataset, y=None) -> "AnchorRanker":
        """Train on the dataset's train split, early-stopping on val ranking quality."""
        cfg = self._config()
        dataset.validate()
        provider = self._resolve_provider()
        train_graphs = dataset.graphs_in("train")
        if not any(g.pairs for g in train_graphs):
            raise TrainingError("train split holds no (graph, pair) examples")
        coef, bias = net.fit_structural_regression(
            dataset, sample_fraction=self.sample_fraction, seed=cfg.seed
        )
        self.config_ = cfg
        self.provider_ = provider
        self.regression_coef_ = coef
        self.regression_bias_ = bias
        self.dataset_fingerprint_ = dataset_fingerprint(dataset)

        train_examples = self._build_examples(train_graphs, provider, cfg)
        val_examples = self._build_examples(dataset.graphs_in("val"), provider, cfg)

        params = net.init_params(cfg)
        opt = ad.AdamState(lr=cfg.lr)
        loop_rng = np.random.default_rng([cfg.seed, 2])
        log: list[dict] = []
        best_val = -np.inf
        best_data = net.clone_param_data(params)
        best_epoch = 0
        stale = 0
        for epoch in range(1, cfg.epochs + 1):
            order = loop_rng.permutation(len(train_examples))
            losses = []
            for j in order:
                ex = train_examples[j]
                n = len(ex.raw.node_ids)
                if cfg.enable_ae and cfg.ae_drop_prob > 0.0:
                    mask = loop_rng.random(n) < cfg.ae_drop_prob
                else:
                    mask = np.zeros(n, dtype=bool)
                ad.reset_tape()
                ad.zero_grads(params)
                try:
                    out = net.full_forward(
                        ex.raw, ex.s_sem, ex.s_str, params, cfg,
                        drop_mask=mask, target=ex.target,
                    )
                    ad.backward(out.loss)
                    ad.fill_missing_grads(params)
                    ad.adam_step(params, opt)
                except ad.AutodiffError as exc:
                    raise TrainingError(
                        f"epoch {epoch}, example {ex.raw.graph_id}/pair{ex.pair_index}: {exc}"
                    ) from exc
                losses.append(out.loss.item())
            train_loss = float(np.mean(losses)) if losses else float("nan")
            val_ndcg = self._validation_ndcg(val_examples, params, cfg)
            log.append({"epoch": epoch, "train_loss": train_loss, "val_ndcg20": val_ndcg})
            if val_examples:
                if val_ndcg > best_val:
                    best_val = val_ndcg
                    best_data = net.clone_param_data(params)
                    best_epoch = epoch
                    stale = 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        break
            else:
                best_data = net.clone_param_data(params)
                best_epoch = epoch
        net.set_param_data(params, best_data)
        self.params_ = params
        self.log_ = log
        self.best_epoch_ = best_epoch
        self.best_val_ndcg_ = None if not val_examples else float(best_val)
        return self

    def _build_examples(
        self, graphs: Sequence[Graph], provider: EmbeddingProvider, cfg: net.ModelConfig
    ) -> list[_Example]:
        examples = []
        for graph in graphs:
            for k, pair in enumerate(graph.pairs):
                raw = net.encode_raw(graph, pair.ca_sorted, provider, cfg)
                examples.append(
                    _Example(
                        graph=graph,
                        pair_index=k,
                        raw=raw,
                        s_sem=net.semantic_similarity_vector(graph, pair.ca_sorted, provider),
                        s_str=net.structural_similarity_vector(
                            graph, pair.ca_sorted, self.regression_coef_, self.regression_bias_
                        ),
                        target=net.normalized_target(graph, pair),
                        truth=dict(zip(graph.node_ids, role_labels(graph, pair))),
                    )
                )
        return examples

    def _validation_ndcg(
        self, examples: Sequence[_Example], params, cfg: net.ModelConfig
    ) -> float:
        if not examples:
            return float("nan")
        values = []
        with ad.no_grad():
            for ex in examples:
                out = net.full_forward(ex.raw, ex.s_sem, ex.s_str, params, cfg)
                ranked = rank_nodes(ex.raw.node_ids, out.scores)
                values.append(ndcg_at_k(ranked, ex.truth, 20))
        return float(np.mean(values))

    # -- inference -----------------------------------------------------------

    def score_nodes(self, graph: Graph, ca: Sequence[str]) -> np.ndarray:
        """Scores in graph node order for an arbitrary graph and anchor set."""
        check_fitted(self, "params_")
        check_ca(graph, ca)
        cfg = self.config_
        with ad.no_grad():
            raw = net.encode_raw(graph, sorted(set(ca)), self.provider_, cfg)
            s_sem = net.semantic_similarity_vector(graph, sorted(set(ca)), self.provider_)
            s_str = net.structural_similarity_vector(
                graph, sorted(set(ca)), self.regression_coef_, self.regression_bias_
            )
            out = net.full_forward(raw, s_sem, s_str, self.params_, cfg)
        return out.scores

    def score_pair(self, graph: Graph, pair: AnchorPair) -> np.ndarray:
        return self.score_nodes(graph, pair.ca_sorted)

    def predict(
        self, graph: Graph, ca: Sequence[str], top_k: int | None = None
    ) -> list[tuple[str, float]]:
        """Ranked (node id, score) list, descending score with ascending-id ties."""
        ranked = rank_nodes(graph.node_ids, self.score_nodes(graph, ca))
        return ranked if top_k is None else ranked[: max(0, top_k)]

    # -- persistence ----------------------------------------------------------

    def save(self, stem: str | Path) -> dict[str, Path]:
        """Write ``<stem>.ckpt`` (binary weights), ``<stem>.json`` (sidecar), ``<stem>.log.csv``."""
        check_fitted(self, "params_")
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        ckpt = stem.with_suffix(".ckpt")
        sidecar = stem.with_suffix(".json")
        logfile = stem.with_suffix(".log.csv")
        ad.save_checkpoint(ckpt, self.params_, meta={"kind": "anchorrank"})
        doc = {
            "config": self.config_.to_dict(),
            "regression": {
                "coef": [float(v) for v in self.regression_coef_],
                "bias": float(self.regression_bias_),
            },
            "provider": self.provider_.spec(),
            "dataset_fingerprint": self.dataset_fingerprint_,
            "best_epoch": self.best_epoch_,
            "best_val_ndcg20": self.best_val_ndcg_,
        }
        sidecar.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["epoch", "train_loss", "val_ndcg20"])
        writer.writeheader()
        for row in self.log_:
            writer.writerow(row)
        logfile.write_text(buf.getvalue(), encoding="utf-8")
        return {"checkpoint": ckpt, "sidecar": sidecar, "log": logfile}

    @classmethod
    def load(cls, stem: str | Path) -> "AnchorRanker":
        """Rebuild a fitted ranker from ``save`` output; no dataset required."""
        stem = Path(stem)
        ckpt = stem.with_suffix(".ckpt")
        sidecar = stem.with_suffix(".json")
        if not ckpt.exists() or not sidecar.exists():
            raise ad.CheckpointError(f"missing checkpoint files at {stem}(.ckpt/.json)")
        doc = json.loads(sidecar.read_text(encoding="utf-8"))
        cfg = net.ModelConfig.from_dict(doc["config"])
        provider = provider_from_spec(doc["provider"])
        ranker = cls(provider=provider, **{k: v for k, v in doc["config"].items()
                                           if k in cls().get_params() and k != "provider"})
        arrays, _ = ad.load_checkpoint(ckpt)
        params = net.init_params(cfg)
        if set(arrays) != set(params):
            raise ad.CheckpointError(
                f"checkpoint parameters do not match config (missing "
                f"{sorted(set(params) - set(arrays))[:3]}...)"
            )
        net.set_param_data(params, arrays)
        ranker.config_ = cfg
        ranker.provider_ = provider
        ranker.params_ = params
        ranker.regression_coef_ = np.asarray(doc["regression"]["coef"], dtype=np.float64)
        ranker.regression_bias_ = float(doc["regression"]["bias"])
        ranker.dataset_fingerprint_ = doc.get("dataset_fingerprint", "")
        ranker.best_epoch_ = doc.get("best_epoch", 0)
        ranker.best_val_ndcg_ = doc.get("best_val_ndcg20")
        ranker.log_ = []
        return ranker


def dataset_fingerprint(dataset: Dataset) -> str:
    """Stable content hash of a dataset (graphs plus split assignment)."""
    digest = hashlib.sha256()
    digest.update(dataset_to_jsonl(dataset).encode("utf-8"))
    digest.update(split_to_json(dataset.split).encode("utf-8"))
    return digest.hexdigest()


def infer(
    graph: Graph, ca: Sequence[str], ranker: AnchorRanker, top_k: int | None = None
) -> list[tuple[str, float]]:
    """Convenience wrapper around :meth:`AnchorRanker.predict`."""
    return ranker.predict(graph, ca, top_k=top_k)
