"""Retrieval evaluation: Rank@K and mean average precision.

Per query the gallery is sorted by descending score with ties broken by
gallery index. Rank@K counts queries with a same-identity item in the top
K; average precision is the mean of precision-at-rank over that query's
relevant items, and mAP averages it over queries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class MetricsError(Exception):
    pass


DEFAULT_KS = (1, 5, 10)


@dataclass
class RetrievalResult:
    rank_at: dict
    mean_ap: float
    num_queries: int

    def to_dict(self) -> dict:
        out = {f"rank{k}": v for k, v in sorted(self.rank_at.items())}
        out["map"] = self.mean_ap
        out["num_queries"] = self.num_queries
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def csv_header(ks=DEFAULT_KS) -> str:
    return ",".join([f"r{k}" for k in ks] + ["map"])


def csv_row(result: RetrievalResult, ks=DEFAULT_KS) -> str:
    return ",".join([f"{result.rank_at[k]:.6f}" for k in ks] + [f"{result.mean_ap:.6f}"])


def evaluate(sim: np.ndarray, query_ids, gallery_ids, ks=DEFAULT_KS) -> RetrievalResult:
    sim = np.asarray(sim, dtype=np.float64)
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    if sim.ndim != 2:
        raise MetricsError(f"similarity must be 2-D, got {sim.shape}")
    q, g = sim.shape
    if query_ids.shape != (q,) or gallery_ids.shape != (g,):
        raise MetricsError("id vectors do not match the similarity matrix")
    if not np.all(np.isfinite(sim)):
        raise MetricsError("similarity contains NaN/Inf")
    missing = set(query_ids.tolist()) - set(gallery_ids.tolist())
    if missing:
        raise MetricsError(f"query identities absent from gallery: {sorted(missing)}")

    order = np.argsort(-sim, axis=1, kind="stable")  # ties -> smaller index first
    relevant = gallery_ids[order] == query_ids[:, None]

    rank_at = {}
    for k in ks:
        top = relevant[:, :min(k, g)]
        rank_at[int(k)] = float(top.any(axis=1).mean())

    aps = np.empty(q)
    for i in range(q):
        hit_ranks = np.flatnonzero(relevant[i]) + 1
        precisions = np.arange(1, len(hit_ranks) + 1) / hit_ranks
        aps[i] = precisions.mean()
    result = RetrievalResult(rank_at=rank_at, mean_ap=float(aps.mean()), num_queries=q)

    sorted_ks = sorted(rank_at)
    for a, b in zip(sorted_ks, sorted_ks[1:]):
        if rank_at[a] > rank_at[b] + 1e-15:
            raise MetricsError(f"rank@{a} > rank@{b}; ranking is inconsistent")
    return result
