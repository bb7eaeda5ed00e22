"""Posterior partition inference over site-level examiner-bias effects.

Partition draws are the bias-mixture allocation vectors of one examiner;
only the partitions they induce matter (labels are arbitrary).  The pairwise
co-clustering matrix averages the draws' association matrices, and the
reported point-estimate partition is the sampled draw whose association
matrix is closest to that average in squared Frobenius distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import CalibrationDataset, EXAMINERS, LOCATIONS, SitePosition
from .errors import DimensionMismatch, UnknownClass

_CHUNK = 512


def cocluster_matrix(draws: np.ndarray, chunk: Optional[int] = _CHUNK,
                     dtype=np.float64) -> np.ndarray:
    """L x L pairwise co-clustering frequencies from D label vectors.

    Accumulates one-hot outer products in draw chunks, so memory is constant
    in D; `chunk=None` processes all draws at once (dense path).
    """
    draws = np.asarray(draws)
    if draws.ndim != 2:
        raise DimensionMismatch("draws must be (n_draws, n_sites)")
    D, L = draws.shape
    if D < 1:
        raise DimensionMismatch("need at least one draw")
    labels = np.unique(draws)
    relabeled = np.searchsorted(labels, draws)
    M = labels.size
    total = np.zeros((L, L))
    step = D if chunk is None else max(1, int(chunk))
    for lo in range(0, D, step):
        block = relabeled[lo:lo + step]
        onehot = np.zeros((block.shape[0], L, M), dtype=np.float32)
        d_idx = np.repeat(np.arange(block.shape[0]), L)
        onehot[d_idx, np.tile(np.arange(L), block.shape[0]),
               block.reshape(-1)] = 1.0
        flat = onehot.transpose(0, 2, 1).reshape(-1, L)
        total += (flat.T @ flat).astype(np.float64)
    return (total / D).astype(dtype)


def _association_loss(labels: np.ndarray, delta: np.ndarray) -> float:
    """Squared Frobenius distance of one partition's association matrix to delta."""
    L = labels.shape[0]
    loss = float((delta * delta).sum())
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        block = delta[np.ix_(members, members)]
        loss += members.size * members.size - 2.0 * float(block.sum())
    return loss


def least_squares_partition(draws: np.ndarray,
                            delta: Optional[np.ndarray] = None
                            ) -> tuple[np.ndarray, int, float]:
    """The sampled partition closest to the co-clustering matrix.

    Returns (labels, draw index, loss); ties take the earliest draw.
    """
    draws = np.asarray(draws)
    if draws.ndim != 2 or draws.shape[0] < 1:
        raise DimensionMismatch("draws must be (n_draws, n_sites), D >= 1")
    if delta is None:
        delta = cocluster_matrix(draws)
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (draws.shape[1], draws.shape[1]):
        raise DimensionMismatch("delta shape does not match draws")
    best_idx, best_loss = 0, np.inf
    for d in range(draws.shape[0]):
        loss = _association_loss(draws[d], delta)
        if loss < best_loss - 1e-12:
            best_idx, best_loss = d, loss
    return draws[best_idx].copy(), best_idx, float(best_loss)


def relabel_by_size(labels: np.ndarray) -> np.ndarray:
    """Renumber classes 1..K by decreasing size (ties by first appearance)."""
    labels = np.asarray(labels)
    uniq, first, counts = np.unique(labels, return_index=True,
                                    return_counts=True)
    order = sorted(range(uniq.size), key=lambda i: (-counts[i], first[i]))
    mapping = {uniq[i]: rank + 1 for rank, i in enumerate(order)}
    return np.array([mapping[l] for l in labels], dtype=np.int64)


@dataclass
class ClassSummary:
    """One partition class with its characterization."""

    class_id: int
    site_ids: np.ndarray                  # dataset site indices
    size: int
    singleton: bool
    beta_quantiles: Optional[dict] = None     # {"q2.5","q50","q97.5"}
    flag_counts: Optional[dict] = None        # flag -> count of True
    theta_median_quantiles: Optional[dict] = None
    deep_count: Optional[int] = None          # posterior-median depth >= threshold

    def to_json(self) -> dict:
        out = {"class_id": self.class_id, "size": self.size,
               "singleton": self.singleton,
               "site_ids": [int(i) for i in self.site_ids]}
        for k in ("beta_quantiles", "flag_counts", "theta_median_quantiles"):
            if getattr(self, k) is not None:
                out[k] = getattr(self, k)
        if self.deep_count is not None:
            out["deep_count"] = self.deep_count
        return out


@dataclass
class PartitionSummary:
    """Least-squares partition of one examiner's bias effects."""

    examiner: str
    labels: np.ndarray            # (L_e,) class ids 1..K, size-ordered
    site_ids: np.ndarray          # (L_e,) dataset site index per position
    draw_index: int
    loss: float
    classes: list[ClassSummary] = field(default_factory=list)
    deep_threshold_mm: float = 4.0

    @property
    def n_classes(self) -> int:
        return int(np.unique(self.labels).size)

    def working_classes(self) -> list[ClassSummary]:
        """Classes excluding singletons."""
        return [c for c in self.classes if not c.singleton]

    def class_by_id(self, class_id: int) -> ClassSummary:
        for c in self.classes:
            if c.class_id == class_id:
                return c
        raise UnknownClass(f"no class {class_id} for examiner {self.examiner}")

    def to_json(self) -> dict:
        return {"examiner": self.examiner, "draw_index": self.draw_index,
                "loss": self.loss, "n_classes": self.n_classes,
                "deep_threshold_mm": self.deep_threshold_mm,
                "labels": [int(l) for l in self.labels],
                "site_ids": [int(i) for i in self.site_ids],
                "classes": [c.to_json() for c in self.classes]}


_FLAGS = ("anterior", "maxillary", "proximal", "buccal")


def _site_flags(data: CalibrationDataset, site_ids: np.ndarray) -> dict:
    counts = dict.fromkeys(_FLAGS, 0)
    for sid in site_ids:
        pos = data.site_position(int(sid))
        counts["anterior"] += pos.anterior_flag
        counts["maxillary"] += pos.arch == "maxillary"
        counts["proximal"] += pos.proximal_flag
        counts["buccal"] += pos.buccal_flag
    return {k: int(v) for k, v in counts.items()}


def class_characterization(summary: PartitionSummary, samples,
                           data: CalibrationDataset,
                           deep_threshold_mm: float = 4.0) -> PartitionSummary:
    """Attach per-class bias quantiles, position cross-tabs, and depth summaries.

    Pools the retained site-level bias draws of each class's member sites for
    the quantiles; cross-tabs count site-position flags; depth summaries use
    each member site's posterior-median depth.  Singleton classes are flagged
    and retained, but reported separately by `working_classes`.
    """
    exam = summary.examiner
    beta = samples.pooled_beta(exam)
    log_theta = samples.pooled_log_theta()
    theta_median = np.exp(np.median(log_theta, axis=0)).astype(float)
    classes = []
    for class_id in np.unique(summary.labels):
        members = np.flatnonzero(summary.labels == class_id)
        site_ids = summary.site_ids[members]
        pooled = beta[:, members].reshape(-1)
        q = np.percentile(pooled, [2.5, 50.0, 97.5])
        med = theta_median[site_ids]
        tq = np.percentile(med, [2.5, 50.0, 97.5])
        classes.append(ClassSummary(
            class_id=int(class_id), site_ids=site_ids, size=members.size,
            singleton=members.size == 1,
            beta_quantiles={"q2.5": float(q[0]), "q50": float(q[1]),
                            "q97.5": float(q[2])},
            flag_counts=_site_flags(data, site_ids),
            theta_median_quantiles={"q2.5": float(tq[0]), "q50": float(tq[1]),
                                    "q97.5": float(tq[2])},
            deep_count=int((med >= deep_threshold_mm).sum())))
    summary.classes = classes
    summary.deep_threshold_mm = deep_threshold_mm
    return summary


def partition_summary(samples, examiner: str,
                      data: Optional[CalibrationDataset] = None,
                      deep_threshold_mm: float = 4.0) -> PartitionSummary:
    """Full posterior-partition pipeline for one examiner's bias effects."""
    if examiner not in samples.alloc:
        raise UnknownClass(f"no allocation draws for examiner {examiner!r} "
                           f"(Model 3 required)")
    draws = samples.pooled_alloc(examiner)
    labels, draw_idx, loss = least_squares_partition(draws)
    summary = PartitionSummary(
        examiner=examiner, labels=relabel_by_size(labels),
        site_ids=samples.examiner_sites[examiner], draw_index=int(draw_idx),
        loss=loss)
    if data is not None:
        class_characterization(summary, samples, data, deep_threshold_mm)
    return summary


def merge_classes(summary: PartitionSummary, merge_ids, samples=None,
                  data: Optional[CalibrationDataset] = None) -> PartitionSummary:
    """Collapse the named classes into one and re-characterize.

    An empty merge list returns an equivalent summary.  Characterization is
    recomputed when `samples` and `data` are supplied (pooled quantiles
    cannot be merged from per-class summaries).
    """
    merge_ids = sorted(set(int(m) for m in merge_ids))
    present = set(int(l) for l in np.unique(summary.labels))
    for m in merge_ids:
        if m not in present:
            raise UnknownClass(f"class {m} not present for examiner "
                               f"{summary.examiner}")
    labels = summary.labels.copy()
    if len(merge_ids) > 1:
        target = merge_ids[0]
        labels[np.isin(labels, merge_ids)] = target
    merged = PartitionSummary(
        examiner=summary.examiner, labels=relabel_by_size(labels),
        site_ids=summary.site_ids, draw_index=summary.draw_index,
        loss=summary.loss, deep_threshold_mm=summary.deep_threshold_mm)
    if samples is not None and data is not None:
        class_characterization(merged, samples, data,
                               summary.deep_threshold_mm)
    return merged


def write_cocluster_binary(delta: np.ndarray, path, precision: str = "float32"
                           ) -> None:
    """Row-major binary dump of delta with a small JSON sidecar header."""
    import json
    from pathlib import Path
    path = Path(path)
    arr = np.ascontiguousarray(delta, dtype=np.dtype(precision))
    arr.tofile(path)
    header = {"rows": int(arr.shape[0]), "cols": int(arr.shape[1]),
              "dtype": precision, "order": "C"}
    Path(str(path) + ".json").write_text(json.dumps(header))
