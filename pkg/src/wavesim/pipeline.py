"""End-to-end redundancy and influence analysis.

Two routes produce the same kind of :class:`AnalysisReport`:

* wavelet coefficients, optional RRQR column selection, then clustering
  (:func:`algorithm1`);
* a pairwise similarity matrix, graph-Laplacian eigen-gaps and spectral
  clustering (:func:`algorithm2`).

:func:`dedupe_by_threshold` is the quadratic-time alternative that groups
images by thresholded similarity, and :func:`cross_set_report` compares a
test split against a training split.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image_batch
from .exceptions import NumericalError, StageError, WavesimError
from .graph import (
    eigen_gap_count,
    graph_components,
    laplacian_spectrum,
    spectral_clustering,
)
from .ingest import LabeledDataset
from .numerics import (
    agglomerative_threshold,
    kmeans,
    select_columns,
    single_linkage_n_clusters,
)
from .similarity import (
    SimilarityMatrix,
    SsimParams,
    cross_similarity,
    gaussian_similarity_matrix,
    similarity_matrix,
)
from .wavelet import decompose_dataset

logger = logging.getLogger(__name__)

# above this many distance evaluations per Lloyd sweep, k-means is swapped
# for single linkage cut at the requested cluster count
KMEANS_WORK_LIMIT = 2e10


def to_jsonable(obj):
    """Plain-Python copy of ``obj`` with non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else str(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class AnalysisReport:
    algorithm: str
    n_images: int
    n_clusters: int
    redundant_groups: list
    influential_groups: list
    kept_ids: list
    parameters: dict
    details: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self, include_timings=True):
        data = to_jsonable(asdict(self))
        if not include_timings:
            data.pop("timings")
        return data

    def to_json(self, include_timings=True):
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True) + "\n"

    def digest(self):
        """SHA-256 of the report with timings removed."""
        return hashlib.sha256(self.to_json(include_timings=False).encode()).hexdigest()

    @property
    def dropped_ids(self):
        kept = set(self.kept_ids)
        return [m for g in self.redundant_groups for m in g["members"] if m not in kept]

    def check_invariants(self, ids, labels):
        """Raise ``AssertionError`` unless the groups partition ``ids`` correctly."""
        label_of = dict(zip(ids, labels))
        kept = set(self.kept_ids)
        _require(len(kept) == len(self.kept_ids), "duplicate kept ids")
        seen = []
        for g in self.redundant_groups:
            members = g["members"]
            _require(len(members) >= 2, "redundant group with fewer than 2 members")
            _require(len({label_of[m] for m in members}) == 1, "redundant group with mixed labels")
            rep = g["representative"]
            _require(rep in members and rep in kept, "partition invariant violated")
            _require(all(m not in kept for m in members if m != rep),
                     "partition invariant violated")
            seen.extend(members)
        for g in self.influential_groups:
            members = g["members"]
            _require(len(members) >= 2, "influential group with fewer than 2 members")
            _require(len({label_of[m] for m in members}) >= 2, "influential group with one label")
            _require(all(m in kept for m in members), "partition invariant violated")
            seen.extend(members)
        grouped = set(seen)
        _require(len(grouped) == len(seen), "image in more than one group")
        singletons = kept - grouped
        _require(grouped | singletons == set(ids) and len(ids) == len(set(ids)),
                 "partition invariant violated")
        redundant_size = sum(len(g["members"]) - 1 for g in self.redundant_groups)
        _require(len(self.kept_ids) == len(ids) - redundant_size, "partition invariant violated")

    def write_groups_csv(self, path):
        """Rows of (group_id, member_id, label, role, representative_flag)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group_id", "member_id", "label", "role", "representative_flag"])
            gid = 0
            for g in self.redundant_groups:
                for m in g["members"]:
                    flag = int(m == g["representative"])
                    writer.writerow([gid, m, g["label"], "redundant", flag])
                gid += 1
            for g in self.influential_groups:
                for m, lab in zip(g["members"], g["labels"]):
                    writer.writerow([gid, m, lab, "influential", 0])
                gid += 1

    def write_kept_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source_id"])
            writer.writerows([k] for k in self.kept_ids)


def _require(condition, message):
    if not condition:
        raise AssertionError(message)


def representative(member_indices, feature_rows):
    """Index of the member closest to the members' mean (lowest index on ties)."""
    members = np.sort(np.asarray(member_indices, dtype=np.int64))
    if members.size == 0:
        raise ValueError("representative of an empty group")
    rows = np.asarray(feature_rows, dtype=np.float64)[members]
    dist = np.linalg.norm(rows - rows.mean(axis=0), axis=1)
    best = dist.min()
    ties = dist <= best + 1e-12 * max(best, np.abs(rows).max(initial=0.0), 1.0)
    return int(members[np.argmax(ties)])


def _group_indices(cluster_of):
    """Index arrays per cluster, ordered by each cluster's first member."""
    cluster_of = np.asarray(cluster_of)
    order = np.argsort(cluster_of, kind="stable")
    bounds = np.flatnonzero(np.diff(cluster_of[order])) + 1
    groups = np.split(order, bounds) if order.size else []
    return sorted(groups, key=lambda g: int(g[0]))


def partition_clusters(cluster_of, labels, ids, choose):
    """Split clusters into redundant and influential groups.

    ``choose(members)`` returns the index kept for a single-label cluster.
    """
    labels = np.asarray(labels)
    drop = np.zeros(len(ids), dtype=bool)
    redundant, influential = [], []
    for members in _group_indices(cluster_of):
        if members.size < 2:
            continue
        member_labels = labels[members]
        if np.all(member_labels == member_labels[0]):
            keep = choose(members)
            drop[members] = True
            drop[keep] = False
            redundant.append({
                "members": [ids[i] for i in members],
                "label": int(member_labels[0]),
                "representative": ids[keep],
            })
        else:
            influential.append({
                "members": [ids[i] for i in members],
                "labels": [int(x) for x in member_labels],
            })
    kept = [ids[i] for i in range(len(ids)) if not drop[i]]
    return redundant, influential, kept


class _Timer:
    def __init__(self):
        self.timings = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        except WavesimError as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError(name, exc) from exc
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise StageError(name, NumericalError(str(exc))) from exc
        finally:
            self.timings[name] = time.perf_counter() - start


def _single_image_report(dataset, algorithm, parameters):
    return AnalysisReport(algorithm, len(dataset), 1 if len(dataset) else 0, [], [],
                          list(dataset.source_ids), parameters)


def choose_n_clusters(features, gamma, laplacian_kind="unnormalized", sigma="auto"):
    """Eigen-gap cluster count on a Gaussian-kernel graph over feature rows."""
    S = gaussian_similarity_matrix(features, sigma)
    spectrum = laplacian_spectrum(S, laplacian_kind)
    return eigen_gap_count(spectrum.eigenvalues, gamma), spectrum


def algorithm1(dataset, basis="db2", levels=2, tau=1e5, clustering_method="kmeans", n_c=None,
               seed=0, select="auto", distance_cutoff=None, gamma=0.4,
               laplacian_kind="unnormalized", n_jobs=1):
    """Wavelet coefficients -> RRQR column selection -> clustering -> partition.

    ``select="auto"`` applies column selection only when there are more
    images than coefficients per image; ``"always"``/``"never"`` force it.
    Without ``n_c`` the cluster count comes from Laplacian eigen-gaps of a
    Gaussian-kernel graph over the selected coefficients.
    """
    params = {
        "basis": basis, "levels": levels, "tau": tau, "clustering_method": clustering_method,
        "n_c": n_c, "seed": seed, "select": select, "distance_cutoff": distance_cutoff,
        "gamma": gamma, "laplacian": laplacian_kind,
    }
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if len(dataset) == 1:
        return _single_image_report(dataset, "algorithm1", params)
    timer = _Timer()
    warnings = list(dataset.warnings)
    details = {}
    with timer.stage("decompose"):
        coeffs = decompose_dataset(dataset, basis, levels, n_jobs=n_jobs)
        W = coeffs.values
        n, d = W.shape
        details.update(coefficient_shape=[n, d], levels_applied=coeffs.levels)
    with timer.stage("select"):
        if select not in ("auto", "always", "never"):
            raise ValueError(f"select must be auto, always or never, got {select!r}")
        if select == "always" or (select == "auto" and n > d):
            selection = select_columns(W, tau)
            features = W[:, selection.columns]
            details.update(
                selected_columns=selection.m,
                constant_columns=int(selection.constant_columns.size),
                zero_columns=int(selection.zero_columns.size),
                condition_estimate=selection.condition_estimate(),
            )
        else:
            features = W
            details["selected_columns"] = d
    method = clustering_method
    with timer.stage("cluster_count"):
        if n_c is None and not (method == "agglomerative" and distance_cutoff is not None):
            n_c, spectrum = choose_n_clusters(features, gamma, laplacian_kind)
            details["n_c_source"] = "eigen_gap"
            details["clamped_similarities"] = spectrum.clamped_count
        elif n_c is not None:
            details["n_c_source"] = "given"
        if n_c is not None and not 1 <= n_c <= n:
            raise ValueError(f"n_c={n_c} must lie in 1..{n}")
    with timer.stage("cluster"):
        if method == "kmeans" and float(n) * n_c * features.shape[1] > KMEANS_WORK_LIMIT:
            warnings.append(
                f"k-means with n_c={n_c} on {n} images is impractical; "
                "substituted single-linkage agglomerative clustering")
            method = "agglomerative"
        if method == "kmeans":
            assignment = kmeans(features, n_c, seed=seed)
        elif method == "agglomerative":
            if distance_cutoff is not None:
                assignment = agglomerative_threshold(features, distance_cutoff)
            else:
                assignment = single_linkage_n_clusters(features, n_c)
        elif method == "spectral":
            S = gaussian_similarity_matrix(features)
            assignment, _ = spectral_clustering(S, n_c, seed, laplacian_kind)
        else:
            raise ValueError(f"unknown clustering method {method!r}")
        details["clustering_method_used"] = method
    with timer.stage("partition"):
        redundant, influential, kept = partition_clusters(
            assignment.cluster_of, dataset.labels, dataset.source_ids,
            lambda members: representative(members, features))
    report = AnalysisReport("algorithm1", n, int(assignment.k), redundant, influential, kept,
                            params, details, timer.timings, warnings)
    report.check_invariants(dataset.source_ids, dataset.labels)
    return report


def similarity_summary(S):
    off = S.off_diagonal()
    return {"mean": float(off.mean()), "std": float(off.std()),
            "min": float(off.min()), "max": float(off.max())}


def algorithm2(dataset, measure="ssim", params=None, gamma=0.4, n_c_override=None, seed=0,
               laplacian_kind="unnormalized", n_jobs=1, similarity=None):
    """Similarity matrix -> Laplacian eigen-gaps -> spectral clustering -> partition.

    A precomputed :class:`SimilarityMatrix` may be passed as ``similarity``.
    Representatives are chosen in the spectral-embedding space.
    """
    if isinstance(params, SsimParams):
        param_echo = asdict(params)
    else:
        param_echo = dict(params or {})
    config = {"measure": measure, "similarity_params": param_echo, "gamma": gamma,
              "n_c_override": n_c_override, "seed": seed, "laplacian": laplacian_kind}
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if len(dataset) == 1:
        return _single_image_report(dataset, "algorithm2", config)
    timer = _Timer()
    details = {}
    with timer.stage("similarity"):
        S = similarity if similarity is not None else similarity_matrix(
            dataset, measure, params, n_jobs=n_jobs)
        details["similarity"] = similarity_summary(S)
    with timer.stage("spectrum"):
        spectrum = laplacian_spectrum(S, laplacian_kind)
        details["clamped_similarities"] = spectrum.clamped_count
        details["eigen_gap_n_c"] = eigen_gap_count(spectrum.eigenvalues, gamma)
        n_c = details["eigen_gap_n_c"] if n_c_override is None else int(n_c_override)
    with timer.stage("cluster"):
        assignment, embedding = spectral_clustering(S, n_c, seed, laplacian_kind)
    with timer.stage("partition"):
        redundant, influential, kept = partition_clusters(
            assignment.cluster_of, dataset.labels, dataset.source_ids,
            lambda members: representative(members, embedding))
    report = AnalysisReport("algorithm2", len(dataset), n_c, redundant, influential, kept,
                            config, details, timer.timings, list(dataset.warnings))
    report.check_invariants(dataset.source_ids, dataset.labels)
    report.spectrum = spectrum
    report.similarity = S
    return report


def dedupe_by_threshold(S, labels, similarity_threshold, ids=None):
    """Group images joined by ``S_ij >= threshold`` and keep one per same-label group.

    The representative of a group is the member with the largest summed
    similarity to the other members.
    """
    V = np.asarray(getattr(S, "values", S), dtype=np.float64)
    n = V.shape[0]
    if ids is None:
        ids = getattr(S, "row_ids", None) or [str(i) for i in range(n)]
    if not -1.0 < similarity_threshold <= 1.0:
        raise ValueError("similarity_threshold must lie in (-1, 1]")
    _, comp = graph_components(V, similarity_threshold, strict=False)

    def choose(members):
        totals = V[np.ix_(members, members)].sum(axis=1) - np.diag(V)[members]
        return int(members[np.argmax(totals)])

    redundant, influential, kept = partition_clusters(comp, labels, list(ids), choose)
    warnings = []
    largest = max((len(g["members"]) for g in redundant + influential), default=1)
    if n >= 3 and largest > n / 2:
        warnings.append(
            f"threshold {similarity_threshold} joins {largest} of {n} images into one group")
    k = int(comp.max()) + 1 if n else 0
    report = AnalysisReport("dedupe", n, k, redundant, influential, kept,
                            {"similarity_threshold": similarity_threshold,
                             "measure": getattr(S, "measure", None)},
                            warnings=warnings)
    report.check_invariants(list(ids), labels)
    return report


@dataclass
class CrossSetReport:
    per_test: list
    near_identical_threshold: float
    near_identical_fraction: float
    ranking: list
    cross_label_closer: list
    parameters: dict
    timings: dict = field(default_factory=dict)

    def to_dict(self, include_timings=True):
        data = to_jsonable(asdict(self))
        if not include_timings:
            data.pop("timings")
        return data

    def to_json(self, include_timings=True):
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_json(include_timings=False).encode()).hexdigest()


def near_identical_fraction(max_similarity, threshold):
    return float(np.mean(np.asarray(max_similarity) >= threshold))


def threshold_for_fraction(max_similarity, target, lo, hi):
    """Threshold in ``[lo, hi]`` whose near-identical fraction is closest to ``target``.

    Only the observed similarity values (and the interval ends) can change the
    fraction, so those are the candidates. Ties resolve to the larger threshold.
    """
    vals = np.asarray(max_similarity, dtype=np.float64)
    cands = np.unique(np.r_[lo, hi, vals[(vals >= lo) & (vals <= hi)]])
    fracs = np.array([near_identical_fraction(vals, t) for t in cands])
    err = np.abs(fracs - target)
    best = np.flatnonzero(err == err.min())[-1]
    return float(cands[best]), float(fracs[best])


def cross_set_report(train, test, measure="ssim", params=None, near_identical_threshold=0.9,
                     n_jobs=1, similarity=None):
    """Per-test-image nearest training match and generalization summary.

    Returns the report and the rectangular similarity matrix (rows = test).
    """
    start = time.perf_counter()
    C = similarity if similarity is not None else cross_similarity(
        train, test, measure, params, n_jobs)
    V = C.values
    train_labels = np.asarray(train.labels)
    per_test, closer = [], []
    best = np.argmax(V, axis=1)
    for t in range(V.shape[0]):
        label = int(test.labels[t])
        same = train_labels == label
        best_same = float(V[t, same].max()) if same.any() else None
        best_other = float(V[t, ~same].max()) if (~same).any() else None
        row = {
            "test_id": test.source_ids[t],
            "test_label": label,
            "best_train_id": train.source_ids[best[t]],
            "best_train_label": int(train_labels[best[t]]),
            "max_similarity": float(V[t, best[t]]),
            "best_same_label_similarity": best_same,
            "best_other_label_similarity": best_other,
        }
        per_test.append(row)
        if best_other is not None and (best_same is None or best_other > best_same):
            closer.append(test.source_ids[t])
    max_sim = V.max(axis=1)
    order = np.argsort(max_sim, kind="stable")
    report = CrossSetReport(
        per_test=per_test,
        near_identical_threshold=near_identical_threshold,
        near_identical_fraction=near_identical_fraction(max_sim, near_identical_threshold),
        ranking=[test.source_ids[i] for i in order],
        cross_label_closer=closer,
        parameters={"measure": C.measure, "similarity_params": C.params,
                    "n_test": V.shape[0], "n_train": V.shape[1]},
        timings={"total": time.perf_counter() - start},
    )
    return report, C


def _dataset_from_arrays(X, y, ids=None):
    X = check_image_batch(X)
    y = np.asarray(y)
    classes, codes = np.unique(y, return_inverse=True)
    return LabeledDataset(
        images=X, labels=codes, class_names=[str(c) for c in classes],
        source_ids=ids if ids is not None else [str(i) for i in range(len(X))],
    ), classes


class _RedundancyAnalyzer(BaseEstimator):
    def _finish(self, report, dataset):
        self.report_ = report
        kept = set(report.kept_ids)
        influential = {m for g in report.influential_groups for m in g["members"]}
        self.support_ = np.array([s in kept for s in dataset.source_ids])
        self.influential_mask_ = np.array([s in influential for s in dataset.source_ids])
        return self

    def fit_resample(self, X, y, ids=None):
        """Fit, then return the reduced ``(X, y)``."""
        self.fit(X, y, ids)
        X = np.asarray(X)
        return X[self.support_], np.asarray(y)[self.support_]

    def get_support(self):
        check_is_fitted(self, "support_")
        return self.support_


class WaveletRedundancyAnalyzer(_RedundancyAnalyzer):
    """Estimator wrapper of :func:`algorithm1` over an image stack.

    ``fit(X, y)`` takes images shaped ``(n, C, H, W)`` (or ``(n, H, W)``)
    with values in [0, 1].

    Attributes
    ----------
    report_ : AnalysisReport
    support_ : ndarray of bool
        Images kept in the reduced training set.
    influential_mask_ : ndarray of bool
    """

    def __init__(self, basis="db2", levels=2, tau=1e5, clustering_method="kmeans",
                 n_clusters=None, seed=0, select="auto", distance_cutoff=None, gamma=0.4,
                 n_jobs=1):
        self.basis = basis
        self.levels = levels
        self.tau = tau
        self.clustering_method = clustering_method
        self.n_clusters = n_clusters
        self.seed = seed
        self.select = select
        self.distance_cutoff = distance_cutoff
        self.gamma = gamma
        self.n_jobs = n_jobs

    def fit(self, X, y, ids=None):
        dataset, self.classes_ = _dataset_from_arrays(X, y, ids)
        report = algorithm1(dataset, self.basis, self.levels, self.tau, self.clustering_method,
                            self.n_clusters, self.seed, self.select, self.distance_cutoff,
                            self.gamma, n_jobs=self.n_jobs)
        return self._finish(report, dataset)


class SimilarityRedundancyAnalyzer(_RedundancyAnalyzer):
    """Estimator wrapper of :func:`algorithm2` (similarity + spectral clustering)."""

    def __init__(self, measure="ssim", params=None, gamma=0.4, n_clusters=None, seed=0,
                 laplacian="unnormalized", n_jobs=1):
        self.measure = measure
        self.params = params
        self.gamma = gamma
        self.n_clusters = n_clusters
        self.seed = seed
        self.laplacian = laplacian
        self.n_jobs = n_jobs

    def fit(self, X, y, ids=None):
        dataset, self.classes_ = _dataset_from_arrays(X, y, ids)
        report = algorithm2(dataset, self.measure, self.params, self.gamma, self.n_clusters,
                            self.seed, self.laplacian, self.n_jobs)
        return self._finish(report, dataset)
