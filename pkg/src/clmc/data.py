"""Clustered datasets and contrast families.

A clustered dataset holds n independent clusters; cluster i contributes a
response vector y_i of length m_i and an m_i x p covariate matrix X_i.
Observations within a cluster may be dependent, observations from different
clusters are independent.  A contrast family is a c x p matrix C whose rows
define the linear hypotheses C_i' beta = 0 tested jointly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RESPONSE_KINDS = ("continuous", "binary01", "binary_pm1", "positive")

CONTRAST_KINDS = ("many_to_one", "all_pairwise", "custom")


@dataclass(frozen=True)
class Cluster:
    """One cluster: opaque id, responses y (m,) and covariates x (m, p)."""

    id: str
    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        object.__setattr__(self, "x", x)

    @property
    def m(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class ClusteredDataset:
    """Immutable collection of clusters sharing a covariate dimension p."""

    clusters: tuple[Cluster, ...]
    response_kind: str
    p: int

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))

    @property
    def n(self) -> int:
        return len(self.clusters)

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.array([c.m for c in self.clusters], dtype=int)

    @property
    def constant_m(self) -> bool:
        sizes = self.cluster_sizes
        return bool(len(sizes) > 0 and (sizes == sizes[0]).all())

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row-stacked (X, y, starts) where starts[i] is the first row of
        cluster i; handy for reduceat-style per-cluster sums."""
        x = np.concatenate([c.x for c in self.clusters], axis=0)
        y = np.concatenate([c.y for c in self.clusters])
        starts = np.concatenate([[0], np.cumsum(self.cluster_sizes)[:-1]])
        return x, y, starts.astype(int)


@dataclass(frozen=True)
class ValidationIssue:
    cluster_id: str | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return len(self.issues) == 0

    def messages(self) -> list[str]:
        return [
            f"{i.cluster_id}: {i.message}" if i.cluster_id is not None else i.message
            for i in self.issues
        ]


def validate_dataset(d: ClusteredDataset) -> ValidationReport:
    """Check every dataset invariant and report all violations found.

    Never raises: shape problems, domain problems and global problems are
    collected into the report so callers can show them all at once.
    """
    issues: list[ValidationIssue] = []
    if d.response_kind not in RESPONSE_KINDS:
        issues.append(ValidationIssue(None, f"unknown response_kind {d.response_kind!r}"))
    if d.n < 2:
        issues.append(ValidationIssue(None, f"need at least 2 clusters, got {d.n}"))
    for c in d.clusters:
        if c.m < 1:
            issues.append(ValidationIssue(c.id, "empty cluster"))
        if c.x.ndim != 2 or c.x.shape[0] != c.m:
            issues.append(
                ValidationIssue(
                    c.id,
                    f"covariate rows ({c.x.shape[0]}) do not match response length ({c.m})",
                )
            )
        if c.x.ndim == 2 and c.x.shape[1] != d.p:
            issues.append(
                ValidationIssue(c.id, f"expected {d.p} covariates, got {c.x.shape[1]}")
            )
        if not np.all(np.isfinite(c.y)) or not np.all(np.isfinite(c.x)):
            issues.append(ValidationIssue(c.id, "non-finite value in y or x"))
            continue
        if d.response_kind == "binary01" and not np.isin(c.y, (0.0, 1.0)).all():
            issues.append(ValidationIssue(c.id, "binary01 response outside {0,1}"))
        elif d.response_kind == "binary_pm1" and not np.isin(c.y, (-1.0, 1.0)).all():
            issues.append(ValidationIssue(c.id, "binary_pm1 response outside {-1,+1}"))
        elif d.response_kind == "positive" and not (c.y > 0).all():
            issues.append(ValidationIssue(c.id, "non-positive response"))
    return ValidationReport(tuple(issues))


@dataclass(frozen=True)
class ContrastFamily:
    """c x p contrast matrix with one label per row (hypothesis C_i' beta = 0)."""

    matrix: np.ndarray
    labels: tuple[str, ...]
    kind: str = "custom"

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.kind not in CONTRAST_KINDS:
            raise ValueError(f"unknown contrast kind {self.kind!r}")
        if m.shape[0] != len(self.labels):
            raise ValueError("one label per contrast row required")
        if m.shape[0] < 1:
            raise ValueError("need at least one contrast")
        if np.any(np.all(m == 0.0, axis=1)):
            raise ValueError("all-zero contrast row")

    @property
    def c(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> int:
        return self.matrix.shape[1]


def build_contrasts(kind: str, p: int, baseline: int | None = None) -> ContrastFamily:
    """Construct a many-to-one or all-pairwise contrast family.

    `baseline` is 1-based and required exactly for kind="many_to_one".
    Row ordering is deterministic: many-to-one rows follow the non-baseline
    index ascending; all-pairwise rows enumerate index pairs (i, j), i < j,
    in lexicographic order with +1 on i and -1 on j.
    """
    if p < 2:
        raise ValueError(f"need p >= 2 parameters to compare, got {p}")
    if kind == "many_to_one":
        if baseline is None:
            raise ValueError("many_to_one requires a baseline index")
        if not 1 <= baseline <= p:
            raise ValueError(f"baseline must be in 1..{p}, got {baseline}")
        b = baseline - 1
        rows, labels = [], []
        for j in range(p):
            if j == b:
                continue
            row = np.zeros(p)
            row[b] = 1.0
            row[j] = -1.0
            rows.append(row)
            labels.append(f"b{baseline}=b{j + 1}")
        return ContrastFamily(np.array(rows), tuple(labels), "many_to_one")
    if kind == "all_pairwise":
        if baseline is not None:
            raise ValueError("all_pairwise takes no baseline")
        rows, labels = [], []
        for i in range(p):
            for j in range(i + 1, p):
                row = np.zeros(p)
                row[i] = 1.0
                row[j] = -1.0
                rows.append(row)
                labels.append(f"b{i + 1}=b{j + 1}")
        return ContrastFamily(np.array(rows), tuple(labels), "all_pairwise")
    raise ValueError(f"cannot build contrasts of kind {kind!r}")
