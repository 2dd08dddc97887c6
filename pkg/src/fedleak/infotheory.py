"""Mutual information, closed-form and estimated.

Two routes to the same quantity:

* Closed-form Gaussian expressions for what an aggregate of i.i.d.
  standard normal variables reveals about one summand. These are
  entropy differences, h(sum) - h(sum | summand), in which the 2*pi*e
  factor of the Gaussian entropy cancels.
* The Kraskov-Stoegbauer-Grassberger (KSG) k-nearest-neighbor
  estimator (variant 1) under the max-norm, plus its Frenzel-Pompe
  conditional extension. Defaults (k=3, max-norm) match the common
  NPEET setup.

All values are in nats. The estimators are deterministic: no jitter is
added, strict-inequality neighbor counting handles ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma
from scipy.spatial import cKDTree

from .topology import WeightMatrix

__all__ = [
    "SampleMatrix",
    "MIEstimate",
    "gaussian_entropy",
    "analytic_mi_cfl_sa",
    "analytic_mi_dfl_sa",
    "knn_mi",
    "knn_cmi",
]


@dataclass(frozen=True)
class SampleMatrix:
    """Monte-Carlo draws, one column per scalar variable."""

    data: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError(f"sample matrix must be 2-d, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("sample matrix has non-finite entries")
        if len(self.labels) != data.shape[1]:
            raise ValueError(
                f"{len(self.labels)} labels for {data.shape[1]} columns"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_variables(self) -> int:
        return self.data.shape[1]

    def column(self, idx: int) -> np.ndarray:
        return self.data[:, idx]


@dataclass(frozen=True)
class MIEstimate:
    """Mutual information value in nats with its provenance.

    Closed-form values are exact and nonnegative; knn values may come
    out slightly negative (estimator noise) and are reported as-is so
    the bias stays visible.
    """

    value: float
    estimator: str  # "closed_form" or "knn"
    k: int | None = None

    def __float__(self) -> float:
        return float(self.value)


def gaussian_entropy(variance: float) -> float:
    """Differential entropy of a Gaussian: 0.5 * ln(2*pi*e * variance)."""
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    return 0.5 * math.log(2.0 * math.pi * math.e * variance)


def analytic_mi_cfl_sa(n: int) -> float:
    """What the average of n i.i.d. standard normals reveals about one
    of them, to an observer who already knows its own summand.

    Equals I(sum of the n-1 remaining variables; one summand) =
    0.5 * ln((n-1)/(n-2)) nats. Strictly decreasing in n and positive
    for all n >= 3.
    """
    if n < 3:
        raise ValueError(f"defined for n >= 3 (denominator n-2), got n={n}")
    return 0.5 * math.log((n - 1) / (n - 2))


def analytic_mi_dfl_sa(
    w: WeightMatrix | np.ndarray,
    corrupt: int,
    target: int,
) -> float:
    """What a weighted gossip aggregate reveals about one target node.

    For aggregate sum_j a[k,j] G_j observed by node k that knows its own
    G_k, the information about G_i is

        0.5 * ln(s / (s - a[k,i]^2)),   s = sum_j a[k,j]^2 - a[k,k]^2.

    Returns 0 when a[k,i] = 0 (the target is absent from the aggregate)
    and +inf when a[k,i]^2 exhausts s (the aggregate is determined by
    G_i alone up to known terms, e.g. a corrupt leaf with its single
    neighbor as target).
    """
    a = w.a if isinstance(w, WeightMatrix) else np.asarray(w, dtype=float)
    if corrupt == target:
        raise ValueError("target must differ from the corrupt node")
    row = a[corrupt]
    if row[target] == 0.0:
        return 0.0
    s = float(np.sum(row**2) - row[corrupt] ** 2)
    denom = s - float(row[target] ** 2)
    if denom <= s * 1e-12:
        return math.inf
    return 0.5 * math.log(s / denom)


def _as_points(a: np.ndarray, name: str) -> np.ndarray:
    pts = np.asarray(a, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError(f"{name} must be 1-d or 2-d, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} has non-finite entries")
    return pts


def _check_shapes(k: int, *blocks: np.ndarray) -> int:
    n = blocks[0].shape[0]
    if any(b.shape[0] != n for b in blocks):
        raise ValueError("inputs must have the same number of samples")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")
    return n


def _kth_neighbor_radius(joint: np.ndarray, k: int) -> np.ndarray:
    """Max-norm distance to each point's k-th nearest neighbor."""
    dist, _ = cKDTree(joint).query(joint, k=k + 1, p=np.inf, workers=-1)
    return dist[:, -1]


def _strict_counts(
    points: np.ndarray, radii: np.ndarray, tree: cKDTree | None = None
) -> np.ndarray:
    """Points strictly inside each radius, the query point included.

    Shrinking the radius by one ulp turns the tree's closed-ball count
    into a strict one, so the count equals n_marginal + 1 exactly as the
    estimator needs. Pass a prebuilt tree over the same points to skip
    the construction cost.
    """
    if tree is None:
        tree = cKDTree(points)
    return tree.query_ball_point(
        points, np.nextafter(radii, 0.0), p=np.inf, return_length=True, workers=-1
    )


def knn_mi(x, y, k: int = 3) -> MIEstimate:
    """KSG estimate (variant 1) of I(X; Y) in nats.

    For each sample the max-norm distance to its k-th neighbor in the
    joint space sets a radius; counting strictly-closer neighbors in
    each marginal gives

        psi(k) + psi(N) - <psi(n_x + 1) + psi(n_y + 1)>.

    x, y: (N,) or (N, d) arrays, aligned row-wise.
    """
    xp = _as_points(x, "x")
    yp = _as_points(y, "y")
    n = _check_shapes(k, xp, yp)
    radii = _kth_neighbor_radius(np.hstack([xp, yp]), k)
    if np.all(radii == 0.0):
        raise ValueError("degenerate data: all joint samples are identical")
    cx = _strict_counts(xp, radii)
    cy = _strict_counts(yp, radii)
    value = float(digamma(k) + digamma(n) - np.mean(digamma(cx) + digamma(cy)))
    return MIEstimate(value=value, estimator="knn", k=k)


def knn_cmi(x, y, z, k: int = 3) -> MIEstimate:
    """Frenzel-Pompe / KSG conditional estimate of I(X; Y | Z) in nats.

    Same radius construction in the (x, y, z) joint space, with counts
    in the (x, z), (y, z) and z marginals:

        psi(k) + <psi(n_z + 1) - psi(n_xz + 1) - psi(n_yz + 1)>.
    """
    xp = _as_points(x, "x")
    yp = _as_points(y, "y")
    zp = _as_points(z, "z")
    n = _check_shapes(k, xp, yp, zp)
    radii = _kth_neighbor_radius(np.hstack([xp, yp, zp]), k)
    if np.all(radii == 0.0):
        raise ValueError("degenerate data: all joint samples are identical")
    cxz = _strict_counts(np.hstack([xp, zp]), radii)
    cyz = _strict_counts(np.hstack([yp, zp]), radii)
    cz = _strict_counts(zp, radii)
    value = float(
        digamma(k) + np.mean(digamma(cz) - digamma(cxz) - digamma(cyz))
    )
    return MIEstimate(value=value, estimator="knn", k=k)
