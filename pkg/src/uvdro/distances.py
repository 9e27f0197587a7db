"""Pairwise distance matrices over features and unmeasured variables.

Builds the two cost matrices consumed by the transport term of the robust
objective, degrades annotation quality for ablations, and provides a 1-D
empirical Wasserstein distance as a diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DistanceMatrix",
    "pairwise_euclidean",
    "annotation_distance",
    "shuffle_distances",
    "wasserstein_1d",
    "rescale_unit_mean",
]


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric nonnegative n x n matrix with zero diagonal."""

    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"distance matrix must be square, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("distance matrix contains non-finite entries")
        if not np.allclose(e, e.T, atol=1e-12, rtol=0.0):
            raise ValueError("distance matrix must be symmetric within 1e-12")
        if np.any(np.abs(np.diag(e)) > 1e-12):
            raise ValueError("distance matrix diagonal must be zero")
        if np.any(e < -1e-12):
            raise ValueError("distance matrix entries must be nonnegative")
        # canonicalize: exact symmetry, exact zero diagonal, clip float dust
        e = 0.5 * (e + e.T)
        np.fill_diagonal(e, 0.0)
        np.clip(e, 0.0, None, out=e)
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def pairwise_euclidean(features) -> DistanceMatrix:
    """L2 distance between every pair of feature rows."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    g = x @ x.T
    sq = np.diag(g)[:, None] + np.diag(g)[None, :] - 2.0 * g
    np.clip(sq, 0.0, None, out=sq)
    return DistanceMatrix(np.sqrt(sq))


def annotation_distance(embeddings) -> DistanceMatrix:
    """Average cosine distance between replicate annotation embeddings.

    Entry (i, j) is the mean over all replicate cross pairs (r_i, r_j) of
    1 - cos(u, v). Averaging over unit vectors makes this a single inner
    product of per-example replicate means. Cosine distance does not satisfy
    the triangle inequality; the estimator only needs pairwise costs.
    """
    if len(embeddings) == 0:
        raise ValueError("no examples given")
    dim = None
    means = []
    for i, replicates in enumerate(embeddings):
        if len(replicates) == 0:
            raise ValueError(f"example {i} has no replicates")
        units = []
        for r, v in enumerate(replicates):
            v = np.asarray(v, dtype=float).ravel()
            if dim is None:
                dim = v.size
            elif v.size != dim:
                raise ValueError(
                    f"example {i} replicate {r} has dimension {v.size}, expected {dim}"
                )
            norm = np.linalg.norm(v)
            if norm == 0.0:
                raise ValueError(f"example {i} replicate {r} has zero norm")
            units.append(v / norm)
        means.append(np.mean(units, axis=0))
    u = np.vstack(means)
    d = 1.0 - u @ u.T
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(0.5 * (d + d.T))


def shuffle_distances(d_c: DistanceMatrix, fraction: float, seed) -> DistanceMatrix:
    """Permute a fraction of example identities inside the distance matrix.

    Picks floor(fraction * n) indices uniformly and permutes their annotation
    assignments among themselves; the result is the distance matrix rebuilt
    under the corrupted assignment. fraction=0 is the identity. `seed` is an
    integer seed or any object exposing numpy-Generator-style choice() and
    permutation() (tests inject stubs to force specific permutations).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n = d_c.size
    rng = seed if hasattr(seed, "permutation") else np.random.default_rng(seed)
    m = int(np.floor(fraction * n))
    pi = np.arange(n)
    if m >= 2:
        chosen = np.asarray(rng.choice(n, size=m, replace=False))
        pi[chosen] = chosen[np.asarray(rng.permutation(m))]
    return DistanceMatrix(d_c.entries[np.ix_(pi, pi)])


def wasserstein_1d(samples_a, samples_b) -> float:
    """Empirical 1-D Wasserstein-1 distance.

    Equal-length inputs reduce to the mean absolute difference of sorted
    samples; unequal lengths integrate |F_a - F_b| over the pooled support.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d requires nonempty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    pooled = np.sort(np.concatenate([a, b]))
    widths = np.diff(pooled)
    cdf_a = np.searchsorted(np.sort(a), pooled[:-1], side="right") / a.size
    cdf_b = np.searchsorted(np.sort(b), pooled[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def rescale_unit_mean(d: DistanceMatrix) -> DistanceMatrix:
    """Rescale so the mean off-diagonal entry is 1 (no-op on all-zero input).

    Off by default everywhere; lets callers balance the magnitudes of the
    feature and annotation matrices when they live on different scales.
    """
    n = d.size
    if n < 2:
        return DistanceMatrix(d.entries.copy())
    off = d.entries[~np.eye(n, dtype=bool)]
    mean = off.mean()
    if mean <= 0.0:
        return DistanceMatrix(d.entries.copy())
    return DistanceMatrix(d.entries / mean)
