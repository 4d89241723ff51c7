"""
Vector quantization codebooks: scikit-learn k-means started from k-means++
seeds drawn with SplitMix64.
"""

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans
from threadpoolctl import threadpool_limits

from .prng import SplitMix64

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 30
REL_TOL = 1e-6
_CHUNK = 4096


@dataclass
class Codebook:
    centroids: np.ndarray   # K x D
    indices: np.ndarray     # N'
    distortion: float       # mean squared distance to the assigned centroid
    iterations: int = 0

    @property
    def size(self) -> int:
        return int(self.centroids.shape[0])

    def reconstruct(self) -> np.ndarray:
        return self.centroids[self.indices]


def squared_distances(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """N x K squared distances via |x|^2 - 2 x.c + |c|^2, clipped at 0"""
    c_norm = np.sum(centroids * centroids, axis=1)
    out = np.empty((vectors.shape[0], centroids.shape[0]), dtype=np.float64)
    for begin in range(0, vectors.shape[0], _CHUNK):
        block = vectors[begin:begin + _CHUNK]
        d = np.sum(block * block, axis=1)[:, None] - 2.0 * (block @ centroids.T) + c_norm[None, :]
        out[begin:begin + _CHUNK] = np.maximum(d, 0.0)
    return out


def assign(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.argmin(squared_distances(vectors, centroids), axis=1).astype(np.int64)


def mean_distortion(vectors: np.ndarray, centroids: np.ndarray, indices: np.ndarray) -> float:
    if vectors.shape[0] == 0:
        return 0.0
    diff = vectors - centroids[indices]
    return float(np.mean(np.sum(diff * diff, axis=1)))


def kmeans_plus_plus(vectors: np.ndarray, k: int, rng: SplitMix64) -> np.ndarray:
    """Seed indices: first uniform, then proportional to squared distance;
    once every point is covered, the lowest unpicked index (cycling when K > N)"""
    n = vectors.shape[0]
    picked = [min(int(rng.uniform(1)[0] * n), n - 1)]
    taken = np.zeros(n, dtype=bool)
    taken[picked[0]] = True
    diff = vectors - vectors[picked[0]]
    nearest = np.sum(diff * diff, axis=1)
    while len(picked) < k:
        if nearest.sum() > 0:
            idx = rng.choice_weighted(nearest)
        else:
            free = np.nonzero(~taken)[0]
            idx = int(free[0]) if free.size else len(picked) % n
        picked.append(idx)
        taken[idx] = True
        diff = vectors - vectors[idx]
        nearest = np.minimum(nearest, np.sum(diff * diff, axis=1))
    return np.asarray(picked, dtype=np.int64)


def fit_codebook(vectors: np.ndarray, k: int, seed: int, iterations: int = MAX_ITERATIONS,
                 rel_tol: float = REL_TOL) -> Codebook:
    """k-means from SplitMix64 k-means++ seeds

    Lloyd iterations run in scikit-learn's KMeans on a single OpenMP thread.
    With K >= N every row is its own centroid and no iterations run.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n, dim = vectors.shape
    if n < 1 or k < 1:
        raise ValueError(f"fit_codebook needs N >= 1 and K >= 1, got N={n}, K={k}")
    seeds = vectors[kmeans_plus_plus(vectors, k, SplitMix64(seed))]

    done = 0
    if k >= n or iterations < 1:
        centroids = seeds.copy()
    else:
        km = KMeans(n_clusters=k, init=seeds, n_init=1, max_iter=iterations, tol=rel_tol,
                    algorithm="lloyd", random_state=seed % 2 ** 32)
        with threadpool_limits(limits=1, user_api="openmp"):
            km.fit(vectors)
        centroids = np.ascontiguousarray(km.cluster_centers_, dtype=np.float64)
        done = int(km.n_iter_)
    indices = assign(vectors, centroids)
    distortion = mean_distortion(vectors, centroids, indices)

    logger.debug(f"k-means K={k} D={dim} N={n}: distortion {distortion:.6g} after {done} iterations")
    return Codebook(centroids=centroids, indices=indices, distortion=distortion, iterations=done)
