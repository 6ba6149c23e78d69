"""Slow, obviously-correct reference computations used only by the tests."""
import itertools

import numpy as np


def element_set(white):
    """All open elements as doubled coordinates.

    Voxel (i, j, k) spans [i, i+1]^3; its 27 sub-elements sit at
    (2i+a, 2j+b, 2k+c), a, b, c in {0, 1, 2}.  The number of even
    coordinates gives the type: 0 voxel, 1 face, 2 edge, 3 vertex.
    """
    elems = set()
    for i, j, k in zip(*np.nonzero(np.asarray(white))):
        for a, b, c in itertools.product(range(3), repeat=3):
            elems.add((2 * i + a, 2 * j + b, 2 * k + c))
    return elems


def brute_counts(white):
    counts = [0, 0, 0, 0]
    for e in element_set(white):
        counts[sum(1 for c in e if c % 2 == 0)] += 1
    return tuple(counts)


def surrounding_voxels(e):
    per_axis = []
    for c in e:
        per_axis.append([(c - 1) // 2] if c % 2 else [c // 2 - 1, c // 2])
    return list(itertools.product(*per_axis))


def brute_weighted_counts(white, weights, origin=(0, 0, 0)):
    """Weighted counts; ``weights[p - origin]`` is the weight of voxel p (0 outside)."""
    weights = np.asarray(weights, dtype=float)
    totals = [0.0, 0.0, 0.0, 0.0]

    def w(p):
        q = tuple(pi - oi for pi, oi in zip(p, origin))
        if all(0 <= qi < n for qi, n in zip(q, weights.shape)):
            return weights[q]
        return 0.0

    for e in element_set(white):
        vox = surrounding_voxels(e)
        totals[sum(1 for c in e if c % 2 == 0)] += sum(w(p) for p in vox) / len(vox)
    return tuple(totals)


def mf(counts):
    n_p, n_f, n_e, n_v = counts
    return (n_p, -6 * n_p + 2 * n_f, 3 * n_p - 2 * n_f + n_e, -n_p + n_f - n_e + n_v)


def wilcoxon_enumerated_p(a, b):
    """Two-sided p by listing every sign assignment of the midranked |differences|."""
    d = np.asarray(a, float) - np.asarray(b, float)
    d = d[d != 0]
    absd = np.abs(d)
    # midranks by counting, no library ranking
    ranks = np.array([np.sum(absd < x) + (np.sum(absd == x) + 1) / 2.0 for x in absd])
    observed = ranks[d > 0].sum()
    mu = ranks.sum() / 2.0
    extreme = 0
    total = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        s = float(np.dot(signs, ranks))
        total += 1
        if abs(s - mu) >= abs(observed - mu) - 1e-9:
            extreme += 1
    return extreme / total, observed
