"""Approximate subset sum: find S with |theta - sum(values[S])| <= eps.

Strategy, cheapest first:

1. smallest subsets (sizes 0 to 4) by sorted pair sums, which keeps tickets sparse;
2. greedy residual descent with randomized restarts, where each move toggles
   the single element that most reduces |residual| and a sorted pair search
   checks whether two toggles finish the job;
3. exact meet-in-the-middle when the pool has at most 24 elements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXACT_LIMIT = 24
_PAIR_LIMIT = 3_000_000  # max pair sums materialized by the small-subset stage


@dataclass
class SubsetSumResult:
    subset: np.ndarray
    residual: float
    ok: bool
    method: str

    @property
    def size(self) -> int:
        return int(self.subset.size)


def _result(idx, values, theta, eps, method):
    idx = np.sort(np.asarray(idx, dtype=int))
    resid = abs(theta - float(values[idx].sum())) if idx.size else abs(theta)
    return SubsetSumResult(idx, resid, resid <= eps, method)


def _sorted_pairs(values):
    p = values.size
    i, j = np.triu_indices(p, k=1)
    sums = values[i] + values[j]
    order = np.argsort(sums, kind="stable")
    return sums[order], i[order], j[order]


def _nearest(sorted_vals, targets, width):
    """Indices of up to 2*width sorted entries around each target."""
    pos = np.searchsorted(sorted_vals, targets)
    offs = np.arange(-width, width)
    cand = pos[..., None] + offs
    return np.clip(cand, 0, sorted_vals.size - 1)


def _small_subsets(values, theta, eps, max_size):
    p = values.size
    if p == 0:
        return None
    d = np.abs(theta - values)
    i = int(np.argmin(d))
    if d[i] <= eps or max_size < 2 or p < 2 or p * (p - 1) // 2 > _PAIR_LIMIT:
        return [i] if d[i] <= eps else None

    sums, pi, pj = _sorted_pairs(values)
    c = _nearest(sums, np.array([theta]), 2)[0]
    r = np.abs(theta - sums[c])
    k = int(np.argmin(r))
    if r[k] <= eps:
        return [pi[c[k]], pj[c[k]]]
    if max_size < 3 or p < 3:
        return None

    # triples: one element plus a disjoint pair
    c = _nearest(sums, theta - values, 3)
    r = np.abs(theta - values[:, None] - sums[c])
    own = np.arange(p)[:, None]
    r[(pi[c] == own) | (pj[c] == own)] = np.inf
    a, k = np.unravel_index(int(np.argmin(r)), r.shape)
    if r[a, k] <= eps:
        return [a, pi[c[a, k]], pj[c[a, k]]]
    if max_size < 4 or p < 4:
        return None

    # quadruples: two disjoint pairs
    c = _nearest(sums, theta - sums, 2)
    r = np.abs(theta - sums[:, None] - sums[c])
    qi, qj = pi[c], pj[c]
    clash = (qi == pi[:, None]) | (qi == pj[:, None]) | (qj == pi[:, None]) | (qj == pj[:, None])
    r[clash] = np.inf
    a, k = np.unravel_index(int(np.argmin(r)), r.shape)
    if r[a, k] <= eps:
        return [pi[a], pj[a], qi[a, k], qj[a, k]]
    return None


def _best_pair_toggle(t, resid):
    """Pair (i, j), i != j, minimizing |resid - t_i - t_j|."""
    order = np.argsort(t, kind="stable")
    st = st_sorted = t[order]
    c = _nearest(st_sorted, resid - st, 2)
    r = np.abs(resid - st[:, None] - st_sorted[c])
    r[c == np.arange(st.size)[:, None]] = np.inf
    a, k = np.unravel_index(int(np.argmin(r)), r.shape)
    return order[a], order[c[a, k]], r[a, k]


def greedy_descent(values, theta, eps, rng, restarts=64, max_moves=None):
    """Local search on the inclusion vector; returns the best subset found."""
    p = values.size
    max_moves = max_moves or 4 * p + 8
    best_idx, best_r = np.array([], dtype=int), abs(theta)
    for attempt in range(restarts):
        if attempt == 0:
            chosen = np.zeros(p, dtype=bool)
        else:
            chosen = rng.random(p) < rng.uniform(0.05, 0.5)
        resid = theta - float(values[chosen].sum())
        for _ in range(max_moves):
            if abs(resid) <= eps:
                break
            t = np.where(chosen, -values, values)
            if p >= 2:
                i, j, r2 = _best_pair_toggle(t, resid)
                if r2 <= eps:
                    chosen[i] ^= True
                    chosen[j] ^= True
                    resid = theta - float(values[chosen].sum())
                    break
            k = int(np.argmin(np.abs(resid - t)))
            if abs(resid - t[k]) >= abs(resid):
                break
            chosen[k] ^= True
            resid = theta - float(values[chosen].sum())
        if abs(resid) < best_r or (abs(resid) <= eps and best_r > eps):
            best_idx, best_r = np.flatnonzero(chosen), abs(resid)
        if best_r <= eps:
            break
    return best_idx


def meet_in_the_middle(values, theta):
    """Exact minimum of |theta - sum(S)| over all subsets (pool size <= 24)."""
    p = values.size
    if p > EXACT_LIMIT:
        raise ValueError(f"exact search limited to {EXACT_LIMIT} elements, got {p}")
    h = p // 2
    left, right = values[:h], values[h:]

    def all_sums(v):
        bits = (np.arange(1 << v.size)[:, None] >> np.arange(v.size)) & 1
        return bits @ v if v.size else np.zeros(1)

    ls, rs = all_sums(left), all_sums(right)
    order = np.argsort(rs, kind="stable")
    rs_sorted = rs[order]
    c = _nearest(rs_sorted, theta - ls, 1)
    r = np.abs(theta - ls[:, None] - rs_sorted[c])
    a, k = np.unravel_index(int(np.argmin(r)), r.shape)
    rmask = int(order[c[a, k]])
    idx = [i for i in range(h) if (a >> i) & 1] + [h + i for i in range(p - h) if (rmask >> i) & 1]
    return np.array(idx, dtype=int)


def solve_subset_sum(values, theta, eps, rng=None, restarts=64, method="auto", max_small=4):
    """Find a subset of ``values`` summing to within ``eps`` of ``theta``.

    ``method``: "auto" (all stages), "heuristic" (no exact fallback) or
    "exact" (meet-in-the-middle only). The empty subset is allowed.
    """
    values = np.asarray(values, dtype=float).ravel()
    if method not in ("auto", "heuristic", "exact"):
        raise ValueError(f"unknown method {method!r}")
    if abs(theta) <= eps:
        return _result([], values, theta, eps, "empty")
    if values.size == 0:
        return _result([], values, theta, eps, "empty")
    if method == "exact":
        return _result(meet_in_the_middle(values, theta), values, theta, eps, "exact")

    small = _small_subsets(values, theta, eps, max_small)
    if small is not None:
        return _result(small, values, theta, eps, "small")
    rng = rng if rng is not None else np.random.default_rng(0)
    best = _result(greedy_descent(values, theta, eps, rng, restarts), values, theta, eps, "greedy")
    if best.ok or method == "heuristic" or values.size > EXACT_LIMIT:
        return best
    exact = _result(meet_in_the_middle(values, theta), values, theta, eps, "exact")
    return exact if exact.residual < best.residual else best
