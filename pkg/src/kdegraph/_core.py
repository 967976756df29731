"""Hot loops: range KDE sums, tree descent, rejection, walks, edge draws.

Every kernel exists in two builds sharing one source. The accelerated build
wraps the loops in ``numba.njit``; the fallback runs the same loop structure
in Python over numpy-vectorized leaf kernels. Both builds consume the caller's
``numpy.random.Generator`` in the same order, so a fixed seed gives the same
draws under either build (up to floating-point summation order).

Select the build with ``KG_DISABLE_NUMBA=1`` or :func:`use_numba`.
"""
from __future__ import annotations

import math
import os
import types
from contextlib import contextmanager
from types import SimpleNamespace

import numpy as np
from scipy.spatial.distance import cdist

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

GAUSSIAN = 0
EXPONENTIAL = 1
LAPLACIAN = 2
RATIONAL_QUADRATIC = 3

EXACT = 0
SAMPLING = 1

# error codes returned by kernels; python wrappers turn them into exceptions
OK = 0
ERR_TAU = -1
ERR_ENVELOPE = -2
ERR_ROUNDS = -3

# a rejection loop this long means the envelope is useless in practice
MAX_ROUNDS = 10_000_000

ENVELOPE_SLACK = 1e-9


def _env_wants_numba() -> bool:
    flag = os.environ.get("KG_DISABLE_NUMBA", "").strip().lower()
    return HAS_NUMBA and flag not in ("1", "true", "yes", "on")


# ---------------------------------------------------------------------------
# leaf kernels


def _pair(x, y, fam, inv_s, beta):
    acc = 0.0
    if fam == LAPLACIAN:
        for t in range(x.shape[0]):
            acc += abs(x[t] - y[t])
        return math.exp(-acc * inv_s)
    for t in range(x.shape[0]):
        d = x[t] - y[t]
        acc += d * d
    if fam == GAUSSIAN:
        return math.exp(-acc * inv_s * inv_s)
    if fam == EXPONENTIAL:
        return math.exp(-math.sqrt(acc) * inv_s)
    return (1.0 + acc * inv_s * inv_s) ** (-beta)


def kernel_rows(A, y, fam, inv_s, beta):
    """Vectorized k(a, y) for every row a of A."""
    diff = A - y
    if fam == LAPLACIAN:
        return np.exp(-np.abs(diff).sum(axis=1) * inv_s)
    sq = np.einsum("ij,ij->i", diff, diff)
    if fam == GAUSSIAN:
        return np.exp(-sq * (inv_s * inv_s))
    if fam == EXPONENTIAL:
        return np.exp(-np.sqrt(sq) * inv_s)
    return (1.0 + sq * (inv_s * inv_s)) ** (-beta)


def kernel_pairs(A, B, fam, inv_s, beta):
    """k(A[t], B[t]) for aligned rows."""
    diff = A - B
    if fam == LAPLACIAN:
        return np.exp(-np.abs(diff).sum(axis=1) * inv_s)
    sq = np.einsum("ij,ij->i", diff, diff)
    if fam == GAUSSIAN:
        return np.exp(-sq * (inv_s * inv_s))
    if fam == EXPONENTIAL:
        return np.exp(-np.sqrt(sq) * inv_s)
    return (1.0 + sq * (inv_s * inv_s)) ** (-beta)


def kernel_block(A, B, fam, inv_s, beta):
    """Dense block K[i, j] = k(A[i], B[j]).

    Distances come from direct coordinate differences so coincident points
    get exactly zero distance, which the square root of the exponential
    kernel would otherwise amplify.
    """
    if fam == LAPLACIAN:
        return np.exp(-cdist(A, B, "cityblock") * inv_s)
    if fam == EXPONENTIAL:
        return np.exp(-cdist(A, B, "euclidean") * inv_s)
    sq = cdist(A, B, "sqeuclidean")
    if fam == GAUSSIAN:
        return np.exp(-sq * (inv_s * inv_s))
    return (1.0 + sq * (inv_s * inv_s)) ** (-beta)


def _range_sum_vec(X, lo, hi, y, skip, fam, inv_s, beta, kind, r, rho, rng):
    m = hi - lo
    if kind == EXACT or r >= m:
        vals = kernel_rows(X[lo:hi], y, fam, inv_s, beta)
        if lo <= skip < hi:
            vals[skip - lo] = 0.0
        return vals.sum(), 0, m
    est = np.empty(rho)
    for rep in range(rho):
        u = rng.random(r)
        idx = lo + (u * m).astype(np.int64)
        est[rep] = kernel_rows(X[idx], y, fam, inv_s, beta).sum() * m / r
    return np.median(est), 1, r * rho


def _search(prefix, x):
    # first index whose prefix sum exceeds x
    lo = 0
    hi = prefix.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if prefix[mid] > x:
            hi = mid
        else:
            lo = mid + 1
    return lo


# ---------------------------------------------------------------------------
# loop kernels. Helpers (pair, range_sum, search, descend, exact_one) are
# resolved through module globals: the numpy build uses this module's own
# bindings, the numba build rebinds each function to a globals dict holding
# jitted versions. Global lookups, unlike closures, keep numba's disk cache
# valid across processes.

def _range_sum_loop(X, lo, hi, y, skip, fam, inv_s, beta, kind, r, rho, rng):
    m = hi - lo
    if kind == EXACT or r >= m:
        s = 0.0
        for j in range(lo, hi):
            if j != skip:
                s += pair(X[j], y, fam, inv_s, beta)
        return s, 0, m
    est = np.empty(rho)
    for rep in range(rho):
        u = rng.random(r)
        s = 0.0
        for t in range(r):
            s += pair(X[lo + int(u[t] * m)], y, fam, inv_s, beta)
        est[rep] = s * m / r
    return np.median(est), 1, r * rho


def descend(X, fam, inv_s, beta, lo, hi, left, right, kind, r, rho, eps,
            i, target, rng):
    """Walk the range tree from the root toward a neighbor of ``i``.

    ``target < 0`` draws a branch at every level; otherwise the branch
    holding ``target`` is followed and its probability recorded (replay).
    Returns (leaf index or error code, path probability, kde evals, queries).
    """
    y = X[i]
    node = 0
    prob = 1.0
    evals = 0
    queries = 0
    while left[node] >= 0:
        a_node = left[node]
        b_node = right[node]
        # exact sums skip i outright; sampled ones get the self term removed
        a, fa, ca = range_sum(X, lo[a_node], hi[a_node], y, i, fam, inv_s,
                              beta, kind, r, rho, rng)
        b, fb, cb = range_sum(X, lo[b_node], hi[b_node], y, i, fam, inv_s,
                              beta, kind, r, rho, rng)
        evals += ca + cb
        queries += 2
        if fa == 1 and lo[a_node] <= i and i < hi[a_node]:
            a -= 1.0 - eps
        elif fb == 1 and lo[b_node] <= i and i < hi[b_node]:
            b -= 1.0 - eps
        if a < 0.0:
            a = 0.0
        if b < 0.0:
            b = 0.0
        tot = a + b
        if tot <= 0.0:
            return ERR_TAU, 0.0, evals, queries
        if target < 0:
            go_left = rng.random() < a / tot
        else:
            go_left = lo[a_node] <= target and target < hi[a_node]
        if go_left:
            prob *= a / tot
            node = a_node
        else:
            prob *= b / tot
            node = b_node
    return lo[node], prob, evals, queries


def exact_one(X, fam, inv_s, beta, lo, hi, left, right, kind, r, rho, eps,
              i, env, rng):
    """Rejection-corrected neighbor draw; env bounds k(x_i, x_j)/path_prob."""
    rounds = 0
    evals = 0
    queries = 0
    direct = 0
    while True:
        rounds += 1
        j, q, ev, qu = descend(X, fam, inv_s, beta, lo, hi, left, right,
                               kind, r, rho, eps, i, -1, rng)
        evals += ev
        queries += qu
        if j < 0:
            return j, 0.0, rounds, evals, queries, direct
        kij = pair(X[i], X[j], fam, inv_s, beta)
        direct += 1
        ratio = kij / (q * env)
        if ratio > 1.0 + ENVELOPE_SLACK:
            return ERR_ENVELOPE, ratio, rounds, evals, queries, direct
        if rng.random() < ratio:
            return j, q, rounds, evals, queries, direct
        if rounds >= MAX_ROUNDS:
            return ERR_ROUNDS, 0.0, rounds, evals, queries, direct


def neighbors(X, fam, inv_s, beta, lo, hi, left, right, kind, r, rho, eps,
              i, count, rng):
    idx = np.empty(count, np.int64)
    prob = np.empty(count)
    evals = 0
    queries = 0
    for c in range(count):
        j, q, ev, qu = descend(X, fam, inv_s, beta, lo, hi, left, right,
                               kind, r, rho, eps, i, -1, rng)
        evals += ev
        queries += qu
        if j < 0:
            return idx, prob, evals, queries, j
        idx[c] = j
        prob[c] = q
    return idx, prob, evals, queries, OK

def replay_probs(X, fam, inv_s, beta, lo, hi, left, right, kind, r, rho,
                 eps, srcs, dsts, rng):
    out = np.empty(srcs.shape[0])
    evals = 0
    queries = 0
    for c in range(srcs.shape[0]):
        j, q, ev, qu = descend(X, fam, inv_s, beta, lo, hi, left, right,
                               kind, r, rho, eps, srcs[c], dsts[c], rng)
        evals += ev
        queries += qu
        if j < 0:
            return out, evals, queries, j
        out[c] = q
    return out, evals, queries, OK

def exact_neighbors(X, fam, inv_s, beta, lo, hi, left, right, kind, r, rho,
                    eps, i, env, count, rng):
    idx = np.empty(count, np.int64)
    prob = np.empty(count)
    rounds = 0
    evals = 0
    queries = 0
    direct = 0
    for c in range(count):
        j, q, ro, ev, qu, di = exact_one(X, fam, inv_s, beta, lo, hi, left,
                                         right, kind, r, rho, eps, i, env,
                                         rng)
        rounds += ro
        evals += ev
        queries += qu
        direct += di
        if j < 0:
            return idx, prob, rounds, evals, queries, direct, j
        idx[c] = j
        prob[c] = q
    return idx, prob, rounds, evals, queries, direct, OK

def walks(X, fam, inv_s, beta, lo, hi, left, right, kind, r, rho, eps,
          starts, steps, exact, env, rng):
    count = starts.shape[0]
    trace = np.empty((count, steps + 1), np.int64)
    rounds = 0
    evals = 0
    queries = 0
    direct = 0
    for w in range(count):
        v = starts[w]
        trace[w, 0] = v
        for s in range(steps):
            if exact:
                j, q, ro, ev, qu, di = exact_one(X, fam, inv_s, beta, lo,
                                                 hi, left, right, kind, r,
                                                 rho, eps, v, env[v], rng)
                rounds += ro
                direct += di
            else:
                j, q, ev, qu = descend(X, fam, inv_s, beta, lo, hi, left,
                                       right, kind, r, rho, eps, v, -1,
                                       rng)
            evals += ev
            queries += qu
            if j < 0:
                return trace, rounds, evals, queries, direct, j
            v = j
            trace[w, s + 1] = v
    return trace, rounds, evals, queries, direct, OK

def edges(X, fam, inv_s, beta, lo, hi, left, right, kind, r, rho, eps,
          prefix, count, rng):
    us = np.empty(count, np.int64)
    vs = np.empty(count, np.int64)
    q_uv = np.empty(count)
    q_vu = np.empty(count)
    evals = 0
    queries = 0
    total = prefix[prefix.shape[0] - 1]
    for c in range(count):
        u = search(prefix, rng.random() * total)
        v, q, ev, qu = descend(X, fam, inv_s, beta, lo, hi, left, right,
                               kind, r, rho, eps, u, -1, rng)
        evals += ev
        queries += qu
        if v < 0:
            return us, vs, q_uv, q_vu, evals, queries, v
        back, qb, ev, qu = descend(X, fam, inv_s, beta, lo, hi, left,
                                   right, kind, r, rho, eps, v, u, rng)
        evals += ev
        queries += qu
        if back < 0:
            return us, vs, q_uv, q_vu, evals, queries, back
        us[c] = u
        vs[c] = v
        q_uv[c] = q
        q_vu[c] = qb
    return us, vs, q_uv, q_vu, evals, queries, OK

def point_sums(X, fam, inv_s, beta, lo_r, hi_r, kind, r, rho, Y, skip_self, rng):
    """KDE estimates of sum_{j in [lo_r, hi_r)} k(x_j, y) for rows y of Y.

    With ``skip_self`` (Y is X) exact sums leave out index c for row c.
    """
    m = Y.shape[0]
    vals = np.empty(m)
    flags = np.empty(m, np.int64)
    evals = 0
    for c in range(m):
        skip = c if skip_self else -1
        v, f, ev = range_sum(X, lo_r, hi_r, Y[c], skip, fam, inv_s, beta, kind,
                             r, rho, rng)
        vals[c] = v
        flags[c] = f
        evals += ev
    return vals, flags, evals


pair = _pair
range_sum = _range_sum_vec
search = _search

_LOOP_NAMES = ("descend", "exact_one", "neighbors", "replay_probs", "exact_neighbors",
               "walks", "edges", "point_sums")


def _rebind(fn, namespace):
    return types.FunctionType(fn.__code__, namespace, fn.__name__, fn.__defaults__)


def _build(accelerated: bool) -> SimpleNamespace:
    funcs = {name: globals()[name] for name in _LOOP_NAMES}
    if not accelerated:
        return SimpleNamespace(accelerated=False, pair=pair, range_sum=range_sum,
                               search=search, **funcs)
    jit = numba.njit(nogil=True, cache=True)
    ns = dict(globals())
    ns["pair"] = jit(_rebind(_pair, ns))
    ns["range_sum"] = jit(_rebind(_range_sum_loop, ns))
    ns["search"] = jit(_rebind(_search, ns))
    for name, fn in funcs.items():
        ns[name] = jit(_rebind(fn, ns))
    return SimpleNamespace(accelerated=True, pair=ns["pair"], range_sum=ns["range_sum"],
                           search=ns["search"], **{k: ns[k] for k in _LOOP_NAMES})


_builds: dict = {}
_state = {"accelerated": _env_wants_numba()}


def kernels(accelerated: bool | None = None) -> SimpleNamespace:
    """Return the kernel namespace for the requested (or current) build."""
    if accelerated is None:
        accelerated = _state["accelerated"]
    accelerated = bool(accelerated) and HAS_NUMBA
    if accelerated not in _builds:
        _builds[accelerated] = _build(accelerated)
    return _builds[accelerated]


def numba_active() -> bool:
    return _state["accelerated"] and HAS_NUMBA


@contextmanager
def use_numba(flag: bool):
    """Temporarily switch between the numba and numpy builds."""
    old = _state["accelerated"]
    _state["accelerated"] = bool(flag)
    try:
        yield
    finally:
        _state["accelerated"] = old
