"""Hot numeric kernels: nearest-center search and sum-product LDPC decoding.

Each kernel has a numba implementation and a pure-numpy one. The numba path
is used when numba imports and ``SEMCOM_DISABLE_NUMBA`` is unset/false; both
paths are always importable so they can be compared directly.
"""

from __future__ import annotations

import os

import numpy as np

LLR_CLIP = 50.0
_PHI_MIN = 1e-12
_PHI_MAX = 40.0


def _env_disabled() -> bool:
    return os.environ.get("SEMCOM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False

numba_default = {"nogil": True, "cache": True, "fastmath": False}


def use_numba() -> bool:
    return _HAVE_NUMBA and not _env_disabled()


# ---------------------------------------------------------------------------
# nearest center
# ---------------------------------------------------------------------------


def nearest_center_numpy(values: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the closest center; ties go to the lower index."""
    v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    c = np.asarray(centers, dtype=np.float64)
    hi = np.clip(np.searchsorted(c, v, side="left"), 1, len(c) - 1)
    lo = hi - 1
    pick_lo = np.abs(v - c[lo]) <= np.abs(v - c[hi])
    return np.where(pick_lo, lo, hi).astype(np.int64).reshape(np.shape(values))


def _nearest_center_loop(v, c, out):
    n = c.shape[0]
    for i in range(v.shape[0]):
        x = v[i]
        a, b = 0, n
        while a < b:  # first center >= x
            mid = (a + b) // 2
            if c[mid] < x:
                a = mid + 1
            else:
                b = mid
        hi = min(max(a, 1), n - 1)
        lo = hi - 1
        out[i] = lo if abs(x - c[lo]) <= abs(x - c[hi]) else hi


# ---------------------------------------------------------------------------
# sum-product decoding on an edge list
#
# Edges are ordered by check node. ``chk_ptr[m]..chk_ptr[m+1]`` are the edges
# of check m, ``edge_var[e]`` the variable node of edge e. ``var_edges`` lists
# edge ids grouped by variable, delimited by ``var_ptr``.
# ---------------------------------------------------------------------------


def _phi_numpy(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, _PHI_MIN, _PHI_MAX)
    return -np.log(np.tanh(0.5 * x))


def bp_decode_numpy(llr, chk_ptr, edge_var, var_ptr, var_edges, max_iter):
    """Log-domain BP. Returns (posterior llr, iterations used, converged)."""
    llr = np.clip(np.asarray(llr, dtype=np.float64), -LLR_CLIP, LLR_CLIP)
    n_chk = len(chk_ptr) - 1
    chk_of_edge = np.repeat(np.arange(n_chk), np.diff(chk_ptr))
    var_order = var_edges
    starts_v = var_ptr[:-1]
    starts_c = chk_ptr[:-1]

    v2c = llr[edge_var].copy()
    post = llr.copy()
    for it in range(1, max_iter + 1):
        mag = _phi_numpy(np.abs(v2c))
        neg = (v2c < 0).astype(np.int64)
        tot_mag = np.add.reduceat(mag, starts_c)
        tot_neg = np.add.reduceat(neg, starts_c)
        ext = _phi_numpy(tot_mag[chk_of_edge] - mag)
        sign = 1.0 - 2.0 * ((tot_neg[chk_of_edge] - neg) & 1)
        c2v = sign * ext

        incoming = np.add.reduceat(c2v[var_order], starts_v)
        post = llr + incoming
        v2c = post[edge_var] - c2v

        hard = (post < 0).astype(np.int64)
        syn = np.add.reduceat(hard[edge_var], starts_c) & 1
        if not syn.any():
            return post, it, True
    return post, max_iter, False


def _phi_scalar(x):
    if x < _PHI_MIN:
        x = _PHI_MIN
    elif x > _PHI_MAX:
        x = _PHI_MAX
    return -np.log(np.tanh(0.5 * x))


def _bp_decode_loop(llr_in, chk_ptr, edge_var, var_ptr, var_edges, max_iter):
    n_var = llr_in.shape[0]
    n_chk = chk_ptr.shape[0] - 1
    n_edge = edge_var.shape[0]
    llr = np.empty(n_var)
    for v in range(n_var):
        x = llr_in[v]
        llr[v] = min(max(x, -LLR_CLIP), LLR_CLIP)
    v2c = np.empty(n_edge)
    c2v = np.zeros(n_edge)
    mag = np.empty(n_edge)
    post = llr.copy()
    for e in range(n_edge):
        v2c[e] = llr[edge_var[e]]
    for it in range(1, max_iter + 1):
        for m in range(n_chk):
            tot = 0.0
            neg = 0
            for e in range(chk_ptr[m], chk_ptr[m + 1]):
                mag[e] = _phi_scalar(abs(v2c[e]))
                tot += mag[e]
                if v2c[e] < 0:
                    neg += 1
            for e in range(chk_ptr[m], chk_ptr[m + 1]):
                own = 1 if v2c[e] < 0 else 0
                s = 1.0 - 2.0 * ((neg - own) & 1)
                c2v[e] = s * _phi_scalar(tot - mag[e])
        for v in range(n_var):
            acc = llr[v]
            for j in range(var_ptr[v], var_ptr[v + 1]):
                acc += c2v[var_edges[j]]
            post[v] = acc
        for e in range(n_edge):
            v2c[e] = post[edge_var[e]] - c2v[e]
        ok = True
        for m in range(n_chk):
            par = 0
            for e in range(chk_ptr[m], chk_ptr[m + 1]):
                if post[edge_var[e]] < 0:
                    par ^= 1
            if par:
                ok = False
                break
        if ok:
            return post, it, True
    return post, max_iter, False


if _HAVE_NUMBA:
    _nearest_center_nb = numba.njit(**numba_default)(_nearest_center_loop)
    _phi_scalar = numba.njit(**numba_default)(_phi_scalar)
    _bp_decode_nb = numba.njit(**numba_default)(_bp_decode_loop)


def nearest_center_numba(values: np.ndarray, centers: np.ndarray) -> np.ndarray:
    if not _HAVE_NUMBA:  # pragma: no cover
        raise RuntimeError("numba is not available")
    v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    out = np.empty(v.shape[0], dtype=np.int64)
    _nearest_center_nb(v, np.ascontiguousarray(centers, dtype=np.float64), out)
    return out.reshape(np.shape(values))


def bp_decode_numba(llr, chk_ptr, edge_var, var_ptr, var_edges, max_iter):
    if not _HAVE_NUMBA:  # pragma: no cover
        raise RuntimeError("numba is not available")
    post, it, ok = _bp_decode_nb(
        np.ascontiguousarray(llr, dtype=np.float64), chk_ptr, edge_var, var_ptr, var_edges, int(max_iter)
    )
    return post, int(it), bool(ok)


def nearest_center(values: np.ndarray, centers: np.ndarray) -> np.ndarray:
    if use_numba():
        return nearest_center_numba(values, centers)
    return nearest_center_numpy(values, centers)


def bp_decode(llr, chk_ptr, edge_var, var_ptr, var_edges, max_iter):
    if use_numba():
        return bp_decode_numba(llr, chk_ptr, edge_var, var_ptr, var_edges, max_iter)
    return bp_decode_numpy(llr, chk_ptr, edge_var, var_ptr, var_edges, max_iter)
