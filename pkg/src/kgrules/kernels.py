"""Numeric kernels behind grounding joins and Bernoulli-table math.

Two interchangeable backends: a numba JIT path and a pure numpy path.
The environment variable ``KGRULES_NUMBA`` picks the default at import
time ("0", "false", "off" or "no" disables the JIT path; anything else,
or an unset variable, enables it when numba is importable). ``use()``
switches backends at runtime; callers must access kernels as module
attributes (``kernels.expand_bindings(...)``) for a switch to take
effect.

Both backends produce identical outputs, including row order, so the
rest of the package is backend-agnostic. Bindings tables are 2-D int64
arrays, one column per rule variable, -1 marking an unbound slot.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "expand_bindings",
    "cross_bindings",
    "filter_bindings",
    "independent_table",
    "mass_any",
    "bit_marginals",
    "marginalize_table",
    "use",
    "active_backend",
    "available_backends",
    "IMPLEMENTATIONS",
]


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _expand_bindings_np(bindings, bound_col, bound_const, new_col, offsets, values):
    """Extend each binding row once per CSR neighbour of its bound entity.

    ``bound_col`` < 0 means every row uses ``bound_const`` as the source
    entity. Rows whose source entity has no CSR slot drop out. Output
    order: input row major, neighbours in stored (ascending) order.
    """
    n = bindings.shape[0]
    n_src = offsets.shape[0] - 1
    if bound_col >= 0:
        ids = bindings[:, bound_col]
    else:
        ids = np.full(n, bound_const, dtype=np.int64)
    valid = (ids >= 0) & (ids < n_src)
    safe = np.where(valid, ids, 0)
    starts = offsets[safe]
    deg = np.where(valid, offsets[safe + 1] - starts, 0)
    out = np.repeat(bindings, deg, axis=0)
    total = out.shape[0]
    if total:
        block = np.cumsum(deg) - deg
        pos = np.arange(total, dtype=np.int64) - np.repeat(block, deg) + np.repeat(starts, deg)
        out[:, new_col] = values[pos]
    return out


def _cross_bindings_np(bindings, col_a, a_vals, col_b, b_vals):
    """Cartesian product of binding rows with parallel value lists.

    Each input row is repeated once per list position; ``col_a`` takes
    ``a_vals`` and, when ``col_b`` >= 0, ``col_b`` takes ``b_vals``.
    Output order: input row major, list order minor.
    """
    n = bindings.shape[0]
    m = a_vals.shape[0]
    out = np.repeat(bindings, m, axis=0)
    if n and m:
        out[:, col_a] = np.tile(a_vals, n)
        if col_b >= 0:
            out[:, col_b] = np.tile(b_vals, n)
    return out


def _filter_bindings_np(bindings, s_col, s_const, o_col, o_const, pair_keys, n_entities):
    """Boolean mask of rows whose (subject, object) pair exists.

    ``pair_keys`` holds sorted packed keys ``s * n_entities + o`` for one
    relation. A column index < 0 substitutes the matching constant.
    """
    n = bindings.shape[0]
    if s_col >= 0:
        s = bindings[:, s_col]
    else:
        s = np.full(n, s_const, dtype=np.int64)
    if o_col >= 0:
        o = bindings[:, o_col]
    else:
        o = np.full(n, o_const, dtype=np.int64)
    valid = (s >= 0) & (s < n_entities) & (o >= 0) & (o < n_entities)
    keys = np.where(valid, s * n_entities + o, -1)
    pos = np.searchsorted(pair_keys, keys)
    inside = pos < pair_keys.shape[0]
    safe = np.where(inside, pos, 0)
    return valid & inside & (pair_keys[safe] == keys)


def _independent_table_np(marginals):
    """Joint table of independent Bernoulli variables.

    Entry r is the probability of the realisation whose bit j equals the
    truth of variable j, i.e. the product over j of ``p_j`` or ``1-p_j``.
    """
    table = np.ones(1, dtype=np.float64)
    for p in marginals:
        table = np.concatenate((table * (1.0 - p), table * p))
    return table


def _mass_any_np(probs, mask):
    """Total probability of realisations sharing at least one bit with mask."""
    idx = np.arange(probs.shape[0], dtype=np.int64)
    return float(probs[(idx & mask) != 0].sum())


def _bit_marginals_np(probs, k):
    """Per-bit marginal probabilities of a 2^k joint table."""
    idx = np.arange(probs.shape[0], dtype=np.int64)
    out = np.empty(k, dtype=np.float64)
    for j in range(k):
        out[j] = probs[((idx >> j) & 1) == 1].sum()
    return out


def _marginalize_table_np(probs, keep_bits):
    """Sum a 2^k table down to the 2^m table over ``keep_bits`` (ascending)."""
    m = keep_bits.shape[0]
    idx = np.arange(probs.shape[0], dtype=np.int64)
    new_idx = np.zeros_like(idx)
    for i in range(m):
        new_idx |= ((idx >> keep_bits[i]) & 1) << i
    return np.bincount(new_idx, weights=probs, minlength=1 << m)


_NUMPY = {
    "expand_bindings": _expand_bindings_np,
    "cross_bindings": _cross_bindings_np,
    "filter_bindings": _filter_bindings_np,
    "independent_table": _independent_table_np,
    "mass_any": _mass_any_np,
    "bit_marginals": _bit_marginals_np,
    "marginalize_table": _marginalize_table_np,
}


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------


def _build_numba():
    from numba import njit

    jit = njit(cache=True, nogil=True)

    @jit
    def expand_bindings(bindings, bound_col, bound_const, new_col, offsets, values):
        n, v = bindings.shape
        n_src = offsets.shape[0] - 1
        total = 0
        for i in range(n):
            e = bindings[i, bound_col] if bound_col >= 0 else bound_const
            if 0 <= e < n_src:
                total += offsets[e + 1] - offsets[e]
        out = np.empty((total, v), dtype=np.int64)
        row = 0
        for i in range(n):
            e = bindings[i, bound_col] if bound_col >= 0 else bound_const
            if e < 0 or e >= n_src:
                continue
            for j in range(offsets[e], offsets[e + 1]):
                for c in range(v):
                    out[row, c] = bindings[i, c]
                out[row, new_col] = values[j]
                row += 1
        return out

    @jit
    def cross_bindings(bindings, col_a, a_vals, col_b, b_vals):
        n, v = bindings.shape
        m = a_vals.shape[0]
        out = np.empty((n * m, v), dtype=np.int64)
        row = 0
        for i in range(n):
            for j in range(m):
                for c in range(v):
                    out[row, c] = bindings[i, c]
                out[row, col_a] = a_vals[j]
                if col_b >= 0:
                    out[row, col_b] = b_vals[j]
                row += 1
        return out

    @jit
    def filter_bindings(bindings, s_col, s_const, o_col, o_const, pair_keys, n_entities):
        n = bindings.shape[0]
        nk = pair_keys.shape[0]
        keep = np.zeros(n, dtype=np.bool_)
        for i in range(n):
            s = bindings[i, s_col] if s_col >= 0 else s_const
            o = bindings[i, o_col] if o_col >= 0 else o_const
            if s < 0 or s >= n_entities or o < 0 or o >= n_entities:
                continue
            key = s * n_entities + o
            lo = 0
            hi = nk
            while lo < hi:
                mid = (lo + hi) // 2
                if pair_keys[mid] < key:
                    lo = mid + 1
                else:
                    hi = mid
            keep[i] = lo < nk and pair_keys[lo] == key
        return keep

    @jit
    def independent_table(marginals):
        k = marginals.shape[0]
        table = np.empty(1 << k, dtype=np.float64)
        table[0] = 1.0
        size = 1
        for j in range(k):
            p = marginals[j]
            for r in range(size):
                w = table[r]
                table[r] = w * (1.0 - p)
                table[size + r] = w * p
            size *= 2
        return table

    @jit
    def mass_any(probs, mask):
        acc = 0.0
        for r in range(probs.shape[0]):
            if r & mask:
                acc += probs[r]
        return acc

    @jit
    def bit_marginals(probs, k):
        out = np.zeros(k, dtype=np.float64)
        for r in range(probs.shape[0]):
            for j in range(k):
                if (r >> j) & 1:
                    out[j] += probs[r]
        return out

    @jit
    def marginalize_table(probs, keep_bits):
        m = keep_bits.shape[0]
        out = np.zeros(1 << m, dtype=np.float64)
        for r in range(probs.shape[0]):
            nr = 0
            for i in range(m):
                nr |= ((r >> keep_bits[i]) & 1) << i
            out[nr] += probs[r]
        return out

    return {
        "expand_bindings": expand_bindings,
        "cross_bindings": cross_bindings,
        "filter_bindings": filter_bindings,
        "independent_table": independent_table,
        "mass_any": mass_any,
        "bit_marginals": bit_marginals,
        "marginalize_table": marginalize_table,
    }


def _numba_requested():
    flag = os.environ.get("KGRULES_NUMBA", "1").strip().lower()
    return flag not in {"0", "false", "off", "no"}


IMPLEMENTATIONS = {"numpy": _NUMPY}
try:
    IMPLEMENTATIONS["numba"] = _build_numba()
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    pass

_active = "numba" if "numba" in IMPLEMENTATIONS and _numba_requested() else "numpy"


def available_backends():
    return sorted(IMPLEMENTATIONS)


def active_backend():
    return _active


def use(backend):
    """Bind the named backend's kernels to this module's public names."""
    global _active
    if backend not in IMPLEMENTATIONS:
        raise ValueError(f"unknown kernel backend {backend!r}; have {available_backends()}")
    impl = IMPLEMENTATIONS[backend]
    for name, fn in impl.items():
        globals()[name] = fn
    _active = backend


use(_active)
