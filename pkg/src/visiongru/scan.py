"""First-order affine recurrence h_t = a_t * h_{t-1} + b_t over independent lanes.

Two evaluators share one contract: :func:`scan_sequential` (the oracle, a
plain left-to-right loop) and :func:`scan_parallel` (Blelloch up-sweep /
down-sweep over the time axis, vectorized across lanes, optionally split
over worker threads by lane).  Time is axis 0, lanes axis 1.
"""

from __future__ import annotations

import contextlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from visiongru.tensor import ShapeError, check_finite

CHUNK = 256  # steps per cache block; fixed so results never depend on the lane split

# test-only mutation hook, see inject_fault()
_fault: dict[str, bool] = {"compose_sign": False}


@dataclass(frozen=True)
class ScanPair:
    """Per-step coefficients: ``a`` is the decay, ``b`` the drive, both (T, L)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.a.shape != self.b.shape:
            raise ShapeError(f"scan pair shapes differ: a {self.a.shape}, b {self.b.shape}")
        if self.a.ndim != 2:
            raise ShapeError(f"scan pair must be (T, L), got {self.a.shape}")

    @property
    def length(self) -> int:
        return self.a.shape[0]

    @property
    def lanes(self) -> int:
        return self.a.shape[1]


@contextlib.contextmanager
def inject_fault(name: str) -> Iterator[None]:
    """Deliberately corrupt :func:`compose` (used to prove the verifier bites)."""
    if name not in _fault:
        raise KeyError(name)
    _fault[name] = True
    try:
        yield
    finally:
        _fault[name] = False


def compose(p, q):
    """Apply step ``p`` then step ``q``: returns (a2*a1, a2*b1 + b2).

    Associative with identity (1, 0).  Works elementwise on arrays.
    """
    a1, b1 = p
    a2, b2 = q
    if _fault["compose_sign"]:
        return a2 * a1, b2 - a2 * b1
    return a2 * a1, a2 * b1 + b2


def _h0(h0, lanes, dtype):
    if h0 is None:
        return np.zeros(lanes, dtype=dtype)
    h0 = np.asarray(h0, dtype=dtype)
    if h0.shape != (lanes,):
        raise ShapeError(f"h0 must have shape ({lanes},), got {h0.shape}")
    return h0


def scan_sequential(pairs: ScanPair, h0: np.ndarray | None = None) -> np.ndarray:
    a, b = pairs.a, pairs.b
    h = _h0(h0, pairs.lanes, a.dtype)
    out = np.empty_like(b)
    for t in range(pairs.length):
        h = a[t] * h + b[t]
        out[t] = h
    return out


def default_workers() -> int:
    """Worker cap from ``VGRU_THREADS`` (0 or unset means one per core)."""
    try:
        n = int(os.environ.get("VGRU_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _compose_into(pa, pb, qa, qb, tmp) -> None:
    """In-place ``(qa, qb) <- compose((pa, pb), (qa, qb))``; ``tmp`` is scratch
    shaped like ``qb``."""
    np.multiply(qa, pb, out=tmp)
    if _fault["compose_sign"]:
        np.subtract(qb, tmp, out=qb)
    else:
        np.add(qb, tmp, out=qb)
    np.multiply(qa, pa, out=qa)


def _tree_inplace(A: np.ndarray, B: np.ndarray):
    """Blelloch scan along axis 0 of buffers with n + 1 rows, n a power of two.

    Rows ``[0, n)`` hold the input steps; row ``n`` is scratch.  After the
    up-sweep the root (the total) is parked in row ``n``; the down-sweep
    leaves the exclusive prefix of step i in row i, so rows ``[1, n]`` are
    the inclusive prefixes.  Returns those views.  Total work is O(n).
    """
    n = A.shape[0] - 1
    levels = n.bit_length() - 1
    scratch = np.empty((max(n // 2, 1),) + B.shape[1:], dtype=B.dtype)

    # up-sweep: node i holds the composition of its subtree
    for d in range(levels):
        half, step = 1 << d, 1 << (d + 1)
        left, right = slice(half - 1, n, step), slice(step - 1, n, step)
        _compose_into(A[left], B[left], A[right], B[right], scratch[: n // step])
    A[n], B[n] = A[n - 1], B[n - 1]

    # down-sweep: node i receives the composition of everything before it
    A[n - 1], B[n - 1] = 1, 0
    la_buf = np.empty_like(scratch)
    for d in reversed(range(levels)):
        half, step = 1 << d, 1 << (d + 1)
        left, right = slice(half - 1, n, step), slice(step - 1, n, step)
        m = n // step
        la, lb = la_buf[:m], scratch[:m]
        la[...] = A[left]
        lb[...] = B[left]
        A[left] = A[right]
        B[left] = B[right]
        # right <- compose(prefix before left, left subtree)
        ra, rb = A[right], B[right]
        np.multiply(rb, la, out=rb)
        if _fault["compose_sign"]:
            np.subtract(lb, rb, out=rb)
        else:
            np.add(rb, lb, out=rb)
        np.multiply(ra, la, out=ra)
    return A[1:], B[1:]


def _tree_buffers(t: int, rest: tuple, dtype):
    n = 1 << max(t - 1, 0).bit_length()
    A = np.empty((n + 1,) + rest, dtype=dtype)
    B = np.empty((n + 1,) + rest, dtype=dtype)
    A[t:n], B[t:n] = 1, 0  # identity padding
    return A, B


def _prefix_tree(a: np.ndarray, b: np.ndarray):
    """Inclusive prefix compositions of (a, b) along axis 0 (inputs untouched)."""
    t = a.shape[0]
    A, B = _tree_buffers(t, a.shape[1:], a.dtype)
    A[:t], B[:t] = a, b
    pa, pb = _tree_inplace(A, B)
    return pa[:t], pb[:t]


def _scan_lanes(a, b, h0):
    """Two-level tree scan: every chunk of CHUNK steps is scanned locally
    (chunks act as extra lanes), then a tree scan over the chunk totals gives
    the state entering each chunk."""
    t = a.shape[0]
    if t <= CHUNK:
        pa, pb = _prefix_tree(a, b)
        pa *= h0
        pa += pb
        return np.ascontiguousarray(pa)
    nch, rem = divmod(t, CHUNK)
    full = nch * CHUNK
    nch += rem > 0
    lanes = a.shape[1:]
    # chunk-major buffers (CHUNK + 1, nch, L): local scans run along axis 0
    # over wide contiguous rows
    A, B = _tree_buffers(CHUNK, (nch,) + lanes, a.dtype)
    A[:CHUNK, : full // CHUNK] = a[:full].reshape((-1, CHUNK) + lanes).swapaxes(0, 1)
    B[:CHUNK, : full // CHUNK] = b[:full].reshape((-1, CHUNK) + lanes).swapaxes(0, 1)
    if rem:
        A[:rem, -1], A[rem:CHUNK, -1] = a[full:], 1
        B[:rem, -1], B[rem:CHUNK, -1] = b[full:], 0
    pa, pb = _tree_inplace(A, B)
    ca, cb = _prefix_tree(pa[-1], pb[-1])
    h_in = np.empty_like(ca)
    h_in[0] = h0
    h_in[1:] = ca[:-1] * h0 + cb[:-1]
    pa *= h_in
    pa += pb
    out = np.empty_like(a)
    out[:full].reshape((-1, CHUNK) + lanes)[...] = pa[:, : full // CHUNK].swapaxes(0, 1)
    if rem:
        out[full:] = pa[:rem, -1]
    return out


def scan_parallel(pairs: ScanPair, h0: np.ndarray | None = None, workers: int | None = None) -> np.ndarray:
    """Same result contract as :func:`scan_sequential`.

    Lanes are split into contiguous blocks, one per worker; every output
    element is computed by the same arithmetic whatever the split.
    """
    a, b = pairs.a, pairs.b
    h = _h0(h0, pairs.lanes, a.dtype)
    workers = min(workers or default_workers(), pairs.lanes)
    if workers <= 1:
        return check_finite(_scan_lanes(a, b, h), "scan_parallel")
    bounds = np.linspace(0, pairs.lanes, workers + 1).astype(int)
    out = np.empty_like(b)

    def run(i):
        lo, hi = bounds[i], bounds[i + 1]
        out[:, lo:hi] = _scan_lanes(a[:, lo:hi], b[:, lo:hi], h[lo:hi])

    with ThreadPoolExecutor(workers) as pool:
        list(pool.map(run, range(workers)))
    return check_finite(out, "scan_parallel")


def scan_vjp(pairs: ScanPair, h0: np.ndarray | None, h: np.ndarray, grad_h: np.ndarray, workers: int | None = None):
    """Reverse-mode gradients of the scan.

    The adjoint lam_t = g_t + a_{t+1} * lam_{t+1} is itself an affine scan
    run backwards in time, so this costs the same O(T) as the forward.
    Returns (grad_a, grad_b, grad_h0).
    """
    a = pairs.a
    h0 = _h0(h0, pairs.lanes, a.dtype)
    decay = np.zeros_like(a)
    decay[1:] = a[:0:-1]  # reversed a_{t+1}; the first reversed step has no successor
    lam = scan_parallel(ScanPair(decay, grad_h[::-1]), None, workers)[::-1]
    h_prev = np.empty_like(h)
    h_prev[0] = h0
    h_prev[1:] = h[:-1]
    return lam * h_prev, lam, a[0] * lam[0]
