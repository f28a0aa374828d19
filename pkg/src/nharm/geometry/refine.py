"""Conforming local refinement by longest-edge bisection.

Edges are totally ordered by (length, first vertex, second vertex).  A round
marks the longest edge of every simplex that is too large, closes the marking
so that any simplex touching a marked edge also has its own longest edge
marked, and then bisects each affected simplex recursively, always along its
largest marked edge.  Two simplices sharing a face see the same marked edges
on it and split that face in the same order, so the result is conforming.
Midpoints of boundary edges are moved onto the exact boundary.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from .mesh import Domain


def _local_pairs(k: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(k) for j in range(i + 1, k)]


def bisect_marked(dom: Domain, marked: np.ndarray) -> Domain:
    """One round of conforming bisection of the simplices flagged in ``marked``."""
    marked = np.asarray(marked, dtype=bool)
    if not np.any(marked):
        return dom
    V = dom.vertices
    S = dom.simplices
    nv = len(V)
    pairs = _local_pairs(dom.n + 1)
    ends = np.stack([np.sort(S[:, [i, j]], axis=1) for i, j in pairs], axis=1)  # (S, P, 2)
    keys = ends[..., 0] * nv + ends[..., 1]
    ukeys, inv = np.unique(keys.ravel(), return_inverse=True)
    inv = inv.reshape(keys.shape)
    a, b = ukeys // nv, ukeys % nv
    length = np.linalg.norm(V[a] - V[b], axis=1)
    order = np.lexsort((b, a, length))
    rank = np.empty(len(ukeys), dtype=np.int64)
    rank[order] = np.arange(len(ukeys))

    simplex_rank = rank[inv]
    longest = inv[np.arange(len(S)), np.argmax(simplex_rank, axis=1)]
    emark = np.zeros(len(ukeys), dtype=bool)
    emark[longest[marked]] = True
    while True:
        touched = np.any(emark[inv], axis=1)
        missing = touched & ~emark[longest]
        if not np.any(missing):
            break
        emark[longest[missing]] = True

    # midpoints
    eids = np.flatnonzero(emark)
    mids = 0.5 * (V[a[eids]] + V[b[eids]])
    fpairs = _local_pairs(dom.n)
    fend = np.concatenate([np.sort(dom.boundary_faces[:, [i, j]], axis=1) for i, j in fpairs])
    on_boundary = np.isin(ukeys[eids], fend[:, 0] * nv + fend[:, 1])
    if np.any(on_boundary):
        mids[on_boundary] = dom.phi.project_to_boundary(mids[on_boundary])
    mid_id = {(int(a[e]), int(b[e])): (int(rank[e]), nv + t) for t, e in enumerate(eids)}

    def split(simplex: tuple[int, ...], out: list) -> None:
        best = None
        for i, j in pairs:
            p, q = simplex[i], simplex[j]
            hit = mid_id.get((p, q) if p < q else (q, p))
            if hit is not None and (best is None or hit[0] > best[0]):
                best = (hit[0], hit[1], i, j)
        if best is None:
            out.append(simplex)
            return
        _, m, i, j = best
        left = list(simplex)
        left[j] = m
        right = list(simplex)
        right[i] = m
        split(tuple(left), out)
        split(tuple(right), out)

    touched = np.any(emark[inv], axis=1)
    new: list[tuple[int, ...]] = []
    for s in S[touched]:
        split(tuple(int(v) for v in s), new)
    simplices = np.concatenate([S[~touched], np.array(new, dtype=np.int64)])
    vertices = np.vstack([V, mids])
    out = Domain.from_simplices(dom.n, vertices, simplices, dom.phi)
    if np.min(np.abs(out.volumes)) <= 1e-14 * np.max(out.volumes):
        raise NumericalError("local refinement produced a degenerate simplex")
    return out


def refine_near(dom: Domain, centre: np.ndarray, hmin: float, grade: float = 0.35, max_rounds: int = 80) -> Domain:
    """Refine until every simplex has diameter <= max(hmin, grade * distance to centre)."""
    centre = np.asarray(centre, dtype=float)
    for _ in range(max_rounds):
        diam = dom.simplex_diameters
        dist = np.linalg.norm(dom.vertices[dom.simplices].mean(axis=1) - centre, axis=1)
        target = np.maximum(hmin, grade * np.maximum(dist - diam, 0.0))
        marked = diam > target
        if not np.any(marked):
            return dom
        dom = bisect_marked(dom, marked)
    raise NumericalError("local refinement did not reach the requested size")
