"""Fill-reducing orderings and the separator (assembly) tree they induce."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..spaces import VectorSpace


@dataclass
class TreeNode:
    """Contiguous block ``[start, stop)`` of the permuted index range."""

    start: int
    stop: int
    parent: int = -1
    children: list = field(default_factory=list)
    box: tuple | None = None

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass
class Ordering:
    """``perm[k]`` is the original index eliminated in position ``k``.

    ``nodes`` (postordered) is the separator tree used by the multifrontal
    factorization; ``None`` means the tree is derived from the matrix.
    """

    perm: np.ndarray
    method: str
    nodes: list[TreeNode] | None = None

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        n = len(self.perm)
        check = np.zeros(n, dtype=bool)
        check[self.perm] = True
        if not check.all():
            raise ValueError("ordering is not a permutation")

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(len(self.perm))
        return inv

    def save(self, path) -> None:
        np.savetxt(Path(path), self.perm, fmt="%d")

    @classmethod
    def load(cls, path, method: str = "file") -> "Ordering":
        return cls(np.loadtxt(Path(path), dtype=np.int64, ndmin=1), method)


def natural_order(n: int) -> Ordering:
    return Ordering(np.arange(n), "natural")


def nested_dissection_order(space: VectorSpace, leaf_elements: int = 2,
                            free_only: bool = True) -> Ordering:
    """Recursive bisection of the element lattice, separators ordered last.

    A DOF lands in the separator of a cut when the cut line lies strictly
    inside its support. Boxes are halved along their longer side at the
    middle element interface, so for rIGA spaces the top cuts fall on the
    reduced-continuity hyperplanes. Recursion stops at boxes of at most
    ``leaf_elements`` elements per side.

    Indices refer to the free DOFs of ``space`` when ``free_only`` is set.
    """
    sup = space.dof_supports
    if free_only:
        sup = sup[space.free_dofs]
    nodes: list[TreeNode] = []
    order: list[np.ndarray] = []
    pos = 0

    def emit(idx, children, box):
        nonlocal pos
        node = TreeNode(pos, pos + len(idx), children=list(children), box=box)
        pos += len(idx)
        order.append(idx)
        nodes.append(node)
        nid = len(nodes) - 1
        for c in children:
            nodes[c].parent = nid
        return nid

    def recurse(idx, x0, x1, y0, y1):
        """Returns the root node ids of the subtree(s) built for ``idx``."""
        if len(idx) == 0:
            return []
        w, h = x1 - x0, y1 - y0
        if (w <= leaf_elements and h <= leaf_elements) or (w == 1 and h == 1):
            return [emit(idx, [], (x0, x1, y0, y1))]
        if w >= h:
            cut = x0 + w // 2
            lo, hi = sup[idx, 0], sup[idx, 1]
            left_box, right_box = (x0, cut, y0, y1), (cut, x1, y0, y1)
        else:
            cut = y0 + h // 2
            lo, hi = sup[idx, 2], sup[idx, 3]
            left_box, right_box = (x0, x1, y0, cut), (x0, x1, cut, y1)
        sep = idx[(lo < cut) & (hi > cut)]
        left = idx[hi <= cut]
        right = idx[lo >= cut]
        roots = recurse(left, *left_box) + recurse(right, *right_box)
        if len(sep) == 0:
            return roots
        return [emit(sep, roots, (x0, x1, y0, y1))]

    ne = space.ne
    recurse(np.arange(len(sup)), 0, ne, 0, ne)
    perm = np.concatenate(order) if order else np.zeros(0, dtype=np.int64)
    return Ordering(perm, "geometric-nested-dissection", nodes)
