"""Random regular pencils with a prescribed Kronecker index.

``E = Q blkdiag(I_d, N) R`` and ``A = Q blkdiag(J, I) R`` with ``N`` a
direct sum of shift matrices. The index is the largest shift block; the
structure is used to build test pencils, never computed from an input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.stats import ortho_group


def shift_matrix(k: int) -> np.ndarray:
    """The ``k x k`` nilpotent matrix with ones on the superdiagonal."""
    return np.eye(k, k, 1)


def well_conditioned(n: int, rng: np.random.Generator, spread: float = 2.0) -> np.ndarray:
    """Random matrix with singular values in ``[1/spread, spread]``."""
    if n == 0:
        return np.zeros((0, 0))
    if n == 1:
        return np.array([[rng.uniform(1 / spread, spread) * rng.choice([-1.0, 1.0])]])
    o1 = ortho_group.rvs(n, random_state=rng)
    o2 = ortho_group.rvs(n, random_state=rng)
    s = rng.uniform(1 / spread, spread, size=n)
    return o1 @ np.diag(s) @ o2


@dataclass(frozen=True)
class KnownPencil:
    E: np.ndarray
    A: np.ndarray
    index: int
    d: int
    blocks: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @property
    def rank(self) -> int:
        return self.d + sum(k - 1 for k in self.blocks)

    @property
    def expected_steps(self) -> int:
        """Steps of the deflation algorithm for this structure.

        Each step lowers the index by one; the chain stops early, with
        ``E = 0``, when there is no dynamic part.
        """
        if self.index == 0:
            return 0
        return self.index if self.d > 0 else self.index - 1


def known_index_pencil(
    d: int, blocks, rng: np.random.Generator, spread: float = 2.0
) -> KnownPencil:
    """Pencil with a ``d``-dimensional dynamic part and nilpotent blocks of the given sizes."""
    blocks = tuple(int(k) for k in blocks)
    m = sum(blocks)
    n = d + m
    Q = well_conditioned(n, rng, spread)
    R = well_conditioned(n, rng, spread)
    V = well_conditioned(d, rng, spread)
    mu = rng.uniform(0.5, 2.0, size=d) * rng.choice([-1.0, 1.0], size=d)
    J = V @ np.diag(mu) @ np.linalg.inv(V) if d else np.zeros((0, 0))
    Nil = scipy.linalg.block_diag(*[shift_matrix(k) for k in blocks]) if blocks else np.zeros((0, 0))
    E = Q @ scipy.linalg.block_diag(np.eye(d), Nil) @ R
    A = Q @ scipy.linalg.block_diag(J, np.eye(m)) @ R
    index = max(blocks) if blocks else 0
    return KnownPencil(E, A, index, d, blocks)


def random_known_pencil(
    rng: np.random.Generator, n_max: int = 8, index_range=(1, 4), spread: float = 2.0
) -> KnownPencil:
    """Draw a random structure with ``n <= n_max`` and index in ``index_range``."""
    lo, hi = index_range
    nu = int(rng.integers(lo, hi + 1))
    room = n_max - nu
    d = int(rng.integers(0, room + 1))
    blocks = [nu]
    room -= d
    while room > 0 and rng.random() < 0.5:
        k = int(rng.integers(1, min(nu, room) + 1))
        blocks.append(k)
        room -= k
    rng.shuffle(blocks)
    return known_index_pencil(d, blocks, rng, spread)
