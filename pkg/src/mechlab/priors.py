"""Joint priors P(theta, b) over states and signal profiles.

Two representations share one small interface:

* :class:`DensePrior` -- an explicit table of shape ``(m, k_1, ..., k_n)``.
* :class:`ProductPrior` -- the conditionally independent form
  ``P(theta, b) = lambda(theta) * prod_i Q(b_i | theta)`` with a common
  signal set; slices are materialized on demand.

Both return numpy arrays whose first axis is the state.  Exact (Fraction)
inputs stay exact.
"""
from __future__ import annotations

import numpy as np

from ._arith import as_array, is_exact


class DensePrior:
    kind = "dense"

    def __init__(self, table):
        table = np.asarray(table)
        if table.ndim < 2:
            raise ValueError("prior table needs a state axis and at least one buyer axis")
        self._table = as_array(table, is_exact(table))
        self._table.setflags(write=False)

    @property
    def exact(self) -> bool:
        return self._table.dtype == object

    @property
    def m(self) -> int:
        return self._table.shape[0]

    @property
    def sizes(self) -> tuple[int, ...]:
        return self._table.shape[1:]

    @property
    def n(self) -> int:
        return self._table.ndim - 1

    def table(self) -> np.ndarray:
        return self._table

    def joint_at(self, b) -> np.ndarray:
        return self._table[(slice(None), *b)]

    def joint_given(self, i: int, b_i: int) -> np.ndarray:
        """``P(theta, b_-i, b_i)`` with axes ``(theta, b_-i...)``."""
        index = [slice(None)] * (self.n + 1)
        index[i + 1] = b_i
        return self._table[tuple(index)]

    def signal_mass(self) -> np.ndarray:
        return self._table.sum(axis=0)


class ProductPrior:
    """Conditionally independent prior (common signal set for all buyers)."""

    kind = "product"

    def __init__(self, lam, Q, n: int):
        exact = is_exact(np.asarray(lam)) or is_exact(np.asarray(Q))
        self.lam = as_array(lam, exact)
        self.Q = as_array(Q, exact)
        if self.lam.ndim != 1 or self.Q.ndim != 2 or self.Q.shape[0] != self.lam.shape[0]:
            raise ValueError("lambda must be (m,) and Q must be (m, |X|)")
        if n < 1:
            raise ValueError("n must be positive")
        self._n = n
        self.lam.setflags(write=False)
        self.Q.setflags(write=False)

    @property
    def exact(self) -> bool:
        return self.lam.dtype == object

    @property
    def m(self) -> int:
        return self.lam.shape[0]

    @property
    def n(self) -> int:
        return self._n

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.Q.shape[1],) * self._n

    def joint_at(self, b) -> np.ndarray:
        out = self.lam.copy()
        for x in b:
            out = out * self.Q[:, x]
        return out

    def _expand(self, base: np.ndarray, count: int) -> np.ndarray:
        out = base
        for _ in range(count):
            q = self.Q.reshape((self.m,) + (1,) * (out.ndim - 1) + (self.Q.shape[1],))
            out = out[..., None] * q
        return out

    def joint_given(self, i: int, b_i: int) -> np.ndarray:
        return self._expand(self.lam * self.Q[:, b_i], self._n - 1)

    def table(self) -> np.ndarray:
        return self._expand(self.lam.copy(), self._n)

    def signal_mass(self) -> np.ndarray:
        return self.table().sum(axis=0)
