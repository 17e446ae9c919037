"""Commensurate spacings and the grouping of qubits into superspins."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..errors import PreconditionError


@dataclass(frozen=True)
class Spacing:
    """Commensurate phase spacing ``kd = n * pi / p``.

    The fraction is reduced to lowest terms on construction. The sign pattern
    of the collective operators only depends on the parity of the reduced
    numerator.
    """

    n: int
    p: int

    def __post_init__(self):
        n, p = int(self.n), int(self.p)
        if n < 1 or p < 1:
            raise PreconditionError(f"spacing needs n >= 1 and p >= 1, got n={n}, p={p}")
        g = math.gcd(n, p)
        object.__setattr__(self, "n", n // g)
        object.__setattr__(self, "p", p // g)

    @classmethod
    def parse(cls, text: str) -> "Spacing":
        """Parse ``"n/p"`` (a rational multiple of pi); ``"1"`` means ``kd = pi``."""
        try:
            frac = Fraction(text.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise PreconditionError(f"cannot parse spacing {text!r} as n/p") from exc
        return cls(frac.numerator, frac.denominator)

    @property
    def kd(self) -> float:
        return self.n * math.pi / self.p

    @property
    def parity(self) -> int:
        return self.n % 2

    def __str__(self):
        return f"{self.n}/{self.p}"


@dataclass(frozen=True)
class SuperspinPartition:
    """Assignment of ``N`` sites to ``p`` superspins.

    Sites are 1-indexed. Superspin ``a`` (0-indexed here, ``a + 1`` in site
    labels) owns sites ``a+1, a+1+p, a+1+2p, ...`` and site ``a+1+l*p``
    carries the phase ``(-1)**(l*n)``.
    """

    N: int
    spacing: Spacing
    sizes: tuple
    site_map: tuple
    signs: tuple
    radices: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "radices", tuple(s + 1 for s in self.sizes))

    @property
    def p(self) -> int:
        return self.spacing.p

    @property
    def dim(self) -> int:
        """Dimension of the product basis (maximal-Casimir sector)."""
        return int(np.prod(self.radices))

    @property
    def spins(self) -> tuple:
        """Total angular momentum ``j_a = n_a / 2`` of each superspin."""
        return tuple(s / 2 for s in self.sizes)

    def site_signs(self) -> np.ndarray:
        """Length-N array with the phase carried by each site."""
        out = np.empty(self.N)
        for sites, sg in zip(self.site_map, self.signs):
            out[np.asarray(sites) - 1] = sg
        return out

    def site_labels(self) -> np.ndarray:
        """Length-N array with the 0-based superspin index owning each site."""
        out = np.empty(self.N, dtype=int)
        for a, sites in enumerate(self.site_map):
            out[np.asarray(sites) - 1] = a
        return out

    def index(self, occupations) -> int:
        """Mixed-radix index of an occupation tuple; superspin 1 varies slowest."""
        idx = 0
        for k, r in zip(occupations, self.radices):
            if not 0 <= k < r:
                raise PreconditionError(f"occupation {tuple(occupations)} out of range")
            idx = idx * r + int(k)
        return idx

    def occupations(self) -> np.ndarray:
        """All occupation tuples ``(k_1, ..., k_p)`` in basis order, shape (dim, p)."""
        grids = np.indices(self.radices).reshape(len(self.radices), -1)
        return grids.T.copy()


def build_partition(N: int, spacing: Spacing) -> SuperspinPartition:
    """Group ``N`` qubits into the ``p`` superspins of a commensurate spacing.

    >>> build_partition(7, Spacing(2, 3)).sizes
    (3, 2, 2)
    """
    N = int(N)
    if N < 1:
        raise PreconditionError(f"need at least one qubit, got N={N}")
    p, n = spacing.p, spacing.n
    base, extra = divmod(N, p)
    sizes = tuple(base + 1 if a < extra else base for a in range(p))
    site_map = tuple(tuple(range(a + 1, N + 1, p)) for a in range(p))
    signs = tuple(tuple(1 if (l * n) % 2 == 0 else -1 for l in range(len(s))) for s in site_map)
    return SuperspinPartition(N=N, spacing=spacing, sizes=sizes, site_map=site_map, signs=signs)
