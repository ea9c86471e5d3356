"""Communication matrices for gossip rounds and their spectral quantities.

A mixing matrix is a symmetric doubly stochastic n-by-n weight matrix whose
sparsity pattern is the communication graph (self-loops included). The key
spectral quantity is ``lambda``, the operator norm of W - (1/n) * ones * ones^T,
i.e. the largest eigenvalue magnitude off the consensus direction; 1 - lambda
is the spectral gap that governs how fast one gossip round mixes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Tolerances: stochasticity residuals are sums of <= 1024 doubles, spectral
# residuals come out of LAPACK eigensolves on the same scale.
STOCHASTIC_TOL = 1e-12
SPECTRAL_TOL = 1e-10


class TopologyError(ValueError):
    """Raised for degenerate or malformed communication structures."""


@dataclass(frozen=True)
class Topology:
    """Undirected communication graph on agents 0..n-1, self-loops implicit."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n < 1:
            raise TopologyError(f"need at least one agent, got n={self.n}")
        for i, j in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i}, {j}) out of range for n={self.n}")
        if not self.is_connected():
            raise TopologyError("communication graph is not connected")

    @staticmethod
    def from_matrix(w: np.ndarray) -> "Topology":
        n = w.shape[0]
        edges = {
            (min(i, j), max(i, j))
            for i in range(n)
            for j in range(n)
            if i != j and w[i, j] != 0.0
        }
        return Topology(n=n, edges=frozenset(edges))

    def neighbors(self, i: int) -> set[int]:
        out = set()
        for a, b in self.edges:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return out

    def is_connected(self) -> bool:
        seen = {0}
        frontier = [0]
        while frontier:
            nxt = []
            for i in frontier:
                for j in self.neighbors(i):
                    if j not in seen:
                        seen.add(j)
                        nxt.append(j)
            frontier = nxt
        return len(seen) == self.n


@dataclass(frozen=True)
class SpectralProfile:
    """Symmetric eigendecomposition of a mixing matrix, cached for reuse.

    ``lam`` is the operator norm of W - (1/n) ones ones^T; for matrices with a
    positive spectrum it coincides with the second largest signed eigenvalue.
    """

    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns match eigenvalues
    lam: float
    min_eig: float

    @property
    def spectral_gap(self) -> float:
        return 1.0 - self.lam


@dataclass
class MixingMatrix:
    """Dense symmetric doubly stochastic weight matrix for one gossip round.

    Immutable after construction (the array is marked read-only); the spectral
    profile is computed once on first request and shared.
    """

    w: np.ndarray
    _profile: SpectralProfile | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise TopologyError(f"mixing matrix must be square, got shape {w.shape}")
        w = w.copy()
        w.setflags(write=False)
        self.w = w

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def profile(self) -> SpectralProfile:
        if self._profile is None:
            self._profile = spectral_profile(self)
        return self._profile

    @cached_property
    def sqrt_i_minus_w(self) -> np.ndarray:
        """(I - W)^{1/2} via the cached eigendecomposition.

        Negative roundoff in 1 - eigenvalue is clamped to 0 before the root.
        """
        prof = self.profile
        rooted = np.sqrt(np.clip(1.0 - prof.eigenvalues, 0.0, None))
        return (prof.eigenvectors * rooted) @ prof.eigenvectors.T

    def topology(self) -> Topology:
        return Topology.from_matrix(self.w)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    residual: float

    def format_line(self) -> str:
        return f"check={self.name} pass={str(self.passed).lower()} residual={self.residual:.17g}"


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def format_lines(self) -> list[str]:
        return [c.format_line() for c in self.checks]


def build_ring(n: int) -> MixingMatrix:
    """Cyclic ring: self-weight 1/2, each neighbor 1/4, indices modulo n.

    Eigenvalues follow the circulant closed form 1/2 + 1/2*cos(2*pi*k/n); the
    second largest is 1/2 + 1/2*cos(2*pi/n) (about 0.9904 at n=32).
    """
    if n < 3:
        raise TopologyError(f"ring needs n >= 3, got n={n}")
    w = np.zeros((n, n))
    idx = np.arange(n)
    w[idx, idx] = 0.5
    w[idx, (idx + 1) % n] = 0.25
    w[idx, (idx - 1) % n] = 0.25
    return MixingMatrix(w)


def build_complete(n: int) -> MixingMatrix:
    """Uniform averaging matrix (1/n) ones ones^T.

    Its smallest eigenvalue is 0 for n >= 2, so it fails the positive-spectrum
    requirement until lazy_transform is applied.
    """
    if n < 1:
        raise TopologyError(f"need n >= 1, got n={n}")
    return MixingMatrix(np.full((n, n), 1.0 / n))


def lazy_transform(w: MixingMatrix) -> MixingMatrix:
    """Return (W + I)/2, mapping every eigenvalue mu to (mu + 1)/2.

    Symmetric doubly stochastic matrices have spectrum in (-1, 1], so the
    transformed matrix always has a positive smallest eigenvalue.
    """
    _require_symmetric_doubly_stochastic(w.w)
    return MixingMatrix((w.w + np.eye(w.n)) / 2.0)


def spectral_profile(w: MixingMatrix) -> SpectralProfile:
    """Full symmetric eigendecomposition plus the consensus-orthogonal norm."""
    a = w.w
    if float(np.abs(a - a.T).max()) > STOCHASTIC_TOL:
        raise TopologyError("spectral profile requires a symmetric matrix")
    eigenvalues, eigenvectors = np.linalg.eigh(a)
    n = w.n
    centered = a - np.full((n, n), 1.0 / n)
    lam = float(np.abs(np.linalg.eigvalsh(centered)).max()) if n > 1 else 0.0
    return SpectralProfile(
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        lam=lam,
        min_eig=float(eigenvalues[0]),
    )


def validate(w: MixingMatrix) -> ValidationReport:
    """Report the communication-matrix requirements; never raises.

    Checks: positive diagonal, symmetric double stochasticity, positive
    smallest eigenvalue, and spectral connectivity (lambda < 1).
    """
    a = w.w
    n = w.n
    diag_min = float(a.diagonal().min())
    diag = CheckResult("positive_diagonal", diag_min > 0.0, residual=-diag_min)

    sym_res = float(np.abs(a - a.T).max())
    row_res = float(np.abs(a.sum(axis=1) - 1.0).max())
    col_res = float(np.abs(a.sum(axis=0) - 1.0).max())
    stoch_res = max(sym_res, row_res, col_res)
    stoch = CheckResult("symmetric_doubly_stochastic", stoch_res <= STOCHASTIC_TOL, stoch_res)

    if stoch.passed:
        prof = w.profile
        pos = CheckResult("positive_min_eigenvalue", prof.min_eig > SPECTRAL_TOL, -prof.min_eig)
        conn = CheckResult("connected", prof.lam < 1.0 - STOCHASTIC_TOL, prof.lam - 1.0)
    else:
        # Spectral statements are meaningless for a malformed matrix.
        pos = CheckResult("positive_min_eigenvalue", False, float("nan"))
        conn = CheckResult("connected", False, float("nan"))
    return ValidationReport(checks=(diag, stoch, pos, conn))


def save_matrix_csv(w: MixingMatrix, path) -> None:
    """Write n rows of n comma-separated decimals at 17 significant digits."""
    with open(path, "w") as fh:
        for row in w.w:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix_csv(path) -> MixingMatrix:
    """Load a matrix CSV, rejecting anything that is not a valid mixing matrix."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise TopologyError(f"empty matrix file: {path}")
    a = np.array(rows, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise TopologyError(f"matrix file is not square: shape {a.shape}")
    _require_symmetric_doubly_stochastic(a)
    if a.diagonal().min() <= 0.0:
        raise TopologyError("matrix file has a nonpositive diagonal entry")
    return MixingMatrix(a)


def _require_symmetric_doubly_stochastic(a: np.ndarray) -> None:
    sym = float(np.abs(a - a.T).max())
    row = float(np.abs(a.sum(axis=1) - 1.0).max())
    col = float(np.abs(a.sum(axis=0) - 1.0).max())
    res = max(sym, row, col)
    if res > STOCHASTIC_TOL:
        raise TopologyError(
            f"matrix is not symmetric doubly stochastic (residual {res:.3e})"
        )
