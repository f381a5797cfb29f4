"""
Finite-level quantum measure layer.

A ProbabilityOperator on L2(Omega_n) is stored through its decoherence matrix
M[w, w'] = D({w}, {w'}), so that D(A, B) = chi_A^T M chi_B. Three storage kinds
are kept: dense matrices, rank-1 operators given by path amplitudes
(M = conj(a) a^T) and diagonal (classical) operators given by path weights.
"""
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from growth import PathSpace, SetSpec, approximate
from settings import CONVERGENCE_EPS, CONVERGENCE_WINDOW, TOLERANCE, MuRecord, MuSequence, SuiteReport

logger = logging.getLogger(__name__)


class OperatorError(ValueError):
    pass


class ProbabilityOperator:
    def __init__(
        self,
        n: int,
        matrix: Optional[np.ndarray] = None,
        *,
        amplitudes: Optional[np.ndarray] = None,
        weights: Optional[np.ndarray] = None,
        indefinite: bool = False,
    ):
        given = [x is not None for x in (matrix, amplitudes, weights)]
        if sum(given) != 1:
            raise OperatorError("give exactly one of matrix, amplitudes or weights")
        self.n = n
        self.indefinite = indefinite
        self._matrix = None if matrix is None else np.asarray(matrix, dtype=complex)
        self.amplitudes = None if amplitudes is None else np.asarray(amplitudes, dtype=complex)
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        if self._matrix is not None and (self._matrix.ndim != 2 or self._matrix.shape[0] != self._matrix.shape[1]):
            raise OperatorError(f"decoherence matrix must be square, got {self._matrix.shape}")

    @property
    def kind(self) -> str:
        if self.amplitudes is not None:
            return "rank1"
        if self.weights is not None:
            return "diagonal"
        return "dense"

    @property
    def size(self) -> int:
        if self.amplitudes is not None:
            return len(self.amplitudes)
        if self.weights is not None:
            return len(self.weights)
        return self._matrix.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            if self.amplitudes is not None:
                self._matrix = np.outer(self.amplitudes.conj(), self.amplitudes)
            else:
                self._matrix = np.diag(self.weights).astype(complex)
        return self._matrix

    @property
    def rho(self) -> np.ndarray:
        """The operator on L2(Omega_n) itself: rho[w, w'] = D(w', w)."""
        return self.matrix.T

    def _check(self, mask: np.ndarray) -> np.ndarray:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.size,):
            raise OperatorError(f"subset of {len(mask)} paths does not live on level {self.n} ({self.size} paths)")
        return mask

    def nu(self, a: np.ndarray) -> complex:
        """Complex measure sum_A a_n of a rank-1 operator."""
        if self.amplitudes is None:
            raise OperatorError("nu is defined for rank-1 operators only")
        return complex(self.amplitudes[self._check(a)].sum())

    def decoherence(self, a: np.ndarray, b: np.ndarray) -> complex:
        a, b = self._check(a), self._check(b)
        if self.amplitudes is not None:
            return complex(np.conj(self.amplitudes[a].sum()) * self.amplitudes[b].sum())
        if self.weights is not None:
            return complex(self.weights[a & b].sum())
        return complex(self._matrix[np.ix_(a, b)].sum())

    def q_measure(self, a: np.ndarray, tol: float = TOLERANCE) -> float:
        value = self.decoherence(a, a).real
        if value < 0:
            if value < -tol and not self.indefinite:
                raise OperatorError(f"q-measure {value} is negative beyond tolerance")
            if value >= -tol:
                value = 0.0
        return value

    def coarsen(self, aggregation: sp.spmatrix) -> np.ndarray:
        """Decoherence between aggregated events: G M G^T for a 0/1 matrix G of events by paths."""
        g = sp.csr_matrix(aggregation)
        if self.amplitudes is not None:
            s = g @ self.amplitudes
            return np.outer(s.conj(), s)
        if self.weights is not None:
            return (g @ sp.diags(self.weights) @ g.T).toarray().astype(complex)
        return np.asarray(g @ self._matrix @ g.T.toarray())

    def norm(self) -> float:
        if self.amplitudes is not None:
            return float(np.sum(np.abs(self.amplitudes) ** 2))
        if self.weights is not None:
            return float(np.max(np.abs(self.weights)))
        return float(np.max(np.abs(np.linalg.eigvalsh(self.hermitian_part()))))

    def hermitian_part(self) -> np.ndarray:
        m = self.matrix
        return (m + m.conj().T) / 2

    def total(self) -> complex:
        if self.amplitudes is not None:
            return complex(abs(self.amplitudes.sum()) ** 2)
        if self.weights is not None:
            return complex(self.weights.sum())
        return complex(self._matrix.sum())

    def min_eigenvalue(self) -> float:
        if self.weights is not None:
            return float(self.weights.min())
        if self.amplitudes is not None:
            return 0.0 if self.size > 1 else float(abs(self.amplitudes[0]) ** 2)
        return float(np.linalg.eigvalsh(self.hermitian_part()).min())

    def validate(self, tol: float = TOLERANCE) -> None:
        """Hermitian, positive semidefinite and of unit total mass, else OperatorError."""
        if self._matrix is not None and self.kind == "dense":
            skew = np.max(np.abs(self._matrix - self._matrix.conj().T), initial=0.0)
            if skew > tol:
                raise OperatorError(f"level {self.n}: not Hermitian (residual {skew:.3e})")
        if not self.indefinite:
            low = self.min_eigenvalue()
            if low < -tol:
                raise OperatorError(f"level {self.n}: not positive semidefinite (eigenvalue {low:.3e})")
        total = self.total()
        if abs(total - 1) > tol:
            raise OperatorError(f"level {self.n}: total mass {total} is not 1")

    def perturbed(self, row: int, col: int, delta: complex) -> "ProbabilityOperator":
        """Dense copy with one entry moved by delta (and its mirror, keeping Hermiticity)."""
        m = self.matrix.copy()
        m[row, col] += delta
        if row != col:
            m[col, row] += np.conj(delta)
        return ProbabilityOperator(self.n, m)


def random_operator(n: int, size: int, rng: np.random.Generator, rank: Optional[int] = None) -> ProbabilityOperator:
    """G G^H normalized to unit total mass, G complex Gaussian of shape size x rank."""
    rank = rank or size
    g = rng.standard_normal((size, rank)) + 1j * rng.standard_normal((size, rank))
    m = g @ g.conj().T
    return ProbabilityOperator(n, m / m.sum().real)


def decoherence(rho: ProbabilityOperator, a: np.ndarray, b: np.ndarray) -> complex:
    return rho.decoherence(a, b)


def q_measure(rho: ProbabilityOperator, a: np.ndarray, tol: float = TOLERANCE) -> float:
    return rho.q_measure(a, tol)


def family_matrix(rho: ProbabilityOperator, sets: Sequence[np.ndarray]) -> Tuple[np.ndarray, float]:
    """[D(A_i, A_j)] over a family of events and its least eigenvalue."""
    g = sp.csr_matrix(np.array([np.asarray(s, dtype=float) for s in sets]))
    d = rho.coarsen(g)
    return d, float(np.linalg.eigvalsh((d + d.conj().T) / 2).min())


def check_grade2(rho: ProbabilityOperator, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    a, b, c = (np.asarray(s, dtype=bool) for s in (a, b, c))
    if (a & b).any() or (a & c).any() or (b & c).any():
        raise OperatorError("grade-2 additivity needs mutually disjoint events")
    mu = lambda s: rho.decoherence(s, s).real
    return abs(mu(a | b | c) - mu(a | b) - mu(a | c) - mu(b | c) + mu(a) + mu(b) + mu(c))


def check_consistency(rho_n: ProbabilityOperator, rho_next: ProbabilityOperator, space: PathSpace) -> float:
    """max over singleton pairs of |D_{n+1}((w->), (w'->)) - D_n(w, w')|."""
    if rho_next.n != rho_n.n + 1:
        raise OperatorError(f"levels {rho_n.n} and {rho_next.n} are not consecutive")
    if rho_n.size != space.size(rho_n.n) or rho_next.size != space.size(rho_next.n):
        raise OperatorError("operators do not match the path space")
    coarse = rho_next.coarsen(space.aggregation(rho_next.n))
    return float(np.max(np.abs(coarse - rho_n.matrix)))


def is_classical(rho: ProbabilityOperator, tol: float = TOLERANCE) -> bool:
    if rho.kind == "diagonal":
        return True
    m = rho.matrix
    off = m - np.diag(np.diag(m))
    return bool(np.max(np.abs(off), initial=0.0) <= tol)


def is_semiclassical(rho: ProbabilityOperator, tol: float = TOLERANCE) -> bool:
    if rho.kind == "diagonal":
        return True
    m = rho.matrix.real
    off = m - np.diag(np.diag(m))
    return bool(np.max(np.abs(off), initial=0.0) <= tol)


def _random_subset(size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random(size) < 0.5


def verify_classical_equivalences(
    rho: ProbabilityOperator,
    trials: int = 200,
    rng: Optional[np.random.Generator] = None,
    tol: float = TOLERANCE,
    real_part: bool = False,
    seed: int = 0,
) -> SuiteReport:
    """
    Over random event pairs: D(A,B) = mu(A & B), D vanishing on disjoint pairs and
    additivity of mu. ``real_part`` checks Re D instead (semiclassical operators).
    """
    rng = rng or np.random.default_rng(seed)
    report = SuiteReport(suite="semiclassical" if real_part else "classical", seed=seed)
    predicate = is_semiclassical if real_part else is_classical
    report.add("precondition", predicate(rho, tol), kind=rho.kind)

    part = (lambda z: z.real) if real_part else (lambda z: z)
    intersect, disjoint, additive = [0.0, None], [0.0, None], [0.0, None]
    everything = rho.decoherence(np.ones(rho.size, bool), np.ones(rho.size, bool))
    mu = lambda s: rho.decoherence(s, s).real
    for _ in range(trials):
        a, b = _random_subset(rho.size, rng), _random_subset(rho.size, rng)
        r = abs(part(rho.decoherence(a, b)) - rho.decoherence(a & b, a & b).real)
        if r > intersect[0]:
            intersect = [r, [np.flatnonzero(a).tolist(), np.flatnonzero(b).tolist()]]
        b_out = b & ~a
        r = abs(part(rho.decoherence(a, b_out)))
        if r > disjoint[0]:
            disjoint = [r, [np.flatnonzero(a).tolist(), np.flatnonzero(b_out).tolist()]]
        r = abs(mu(a | b_out) - mu(a) - mu(b_out))
        if r > additive[0]:
            additive = [r, [np.flatnonzero(a).tolist(), np.flatnonzero(b_out).tolist()]]

    for name, (residual, witness) in (
        ("decoherence equals measure of intersection", intersect),
        ("disjoint events do not interfere", disjoint),
        ("measure is additive", additive),
    ):
        report.add(name, residual <= tol, residual=residual, witness=witness if residual > tol else None)
    report.add("whole space", abs(everything - 1) <= tol, residual=abs(everything - 1))
    return report


def check_monotone(values: Sequence[float], tol: float = TOLERANCE) -> Optional[int]:
    """Index of the first increase beyond tol in a sequence, or None when nonincreasing."""
    for i in range(1, len(values)):
        if values[i] > values[i - 1] + tol:
            return i
    return None


def _relative_change(previous: float, current: float) -> float:
    scale = max(abs(previous), abs(current))
    return 0.0 if scale == 0 else abs(current - previous) / scale


def mu_sequence(
    operator_at: Callable[[int], ProbabilityOperator],
    space: PathSpace,
    spec: SetSpec,
    max_n: int,
    window: int = CONVERGENCE_WINDOW,
    eps: float = CONVERGENCE_EPS,
    strict: bool = False,
    tol: float = TOLERANCE,
) -> MuSequence:
    """
    mu_n(A^n) for n from the event's depth up to max_n. The converged flag is
    numerical evidence only: the last ``window`` relative changes are below eps.
    """
    values: List[MuRecord] = []
    for n in range(max(spec.depth, 1), max_n + 1):
        mask = approximate(spec, space, n, strict)
        values.append(MuRecord(n=n, mu=operator_at(n).q_measure(mask, tol)))

    changes = [_relative_change(a.mu, b.mu) for a, b in zip(values, values[1:])]
    converged = len(changes) >= window and all(c < eps for c in changes[-window:])
    sequence = MuSequence(
        spec=str(spec),
        values=values,
        converged=converged,
        limit_estimate=values[-1].mu if converged else None,
        window=window,
        eps=eps,
    )
    logger.info(f"mu sequence for {spec}: {len(values)} levels, converged={converged}")
    return sequence
