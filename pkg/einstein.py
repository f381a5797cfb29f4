"""
Site decoherence D(x, y) and the discrete geometric operators on L2(P) (x) L2(P).

Sites of levels 1..N get global indices in (size, canonical code) order and the
pair basis vector e_x (x) e_y has index x*K + y. Operators are sparse K^2 x K^2
matrices whose column (x, y) is the image of e_x (x) e_y. Paths are arrays of
global site indices, entry k-1 being the site of size k.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from amplitude import AmplitudeProcess
from causet import Causet
from growth import GrowthLevel, NamedPath, PathSpace
from qmeasure import ProbabilityOperator
from settings import TOLERANCE, ComplexValue, SuiteReport

logger = logging.getLogger(__name__)

PathLike = Union[NamedPath, Sequence[int]]


class EinsteinError(ValueError):
    pass


@dataclass(frozen=True)
class SiteDecoherence:
    N: int
    space: PathSpace
    offsets: np.ndarray
    table: np.ndarray
    operator: ProbabilityOperator

    @property
    def K(self) -> int:
        return int(self.offsets[-1])

    @property
    def classical(self) -> bool:
        return self.operator.kind == "diagonal"

    @cached_property
    def mu(self) -> np.ndarray:
        return self.table.diagonal().real.copy()

    @cached_property
    def sizes(self) -> np.ndarray:
        """|x| for every site."""
        return np.repeat(np.arange(1, self.N + 1), np.diff(self.offsets))

    def site(self, c: Causet) -> int:
        if c.size > self.N:
            raise EinsteinError(f"{c.literal()} lies beyond truncation {self.N}")
        return int(self.offsets[c.size - 1]) + self.space.levels[c.size - 1].position(c)

    def causet(self, x: int) -> Causet:
        k = int(self.sizes[x])
        return self.space.levels[k - 1].causets[x - int(self.offsets[k - 1])]

    def label(self, x: int) -> str:
        return self.causet(x).literal()

    def value(self, x: Causet, y: Causet) -> complex:
        return complex(self.table[self.site(x), self.site(y)])

    def hermitian_residual(self) -> float:
        return float(np.max(np.abs(self.table - self.table.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh((self.table + self.table.conj().T) / 2).min())


def site_decoherence(process: AmplitudeProcess, N: int) -> SiteDecoherence:
    """D(x, y) = D_N(A_x, A_y) with A_x the N-paths through x, for |x|, |y| <= N."""
    space = process.space
    if not 1 <= N <= space.depth:
        raise EinsteinError(f"truncation {N} outside the built levels 1..{space.depth}")
    operator = process.operator(N)
    table = operator.coarsen(space.site_indicator(N))
    return SiteDecoherence(N=N, space=space, offsets=space.offsets(N), table=table, operator=operator)


def n_independence(process: AmplitudeProcess, N: int) -> float:
    """Largest change of D(x, y), |x|, |y| <= N, when computed from level N+1 instead of N."""
    if N + 1 > process.space.depth:
        raise EinsteinError(f"n-independence at {N} needs level {N + 1}")
    here, deeper = site_decoherence(process, N), site_decoherence(process, N + 1)
    K = here.K
    return float(np.max(np.abs(deeper.table[:K, :K] - here.table)))


def path_sites(sd: SiteDecoherence, path: PathLike) -> np.ndarray:
    """Global site indices of the first N entries of a path."""
    if isinstance(path, NamedPath):
        entries = path.entries(sd.space, sd.N)
    else:
        entries = list(path)
        if len(entries) < sd.N:
            raise EinsteinError(f"path of length {len(entries)} is shorter than truncation {sd.N}")
        entries = entries[: sd.N]
        if not sd.space.is_path(entries):
            raise EinsteinError(f"{entries} is not a path of the growth process")
    return np.asarray(entries, dtype=np.int64) + sd.offsets[:-1]


def random_path(space: PathSpace, n: int, rng: np.random.Generator) -> List[int]:
    """A path of length n taking a uniformly random distinct child at each step."""
    entries = [0]
    for k in range(1, n):
        kids = space.levels[k].children[entries[-1]]
        entries.append(int(kids[rng.integers(len(kids))]))
    return entries


class SparsePairOperator:
    """A linear map out of the truncated pair space, kept as a csr matrix acting on columns."""

    def __init__(self, name: str, matrix: sp.spmatrix, K: int):
        self.name = name
        self.matrix = sp.csr_matrix(matrix)
        self.K = K

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(f, dtype=complex).ravel()

    def column(self, x: int, y: int) -> Dict[Tuple[int, ...], complex]:
        """Image of e_x (x) e_y as {target: coefficient}; targets are pairs, or sites for contracted maps."""
        col = self.matrix[:, x * self.K + y].tocoo()
        image: Dict[Tuple[int, ...], complex] = {}
        for r, v in zip(col.row, col.data):
            if v != 0:
                key = divmod(int(r), self.K) if self.shape[0] == self.K * self.K else (int(r),)
                image[key] = image.get(key, 0j) + complex(v)
        return image

    def adjoint(self) -> "SparsePairOperator":
        return SparsePairOperator(f"{self.name}*", self.matrix.conj().T, self.K)

    def __add__(self, other: "SparsePairOperator") -> "SparsePairOperator":
        return SparsePairOperator(f"({self.name} + {other.name})", self.matrix + other.matrix, self.K)

    def __sub__(self, other: "SparsePairOperator") -> "SparsePairOperator":
        return SparsePairOperator(f"({self.name} - {other.name})", self.matrix - other.matrix, self.K)

    def __neg__(self) -> "SparsePairOperator":
        return SparsePairOperator(f"-{self.name}", -self.matrix, self.K)

    def __matmul__(self, other: "SparsePairOperator") -> "SparsePairOperator":
        return SparsePairOperator(f"{self.name}{other.name}", self.matrix @ other.matrix, self.K)

    def max_abs(self, columns: Optional[np.ndarray] = None) -> float:
        m = self.matrix if columns is None else self.matrix[:, np.flatnonzero(columns)]
        return float(np.max(np.abs(m.data), initial=0.0)) if m.nnz else 0.0

    def is_diagonal(self) -> bool:
        coo = self.matrix.tocoo()
        return bool(np.all((coo.row == coo.col) | (coo.data == 0)))

    def dump(self, sd: SiteDecoherence) -> List[Dict]:
        records = []
        csc = self.matrix.tocsc()
        for c in np.flatnonzero(np.diff(csc.indptr)):
            x, y = divmod(int(c), self.K)
            start, stop = csc.indptr[c], csc.indptr[c + 1]
            targets = []
            for r, v in zip(csc.indices[start:stop], csc.data[start:stop]):
                if self.shape[0] == self.K * self.K:
                    u, w = divmod(int(r), self.K)
                    pair = [sd.label(u), sd.label(w)]
                else:
                    pair = [sd.label(int(r))]
                targets.append({"pair": pair, **ComplexValue.of(v).model_dump()})
            records.append({"source": [sd.label(x), sd.label(y)], "targets": targets})
        return records


def interior(sd: SiteDecoherence) -> np.ndarray:
    """Pairs with 2 <= |x|, |y| <= N-1, where truncated operators agree with the untruncated ones."""
    inside = (sd.sizes >= 2) & (sd.sizes <= sd.N - 1)
    return np.outer(inside, inside).ravel()


def _grid(w: np.ndarray, wp: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(w_i, w'_j) and (w_{i-1}, w'_{j-1}) for all 2 <= i, j <= N."""
    n = len(w)
    i, j = np.meshgrid(np.arange(1, n), np.arange(1, n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    return w[i], wp[j], w[i - 1], wp[j - 1]


def _assemble(sd: SiteDecoherence, name: str, rows, cols, values) -> SparsePairOperator:
    K = sd.K
    matrix = sp.coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(K * K, K * K)
    ).tocsr()
    matrix.eliminate_zeros()
    return SparsePairOperator(name, matrix, K)


def nabla(sd: SiteDecoherence, omega: PathLike, omega_prime: PathLike) -> SparsePairOperator:
    """(nabla f)(x, y) = D(w_{|x|-1}, w'_{|y|-1}) f(x, y) - D(x, y) f(w_{|x|-1}, w'_{|y|-1}) on (w, w') pairs."""
    w, wp = path_sites(sd, omega), path_sites(sd, omega_prime)
    K, D = sd.K, sd.table
    x, y, lx, ly = _grid(w, wp)
    row = x * K + y
    return _assemble(sd, "nabla", [row, row], [row, lx * K + ly], [D[lx, ly], -D[x, y]])


def curvature(sd: SiteDecoherence, omega: PathLike, omega_prime: PathLike) -> SparsePairOperator:
    op = nabla(sd, omega, omega_prime) - nabla(sd, omega_prime, omega)
    op.name = "R"
    return op


def metric_op(sd: SiteDecoherence, omega: PathLike, omega_prime: PathLike) -> SparsePairOperator:
    w, wp = path_sites(sd, omega), path_sites(sd, omega_prime)
    K, D = sd.K, sd.table
    x1, y1, lx1, ly1 = _grid(wp, w)
    x2, y2, lx2, ly2 = _grid(w, wp)
    return _assemble(
        sd,
        "D",
        [x1 * K + y1, x2 * K + y2],
        [lx1 * K + ly1, lx2 * K + ly2],
        [D[x1, y1], -D[x2, y2]],
    )


def mass_energy_op(sd: SiteDecoherence, omega: PathLike, omega_prime: PathLike) -> SparsePairOperator:
    w, wp = path_sites(sd, omega), path_sites(sd, omega_prime)
    K, D = sd.K, sd.table
    x1, y1, lx1, ly1 = _grid(wp, w)
    x2, y2, lx2, ly2 = _grid(w, wp)
    r1, r2 = x1 * K + y1, x2 * K + y2
    return _assemble(sd, "T", [r2, r1], [r2, r1], [D[lx2, ly2], -D[lx1, ly1]])


def adjoint_metric(sd: SiteDecoherence, omega: PathLike, omega_prime: PathLike) -> SparsePairOperator:
    return metric_op(sd, omega, omega_prime).adjoint()


def dense_operator(sd: SiteDecoherence, omega: PathLike, omega_prime: PathLike, kind: str) -> np.ndarray:
    """
    Row-by-row evaluation of the defining formulas with explicit Kronecker deltas.
    Quadratic in K^2, so meant for N <= 4.
    """
    if kind not in ("nabla", "R", "D", "T"):
        raise EinsteinError(f"unknown operator {kind!r}")
    w, wp = path_sites(sd, omega), path_sites(sd, omega_prime)
    K, D, sizes = sd.K, sd.table, sd.sizes
    m = np.zeros((K * K, K * K), dtype=complex)

    def on(path, x):
        return path[sizes[x] - 1] == x

    def below(path, x):
        return path[sizes[x] - 2]

    for x in range(K):
        for y in range(K):
            if sizes[x] < 2 or sizes[y] < 2:
                continue
            r = x * K + y
            forward = on(w, x) and on(wp, y)
            backward = on(wp, x) and on(w, y)
            if forward:
                low = below(w, x) * K + below(wp, y)
                if kind in ("nabla", "R"):
                    m[r, r] += D[below(w, x), below(wp, y)]
                    m[r, low] -= D[x, y]
                if kind == "D":
                    m[r, low] -= D[x, y]
                if kind == "T":
                    m[r, r] += D[below(w, x), below(wp, y)]
            if backward:
                low = below(wp, x) * K + below(w, y)
                if kind == "R":
                    m[r, r] -= D[below(wp, x), below(w, y)]
                    m[r, low] += D[x, y]
                if kind == "D":
                    m[r, low] += D[x, y]
                if kind == "T":
                    m[r, r] -= D[below(wp, x), below(w, y)]
    return m


def _column_residual(op: SparsePairOperator, x: int, y: int, expected: Dict[Tuple[int, ...], complex]) -> float:
    return _column_residual_dict(op.column(x, y), expected)


def _add(expected: Dict, key: Tuple[int, ...], value: complex) -> None:
    expected[key] = expected.get(key, 0j) + value


def classify_pair(w: np.ndarray, wp: np.ndarray, sizes: np.ndarray, x: int, y: int) -> Optional[str]:
    """'a' for an (w, w')-only pair, 'b' for (w', w)-only, 'c' for both, None off the paths."""
    forward = w[sizes[x] - 1] == x and wp[sizes[y] - 1] == y
    backward = wp[sizes[x] - 1] == x and w[sizes[y] - 1] == y
    if forward and backward:
        return "c"
    if forward:
        return "a"
    if backward:
        return "b"
    return None


def verify_basis_action(
    sd: SiteDecoherence, omega: PathLike, omega_prime: PathLike, tol: float = TOLERANCE
) -> SuiteReport:
    """Columns of the metric, mass-energy and adjoint metric operators against their case-by-case forms."""
    w, wp = path_sites(sd, omega), path_sites(sd, omega_prime)
    K, D, sizes = sd.K, sd.table, sd.sizes
    metric, mass = metric_op(sd, omega, omega_prime), mass_energy_op(sd, omega, omega_prime)
    star = metric.adjoint()
    report = SuiteReport(suite="basis action")

    worst = {"D": (0.0, None), "T": (0.0, None), "D*": (0.0, None)}
    counts = {"a": 0, "b": 0, "c": 0, None: 0}
    entangled = 0
    for x, y in zip(*np.nonzero(interior(sd).reshape(K, K))):
        x, y = int(x), int(y)
        case = classify_pair(w, wp, sizes, x, y)
        counts[case] += 1
        sx, sy = sizes[x], sizes[y]
        exp_d: Dict = {}
        exp_t: Dict = {}
        exp_s: Dict = {}
        if case in ("a", "c"):
            up = (w[sx], wp[sy])
            _add(exp_d, up, -D[up])
            _add(exp_t, (x, y), D[w[sx - 2], wp[sy - 2]])
            _add(exp_s, (w[sx - 2], wp[sy - 2]), -np.conj(D[x, y]))
        if case in ("b", "c"):
            up = (wp[sx], w[sy])
            _add(exp_d, up, D[up])
            _add(exp_t, (x, y), -D[wp[sx - 2], w[sy - 2]])
            _add(exp_s, (wp[sx - 2], w[sy - 2]), np.conj(D[x, y]))
        if case == "c" and x == y:
            entangled += 1
        exp_d = {(int(u), int(v)): c for (u, v), c in exp_d.items()}
        exp_t = {(int(u), int(v)): c for (u, v), c in exp_t.items()}
        exp_s = {(int(u), int(v)): c for (u, v), c in exp_s.items()}
        for name, op, expected in (("D", metric, exp_d), ("T", mass, exp_t), ("D*", star, exp_s)):
            r = _column_residual(op, x, y, expected)
            if r > worst[name][0]:
                worst[name] = (r, {"pair": [sd.label(x), sd.label(y)], "case": case})

    detail = {"case_a": counts["a"], "case_b": counts["b"], "case_c": counts["c"], "off_path": counts[None]}
    for name, label in (("D", "metric operator"), ("T", "mass-energy operator"), ("D*", "adjoint metric operator")):
        residual, witness = worst[name]
        report.add(f"{label} on basis pairs", residual <= tol, residual=residual, witness=witness, **detail)
    report.add("entangled diagonal pairs", True, entangled=entangled)
    return report


@dataclass(frozen=True)
class ContractedOperators:
    R: SparsePairOperator
    D: SparsePairOperator
    T: SparsePairOperator
    T_swapped: SparsePairOperator

    def residual(self) -> float:
        return (self.R - self.D - self.T).max_abs()

    def printed_residual(self) -> float:
        """Residual of R^ = D^ + T^ with the mass-energy paths swapped."""
        return (self.R - self.D - self.T_swapped).max_abs()


def _contraction(K: int) -> sp.csr_matrix:
    diagonal = np.arange(K) * K + np.arange(K)
    return sp.csr_matrix((np.ones(K), (np.arange(K), diagonal)), shape=(K, K * K))


def contracted_ops(sd: SiteDecoherence, omega: PathLike, omega_prime: PathLike) -> ContractedOperators:
    """f -> R f(x, x) and likewise for the metric and mass-energy operators."""
    c = _contraction(sd.K)

    def contract(op: SparsePairOperator) -> SparsePairOperator:
        return SparsePairOperator(f"{op.name}^", c @ op.matrix, sd.K)

    return ContractedOperators(
        R=contract(curvature(sd, omega, omega_prime)),
        D=contract(metric_op(sd, omega, omega_prime)),
        T=contract(mass_energy_op(sd, omega, omega_prime)),
        T_swapped=contract(mass_energy_op(sd, omega_prime, omega)),
    )


def contracted_closed_forms(
    sd: SiteDecoherence, omega: PathLike, omega_prime: PathLike
) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """D^ and T^ from the mu(x) and 2i Im D forms, as K x K^2 matrices."""
    w, wp = path_sites(sd, omega), path_sites(sd, omega_prime)
    K, D = sd.K, sd.table
    d_hat = sp.lil_matrix((K, K * K), dtype=complex)
    t_hat = sp.lil_matrix((K, K * K), dtype=complex)
    for k in range(1, sd.N):
        x = w[k]
        if x != wp[k]:
            continue
        p, pp = w[k - 1], wp[k - 1]
        t_hat[x, x * K + x] = 2j * D[p, pp].imag
        if p != pp:
            d_hat[x, pp * K + p] = sd.mu[x]
            d_hat[x, p * K + pp] = -sd.mu[x]
    return d_hat.tocsr(), t_hat.tocsr()


def _case_a(w, wp, sizes, x, y) -> bool:
    return classify_pair(w, wp, sizes, x, y) == "a"


def commutator_report(
    sd: SiteDecoherence, omega: PathLike, omega_prime: PathLike, tol: float = TOLERANCE
) -> SuiteReport:
    """DD*, D*D, DT and TD on interior (w, w')-only basis pairs, with a non-commuting witness."""
    w, wp = path_sites(sd, omega), path_sites(sd, omega_prime)
    K, D, sizes = sd.K, sd.table, sd.sizes
    metric, mass = metric_op(sd, omega, omega_prime), mass_energy_op(sd, omega, omega_prime)
    star = metric.adjoint()
    products = {"DD*": metric @ star, "D*D": star @ metric, "DT": metric @ mass, "TD": mass @ metric}
    worst = {name: 0.0 for name in products}
    checked = {name: 0 for name in products}
    witness, gap = None, 0.0
    report = SuiteReport(suite="commutators")

    for x, y in zip(*np.nonzero(interior(sd).reshape(K, K))):
        x, y = int(x), int(y)
        if not _case_a(w, wp, sizes, x, y):
            continue
        sx, sy = sizes[x], sizes[y]
        up = (int(w[sx]), int(wp[sy]))
        low = (int(w[sx - 2]), int(wp[sy - 2]))
        expected = {}
        if _case_a(w, wp, sizes, *low):
            expected["DD*"] = {(x, y): abs(D[x, y]) ** 2}
        if _case_a(w, wp, sizes, *up):
            expected["D*D"] = {(x, y): abs(D[up]) ** 2}
            expected["TD"] = {up: -D[up] * D[x, y]}
        expected["DT"] = {up: -D[up] * D[low]}
        for name, exp in expected.items():
            checked[name] += 1
            worst[name] = max(worst[name], _column_residual(products[name], x, y, exp))
        commutator = products["DD*"].column(x, y), products["D*D"].column(x, y)
        keys = set(commutator[0]) | set(commutator[1])
        size = max((abs(commutator[0].get(k, 0j) - commutator[1].get(k, 0j)) for k in keys), default=0.0)
        if size > gap:
            gap, witness = size, {"pair": [sd.label(x), sd.label(y)], "D_xy": abs(D[x, y]), "D_up": abs(D[up])}

    for name in products:
        report.add(f"{name} closed form", worst[name] <= tol, residual=worst[name], checked=checked[name])
    report.add("metric operator and its adjoint", True, residual=gap, witness=witness, commute=gap <= tol)
    return report


def einstein_suite(
    sd: SiteDecoherence,
    pairs: Sequence[Tuple[PathLike, PathLike]],
    tol: float = TOLERANCE,
    dense: Optional[bool] = None,
) -> SuiteReport:
    """Every operator identity over the given path pairs; ``dense`` adds the independent assembly (default N <= 4)."""
    dense = sd.N <= 4 if dense is None else dense
    report = SuiteReport(suite="einstein")
    report.add("site decoherence is Hermitian", sd.hermitian_residual() <= tol, residual=sd.hermitian_residual())
    report.add("site decoherence is positive", sd.min_eigenvalue() >= -tol, residual=min(sd.min_eigenvalue(), 0.0))
    flat_d = sd.table.ravel()
    inner = interior(sd)
    for omega, omega_prime in pairs:
        w, wp = path_sites(sd, omega), path_sites(sd, omega_prime)
        tag = {"omega": _path_label(sd, w), "omega_prime": _path_label(sd, wp)}
        R = curvature(sd, omega, omega_prime)
        Dm = metric_op(sd, omega, omega_prime)
        T = mass_energy_op(sd, omega, omega_prime)
        r = (R - Dm - T).max_abs()
        report.add("curvature equals metric plus mass-energy", r <= tol, residual=r, **tag)
        rows = nabla(sd, omega, omega_prime).apply(flat_d)[inner]
        r = float(np.max(np.abs(rows), initial=0.0))
        report.add("covariant bidifference annihilates D", r <= tol, residual=r, **tag)
        r = max(
            (R + curvature(sd, omega_prime, omega)).max_abs(),
            (T + mass_energy_op(sd, omega_prime, omega)).max_abs(),
        )
        report.add("antisymmetry in the path pair", r <= tol, residual=r, **tag)
        report.add("mass-energy operator is diagonal", T.is_diagonal(), **tag)
        keep = np.flatnonzero(inner)
        star = Dm.adjoint().matrix
        pairing = Dm.matrix[keep][:, keep] - star.conj().T.tocsr()[keep][:, keep]
        r = float(np.max(np.abs(pairing.data), initial=0.0))
        report.add("adjoint pairing", r <= tol, residual=r, **tag)
        for suite in (verify_basis_action(sd, omega, omega_prime, tol), commutator_report(sd, omega, omega_prime, tol)):
            for check in suite.checks:
                check.detail.update(tag)
                report.checks.append(check)
        contracted = contracted_ops(sd, omega, omega_prime)
        report.add("contracted equation", contracted.residual() <= tol, residual=contracted.residual(), **tag)
        report.add(
            "contracted equation with swapped mass-energy paths",
            True,
            residual=contracted.printed_residual(),
            **tag,
        )
        d_hat, t_hat = contracted_closed_forms(sd, omega, omega_prime)
        r = max(
            float(np.max(np.abs((contracted.D.matrix - d_hat).data), initial=0.0)),
            float(np.max(np.abs((contracted.T.matrix - t_hat).data), initial=0.0)),
        )
        report.add("contracted closed forms", r <= tol, residual=r, **tag)
        if dense:
            r = max(
                float(np.max(np.abs(op.matrix.toarray() - dense_operator(sd, omega, omega_prime, kind))))
                for kind, op in (("nabla", nabla(sd, omega, omega_prime)), ("R", R), ("D", Dm), ("T", T))
            )
            report.add("sparse equals dense assembly", r <= tol, residual=r, **tag)
    return report


def _path_label(sd: SiteDecoherence, sites: np.ndarray) -> str:
    return "|".join(sd.label(int(x)) for x in sites)


def _path_through(space: PathSpace, k: int, index: int, N: int, then: Optional[int] = None) -> List[int]:
    """A path of length N whose level-k entry is ``index`` (optionally followed by ``then``), continued by first children."""
    rows = space.paths(k)
    entries = [int(v) for v in rows[np.flatnonzero(rows[:, k - 1] == index)[0]]]
    if then is not None:
        entries.append(then)
    while len(entries) < N:
        entries.append(space.levels[len(entries)].children[entries[-1]][0])
    return entries


def flatness_analysis(
    sd: SiteDecoherence,
    pairs: Sequence[Tuple[PathLike, PathLike]] = (),
    tol: float = TOLERANCE,
) -> SuiteReport:
    """
    For a classical process: sites with several producers and positive measure
    (each makes the metric operator nonzero), level sums of mu, support of D on
    comparable pairs, the vanishing contracted mass-energy and a nonzero
    mass-energy operator.
    """
    if not sd.classical:
        raise EinsteinError("flatness analysis needs a classical process")
    space, K, D, N = sd.space, sd.K, sd.table, sd.N
    report = SuiteReport(suite="flatness")

    witnesses = []
    worst_metric, worst_contracted = 0.0, 0.0
    for n in range(2, N + 1):
        level: GrowthLevel = space.levels[n - 1]
        for idx, producers in sorted(level.parents.items()):
            x = int(sd.offsets[n - 1]) + idx
            if len(producers) < 2 or sd.mu[x] <= tol:
                continue
            p1, p2 = producers[:2]
            omega = _path_through(space, n - 1, p1, N, then=idx)
            omega_prime = _path_through(space, n - 1, p2, N, then=idx)
            w, wp = path_sites(sd, omega), path_sites(sd, omega_prime)
            g1, g2 = int(w[n - 2]), int(wp[n - 2])
            image = metric_op(sd, omega, omega_prime).column(g1, g2)
            worst_metric = max(worst_metric, _column_residual_dict(image, {(x, x): -sd.mu[x]}))
            contracted = contracted_ops(sd, omega, omega_prime).R.column(g2, g1)
            worst_contracted = max(worst_contracted, _column_residual_dict(contracted, {(x,): sd.mu[x]}))
            witnesses.append(
                {"site": sd.label(x), "mu": float(sd.mu[x]), "producers": [sd.label(g1), sd.label(g2)]}
            )
    report.add(
        "sites with several producers and positive measure",
        True,
        witness=witnesses,
        metric_flat=not witnesses,
        contracted_flat=not witnesses,
    )
    report.add("metric operator on producer pairs", worst_metric <= tol, residual=worst_metric)
    report.add("contracted curvature on producer pairs", worst_contracted <= tol, residual=worst_contracted)

    sums = [float(sd.mu[sd.offsets[n - 1] : sd.offsets[n]].sum()) for n in range(1, N + 1)]
    r = max(abs(s - 1) for s in sums)
    report.add("site measure is a probability on each level", r <= tol, residual=r, sums=sums)

    comparable = space.comparability(N)
    r = float(np.max(np.abs(D[~comparable]), initial=0.0))
    report.add("decoherence vanishes on incomparable sites", r <= tol, residual=r)

    weights = sd.operator.weights
    joint = np.zeros((K, K))
    for row, p in zip(space.paths(N), weights):
        sites = row + sd.offsets[:-1]
        joint[np.ix_(sites, sites)] += p
    r = float(np.max(np.abs(D - joint)))
    report.add("decoherence is the measure of paths through both sites", r <= tol, residual=r)

    r = float(np.max(np.abs(D.imag)))
    report.add("decoherence is real", r <= tol, residual=r)

    for omega, omega_prime in pairs:
        w, wp = path_sites(sd, omega), path_sites(sd, omega_prime)
        tag = {"omega": _path_label(sd, w), "omega_prime": _path_label(sd, wp)}
        contracted = contracted_ops(sd, omega, omega_prime)
        size = contracted.T.max_abs()
        report.add("contracted mass-energy vanishes", size <= tol, residual=size, **tag)
        size = mass_energy_op(sd, omega, omega_prime).max_abs()
        report.add("mass-energy operator is nonzero", size > tol, residual=size, **tag)
        if not witnesses:
            size = metric_op(sd, omega, omega_prime).max_abs()
            report.add("metric operator vanishes", size <= tol, residual=size, **tag)
    logger.info(f"Flatness analysis at N={N}: {len(witnesses)} sites obstruct flatness")
    return report


def _column_residual_dict(actual: Dict, expected: Dict) -> float:
    keys = set(actual) | set(expected)
    return max((abs(actual.get(k, 0j) - expected.get(k, 0j)) for k in keys), default=0.0)
