"""
Amplitude processes: transition amplitude tables, path amplitudes and the
rank-1 operators they generate, the action-weighted process with its partition
function, classical (Markov) tables and the rank-1 characterization check.
"""
import cmath
import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from causet import Causet, OffspringInvariantError, OffspringKind, antichain, antichain_masks, chain, offspring, parse_causet
from growth import GrowthLevel, NamedPath, PathSpace, paths_through
from qmeasure import ProbabilityOperator, check_consistency
from settings import TOLERANCE, Z_ZERO_THRESHOLD, ComplexValue, SuiteReport

logger = logging.getLogger(__name__)

Entries = Dict[int, Dict[Tuple[int, int], complex]]


class AmplitudeError(ValueError):
    pass


def root_of_unity(k: int, n: int) -> complex:
    """exp(2 pi i k / n) with k/n reduced exactly; quarter turns are exact."""
    turn = Fraction(k, n) % 1
    exact = {Fraction(0): 1 + 0j, Fraction(1, 4): 1j, Fraction(1, 2): -1 + 0j, Fraction(3, 4): -1j}
    if turn in exact:
        return exact[turn]
    return cmath.exp(2j * cmath.pi * turn.numerator / turn.denominator)


@dataclass(frozen=True)
class PartitionFunction:
    z: complex
    height: int
    width: int
    mild: int


def partition_function(c: Causet) -> PartitionFunction:
    """
    z(x) summed over every antichain extension of x, with the offspring kinds
    counted along the way. Works on labeled extensions, so no canonical forms
    are computed and sizes beyond the cap are fine.
    """
    masks = np.array(antichain_masks(c), dtype=np.int64)
    sizes = np.array([bin(int(m)).count("1") for m in masks])
    h, w = max(c.depths), int(sizes.max())
    area = h * w
    z = 0j
    counts = {OffspringKind.HEIGHT: 0, OffspringKind.WIDTH: 0, OffspringKind.MILD: 0}
    for mask in masks:
        mask = int(mask)
        below = mask
        top = 0
        for i in range(c.size):
            if mask >> i & 1:
                below |= c.down[i]
                top = max(top, c.depths[i])
        hy = max(h, top + 1)
        wy = max(w, 1 + int(sizes[(masks & below) == 0].max()))
        z += root_of_unity(hy * wy - area, c.size)
        delta = (hy - h, wy - w)
        if delta == (1, 0):
            counts[OffspringKind.HEIGHT] += 1
        elif delta == (0, 1):
            counts[OffspringKind.WIDTH] += 1
        elif delta == (0, 0):
            counts[OffspringKind.MILD] += 1
        else:
            raise OffspringInvariantError(f"extending {c.literal()} changes (h, w) by {delta}")
    return PartitionFunction(
        z=z,
        height=counts[OffspringKind.HEIGHT],
        width=counts[OffspringKind.WIDTH],
        mild=counts[OffspringKind.MILD],
    )


@dataclass(frozen=True)
class ActionProfile:
    causet: Causet
    h: int
    w: int
    area: int
    mild: int
    height: int
    width: int
    z: complex

    @property
    def z_closed(self) -> complex:
        """[M] + [H] e^{2 pi i w/|x|} + [W] e^{2 pi i h/|x|}."""
        n = self.causet.size
        return self.mild + self.height * root_of_unity(self.w, n) + self.width * root_of_unity(self.h, n)

    def record(self) -> Dict:
        return {
            "causet": self.causet.literal(),
            "h": self.h,
            "w": self.w,
            "area": self.area,
            "M": self.mild,
            "H": self.height,
            "W": self.width,
            "z": ComplexValue.of(self.z).model_dump(),
        }


def action_profile(x: Causet) -> ActionProfile:
    """Offspring class sizes (with multiplicity) and z(x) from the defining sum over offspring."""
    counts = {kind: 0 for kind in OffspringKind}
    z = 0j
    for record in offspring(x):
        counts[record.kind] += record.multiplicity
        z += record.multiplicity * root_of_unity(record.child.area - x.area, x.size)
    return ActionProfile(
        causet=x,
        h=x.height,
        w=x.width,
        area=x.area,
        mild=counts[OffspringKind.MILD],
        height=counts[OffspringKind.HEIGHT],
        width=counts[OffspringKind.WIDTH],
        z=z,
    )


class TransitionAmplitudeTable:
    """ã(x, y) for every transition of levels 2..max_level, keyed by level-local indices."""

    def __init__(self, levels: Sequence[GrowthLevel], entries: Entries, name: str = "custom", indefinite: bool = False):
        self.levels = list(levels)
        self.entries = entries
        self.name = name
        self.indefinite = indefinite
        self._keys: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    @property
    def max_level(self) -> int:
        return max(self.entries, default=1)

    def value(self, n: int, parent: int, child: int) -> complex:
        try:
            return self.entries[n][(parent, child)]
        except KeyError:
            if (parent, child) in self.levels[n - 1].transitions:
                raise AmplitudeError(f"no amplitude for transition {parent}->{child} into level {n}")
            return 0j

    def lookup(self, n: int, parents: np.ndarray, children: np.ndarray) -> np.ndarray:
        if n not in self._keys:
            width = len(self.levels[n - 1].causets)
            items = sorted((p * width + c, v) for (p, c), v in self.entries.get(n, {}).items())
            self._keys[n] = (
                np.array([k for k, _ in items], dtype=np.int64),
                np.array([v for _, v in items], dtype=complex),
            )
        keys, values = self._keys[n]
        wanted = parents.astype(np.int64) * len(self.levels[n - 1].causets) + children
        if len(keys) == 0:
            raise AmplitudeError(f"no amplitudes for level {n}")
        at = np.minimum(np.searchsorted(keys, wanted), len(keys) - 1)
        if not np.all(keys[at] == wanted):
            raise AmplitudeError(f"missing amplitude along a transition into level {n}")
        return values[at]

    def row_sums(self, n: int) -> Dict[int, complex]:
        sums: Dict[int, complex] = {}
        for (p, _), v in self.entries.get(n, {}).items():
            sums[p] = sums.get(p, 0j) + v
        return sums

    def validate(self, tol: float = TOLERANCE) -> None:
        """Support on transitions only, every transition present and rows summing to 1."""
        for n, table in self.entries.items():
            transitions = self.levels[n - 1].transitions
            stray = [key for key in table if key not in transitions]
            if stray:
                raise AmplitudeError(f"level {n}: amplitude on non-transition {stray[0]}")
            missing = [key for key in transitions if key not in table]
            if missing:
                raise AmplitudeError(f"level {n}: transition {missing[0]} has no amplitude")
            for p, total in self.row_sums(n).items():
                if abs(total - 1) > tol:
                    raise AmplitudeError(f"level {n}: row of parent {p} sums to {total}")

    def residual(self, other: "TransitionAmplitudeTable") -> float:
        worst = 0.0
        for n in set(self.entries) | set(other.entries):
            keys = set(self.entries.get(n, {})) | set(other.entries.get(n, {}))
            for key in keys:
                diff = abs(self.entries.get(n, {}).get(key, 0j) - other.entries.get(n, {}).get(key, 0j))
                worst = max(worst, diff)
        return worst

    def to_records(self) -> List[Dict]:
        records = []
        for n in sorted(self.entries):
            for (p, c), v in sorted(self.entries[n].items()):
                records.append(
                    {
                        "parent": self.levels[n - 2].causets[p].literal(),
                        "child": self.levels[n - 1].causets[c].literal(),
                        "re": v.real,
                        "im": v.imag,
                    }
                )
        return records

    @classmethod
    def from_records(cls, levels: Sequence[GrowthLevel], records: List[Dict], name: str = "file") -> "TransitionAmplitudeTable":
        entries: Entries = {}
        for record in records:
            parent, child = parse_causet(record["parent"]), parse_causet(record["child"])
            n = child.size
            if parent.size != n - 1 or n > len(levels):
                raise AmplitudeError(f"{record['parent']} -> {record['child']} is not a transition of the built levels")
            key = (levels[n - 2].position(parent), levels[n - 1].position(child))
            entries.setdefault(n, {})[key] = complex(record["re"], record.get("im", 0.0))
        table = cls(levels, entries, name=name)
        table.validate()
        return table


def load_table(path: str, levels: Sequence[GrowthLevel]) -> TransitionAmplitudeTable:
    with open(path, "r", encoding="utf-8") as f:
        return TransitionAmplitudeTable.from_records(levels, json.load(f), name=f"file:{path}")


def action_table(levels: Sequence[GrowthLevel]) -> TransitionAmplitudeTable:
    """ã(x,y) = m(x->y)/z(x) e^{2 pi i [A(y)-A(x)]/|x|}; uniform over offspring where z(x) vanishes."""
    entries: Entries = {}
    for n in range(2, len(levels) + 1):
        level, parents = levels[n - 1], levels[n - 2].causets
        rows: Dict[Tuple[int, int], complex] = {}
        for p, x in enumerate(parents):
            kids = level.children[p]
            phases = {c: root_of_unity(level.causets[c].area - x.area, x.size) for c in kids}
            z = sum(level.transitions[(p, c)] * phases[c] for c in kids)
            if abs(z) < Z_ZERO_THRESHOLD:
                logger.warning(f"z({x.literal()}) = 0, using uniform amplitudes")
                total = level.offspring_total(p)
                for c in kids:
                    rows[(p, c)] = complex(level.transitions[(p, c)] / total)
            else:
                for c in kids:
                    rows[(p, c)] = level.transitions[(p, c)] / z * phases[c]
        entries[n] = rows
    return TransitionAmplitudeTable(levels, entries, name="action")


def uniform_rule(level: GrowthLevel, parent: int, child: int) -> float:
    return level.transitions[(parent, child)] / level.offspring_total(parent)


def classical_table(
    levels: Sequence[GrowthLevel],
    rule: Callable[[GrowthLevel, int, int], float] = uniform_rule,
    strict: bool = True,
) -> TransitionAmplitudeTable:
    """Real Markov table from ``rule``; negative entries are rejected unless strict is off."""
    entries: Entries = {}
    negative = False
    for n in range(2, len(levels) + 1):
        level = levels[n - 1]
        rows = {}
        for p, c in level.transitions:
            value = float(rule(level, p, c))
            if value < 0:
                if strict:
                    raise AmplitudeError(f"negative classical amplitude {value} into level {n}")
                negative = True
            rows[(p, c)] = complex(value)
        entries[n] = rows
    if negative:
        logger.warning("Signed classical table: the diagonal operators are indefinite")
    table = TransitionAmplitudeTable(levels, entries, name="uniform" if rule is uniform_rule else "classical", indefinite=negative)
    table.validate()
    return table


def random_table(levels: Sequence[GrowthLevel], rng: np.random.Generator) -> TransitionAmplitudeTable:
    """
    Complex Gaussian weights per transition, rows rescaled to sum to 1. Rows whose
    sum is small against their largest weight are redrawn, so |ã| <= 2.
    """
    entries: Entries = {}
    for n in range(2, len(levels) + 1):
        level = levels[n - 1]
        rows = {}
        for p, kids in level.children.items():
            weights = rng.standard_normal(len(kids)) + 1j * rng.standard_normal(len(kids))
            while abs(weights.sum()) < 0.5 * np.abs(weights).max():
                weights = rng.standard_normal(len(kids)) + 1j * rng.standard_normal(len(kids))
            weights = weights / weights.sum()
            rows.update({(p, c): complex(v) for c, v in zip(kids, weights)})
        entries[n] = rows
    return TransitionAmplitudeTable(levels, entries, name="random")


@dataclass(frozen=True)
class PathAmplitudeVector:
    n: int
    values: np.ndarray


def path_amplitudes(table: TransitionAmplitudeTable, space: PathSpace, n: int) -> PathAmplitudeVector:
    """a_n(w) = ã(w_1, w_2) ... ã(w_{n-1}, w_n) over Omega_n."""
    if n > 1 and n > table.max_level:
        raise AmplitudeError(f"table covers levels up to {table.max_level}, asked for {n}")
    a = np.ones(1, dtype=complex)
    for k in range(2, n + 1):
        rows = space.paths(k)
        a = a[space.parents(k)] * table.lookup(k, rows[:, k - 2], rows[:, k - 1])
    return PathAmplitudeVector(n, a)


def rank1_operator(vector: PathAmplitudeVector) -> ProbabilityOperator:
    return ProbabilityOperator(vector.n, amplitudes=vector.values)


class AmplitudeProcess:
    """The rank-1 process {|a_n><a_n|} generated by a transition amplitude table."""

    def __init__(self, table: TransitionAmplitudeTable, space: PathSpace):
        self.table = table
        self.space = space
        self._amplitudes: Dict[int, np.ndarray] = {1: np.ones(1, dtype=complex)}

    @property
    def name(self) -> str:
        return self.table.name

    def amplitudes(self, n: int) -> np.ndarray:
        if n not in self._amplitudes:
            if n > 1 and n > self.table.max_level:
                raise AmplitudeError(f"table covers levels up to {self.table.max_level}, asked for {n}")
            previous = self.amplitudes(n - 1)
            rows = self.space.paths(n)
            step = self.table.lookup(n, rows[:, n - 2], rows[:, n - 1])
            self._amplitudes[n] = previous[self.space.parents(n)] * step
        return self._amplitudes[n]

    def operator(self, n: int) -> ProbabilityOperator:
        return ProbabilityOperator(n, amplitudes=self.amplitudes(n))

    def site_amplitudes(self, n: int) -> np.ndarray:
        """a(x) for every causet of levels 1..n, in (size, canonical code) order."""
        return np.asarray(self.space.site_indicator(n) @ self.amplitudes(n))


class ClassicalProcess(AmplitudeProcess):
    """The diagonal process rho_n(w, w') = a_n(w) delta_{w w'} of a real table."""

    def operator(self, n: int) -> ProbabilityOperator:
        return ProbabilityOperator(n, weights=self.amplitudes(n).real, indefinite=self.table.indefinite)


def site_amplitude(process: AmplitudeProcess, x: Causet) -> complex:
    n = x.size
    return complex(process.amplitudes(n)[paths_through(process.space, x, n)].sum())


def singleton_measure(levels: Sequence[GrowthLevel], space: PathSpace, path: NamedPath, n: int) -> float:
    """
    mu_n of a single path under the action process, prod_j m(w_j -> w_{j+1})^2 / |z(w_j)|^2.
    Along the chain and antichain paths every multiplicity is 1.
    """
    entries = path.entries(space, n)
    product = 1.0
    for k in range(1, n):
        m = levels[k].transitions[(entries[k - 1], entries[k])]
        product *= m**2 / abs(partition_function(levels[k - 1].causets[entries[k - 1]]).z) ** 2
    return product


def reconstruct_table(vectors: Sequence[np.ndarray], space: PathSpace, tol: float = TOLERANCE) -> Tuple[TransitionAmplitudeTable, int]:
    """
    ã(x, y) = a_{n+1}(w y) / a_n(w) using, per transition, the path w ending at x
    with the largest |a_n(w)|. Transitions whose every such a_n(w) vanishes are
    undetermined; they get the uniform amplitude and are counted.
    """
    levels = space.levels
    entries: Entries = {}
    undetermined = 0
    for n in range(1, len(vectors)):
        a_n, a_next = vectors[n - 1], vectors[n]
        rows = space.paths(n + 1)
        parents = space.parents(n + 1)
        width = len(levels[n].causets)
        keys = rows[:, n - 1] * width + rows[:, n]
        weight = np.abs(a_n[parents])
        order = np.lexsort((-weight, keys))
        first = order[np.r_[True, keys[order][1:] != keys[order][:-1]]]
        level = levels[n]
        table: Dict[Tuple[int, int], complex] = {}
        for r in first:
            p, c = int(rows[r, n - 1]), int(rows[r, n])
            if weight[r] > tol:
                table[(p, c)] = complex(a_next[r] / a_n[parents[r]])
            else:
                undetermined += 1
                table[(p, c)] = complex(uniform_rule(level, p, c))
        entries[n + 1] = table
    return TransitionAmplitudeTable(levels, entries, name="reconstructed"), undetermined


def _rank_one_factor(op: ProbabilityOperator) -> Tuple[Optional[np.ndarray], float, float]:
    """(a, residual rank, |<1, a>|) with a rotated so that <1, a> is real positive."""
    values, vectors = np.linalg.eigh(op.hermitian_part())
    rest = float(np.max(np.abs(values[:-1]), initial=0.0))
    top = max(values[-1], 0.0)
    a = np.sqrt(top) * vectors[:, -1].conj()
    total = a.sum()
    if abs(total) == 0:
        return None, rest, 0.0
    return a * np.conj(total) / abs(total), rest, float(abs(total))


def verify_ap_characterization(
    operators: Sequence[ProbabilityOperator],
    space: PathSpace,
    tol: float = TOLERANCE,
    reference: Optional[TransitionAmplitudeTable] = None,
) -> SuiteReport:
    """
    A process rho_1..rho_N comes from an amplitude table iff every rho_n has rank
    one and a_n(w') a_{n+1}(w x) = a_n(w) a_{n+1}(w' x) whenever w and w' end at
    the same causet and both continue by x. The reconstructed table must also
    have rows summing to 1 and the operators must be consistent level to level.
    """
    report = SuiteReport(suite="ap")
    vectors = []
    for op in operators:
        a, rest, total = _rank_one_factor(op)
        if rest > tol:
            values = np.linalg.eigvalsh(op.hermitian_part())
            report.add(f"rank one at level {op.n}", False, residual=rest, witness=[float(v) for v in values[-2:]])
            return report
        if a is None or abs(total - 1) > tol:
            report.add(f"unit total amplitude at level {op.n}", False, residual=abs(total - 1))
            return report
        vectors.append(a)
    report.add("rank one", True, residual=0.0, levels=len(vectors))

    worst, witness = 0.0, None
    for n in range(1, len(vectors)):
        rows = space.paths(n + 1)
        parents = space.parents(n + 1)
        u_all, v_all = vectors[n - 1][parents], vectors[n]
        keys = rows[:, n - 1] * len(space.levels[n].causets) + rows[:, n]
        for key in np.unique(keys):
            group = np.flatnonzero(keys == key)
            if len(group) < 2:
                continue
            x = rows[group[0], n]
            u, v = u_all[group], v_all[group]
            r = np.abs(np.outer(v, u) - np.outer(u, v))
            i, j = np.unravel_index(np.argmax(r), r.shape)
            if r[i, j] > worst:
                worst = float(r[i, j])
                witness = {
                    "level": n,
                    "w": space.literal(int(parents[group[i]]), n),
                    "w_prime": space.literal(int(parents[group[j]]), n),
                    "x": space.levels[n].causets[int(x)].literal(),
                }
    report.add("product rule", worst <= tol, residual=worst, witness=witness if worst > tol else None)
    if worst > tol:
        return report

    table, undetermined = reconstruct_table(vectors, space, tol)
    unnormalized, row = 0.0, None
    for n in sorted(table.entries):
        for p, total in table.row_sums(n).items():
            if abs(total - 1) > unnormalized:
                unnormalized, row = abs(total - 1), {"level": n, "parent": space.levels[n - 2].causets[p].literal()}
    report.add(
        "normalized transition amplitudes",
        unnormalized <= tol,
        residual=unnormalized,
        witness=row if unnormalized > tol else None,
    )
    inconsistent = max(
        (check_consistency(operators[n - 1], operators[n], space) for n in range(1, len(operators))),
        default=0.0,
    )
    report.add("consistent levels", inconsistent <= tol, residual=inconsistent)

    rederived = max(
        (float(np.max(np.abs(path_amplitudes(table, space, n).values - vectors[n - 1]))) for n in range(1, len(vectors) + 1)),
        default=0.0,
    )
    report.add("re-derived process", rederived <= tol, residual=rederived, undetermined=undetermined)
    if reference is not None:
        diff = table.residual(_restrict(reference, table.max_level))
        report.add("reconstructed transition amplitudes", diff <= tol, residual=diff)
    return report


def _restrict(table: TransitionAmplitudeTable, max_level: int) -> TransitionAmplitudeTable:
    entries = {n: rows for n, rows in table.entries.items() if n <= max_level}
    return TransitionAmplitudeTable(table.levels, entries, name=table.name)


def z_scan(levels: Sequence[GrowthLevel], max_n: Optional[int] = None) -> List[Dict]:
    """min and max |z(x)| over each level, with the causets attaining them."""
    rows = []
    for level in levels[: max_n or len(levels)]:
        values = [abs(partition_function(x).z) for x in level.causets]
        lo, hi = int(np.argmin(values)), int(np.argmax(values))
        rows.append(
            {
                "n": level.n,
                "min_abs_z": values[lo],
                "argmin": level.causets[lo].literal(),
                "max_abs_z": values[hi],
                "argmax": level.causets[hi].literal(),
            }
        )
    return rows


def extreme_scan(max_j: int = 12) -> List[Dict]:
    """|z| of the j-chain and j-antichain against their lower bounds j-1 and 2^j-2."""
    rows = []
    for j in range(2, max_j + 1):
        zc, za = partition_function(chain(j)), partition_function(antichain(j))
        rows.append(
            {
                "j": j,
                "chain_abs_z": abs(zc.z),
                "chain_bound": j - 1,
                "chain_closed_residual": abs(zc.z - (j + root_of_unity(1, j))),
                "chain_H_W_M": [zc.height, zc.width, zc.mild],
                "antichain_abs_z": abs(za.z),
                "antichain_bound": 2**j - 2,
                "antichain_closed_residual": abs(za.z - (2**j - 1 + root_of_unity(1, j))),
                "antichain_H_W_M": [za.height, za.width, za.mild],
            }
        )
    return rows
