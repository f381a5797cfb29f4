"""
Property suites behind ``main.py verify`` and ``main.py classical``.

Every suite reads the levels, paths and amplitude caches of a RunContext and
returns a SuiteReport. Call RunContext.warm() before running suites from
several threads; after that the shared state is only read.
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from amplitude import (
    AmplitudeError,
    AmplitudeProcess,
    ClassicalProcess,
    action_profile,
    action_table,
    classical_table,
    extreme_scan,
    load_table,
    partition_function,
    random_table,
    singleton_measure,
    verify_ap_characterization,
)
from causet import antichain, antichain_masks, chain, chain_equivalence_classes, offspring, parse_causet, producers
from einstein import PathLike, einstein_suite, flatness_analysis, n_independence, random_path, site_decoherence
from growth import NamedPath, PathSpace, SetSpecError, load_levels, parse_path, parse_setspec
from qmeasure import (
    OperatorError,
    ProbabilityOperator,
    check_consistency,
    check_grade2,
    check_monotone,
    family_matrix,
    is_classical,
    mu_sequence,
    random_operator,
    verify_classical_equivalences,
)
from settings import RunConfig, SuiteReport

logger = logging.getLogger(__name__)

# Unlabeled posets on 1..7 elements
LEVEL_SIZES = (1, 2, 5, 16, 63, 318, 2045)

THREE_ELEMENT_OFFSPRING = {"3;0<1,1<2": 4, "3;0<1,0<2": 5, "3;0<1": 6, "3;0<2,1<2": 5, "3;": 8}
THREE_ELEMENT_PRODUCERS = {"3;0<1,1<2": 1, "3;0<1,0<2": 1, "3;0<1": 2, "3;0<2,1<2": 1, "3;": 1}

MONOTONE_SPECS = (
    "path:chain",
    "path:antichain",
    "path:1;|2;|3;0<1",
    "cyl:1;|2;0<1",
    "cyl:1;|2;|3;",
    "site:3;0<1",
    "not(site:2;0<1)",
    "site:3;0<1 + path:chain",
    "cyl:1;|2; & site:3;0<1",
    "not(path:antichain)",
)

PERTURBATION = 1e-3


def build_process(choice: str, levels, space: PathSpace) -> AmplitudeProcess:
    if choice == "action":
        return AmplitudeProcess(action_table(levels), space)
    if choice == "uniform":
        return ClassicalProcess(classical_table(levels), space)
    if choice.startswith("file:"):
        return AmplitudeProcess(load_table(choice[len("file:"):], levels), space)
    raise AmplitudeError(f"unknown amplitude process {choice!r}")


class RunContext:
    """Levels, path space and amplitude processes for one command."""

    def __init__(self, config: RunConfig, depth: int = 1):
        self.config = config
        self.depth = max(config.max_level, depth)
        if self.depth > config.max_level:
            logger.info(f"Building levels up to {self.depth} (max level is {config.max_level})")
        self.levels = load_levels(self.depth, use_cache=config.use_cache)
        self.space = PathSpace(self.levels)
        self._processes: Dict[str, AmplitudeProcess] = {}

    @property
    def tol(self) -> float:
        return self.config.tolerance

    def rng(self, salt: int = 0) -> np.random.Generator:
        return np.random.default_rng(self.config.seed + salt)

    def process(self, choice: Optional[str] = None) -> AmplitudeProcess:
        choice = choice or self.config.ap_choice
        if choice not in self._processes:
            self._processes[choice] = build_process(choice, self.levels, self.space)
        return self._processes[choice]

    def classical_process(self) -> ClassicalProcess:
        """The uniform Markov process, or the --ap file table read as a classical one."""
        choice = self.config.ap_choice
        if not choice.startswith("file:"):
            return self.process("uniform")
        key = f"classical:{choice}"
        if key not in self._processes:
            table = self.process(choice).table
            values = [v for rows in table.entries.values() for v in rows.values()]
            if any(v.imag != 0 or v.real < 0 for v in values):
                raise AmplitudeError(f"{choice} is not a nonnegative real table")
            self._processes[key] = ClassicalProcess(table, self.space)
        return self._processes[key]

    def warm(self, choices: Sequence[str] = ()) -> None:
        """Fill every lazy cache the suites read."""
        for level in self.levels:
            level.index, level.children, level.parents, level.child_table
        self.space.paths(self.depth)
        for choice in choices:
            process = self.classical_process() if choice == "classical" else self.process(choice)
            process.amplitudes(self.depth)


def path_arg(text: str) -> NamedPath:
    """``path:chain``, ``path:antichain``, ``path:<literal>`` or a bare path literal."""
    spec = parse_setspec(text if text.startswith("path:") else f"path:{text}")
    if not isinstance(spec, NamedPath):
        raise SetSpecError(f"{text!r} does not name a single path")
    return spec


def _merge(report: SuiteReport, other: SuiteReport, **tag) -> None:
    for check in other.checks:
        check.detail.update(tag)
        report.checks.append(check)


# Growth


def _offspring_total(ctx: RunContext, n: int, index: int) -> Optional[int]:
    if n < ctx.depth:
        return ctx.levels[n].offspring_total(index)
    if n < ctx.config.size_cap:
        return sum(r.multiplicity for r in offspring(ctx.levels[n - 1].causets[index], ctx.config.size_cap))
    return None


def growth_suite(ctx: RunContext) -> SuiteReport:
    report = SuiteReport(suite="growth")
    top = ctx.config.max_level
    levels = ctx.levels[:top]

    # Step 1: offspring with multiplicity against antichains, and the bounds
    mismatch, out_of_bounds, checked = None, None, 0
    for level in levels:
        for i, x in enumerate(level.causets):
            total = _offspring_total(ctx, level.n, i)
            if total is None:
                continue
            checked += 1
            if mismatch is None and total != len(antichain_masks(x)):
                mismatch = {"causet": x.literal(), "offspring": total, "antichains": len(antichain_masks(x))}
            if out_of_bounds is None and not x.size + 1 <= total <= 2**x.size:
                out_of_bounds = {"causet": x.literal(), "offspring": total}
    report.add("offspring count equals antichain count", mismatch is None, witness=mismatch, causets=checked)
    report.add("offspring count bounds", out_of_bounds is None, witness=out_of_bounds, causets=checked)

    extremes = []
    for level in levels:
        for make, expected in ((chain, level.n + 1), (antichain, 2**level.n)):
            total = _offspring_total(ctx, level.n, level.position(make(level.n)))
            if total is not None and total != expected:
                extremes.append({"causet": make(level.n).literal(), "offspring": total, "expected": expected})
    report.add("chains and antichains attain the bounds", not extremes, witness=extremes or None)

    # Step 2: producers against classes of maximal chains
    mismatch, checked = None, 0
    for level in levels[1:]:
        for i, y in enumerate(level.causets):
            counts = (len(producers(y)), len(chain_equivalence_classes(y)), len(level.parents.get(i, ())))
            checked += 1
            if mismatch is None and len(set(counts)) != 1:
                mismatch = {"causet": y.literal(), "producers": counts[0], "chain_classes": counts[1], "parents": counts[2]}
    report.add("producers equal classes of maximal chains", mismatch is None, witness=mismatch, causets=checked)

    if top >= 3:
        got = {text: len(producers(parse_causet(text))) for text in THREE_ELEMENT_PRODUCERS}
        report.add("producers of the three-element causets", got == THREE_ELEMENT_PRODUCERS, witness=got)
        got = {text: sum(r.multiplicity for r in offspring(parse_causet(text))) for text in THREE_ELEMENT_OFFSPRING}
        report.add("offspring of the three-element causets", got == THREE_ELEMENT_OFFSPRING, witness=got)

    sizes = [len(level.causets) for level in levels]
    known = list(LEVEL_SIZES[: len(sizes)])
    report.add("level sizes", sizes[: len(known)] == known, witness=sizes)
    return report


# Quantum sequential growth


def _grade2(op: ProbabilityOperator, rng: np.random.Generator, trials: int) -> float:
    worst = 0.0
    for _ in range(trials):
        labels = rng.integers(0, 4, op.size)
        worst = max(worst, check_grade2(op, labels == 1, labels == 2, labels == 3))
    return worst


def qsgp_suite(ctx: RunContext) -> SuiteReport:
    report = SuiteReport(suite="qsgp", seed=ctx.config.seed)
    tol, rng = ctx.tol, ctx.rng(1)
    action, uniform = ctx.process("action"), ctx.process("uniform")

    for n in (3, 4):
        operators = {
            "action": action.operator(n),
            "uniform": uniform.operator(n),
            "random": random_operator(n, ctx.space.size(n), rng),
        }
        for name, op in operators.items():
            try:
                op.validate(tol)
                problem = None
            except OperatorError as e:
                problem = str(e)
            report.add("probability operator", problem is None, witness=problem, process=name, n=n)
            r = _grade2(op, rng, 500)
            report.add("grade-2 additivity", r <= tol, residual=r, process=name, n=n, triples=500)
            events = [rng.random(op.size) < 0.5 for _ in range(6)]
            _, low = family_matrix(op, events)
            report.add("decoherence of an event family is positive", low >= -tol, residual=min(low, 0.0), process=name, n=n)

    for name, process in (("action", action), ("uniform", uniform)):
        r = max(check_consistency(process.operator(n), process.operator(n + 1), ctx.space) for n in range(1, ctx.depth))
        report.add("consistency across levels", r <= tol, residual=r, process=name, levels=ctx.depth)

    op = action.operator(3)
    report.add("action process is not classical", not is_classical(op, tol), witness=float(op.matrix[0, 1].real))
    return report


# Amplitude processes


def _operators(process: AmplitudeProcess, depth: int) -> List[ProbabilityOperator]:
    return [process.operator(n) for n in range(1, depth + 1)]


def ap_suite(ctx: RunContext) -> SuiteReport:
    report = SuiteReport(suite="ap", seed=ctx.config.seed)
    tol, space, depth = ctx.tol, ctx.space, ctx.depth
    action = ctx.process("action")
    _merge(report, verify_ap_characterization(_operators(action, depth), space, tol, reference=action.table), process="action")

    # Step 1: random complex tables
    rng = ctx.rng(2)
    consistency, reconstruction, rejected = 0.0, 0.0, []
    other = None
    for t in range(20):
        other = AmplitudeProcess(random_table(ctx.levels, rng), space)
        ops = _operators(other, depth)
        consistency = max([consistency] + [check_consistency(ops[n - 1], ops[n], space) for n in range(1, depth)])
        sub = verify_ap_characterization(ops, space, tol, reference=other.table)
        if not sub.passed:
            rejected.append({"table": t, "check": sub.failures()[0].name, "residual": sub.failures()[0].residual})
        reconstruction = max(
            [reconstruction] + [c.residual or 0.0 for c in sub.checks if c.name == "reconstructed transition amplitudes"]
        )
    report.add("random tables are consistent", consistency <= tol, residual=consistency, tables=20)
    report.add("random tables pass the characterization", not rejected, witness=rejected or None, tables=20)
    report.add("random tables are reconstructed", reconstruction <= tol, residual=reconstruction, tables=20)

    # Step 2: negative controls
    mixture = [
        ProbabilityOperator(n, (action.operator(n).matrix + other.operator(n).matrix) / 2) for n in range(1, depth + 1)
    ]
    sub = verify_ap_characterization(mixture, space, tol)
    failure = sub.failures()[0] if sub.failures() else None
    report.add(
        "rank-2 mixture is rejected",
        failure is not None,
        residual=failure.residual if failure else None,
        witness=failure.name if failure else None,
    )

    a = action.amplitudes(3).copy()
    up = space.index_of(parse_path("1;|2;0<1|3;0<1", space))
    down = space.index_of(parse_path("1;|2;|3;0<2,1<2", space))
    a[up] += PERTURBATION
    a[down] -= PERTURBATION
    perturbed = _operators(action, 2) + [ProbabilityOperator(3, amplitudes=a)]
    sub = verify_ap_characterization(perturbed, space, tol)
    failure = sub.failures()[0] if sub.failures() else None
    report.add(
        "perturbed process is rejected",
        failure is not None and failure.name == "normalized transition amplitudes",
        residual=failure.residual if failure else None,
        witness={"check": failure.name, "row": failure.witness} if failure else None,
        delta=PERTURBATION,
    )
    return report


# Quantum action


def _singleton_products(make: Callable[[int], object], upto: int = 8) -> List[float]:
    """mu_n of the chain or antichain path for n = 2..upto, from |z| alone."""
    values, mu = [], 1.0
    for j in range(1, upto):
        mu /= abs(partition_function(make(j)).z) ** 2
        values.append(mu)
    return values


def action_suite(ctx: RunContext) -> SuiteReport:
    report = SuiteReport(suite="action")
    tol = ctx.tol

    # Step 1: partition functions three ways
    closed, direct, classes = (0.0, None), (0.0, None), None
    for level in ctx.levels[: min(ctx.depth, 5)]:
        for x in level.causets:
            profile, pf = action_profile(x), partition_function(x)
            r = abs(profile.z - profile.z_closed)
            if r > closed[0]:
                closed = (r, x.literal())
            r = abs(profile.z - pf.z)
            if r > direct[0]:
                direct = (r, x.literal())
            counts = (profile.height, profile.width, profile.mild)
            if classes is None and (
                counts != (pf.height, pf.width, pf.mild) or sum(counts) != len(antichain_masks(x))
            ):
                classes = {"causet": x.literal(), "H_W_M": list(counts)}
    report.add("partition function closed form", closed[0] <= tol, residual=closed[0], witness=closed[1])
    report.add("partition function from antichains", direct[0] <= tol, residual=direct[0], witness=direct[1])
    report.add("offspring classes partition the extensions", classes is None, witness=classes)

    # Step 2: extreme cases
    rows = extreme_scan(12)
    low = [r["j"] for r in rows if r["chain_abs_z"] < r["chain_bound"] - tol or r["antichain_abs_z"] < r["antichain_bound"] - tol]
    report.add("extreme-case lower bounds", not low, witness=low or None, max_j=12)
    r = max(max(row["chain_closed_residual"], row["antichain_closed_residual"]) for row in rows)
    report.add("extreme-case closed forms", r <= tol, residual=r)
    wrong = [
        row["j"]
        for row in rows
        if row["chain_H_W_M"] != [1, row["j"], 0] or row["antichain_H_W_M"] != [2 ** row["j"] - 1, 1, 0]
    ]
    report.add("extreme-case offspring classes", not wrong, witness=wrong or None)

    for make in (chain, antichain):
        values = _singleton_products(make)
        ok = check_monotone(values, tol) is None and values[-1] < values[0]
        report.add(f"{make.__name__} path measure decreases", ok, witness=values, upto=8)

    # Step 3: singleton and complement sequences of the action process
    process = ctx.process("action")
    for kind in ("chain", "antichain"):
        path = NamedPath(kind)
        product, identity, bound = 0.0, 0.0, 0.0
        sizes, complements = [], []
        for n in range(1, ctx.depth + 1):
            op = process.operator(n)
            mask = path.evaluate(ctx.space, n)
            mu = op.q_measure(mask, tol)
            product = max(product, abs(mu - singleton_measure(ctx.levels, ctx.space, path, n)))
            a = op.nu(mask)
            c = op.q_measure(~mask, tol)
            identity = max(identity, abs(c - (1 + abs(a) ** 2 - 2 * a.real)))
            bound = max(bound, abs(c - 1) - (2 * abs(a) + abs(a) ** 2))
            sizes.append(abs(a))
            complements.append(c)
        report.add(f"{kind} path measure is the product of partition functions", product <= tol, residual=product)
        report.add(f"{kind} path complement sequence", identity <= tol, residual=identity, values=complements)
        trend = check_monotone(sizes[1:], tol) is None and sizes[-1] < sizes[1] and bound <= tol
        report.add(f"{kind} path complement approaches one", trend, witness=sizes)
    return report


# Discrete Einstein operators


def einstein_checks(
    ctx: RunContext,
    N: Optional[int] = None,
    omega: str = "path:chain",
    omega_prime: str = "path:antichain",
    pairs: int = 10,
) -> SuiteReport:
    N = N or max(3, min(ctx.depth, 5))
    rng = ctx.rng(3)
    chosen: List[Tuple[PathLike, PathLike]] = [(path_arg(omega), path_arg(omega_prime))]
    attempts = 0
    while len(chosen) < pairs + 1 and attempts < 20 * (pairs + 1):
        attempts += 1
        w, wp = random_path(ctx.space, N, rng), random_path(ctx.space, N, rng)
        if w != wp:
            chosen.append((w, wp))

    process = ctx.process()
    sd = site_decoherence(process, N)
    report = einstein_suite(sd, chosen, ctx.tol)
    report.seed = ctx.config.seed
    if N >= 2:
        r = n_independence(process, N - 1)
        report.add("site decoherence does not depend on the level", r <= ctx.tol, residual=r, N=N - 1)
    return report


# Classical processes


def classical_suite(ctx: RunContext) -> SuiteReport:
    report = SuiteReport(suite="classical", seed=ctx.config.seed)
    tol, space = ctx.tol, ctx.space
    process = ctx.classical_process()

    off = 0.0
    for n in range(1, ctx.depth + 1):
        m = process.operator(n).matrix
        off = max(off, float(np.max(np.abs(m - np.diag(np.diag(m))), initial=0.0)))
    report.add("decoherence is diagonal", off <= tol, residual=off)

    n = min(ctx.depth, 4)
    _merge(report, verify_classical_equivalences(process.operator(n), 200, ctx.rng(4), tol, seed=ctx.config.seed), n=n)

    negative = verify_classical_equivalences(ctx.process("action").operator(3), 200, ctx.rng(5), tol)
    failures = [c for c in negative.failures() if c.name != "precondition"] or negative.failures()
    report.add(
        "action process violates the equivalences",
        bool(failures),
        residual=failures[0].residual if failures else None,
        witness=failures[0].name if failures else None,
    )

    increases = []
    for text in MONOTONE_SPECS:
        sequence = mu_sequence(process.operator, space, parse_setspec(text), ctx.depth, strict=True, tol=tol)
        at = check_monotone([v.mu for v in sequence.values], tol)
        if at is not None:
            increases.append({"spec": text, "n": sequence.values[at].n})
    report.add("event measures are nonincreasing", not increases, witness=increases or None, specs=len(MONOTONE_SPECS))

    sd = site_decoherence(process, min(ctx.depth, 5))
    _merge(report, flatness_analysis(sd, [(NamedPath("chain"), NamedPath("antichain"))], tol))
    return report


SUITES: Dict[str, Callable[..., SuiteReport]] = {
    "growth": growth_suite,
    "qsgp": qsgp_suite,
    "ap": ap_suite,
    "action": action_suite,
    "einstein": einstein_checks,
    "classical": classical_suite,
}

# Levels each suite needs beyond --max-level
SUITE_DEPTH = {"growth": 1, "qsgp": 4, "ap": 3, "action": 4, "einstein": 3, "classical": 4}
