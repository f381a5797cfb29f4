# Imports
import argparse
import asyncio
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from amplitude import (
    ClassicalProcess,
    action_profile,
    extreme_scan,
    partition_function,
    singleton_measure,
    site_amplitude,
    z_scan,
)
from causet import Causet, offspring, parse_causet
from einstein import adjoint_metric, curvature, einstein_suite, mass_energy_op, metric_op, nabla, site_decoherence
from growth import Complement, NamedPath, SetSpecError, parse_setspec, paths_through
from qmeasure import check_monotone, mu_sequence
from settings import EXAMPLE_PATH, LOG_LEVEL, SEMAPHORE_LIMIT, SIZE_CAP, TOLERANCE, Z_ZERO_THRESHOLD, RunConfig, SuiteReport
from suites import SUITE_DEPTH, SUITES, RunContext, classical_suite, path_arg

# Setup logging
logger = logging.getLogger(__name__)

OPERATORS = {"nabla": nabla, "R": curvature, "D": metric_op, "T": mass_energy_op, "Dstar": adjoint_metric}


@dataclass
class Report:
    """What a command emits: table rows, summary fields and the suites it ran."""

    command: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    suites: List[SuiteReport] = field(default_factory=list)
    passed: bool = True
    document: Any = None  # emitted verbatim as JSON when set


def _number(z: complex) -> Any:
    z = complex(z)
    return z.real if z.imag == 0 else {"re": z.real, "im": z.imag}


def _matrix(m: np.ndarray) -> List[List[Any]]:
    return [[_number(v) for v in row] for row in m]


# Commands


def _offspring_count(x: Causet) -> Optional[int]:
    """Offspring with multiplicity; None once the children would exceed the size cap."""
    if x.size + 1 > SIZE_CAP:
        return None
    return sum(record.multiplicity for record in offspring(x))


def cmd_enum(ctx: RunContext) -> Report:
    """Level sizes and, per causet, h/w/area with its offspring and producer counts."""
    top = ctx.config.max_level
    rows = []
    for level in ctx.levels[:top]:
        following = ctx.levels[level.n] if level.n < ctx.depth else None
        for i, x in enumerate(level.causets):
            record = x.record()
            multiplicities = None
            if following is not None:
                multiplicities = [following.transitions[(i, c)] for c in following.children.get(i, ())]
            rows.append(
                {
                    "n": level.n,
                    "index": i,
                    "causet": x.literal(),
                    "canonical": record.canonical,
                    "h": record.h,
                    "w": record.w,
                    "area": record.area,
                    "offspring": _offspring_count(x),
                    "multiplicities": multiplicities,
                    "producers": len(level.parents.get(i, ())),
                }
            )
    summary = {
        "level_sizes": [len(level.causets) for level in ctx.levels[:top]],
        "offspring": [_offspring_count(x) for x in ctx.levels[top - 1].causets],
    }
    return Report("enum", rows=rows, summary=summary)


def cmd_paths(ctx: RunContext, n: int) -> Report:
    process = ctx.process()
    a = process.amplitudes(n)
    mu = a.real if isinstance(process, ClassicalProcess) else np.abs(a) ** 2
    rows = [
        {"row": r, "path": ctx.space.literal(r, n), "re": a[r].real, "im": a[r].imag, "mu": float(mu[r])}
        for r in range(len(a))
    ]
    total = complex(a.sum())
    summary = {"n": n, "process": process.name, "paths": len(a), "total_amplitude": _number(total), "norm": process.operator(n).norm()}
    return Report("paths", rows=rows, summary=summary)


def cmd_paper_example(config: RunConfig) -> Report:
    """Recompute the worked three-step example and compare it with the stored values."""
    with open(EXAMPLE_PATH, "r", encoding="utf-8") as f:
        expected = json.load(f)

    ctx = RunContext(config, depth=len(expected["level_sizes"]))
    levels, space, tol = ctx.levels, ctx.space, config.tolerance
    process = ctx.process("action")
    sites = {name: parse_causet(text) for name, text in expected["sites"].items()}
    rows: List[Dict[str, Any]] = []

    def compare(quantity: str, want: Any, got: Any) -> None:
        want, got = complex(*want) if isinstance(want, list) else complex(want), complex(got)
        residual = abs(got - want)
        rows.append(
            {"quantity": quantity, "expected": _number(want), "computed": _number(got), "residual": residual, "passed": residual <= tol}
        )

    # Step 1: growth
    for n, size in enumerate(expected["level_sizes"], start=1):
        compare(f"|P_{n}|", size, len(levels[n - 1].causets))
    for name, count in expected["offspring_counts"]["values"].items():
        compare(f"offspring of {name}", count, _offspring_count(sites[name]))

    # Step 2: partition functions and transition amplitudes
    for name, z in expected["z"]["values"].items():
        compare(f"z({name})", z, partition_function(sites[name]).z)
    for parent, child, value in expected["transition_amplitudes"]["values"]:
        n = sites[child].size
        key = (levels[n - 2].position(sites[parent]), levels[n - 1].position(sites[child]))
        compare(f"a~({parent},{child})", value, process.table.value(n, *key))

    # Step 3: paths of length three
    op = process.operator(3)
    a3 = process.amplitudes(3)
    want_a = np.zeros(space.size(3), dtype=complex)
    for path in expected["paths"]["values"]:
        entries = [levels[k].position(sites[s]) for k, s in enumerate(path["sites"])]
        row = space.index_of(entries)
        want_a[row] = complex(*path["amplitude"])
        compare(f"a_3({path['name']})", path["amplitude"], a3[row])
        single = space.empty(3)
        single[row] = True
        compare(f"mu_3({path['name']})", path["mu"], op.q_measure(single, tol))
    compare("sum of a_3", 1, a3.sum())
    for entry in expected["site_set_measures"]["values"]:
        mask = space.empty(3)
        for s in entry["sites"]:
            mask |= paths_through(space, sites[s], 3)
        compare(f"mu_3({{{','.join(entry['sites'])}}})", entry["mu"], op.q_measure(mask, tol))
    compare("norm of rho_3", expected["path_operator_norm"], op.norm())

    # Step 4: sites
    sd = site_decoherence(process, 3)
    want_s = np.zeros(sd.K, dtype=complex)
    for name, value in expected["site_amplitudes"]["values"].items():
        want_s[sd.site(sites[name])] = complex(*value)
        compare(f"a({name})", value, site_amplitude(process, sites[name]))

    residual = float(np.max(np.abs(op.matrix - np.outer(want_a.conj(), want_a))))
    rows.append({"quantity": "path decoherence matrix", "residual": residual, "passed": residual <= tol})
    residual = float(np.max(np.abs(sd.table - np.outer(want_s.conj(), want_s))))
    rows.append({"quantity": "site decoherence matrix", "residual": residual, "passed": residual <= tol})

    for row in rows:
        if not row["passed"]:
            logger.error(f"{row['quantity']}: expected {row.get('expected')}, computed {row.get('computed')}")
    summary = {
        "path_order": [space.literal(r, 3) for r in range(space.size(3))],
        "path_decoherence": _matrix(op.matrix),
        "site_order": [sd.label(x) for x in range(sd.K)],
        "site_decoherence": _matrix(sd.table),
    }
    return Report("paper-example", rows=rows, summary=summary, passed=all(row["passed"] for row in rows))


def cmd_ap(ctx: RunContext, profiles: bool = False, save: Optional[str] = None) -> Report:
    table = ctx.process().table
    if save:
        with open(save, "w", encoding="utf-8") as f:
            json.dump(table.to_records(), f, indent=2)
        logger.info(f"Saved {table.name} table to {save}")

    residual = max(
        (abs(total - 1) for n in table.entries for total in table.row_sums(n).values()),
        default=0.0,
    )
    summary = {"process": table.name, "levels": table.max_level, "row_sum_residual": residual}
    if profiles:
        rows = []
        for level in ctx.levels[: min(ctx.config.max_level, ctx.config.size_cap - 1)]:
            for x in level.causets:
                profile = action_profile(x)
                record = profile.record()
                z = record.pop("z")
                rows.append({**record, "z_re": z["re"], "z_im": z["im"], "closed_residual": abs(profile.z - profile.z_closed)})
        return Report("ap", rows=rows, summary=summary)

    rows = []
    for record in table.to_records():
        n = parse_causet(record["child"]).size
        rows.append({"n": n, **record, "abs": abs(complex(record["re"], record["im"]))})
    summary["transitions"] = len(rows)
    return Report("ap", rows=rows, summary=summary)


def cmd_mu(ctx: RunContext, text: str) -> Report:
    """mu_n(A^n) up to --max-level; single paths also get their complement and product form."""
    spec = parse_setspec(text)
    top = ctx.config.max_level
    if spec.depth > top:
        raise SetSpecError(f"{spec} needs {spec.depth} levels, --max-level is {top}")
    process = ctx.process()
    strict, tol = ctx.config.strict_complement, ctx.tol
    sequence = mu_sequence(process.operator, ctx.space, spec, top, strict=strict, tol=tol)
    rows = [{"n": v.n, "mu": v.mu} for v in sequence.values]

    if isinstance(spec, NamedPath):
        complement = mu_sequence(process.operator, ctx.space, Complement(spec), top, strict=strict, tol=tol)
        for row, value in zip(rows, complement.values):
            row["complement"] = value.mu
        if process.name == "action":
            for row in rows:
                row["product"] = singleton_measure(ctx.levels, ctx.space, spec, row["n"])

    summary = sequence.model_dump(exclude={"values"})
    summary["nonincreasing"] = check_monotone([v.mu for v in sequence.values], tol) is None
    return Report("mu", rows=rows, summary=summary)


def suite_rows(suites: Sequence[SuiteReport]) -> List[Dict[str, Any]]:
    return [
        {
            "suite": suite.suite,
            "check": check.name,
            "passed": check.passed,
            "residual": check.residual,
            "witness": check.witness,
            "detail": check.detail,
        }
        for suite in suites
        for check in suite.checks
    ]


async def cmd_verify(ctx: RunContext, names: Sequence[str], **einstein) -> Report:
    """Run the selected suites concurrently; the report keeps the requested order."""
    choices = ["action", "uniform"]
    if "einstein" in names:
        choices.append(ctx.config.ap_choice)
    if "classical" in names:
        choices.append("classical")
    ctx.warm(choices)
    semaphore = asyncio.Semaphore(SEMAPHORE_LIMIT)
    loop = asyncio.get_running_loop()

    async def limited_suite(name: str) -> SuiteReport:
        run = partial(SUITES[name], ctx, **einstein) if name == "einstein" else partial(SUITES[name], ctx)
        async with semaphore:
            logger.info(f"Suite {name} started")
            report = await loop.run_in_executor(None, run)
            logger.info(f"Suite {name} finished: {len(report.failures())} of {len(report.checks)} checks failed")
            return report

    suites = await asyncio.gather(*(limited_suite(name) for name in names))
    return Report(
        "verify",
        rows=suite_rows(suites),
        suites=list(suites),
        passed=all(s.passed for s in suites),
        summary={"seed": ctx.config.seed},
    )


def cmd_einstein(ctx: RunContext, N: int, omega: str, omega_prime: str, dump: Optional[str] = None) -> Report:
    sd = site_decoherence(ctx.process(), N)
    w, wp = path_arg(omega), path_arg(omega_prime)
    if dump:
        records = OPERATORS[dump](sd, w, wp).dump(sd)
        rows = [
            {"source": ",".join(record["source"]), "target": ",".join(t["pair"]), "re": t["re"], "im": t["im"]}
            for record in records
            for t in record["targets"]
        ]
        return Report("einstein", rows=rows, summary={"operator": dump, "N": N, "columns": len(records)}, document=records)
    report = einstein_suite(sd, [(w, wp)], ctx.tol)
    return Report("einstein", rows=suite_rows([report]), suites=[report], passed=report.passed, summary={"N": N})


def cmd_zscan(config: RunConfig, extremes: bool = False, max_j: int = 12) -> Report:
    tol = config.tolerance
    if extremes:
        rows = extreme_scan(max_j)
        passed = all(
            r["chain_abs_z"] >= r["chain_bound"] - tol and r["antichain_abs_z"] >= r["antichain_bound"] - tol for r in rows
        )
        return Report("zscan", rows=rows, summary={"max_j": max_j}, passed=passed)
    ctx = RunContext(config)
    rows = z_scan(ctx.levels, config.max_level)
    zeros = sum(1 for level in ctx.levels for x in level.causets if abs(partition_function(x).z) < Z_ZERO_THRESHOLD)
    return Report("zscan", rows=rows, summary={"min_abs_z": min(r["min_abs_z"] for r in rows), "vanishing": zeros})


def cmd_classical(ctx: RunContext) -> Report:
    report = classical_suite(ctx)
    return Report("classical", rows=suite_rows([report]), suites=[report], passed=report.passed)


# Output


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    if isinstance(value, (int, np.integer, str)):
        return str(value)
    return json.dumps(value, default=_jsonable, separators=(",", ":"), ensure_ascii=False)


def _columns(rows: Sequence[Dict[str, Any]]) -> List[str]:
    columns: List[str] = []
    for row in rows:
        columns.extend(key for key in row if key not in columns)
    return columns


def render(report: Report, output_format: str) -> str:
    if output_format == "json":
        document = report.document
        if document is None:
            document = {"command": report.command, "passed": report.passed, **report.summary}
            if report.suites:
                document["suites"] = [suite.model_dump() for suite in report.suites]
            else:
                document["rows"] = report.rows
        return json.dumps(document, indent=2, ensure_ascii=False, default=_jsonable) + "\n"

    columns = _columns(report.rows)
    if output_format == "csv":
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=columns)
        writer.writeheader()
        for row in report.rows:
            writer.writerow({key: _cell(row.get(key)) for key in columns})
        return buffer.getvalue()

    lines = [f"{key}: {_cell(value)}" for key, value in report.summary.items() if not key.endswith("decoherence")]
    for key, value in report.summary.items():
        if key.endswith("decoherence"):
            lines.append(f"{key}:")
            lines.extend("  " + " ".join(f"{_cell(v):>8}" for v in row) for row in value)
    cells = [[_cell(row.get(key)) for key in columns] for row in report.rows]
    cells = [[c if len(c) <= 72 else c[:69] + "..." for c in line] for line in cells]
    widths = [max([len(key)] + [len(line[i]) for line in cells]) for i, key in enumerate(columns)]
    if columns:
        lines.append("  ".join(key.ljust(width) for key, width in zip(columns, widths)).rstrip())
        lines.extend("  ".join(c.ljust(width) for c, width in zip(line, widths)).rstrip() for line in cells)
    lines.append("PASS" if report.passed else "FAIL")
    return "\n".join(lines) + "\n"


def write_report(report: Report, config: RunConfig) -> None:
    text = render(report, config.output_format)
    if config.out:
        with open(config.out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        logger.info(f"Wrote {report.command} report to {config.out}")
    else:
        sys.stdout.write(text)


# Command line


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--max-level", type=int, default=4, help="deepest growth level to build")
    common.add_argument("--ap", default="action", help="amplitude process: action, uniform or file:<path>")
    common.add_argument("--tol", type=float, default=TOLERANCE, help="tolerance for every numeric check")
    common.add_argument("--format", choices=("json", "csv", "table"), default="table")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    common.add_argument("--strict-complement", action="store_true", help="literal A^n for complements")
    common.add_argument("--out", help="write the report to this file")
    common.add_argument("--cache", action=argparse.BooleanOptionalAction, default=True, help="use the level cache")

    parser = argparse.ArgumentParser(prog="qsgp", description="Causet growth, quantum measures and discrete Einstein operators")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("enum", parents=[common], help="enumerate causets level by level")
    p = commands.add_parser("paths", parents=[common], help="paths of a level with their amplitudes")
    p.add_argument("--n", type=int, help="path length (default --max-level)")
    commands.add_parser("paper-example", parents=[common], help="recompute the worked three-step example")
    p = commands.add_parser("ap", parents=[common], help="transition amplitudes of the chosen process")
    p.add_argument("--profiles", action="store_true", help="offspring classes and z(x) instead of the table")
    p.add_argument("--save", help="write the table in the file format read by --ap file:<path>")
    p = commands.add_parser("mu", parents=[common], help="mu_n(A^n) for an event")
    p.add_argument("--set", dest="spec", required=True, help="cyl:, site:, path:, not(), + and &")
    p = commands.add_parser("verify", parents=[common], help="run property suites")
    p.add_argument("--suite", choices=list(SUITES) + ["all"], default="all")
    p.add_argument("--N", type=int, help="truncation for the einstein suite")
    p.add_argument("--omega", default="path:chain")
    p.add_argument("--omega-prime", default="path:antichain")
    p.add_argument("--pairs", type=int, default=10, help="random path pairs in the einstein suite")
    p = commands.add_parser("einstein", parents=[common], help="discrete Einstein operators for a path pair")
    p.add_argument("--N", type=int)
    p.add_argument("--omega", default="path:chain")
    p.add_argument("--omega-prime", default="path:antichain")
    p.add_argument("--dump", choices=list(OPERATORS), help="emit the operator's basis action")
    p = commands.add_parser("zscan", parents=[common], help="|z(x)| per level, or the extreme cases")
    p.add_argument("--extremes", action="store_true")
    p.add_argument("--max-j", type=int, default=12)
    commands.add_parser("classical", parents=[common], help="classical process analysis")
    return parser


def _truncation(args: argparse.Namespace) -> int:
    return args.N or max(3, min(args.max_level, 5))


def run_command(args: argparse.Namespace, config: RunConfig) -> Report:
    if args.command == "enum":
        return cmd_enum(RunContext(config))
    if args.command == "paths":
        n = args.n or config.max_level
        return cmd_paths(RunContext(config, depth=n), n)
    if args.command == "paper-example":
        return cmd_paper_example(config)
    if args.command == "ap":
        return cmd_ap(RunContext(config), args.profiles, args.save)
    if args.command == "mu":
        return cmd_mu(RunContext(config), args.spec)
    if args.command == "verify":
        names = list(SUITES) if args.suite == "all" else [args.suite]
        depth = max(SUITE_DEPTH[name] for name in names)
        einstein = {}
        if "einstein" in names:
            N = _truncation(args)
            depth = max(depth, N)
            einstein = {"N": N, "omega": args.omega, "omega_prime": args.omega_prime, "pairs": args.pairs}
        return asyncio.run(cmd_verify(RunContext(config, depth=depth), names, **einstein))
    if args.command == "einstein":
        N = _truncation(args)
        return cmd_einstein(RunContext(config, depth=N), N, args.omega, args.omega_prime, args.dump)
    if args.command == "zscan":
        return cmd_zscan(config, args.extremes, args.max_j)
    return cmd_classical(RunContext(config, depth=SUITE_DEPTH["classical"]))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Exit status 0 when every check passes, 1 on a failed check, 2 on bad input."""
    logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig(
            max_level=args.max_level,
            ap_choice=args.ap,
            tolerance=args.tol,
            output_format=args.format,
            seed=args.seed,
            strict_complement=args.strict_complement,
            out=args.out,
            use_cache=args.cache,
        )
        report = run_command(args, config)
        write_report(report, config)
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2
    if not report.passed:
        logger.warning(f"{args.command}: some checks failed")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
