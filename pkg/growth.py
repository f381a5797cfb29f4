"""
The causet growth process: levels P_1..P_n with transition multiplicities,
path spaces Omega_n and the n-step approximations A^n of path events.
"""
import json
import logging
import os
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from causet import Causet, CausetError, OffspringKind, antichain, chain, offspring, parse_causet
from settings import GROWTH_MAX_CAUSETS, GROWTH_MAX_PATHS, LEVEL_CACHE_PATH, SIZE_CAP, USE_DATABASE

logger = logging.getLogger(__name__)


class GrowthError(ValueError):
    """Growth could not proceed; ``level`` is the last level completed."""

    def __init__(self, message: str, level: Optional[int] = None):
        self.level = level
        if level is not None:
            message = f"{message} (reached level {level})"
        super().__init__(message)


class SetSpecError(ValueError):
    def __init__(self, message: str, position: Optional[int] = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


@dataclass(frozen=True)
class GrowthLevel:
    """All causets of cardinality n and the transitions reaching them from level n-1."""

    n: int
    causets: Tuple[Causet, ...]
    transitions: Dict[Tuple[int, int], int] = field(default_factory=dict)
    kinds: Dict[Tuple[int, int], OffspringKind] = field(default_factory=dict)

    @cached_property
    def index(self) -> Dict[bytes, int]:
        return {c.canonical_code: i for i, c in enumerate(self.causets)}

    def position(self, c: Causet) -> int:
        if c.size != self.n:
            raise GrowthError(f"{c.literal()} does not belong to level {self.n}")
        return self.index[c.canonical_code]

    @cached_property
    def children(self) -> Dict[int, Tuple[int, ...]]:
        """Distinct children at this level of each parent index at level n-1."""
        table: Dict[int, List[int]] = {}
        for p, c in sorted(self.transitions):
            table.setdefault(p, []).append(c)
        return {p: tuple(cs) for p, cs in table.items()}

    @cached_property
    def parents(self) -> Dict[int, Tuple[int, ...]]:
        table: Dict[int, List[int]] = {}
        for p, c in sorted(self.transitions):
            table.setdefault(c, []).append(p)
        return {c: tuple(ps) for c, ps in table.items()}

    @cached_property
    def child_table(self) -> Tuple[np.ndarray, np.ndarray]:
        """CSR layout (ptr, idx) of ``children`` over parent indices."""
        if not self.transitions:
            return np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64)
        parent_count = max(p for p, _ in self.transitions) + 1
        counts = np.zeros(parent_count, dtype=np.int64)
        idx = []
        for p in range(parent_count):
            kids = self.children.get(p, ())
            counts[p] = len(kids)
            idx.extend(kids)
        ptr = np.concatenate([[0], np.cumsum(counts)])
        return ptr, np.array(idx, dtype=np.int64)

    def offspring_total(self, parent: int) -> int:
        """[(x->)]: offspring of a level n-1 parent counted with multiplicity."""
        return sum(self.transitions[(parent, c)] for c in self.children.get(parent, ()))


def _point_level() -> GrowthLevel:
    return GrowthLevel(1, (Causet.from_code(chain(1).canonical_code),))


def build_levels(
    max_n: int,
    cap: int = SIZE_CAP,
    max_causets: int = GROWTH_MAX_CAUSETS,
    start: Optional[Sequence[GrowthLevel]] = None,
) -> List[GrowthLevel]:
    """Levels 1..max_n of the growth process; ``start`` resumes from already built levels."""
    if not 1 <= max_n <= cap:
        raise GrowthError(f"max_n={max_n} outside 1..{cap}", level=0)

    levels = list(start) if start else [_point_level()]
    for n in range(len(levels) + 1, max_n + 1):
        previous = levels[-1]
        per_parent = [offspring(x, cap) for x in previous.causets]
        codes = sorted({r.child.canonical_code for records in per_parent for r in records})
        if len(codes) > max_causets:
            raise GrowthError(f"level {n} holds {len(codes)} causets, budget is {max_causets}", level=n - 1)

        position = {code: i for i, code in enumerate(codes)}
        transitions: Dict[Tuple[int, int], int] = {}
        kinds: Dict[Tuple[int, int], OffspringKind] = {}
        for p, records in enumerate(per_parent):
            for r in records:
                key = (p, position[r.child.canonical_code])
                transitions[key] = r.multiplicity
                kinds[key] = r.kind
        levels.append(GrowthLevel(n, tuple(Causet.from_code(c) for c in codes), transitions, kinds))
        logger.info(f"Level {n}: {len(codes)} causets, {len(transitions)} transitions")
    return levels[:max_n]


# Level cache


def levels_to_dict(levels: Sequence[GrowthLevel]) -> Dict:
    return {
        "levels": [
            {
                "n": level.n,
                "causets": [c.canonical_code.hex() for c in level.causets],
                "transitions": [
                    [p, c, m, level.kinds[(p, c)].value] for (p, c), m in sorted(level.transitions.items())
                ],
            }
            for level in levels
        ]
    }


def levels_from_dict(data: Dict) -> List[GrowthLevel]:
    """Rebuild levels from ``levels_to_dict`` output; malformed codes raise GrowthError."""
    levels = []
    for entry in data["levels"]:
        n = entry["n"]
        try:
            codes = [bytes.fromhex(h) for h in entry["causets"]]
        except ValueError as e:
            raise GrowthError(f"undecodable causet code at level {n}: {e}")
        expected_length = 1 + (n * (n - 1) // 2 + 7) // 8
        for code in codes:
            if len(code) != expected_length or code[0] != n:
                raise GrowthError(f"code {code.hex()} is not a size-{n} causet")
        if codes != sorted(codes):
            raise GrowthError(f"level {n} is not in canonical order")
        transitions = {(p, c): m for p, c, m, _ in entry["transitions"]}
        kinds = {(p, c): OffspringKind(kind) for p, c, _, kind in entry["transitions"]}
        levels.append(GrowthLevel(n, tuple(Causet.from_code(code) for code in codes), transitions, kinds))
    return levels


def save_levels_json(levels: Sequence[GrowthLevel], path: str = LEVEL_CACHE_PATH) -> bool:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(levels_to_dict(levels), f)
        logger.info(f"Saved {len(levels)} levels to {path}")
        return True
    except OSError as e:
        logger.error(f"Error saving level cache: {e}")
        return False


def load_levels_json(path: str = LEVEL_CACHE_PATH) -> Optional[List[GrowthLevel]]:
    if not os.path.exists(path):
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            return levels_from_dict(json.load(f))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        logger.warning(f"Ignoring level cache {path}: {e}")
        return None


def load_levels(max_n: int, use_cache: bool = True, path: str = LEVEL_CACHE_PATH) -> List[GrowthLevel]:
    """Levels 1..max_n from the database or JSON cache, building and storing what is missing."""
    if not use_cache:
        return build_levels(max_n)

    cached: Optional[List[GrowthLevel]] = None
    db = None
    if USE_DATABASE:
        try:
            from db import get_db_manager

            db = get_db_manager()
            cached = db.load_levels(max_n)
        except Exception as e:
            logger.error(f"Error loading levels from database: {e}")
            logger.warning("Falling back to JSON")
            db = None
    if cached is None:
        cached = load_levels_json(path)

    if cached and len(cached) >= max_n:
        logger.info(f"Using cached levels 1..{max_n}")
        return cached[:max_n]

    levels = build_levels(max_n, start=cached or None)
    if db is not None and db.save_levels(levels):
        return levels
    save_levels_json(levels, path)
    return levels


# Paths


class PathSpace:
    """
    Omega_1..Omega_depth over built levels. Paths are rows of level-local causet
    indices in lexicographic order; subsets of Omega_n are boolean masks over rows.
    """

    def __init__(self, levels: Sequence[GrowthLevel], max_paths: int = GROWTH_MAX_PATHS):
        self.levels = list(levels)
        self.max_paths = max_paths
        self._paths: List[np.ndarray] = [np.zeros((1, 1), dtype=np.int64)]
        self._parents: List[np.ndarray] = [np.zeros(1, dtype=np.int64)]

    @property
    def depth(self) -> int:
        return len(self.levels)

    def _grow_to(self, n: int) -> None:
        if not 1 <= n <= self.depth:
            raise GrowthError(f"paths of length {n} need levels 1..{n}", level=self.depth)
        while len(self._paths) < n:
            k = len(self._paths)
            previous = self._paths[-1]
            ptr, idx = self.levels[k].child_table
            last = previous[:, -1]
            per_row = ptr[last + 1] - ptr[last]
            total = int(per_row.sum())
            if total > self.max_paths:
                raise GrowthError(f"|Omega_{k + 1}| = {total} exceeds budget {self.max_paths}", level=k)

            parents = np.repeat(np.arange(len(previous)), per_row)
            row_start = np.repeat(np.cumsum(per_row) - per_row, per_row)
            within = np.arange(total) - row_start
            grown = np.empty((total, k + 1), dtype=np.int64)
            grown[:, :k] = previous[parents]
            grown[:, k] = idx[ptr[last][parents] + within]
            self._paths.append(grown)
            self._parents.append(parents)
            logger.debug(f"|Omega_{k + 1}| = {total}")

    def paths(self, n: int) -> np.ndarray:
        self._grow_to(n)
        return self._paths[n - 1]

    def parents(self, n: int) -> np.ndarray:
        """Row of Omega_{n-1} that each row of Omega_n extends."""
        if n < 2:
            raise GrowthError("Omega_1 has no parent level")
        self._grow_to(n)
        return self._parents[n - 1]

    def size(self, n: int) -> int:
        return len(self.paths(n))

    def full(self, n: int) -> np.ndarray:
        return np.ones(self.size(n), dtype=bool)

    def empty(self, n: int) -> np.ndarray:
        return np.zeros(self.size(n), dtype=bool)

    def level_of(self, mask: np.ndarray) -> int:
        for n in range(1, self.depth + 1):
            if self.size(n) == len(mask):
                return n
        raise GrowthError(f"no level with {len(mask)} paths")

    def index_of(self, entries: Sequence[int]) -> int:
        rows = np.flatnonzero((self.paths(len(entries)) == np.asarray(entries)).all(axis=1))
        if len(rows) == 0:
            raise GrowthError(f"{list(entries)} is not a path")
        return int(rows[0])

    def is_path(self, entries: Sequence[int]) -> bool:
        return all(
            (entries[k - 1], entries[k]) in self.levels[k].transitions for k in range(1, len(entries))
        )

    def literal(self, row: int, n: int) -> str:
        return "|".join(self.levels[k].causets[i].literal() for k, i in enumerate(self.paths(n)[row]))

    def one_step(self, mask: np.ndarray) -> np.ndarray:
        """(A->): every one-step continuation of the paths in ``mask``."""
        n = self.level_of(mask)
        return mask[self.parents(n + 1)]

    def cylinder(self, prefix: Sequence[int], n: int) -> np.ndarray:
        k = len(prefix)
        if k > n:
            raise SetSpecError(f"prefix of length {k} is deeper than level {n}")
        return (self.paths(n)[:, :k] == np.asarray(prefix)).all(axis=1)

    def through(self, k: int, index: int, n: int) -> np.ndarray:
        """Paths in Omega_n whose level-k entry is causet ``index`` of level k."""
        if k > n:
            raise SetSpecError(f"a site of size {k} is deeper than level {n}")
        return self.paths(n)[:, k - 1] == index

    def offsets(self, n: int) -> np.ndarray:
        """Global site index of the first causet of each level 1..n (and the total at the end)."""
        return np.concatenate([[0], np.cumsum([len(self.levels[k].causets) for k in range(n)])])

    def site_indicator(self, n: int) -> sp.csr_matrix:
        """S[x, row] = 1 iff path ``row`` of Omega_n contains site x (sites of levels 1..n)."""
        rows = self.paths(n)
        offsets = self.offsets(n)
        site = (rows + offsets[:-1]).ravel()
        path = np.repeat(np.arange(len(rows)), n)
        return sp.csr_matrix((np.ones(len(site)), (site, path)), shape=(int(offsets[-1]), len(rows)))

    def comparability(self, n: int) -> np.ndarray:
        """comparable[x, y] iff some path of Omega_n contains both sites."""
        s = self.site_indicator(n)
        return (s @ s.T).toarray() > 0

    def aggregation(self, n: int) -> sp.csr_matrix:
        """P[parent, row] = 1 mapping Omega_n onto Omega_{n-1}."""
        parents = self.parents(n)
        return sp.csr_matrix(
            (np.ones(len(parents)), (parents, np.arange(len(parents)))), shape=(self.size(n - 1), len(parents))
        )


def enumerate_paths(levels: Sequence[GrowthLevel], n: int) -> List[Tuple[int, ...]]:
    return [tuple(int(i) for i in row) for row in PathSpace(levels).paths(n)]


def one_step(space: PathSpace, mask: np.ndarray) -> np.ndarray:
    return space.one_step(mask)


def paths_through(space: PathSpace, x: Causet, n: int) -> np.ndarray:
    k = x.size
    if k > space.depth:
        raise GrowthError(f"{x.literal()} lies beyond the built levels", level=space.depth)
    return space.through(k, space.levels[k - 1].position(x), n)


def site_indicator(space: PathSpace, n: int) -> sp.csr_matrix:
    return space.site_indicator(n)


def comparable(space: PathSpace, x: Causet, y: Causet) -> bool:
    n = max(x.size, y.size)
    return bool((paths_through(space, x, n) & paths_through(space, y, n)).any())


# Path events


def _positions(space: PathSpace, prefix: Sequence[Causet]) -> List[int]:
    entries = []
    for k, c in enumerate(prefix, start=1):
        if c.size != k:
            raise SetSpecError(f"entry {k} of a path must have size {k}, got {c.literal()}")
        if k > space.depth:
            raise SetSpecError(f"entry {k} lies beyond the built levels")
        entries.append(space.levels[k - 1].position(c))
    if not space.is_path(entries):
        raise SetSpecError("consecutive entries are not related by growth: " + "|".join(c.literal() for c in prefix))
    return entries


class SetSpec:
    """An event of the path space given by finitely many levels."""

    @property
    def depth(self) -> int:
        raise NotImplementedError

    def evaluate(self, space: PathSpace, n: int, strict: bool = False) -> np.ndarray:
        raise NotImplementedError

    def core(self, space: PathSpace, n: int) -> np.ndarray:
        """n-paths all of whose continuations stay inside the event."""
        raise NotImplementedError


@dataclass(frozen=True)
class CylOf(SetSpec):
    prefix: Tuple[Causet, ...]

    @property
    def depth(self) -> int:
        return len(self.prefix)

    def evaluate(self, space, n, strict=False):
        return space.cylinder(_positions(space, self.prefix), n)

    def core(self, space, n):
        return self.evaluate(space, n)

    def __str__(self):
        return "cyl:" + "|".join(c.literal() for c in self.prefix)


@dataclass(frozen=True)
class SiteOf(SetSpec):
    site: Causet

    @property
    def depth(self) -> int:
        return self.site.size

    def evaluate(self, space, n, strict=False):
        return paths_through(space, self.site, n)

    def core(self, space, n):
        return self.evaluate(space, n)

    def __str__(self):
        return f"site:{self.site.literal()}"


@dataclass(frozen=True)
class NamedPath(SetSpec):
    """A single path: the chain path, the antichain path, or a prefix continued by first children."""

    kind: str
    prefix: Tuple[Causet, ...] = ()

    @property
    def depth(self) -> int:
        return len(self.prefix) if self.kind == "prefix" else 1

    def entries(self, space: PathSpace, n: int) -> List[int]:
        if self.kind == "chain":
            return [space.levels[k - 1].position(chain(k)) for k in range(1, n + 1)]
        if self.kind == "antichain":
            return [space.levels[k - 1].position(antichain(k)) for k in range(1, n + 1)]
        if len(self.prefix) > n:
            raise SetSpecError(f"{self} is deeper than level {n}")
        entries = _positions(space, self.prefix)
        while len(entries) < n:
            entries.append(space.levels[len(entries)].children[entries[-1]][0])
        return entries

    def evaluate(self, space, n, strict=False):
        if n > space.depth:
            raise SetSpecError(f"level {n} lies beyond the built levels")
        mask = space.empty(n)
        mask[space.index_of(self.entries(space, n))] = True
        return mask

    def core(self, space, n):
        return space.empty(n)

    def __str__(self):
        if self.kind == "prefix":
            return "path:" + "|".join(c.literal() for c in self.prefix)
        return f"path:{self.kind}"


@dataclass(frozen=True)
class Complement(SetSpec):
    inner: SetSpec

    @property
    def depth(self) -> int:
        return self.inner.depth

    def evaluate(self, space, n, strict=False):
        if strict:
            return ~self.inner.core(space, n)
        return ~self.inner.evaluate(space, n)

    def core(self, space, n):
        return ~self.inner.evaluate(space, n, strict=True)

    def __str__(self):
        return f"not({self.inner})"


@dataclass(frozen=True)
class Union(SetSpec):
    left: SetSpec
    right: SetSpec

    @property
    def depth(self) -> int:
        return max(self.left.depth, self.right.depth)

    def evaluate(self, space, n, strict=False):
        return self.left.evaluate(space, n, strict) | self.right.evaluate(space, n, strict)

    def core(self, space, n):
        return self.left.core(space, n) | self.right.core(space, n)

    def __str__(self):
        return f"({self.left} + {self.right})"


@dataclass(frozen=True)
class Intersection(SetSpec):
    left: SetSpec
    right: SetSpec

    @property
    def depth(self) -> int:
        return max(self.left.depth, self.right.depth)

    def evaluate(self, space, n, strict=False):
        return self.left.evaluate(space, n, strict) & self.right.evaluate(space, n, strict)

    def core(self, space, n):
        return self.left.core(space, n) & self.right.core(space, n)

    def __str__(self):
        return f"({self.left} & {self.right})"


def approximate(spec: SetSpec, space: PathSpace, n: int, strict: bool = False) -> np.ndarray:
    """
    A^n as a mask over Omega_n. The default reads the complement of an event as
    Omega_n minus its approximation; ``strict`` takes n-prefixes of the actual
    complement, so a single path's complement approximates to all of Omega_n.
    """
    if spec.depth > n:
        raise SetSpecError(f"{spec} needs at least {spec.depth} levels, got {n}")
    return spec.evaluate(space, n, strict)


_ATOM = re.compile(r"(cyl|site|path):(chain\b|antichain\b|[0-9;<,|]+)")


def _parse_causets(text: str, offset: int) -> Tuple[Causet, ...]:
    causets = []
    pos = 0
    for piece in text.split("|"):
        try:
            causets.append(parse_causet(piece))
        except CausetError as e:
            raise SetSpecError(str(e), position=offset + pos + (e.position or 0))
        pos += len(piece) + 1
    return tuple(causets)


def parse_path(text: str, space: PathSpace) -> List[int]:
    """Path literal ``1;|2;0<1|...`` to level-local entries, validated against growth."""
    return _positions(space, _parse_causets(text, 0))


class _SpecParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self, token: str) -> bool:
        self._skip()
        return self.text.startswith(token, self.pos)

    def _expect(self, token: str) -> None:
        if not self._peek(token):
            raise SetSpecError(f"expected {token!r}", position=self.pos)
        self.pos += len(token)

    def parse(self) -> SetSpec:
        spec = self._union()
        self._skip()
        if self.pos != len(self.text):
            raise SetSpecError(f"unexpected {self.text[self.pos]!r}", position=self.pos)
        return spec

    def _union(self) -> SetSpec:
        spec = self._intersection()
        while self._peek("+"):
            self.pos += 1
            spec = Union(spec, self._intersection())
        return spec

    def _intersection(self) -> SetSpec:
        spec = self._factor()
        while self._peek("&"):
            self.pos += 1
            spec = Intersection(spec, self._factor())
        return spec

    def _factor(self) -> SetSpec:
        if self._peek("not("):
            self.pos += 4
            inner = self._union()
            self._expect(")")
            return Complement(inner)
        if self._peek("("):
            self.pos += 1
            inner = self._union()
            self._expect(")")
            return inner
        match = _ATOM.match(self.text, self.pos)
        if not match:
            raise SetSpecError("expected cyl:, site:, path:, not( or (", position=self.pos)
        self.pos = match.end()
        head, value = match.group(1), match.group(2)
        if head == "path" and value in ("chain", "antichain"):
            return NamedPath(value)
        causets = _parse_causets(value, match.start(2))
        if head == "cyl":
            return CylOf(causets)
        if head == "path":
            return NamedPath("prefix", causets)
        if len(causets) != 1:
            raise SetSpecError("site: takes a single causet", position=match.start(2))
        return SiteOf(causets[0])


def parse_setspec(text: str) -> SetSpec:
    """``cyl:<path>``, ``site:<causet>``, ``path:chain|antichain|<path>``, ``not(...)``, ``+``, ``&``."""
    return _SpecParser(text).parse()
