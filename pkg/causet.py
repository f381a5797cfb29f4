"""
Causets: finite partially ordered sets considered up to isomorphism.

Elements of a causet of size n are 0..n-1. The strict order is held as one
integer bitmask per element (``down[j]`` has bit i set iff i precedes j); the
boolean matrices ``order`` and ``cover`` are derived views.
"""
import logging
import re
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from settings import SIZE_CAP, CausetRecord

logger = logging.getLogger(__name__)

_LITERAL_HEAD = re.compile(r"(\d+);")
_LITERAL_EDGE = re.compile(r"(\d+)<(\d+)")


class CausetError(ValueError):
    """Invalid causet literal, antichain or size."""

    def __init__(self, message: str, position: Optional[int] = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class OffspringInvariantError(RuntimeError):
    """An offspring changed both height and width."""


class OffspringKind(str, Enum):
    HEIGHT = "Height"
    WIDTH = "Width"
    MILD = "Mild"


def _bits(mask: int) -> Iterable[int]:
    i = 0
    while mask:
        if mask & 1:
            yield i
        mask >>= 1
        i += 1


def _up_masks(size: int, down: Sequence[int]) -> Tuple[int, ...]:
    up = [0] * size
    for j in range(size):
        for i in _bits(down[j]):
            up[i] |= 1 << j
    return tuple(up)


def _depths(size: int, down: Sequence[int]) -> List[int]:
    """Length of the longest chain ending at each element."""
    # an element's down-set strictly contains the down-sets of its predecessors
    depth = [0] * size
    for j in sorted(range(size), key=lambda k: bin(down[k]).count("1")):
        depth[j] = 1 + max((depth[i] for i in _bits(down[j])), default=0)
    return depth


def _height_of(size: int, down: Sequence[int]) -> int:
    return max(_depths(size, down), default=0)


def _width_of(size: int, down: Sequence[int]) -> int:
    """Largest antichain, by Dilworth: size minus a maximum matching of the comparability bigraph."""
    if size == 0:
        return 0
    graph = nx.Graph()
    left = [("lo", i) for i in range(size)]
    graph.add_nodes_from(left)
    graph.add_nodes_from(("hi", j) for j in range(size))
    for j in range(size):
        for i in _bits(down[j]):
            graph.add_edge(("lo", i), ("hi", j))
    matching = nx.bipartite.hopcroft_karp_matching(graph, top_nodes=left)
    return size - len(matching) // 2


def _canonical_bits(size: int, down: Sequence[int]) -> Tuple[List[int], Tuple[int, ...]]:
    """
    Lexicographically least column-major incomparability string over natural labelings.

    Column j lists, for every earlier label i, 0 if i precedes j and 1 otherwise.
    Partial labelings are extended one position at a time and only those that
    reach the least column survive. Incomparable twins (equal down- and up-sets)
    are interchangeable, so only one of them is tried.
    """
    up = _up_masks(size, down)
    frontier: List[Tuple[Tuple[int, ...], int]] = [((), 0)]
    bits: List[int] = []
    for _ in range(size):
        best: Optional[Tuple[int, ...]] = None
        survivors: List[Tuple[Tuple[int, ...], int]] = []
        for labels, placed in frontier:
            tried = set()
            for v in range(size):
                if placed >> v & 1 or down[v] & ~placed:
                    continue
                twin_key = (down[v], up[v])
                if twin_key in tried:
                    continue
                tried.add(twin_key)
                column = tuple(0 if down[v] >> u & 1 else 1 for u in labels)
                if best is None or column < best:
                    best = column
                    survivors = [(labels + (v,), placed | 1 << v)]
                elif column == best:
                    survivors.append((labels + (v,), placed | 1 << v))
        bits.extend(best)
        frontier = survivors
    return bits, frontier[0][0]


def _encode(size: int, bits: List[int]) -> bytes:
    packed = np.packbits(np.array(bits, dtype=np.uint8)).tobytes() if bits else b""
    return bytes([size]) + packed


def _decode(code: bytes) -> Tuple[int, Tuple[int, ...]]:
    size = code[0]
    count = size * (size - 1) // 2
    bits = np.unpackbits(np.frombuffer(code[1:], dtype=np.uint8))[:count] if count else []
    down = [0] * size
    k = 0
    for j in range(1, size):
        for i in range(j):
            if not bits[k]:
                down[j] |= 1 << i
            k += 1
    return size, tuple(down)


@lru_cache(maxsize=None)
def _stats(code: bytes) -> Tuple[int, int]:
    size, down = _decode(code)
    return _height_of(size, down), _width_of(size, down)


class Causet:
    """
    Immutable finite poset. Equality and hashing go through the canonical code,
    so isomorphic causets compare equal.
    """

    def __init__(self, size: int, down: Sequence[int]):
        if size < 1:
            raise CausetError("a causet has at least one element")
        self.size = size
        self.down: Tuple[int, ...] = tuple(down)

    @classmethod
    def from_code(cls, code: bytes) -> "Causet":
        size, down = _decode(code)
        causet = cls(size, down)
        causet.__dict__["canonical_code"] = bytes(code)
        return causet

    @cached_property
    def up(self) -> Tuple[int, ...]:
        return _up_masks(self.size, self.down)

    @cached_property
    def cover_down(self) -> Tuple[int, ...]:
        reduced = []
        for j in range(self.size):
            implied = 0
            for k in _bits(self.down[j]):
                implied |= self.down[k]
            reduced.append(self.down[j] & ~implied)
        return tuple(reduced)

    @property
    def order(self) -> np.ndarray:
        """order[i, j] is True iff element i precedes element j."""
        return self._matrix(self.down)

    @property
    def cover(self) -> np.ndarray:
        return self._matrix(self.cover_down)

    def _matrix(self, masks: Sequence[int]) -> np.ndarray:
        m = np.zeros((self.size, self.size), dtype=bool)
        for j, mask in enumerate(masks):
            for i in _bits(mask):
                m[i, j] = True
        m.flags.writeable = False
        return m

    @property
    def covers(self) -> List[Tuple[int, int]]:
        return sorted((i, j) for j in range(self.size) for i in _bits(self.cover_down[j]))

    @cached_property
    def canonical_code(self) -> bytes:
        bits, _ = _canonical_bits(self.size, self.down)
        return _encode(self.size, bits)

    @cached_property
    def depths(self) -> Tuple[int, ...]:
        return tuple(_depths(self.size, self.down))

    @property
    def height(self) -> int:
        return _stats(self.canonical_code)[0]

    @property
    def width(self) -> int:
        return _stats(self.canonical_code)[1]

    @property
    def area(self) -> int:
        return self.height * self.width

    def comparable(self, i: int, j: int) -> bool:
        return bool((self.down[j] >> i | self.down[i] >> j) & 1)

    @property
    def maximal_elements(self) -> List[int]:
        return [a for a in range(self.size) if not self.up[a]]

    def is_chain(self) -> bool:
        return self.height == self.size

    def is_antichain(self) -> bool:
        return self.width == self.size

    def literal(self) -> str:
        return f"{self.size};" + ",".join(f"{i}<{j}" for i, j in self.covers)

    def record(self) -> CausetRecord:
        return CausetRecord(
            size=self.size,
            covers=[list(edge) for edge in self.covers],
            canonical=self.canonical_code.hex(),
            h=self.height,
            w=self.width,
            area=self.area,
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, Causet) and self.canonical_code == other.canonical_code

    def __lt__(self, other: "Causet") -> bool:
        return (self.size, self.canonical_code) < (other.size, other.canonical_code)

    def __hash__(self) -> int:
        return hash(self.canonical_code)

    def __repr__(self) -> str:
        return f"Causet({self.literal()!r})"


@dataclass(frozen=True)
class OffspringRecord:
    child: Causet
    multiplicity: int
    kind: OffspringKind


def parse_causet(text: str, cap: int = SIZE_CAP) -> Causet:
    """Parse ``<n>;<i><j>[,<i><j>]*`` (0-indexed cover edges) into a Causet."""
    head = _LITERAL_HEAD.match(text)
    if not head:
        raise CausetError(f"expected '<n>;' in {text!r}", position=0)
    size = int(head.group(1))
    if size < 1:
        raise CausetError("causet size must be at least 1", position=0)
    if size > cap:
        raise CausetError(f"size {size} exceeds cap {cap}", position=0)

    graph = nx.DiGraph()
    graph.add_nodes_from(range(size))
    edge_positions: Dict[Tuple[int, int], int] = {}
    pos = head.end()
    while pos < len(text):
        edge = _LITERAL_EDGE.match(text, pos)
        if not edge:
            raise CausetError(f"malformed cover edge in {text!r}", position=pos)
        i, j = int(edge.group(1)), int(edge.group(2))
        for value, offset in ((i, edge.start(1)), (j, edge.start(2))):
            if value >= size:
                raise CausetError(f"element {value} out of range for size {size}", position=offset)
        edge_positions.setdefault((i, j), pos)
        graph.add_edge(i, j)
        pos = edge.end()
        if pos < len(text):
            if text[pos] != ",":
                raise CausetError(f"expected ',' in {text!r}", position=pos)
            pos += 1
            if pos == len(text):
                raise CausetError("dangling ','", position=pos - 1)

    if not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        first = min(edge_positions[(u, v)] for u, v in cycle)
        raise CausetError(f"cover edges contain a cycle {cycle}", position=first)

    closure = nx.transitive_closure_dag(graph)
    down = [0] * size
    for i, j in closure.edges():
        down[j] |= 1 << i
    return Causet(size, down)


def canonicalize(c: Causet) -> bytes:
    return c.canonical_code


def canonical_form(c: Causet) -> Causet:
    """The representative of c's isomorphism class that the enumeration stores."""
    return Causet.from_code(c.canonical_code)


def chain(n: int) -> Causet:
    return Causet(n, [(1 << j) - 1 for j in range(n)])


def antichain(n: int) -> Causet:
    return Causet(n, [0] * n)


def height(c: Causet) -> int:
    return c.height


def width(c: Causet) -> int:
    return c.width


def area(c: Causet) -> int:
    return c.area


def antichain_masks(c: Causet) -> List[int]:
    """Every antichain of c as a bitmask, the empty one included."""
    comparable = [c.down[v] | c.up[v] for v in range(c.size)]
    masks = [0]

    def grow(start: int, current: int, blocked: int) -> None:
        for v in range(start, c.size):
            if blocked >> v & 1:
                continue
            mask = current | 1 << v
            masks.append(mask)
            grow(v + 1, mask, blocked | comparable[v])

    grow(0, 0, 0)
    return masks


def antichains(c: Causet) -> List[Tuple[int, ...]]:
    subsets = [tuple(_bits(mask)) for mask in antichain_masks(c)]
    return sorted(subsets, key=lambda a: (len(a), a))


def _down_closure(c: Causet, mask: int) -> int:
    closure = mask
    for i in _bits(mask):
        closure |= c.down[i]
    return closure


def extend_mask(c: Causet, mask: int) -> Causet:
    return Causet(c.size + 1, c.down + (_down_closure(c, mask),))


def extend(c: Causet, a: Iterable[int]) -> Causet:
    """Adjoin a new maximal element above exactly the down-closure of antichain a."""
    mask = 0
    for i in a:
        if not 0 <= i < c.size:
            raise CausetError(f"element {i} out of range for size {c.size}")
        mask |= 1 << i
    for i in _bits(mask):
        if (c.down[i] | c.up[i]) & mask:
            raise CausetError(f"{sorted(_bits(mask))} is not an antichain of {c.literal()}")
    return extend_mask(c, mask)


def classify(parent: Causet, child: Causet) -> OffspringKind:
    delta = (child.height - parent.height, child.width - parent.width)
    if delta == (1, 0):
        return OffspringKind.HEIGHT
    if delta == (0, 1):
        return OffspringKind.WIDTH
    if delta == (0, 0):
        return OffspringKind.MILD
    raise OffspringInvariantError(f"{parent.literal()} -> {child.literal()} changes (h, w) by {delta}")


def offspring(c: Causet, cap: int = SIZE_CAP) -> List[OffspringRecord]:
    """One record per isomorphism class of c extended by a maximal element, in canonical order."""
    if c.size + 1 > cap:
        raise CausetError(f"offspring of size {c.size + 1} exceed cap {cap}")
    counts: Dict[bytes, int] = {}
    for mask in antichain_masks(c):
        code = extend_mask(c, mask).canonical_code
        counts[code] = counts.get(code, 0) + 1

    records = []
    for code in sorted(counts):
        child = Causet.from_code(code)
        records.append(OffspringRecord(child=child, multiplicity=counts[code], kind=classify(c, child)))
    return records


def remove_element(y: Causet, a: int) -> Causet:
    keep = [i for i in range(y.size) if i != a]
    index = {old: new for new, old in enumerate(keep)}
    down = []
    for old in keep:
        mask = 0
        for i in _bits(y.down[old]):
            mask |= 1 << index[i]
        down.append(mask)
    return Causet(len(keep), down)


def producers(y: Causet) -> List[Causet]:
    """Distinct isomorphism classes of y minus one maximal element."""
    if y.size < 2:
        raise CausetError("the single point has no producers")
    codes = {remove_element(y, a).canonical_code for a in y.maximal_elements}
    return [Causet.from_code(code) for code in sorted(codes)]


def maximal_chains(y: Causet) -> List[Tuple[int, ...]]:
    """Cover paths from a minimal to a maximal element, bottom first."""
    cover_up = _up_masks(y.size, y.cover_down)
    chains: List[Tuple[int, ...]] = []

    def climb(path: Tuple[int, ...]) -> None:
        top = path[-1]
        if not cover_up[top]:
            chains.append(path)
            return
        for nxt in _bits(cover_up[top]):
            climb(path + (nxt,))

    for bottom in range(y.size):
        if not y.down[bottom]:
            climb((bottom,))
    return sorted(chains)


def chain_equivalence_classes(y: Causet) -> List[List[Tuple[int, ...]]]:
    """
    Maximal chains grouped by the isomorphism class of y with the chain's top removed.
    Grouping by a key makes the relation an equivalence by construction.
    """
    classes: Dict[bytes, List[Tuple[int, ...]]] = {}
    for c in maximal_chains(y):
        key = remove_element(y, c[-1]).canonical_code
        classes.setdefault(key, []).append(c)
    return [classes[key] for key in sorted(classes)]
