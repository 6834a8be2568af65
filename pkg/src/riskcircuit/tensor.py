"""Dense multi-index probability tensors and their contraction.

Axes are labeled by wires: (system, occurrence) plus a direction.  An
"out" axis of one tensor contracts with the "in" axis of another carrying
the same wire label (Einstein summation over repeated indices).  A full
contraction of a closed circuit yields its probability.

A separate brute-force evaluator enumerates every joint assignment of
wire values; it shares the tensors but none of the contraction machinery,
so it serves as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .circuit import CircuitDoc, SystemId

NEG_TOL = 1e-12
DEFAULT_BUDGET = 1 << 26          # entries per intermediate
ORACLE_LIMIT = 10_000_000         # joint assignments


class DimensionMismatch(ValueError):
    pass


class PeakSizeExceeded(RuntimeError):
    pass


class TooLargeForOracle(RuntimeError):
    pass


WireKey = tuple[SystemId, int]


@dataclass(frozen=True)
class Axis:
    system: SystemId
    occurrence: int
    direction: str            # "in" | "out"
    size: int
    extended: bool = False    # carries a position grid alongside the base state

    @property
    def wire(self) -> WireKey:
        return (self.system, self.occurrence)

    def label(self) -> str:
        tag = "~" if self.extended else ""
        return f"{tag}{self.system}^{self.occurrence}:{self.direction}"


@dataclass
class OpTensor:
    axes: tuple[Axis, ...]
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != tuple(a.size for a in self.axes):
            raise DimensionMismatch(
                f"shape {self.values.shape} vs axes {[a.size for a in self.axes]}")

    def axis_index(self, wire: WireKey, direction: str) -> int:
        for i, a in enumerate(self.axes):
            if a.wire == wire and a.direction == direction:
                return i
        raise KeyError((wire, direction))

    def clipped(self) -> "OpTensor":
        """Zero out negatives within tolerance; anything worse is an error."""
        v = self.values
        if v.size and v.min() < -NEG_TOL:
            raise ValueError(f"tensor entry {v.min()} below -{NEG_TOL}")
        v = np.clip(v, 0.0, None)
        return OpTensor(self.axes, v)

    def to_dict(self) -> dict:
        return {
            "labels": [a.label() for a in self.axes],
            "shape": list(self.values.shape),
            "values": self.values.ravel().tolist(),
        }


def ones_effect(system: SystemId, occurrence: int, size: int,
                extended: bool = False) -> OpTensor:
    """The deterministic (ignore) effect: the all-ones covector."""
    return OpTensor((Axis(system, occurrence, "in", size, extended),), np.ones(size))


def state_vector(system: SystemId, occurrence: int, probs: np.ndarray) -> OpTensor:
    probs = np.asarray(probs, dtype=float)
    return OpTensor((Axis(system, occurrence, "out", probs.size),), probs)


def indicator_effect(system: SystemId, occurrence: int, mask: np.ndarray) -> OpTensor:
    mask = np.asarray(mask, dtype=float)
    return OpTensor((Axis(system, occurrence, "in", mask.size),), mask)


# ---------------------------------------------------------------------------
# Contraction planning and execution
# ---------------------------------------------------------------------------

@dataclass
class ContractionPlan:
    steps: list[tuple[int, int]]   # indices into the evolving tensor list
    peak_size: int


def _pair_wires(tensors: Sequence[OpTensor]) -> dict[WireKey, tuple[int, int]]:
    """wire -> (tensor with out axis, tensor with in axis); validates pairing."""
    outs: dict[WireKey, tuple[int, int]] = {}
    ins: dict[WireKey, tuple[int, int]] = {}
    for ti, t in enumerate(tensors):
        for ai, a in enumerate(t.axes):
            book = outs if a.direction == "out" else ins
            if a.wire in book:
                raise DimensionMismatch(f"wire {a.wire} has two {a.direction} ends")
            book[a.wire] = (ti, ai)
    pairs = {}
    for wire in set(outs) & set(ins):
        (to, ao), (ti_, ai_) = outs[wire], ins[wire]
        if tensors[to].axes[ao].size != tensors[ti_].axes[ai_].size:
            raise DimensionMismatch(
                f"wire {wire}: size {tensors[to].axes[ao].size} vs "
                f"{tensors[ti_].axes[ai_].size}")
        pairs[wire] = (to, ti_)
    return pairs


def plan_contraction(tensors: Sequence[OpTensor],
                     budget: int = DEFAULT_BUDGET) -> ContractionPlan:
    """Greedy smallest-intermediate-first pairwise plan.

    Ties break on the lexicographically smallest pair of sorted axis
    labels so plans are reproducible.  Disconnected components are merged
    by outer products at the end.
    """
    _pair_wires(tensors)  # validates pairing up front

    @dataclass
    class Node:
        outs: dict[WireKey, int]     # wire -> size
        ins: dict[WireKey, int]
        label: tuple

        @property
        def size(self) -> int:
            n = 1
            for s in self.outs.values():
                n *= s
            for s in self.ins.values():
                n *= s
            return n

    nodes: dict[int, Node] = {}
    for i, t in enumerate(tensors):
        nodes[i] = Node(
            {a.wire: a.size for a in t.axes if a.direction == "out"},
            {a.wire: a.size for a in t.axes if a.direction == "in"},
            tuple(sorted(a.label() for a in t.axes)),
        )

    steps: list[tuple[int, int]] = []
    peak = max((n.size for n in nodes.values()), default=1)
    next_id = len(tensors)

    def merged(i: int, j: int) -> Node:
        a, b = nodes[i], nodes[j]
        cut = (set(a.outs) & set(b.ins)) | (set(b.outs) & set(a.ins))
        outs = {w: s for w, s in {**a.outs, **b.outs}.items() if w not in cut}
        ins = {w: s for w, s in {**a.ins, **b.ins}.items() if w not in cut}
        return Node(outs, ins, tuple(sorted(a.label + b.label)))

    def connected(i: int, j: int) -> bool:
        a, b = nodes[i], nodes[j]
        return bool((set(a.outs) & set(b.ins)) | (set(b.outs) & set(a.ins)))

    for want_connected in (True, False):
        while True:
            keys = sorted(nodes)
            best = None
            for x in range(len(keys)):
                for y in range(x + 1, len(keys)):
                    i, j = keys[x], keys[y]
                    if connected(i, j) != want_connected:
                        continue
                    m = merged(i, j)
                    cand = (m.size, tuple(sorted((nodes[i].label, nodes[j].label))), i, j)
                    if best is None or cand < best:
                        best = cand
            if best is None:
                break
            size, _, i, j = best
            if size > budget:
                raise PeakSizeExceeded(f"intermediate of {size} entries exceeds {budget}")
            peak = max(peak, size)
            nodes[next_id] = merged(i, j)
            del nodes[i], nodes[j]
            steps.append((i, j))
            next_id += 1
        if len(nodes) <= 1:
            break
    return ContractionPlan(steps, peak)


def _contract_pair(a: OpTensor, b: OpTensor) -> OpTensor:
    shared = []
    for ai, ax in enumerate(a.axes):
        for bi, bx in enumerate(b.axes):
            if ax.wire == bx.wire and ax.direction != bx.direction:
                shared.append((ai, bi))
    if shared:
        a_idx = [p[0] for p in shared]
        b_idx = [p[1] for p in shared]
        values = np.tensordot(a.values, b.values, axes=(a_idx, b_idx))
    else:
        values = np.multiply.outer(a.values, b.values)
        a_idx, b_idx = [], []
    axes = tuple(ax for i, ax in enumerate(a.axes) if i not in a_idx) + \
        tuple(bx for i, bx in enumerate(b.axes) if i not in b_idx)
    return OpTensor(axes, values.reshape(tuple(ax.size for ax in axes)))


def contract(tensors: Sequence[OpTensor], budget: int = DEFAULT_BUDGET) -> OpTensor:
    """Contract every repeated wire; result keeps all unpaired axes.

    A closed circuit contracts to a scalar tensor (zero axes) holding its
    probability.
    """
    if not tensors:
        return OpTensor((), np.array(1.0))
    plan = plan_contraction(tensors, budget=budget)
    pool: dict[int, OpTensor] = dict(enumerate(tensors))
    next_id = len(tensors)
    for i, j in plan.steps:
        pool[next_id] = _contract_pair(pool.pop(i), pool.pop(j))
        next_id += 1
    (result,) = pool.values() if len(pool) == 1 else (None,)
    if result is None:
        raise RuntimeError("contraction did not reduce to a single tensor")
    return result


def scalar(t: OpTensor) -> float:
    if t.axes:
        raise ValueError(f"tensor still has free axes {[a.label() for a in t.axes]}")
    return float(t.values)


# ---------------------------------------------------------------------------
# Tensor conditions
# ---------------------------------------------------------------------------

@dataclass
class ConditionReport:
    status: str                     # "pass" | "fail" | "unchecked"
    saturated: bool = False
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "pass"


def check_conditions(t: OpTensor, gap_count: int = 0, tol: float = 1e-9) -> ConditionReport:
    """Probability conditions on an operation tensor.

    Entries must lie in [0,1]; contracting every out axis with the all-ones
    vector must give at most 1 for every assignment of in indices, with
    equality exactly for deterministic operations.  For a single-gap comb
    the later slot is closed with ones first and the reduced tensor must
    itself satisfy the gap-0 condition.  Two or more gaps are reported
    unchecked.
    """
    failures: list[str] = []
    v = t.values
    if v.size and (v.min() < -NEG_TOL or v.max() > 1 + 1e-9):
        failures.append(f"EntryRange: values span [{v.min()}, {v.max()}]")
    if gap_count >= 2:
        return ConditionReport("unchecked", failures=failures)

    work = t
    if gap_count == 1:
        later = _later_slot_outs(t)
        for ax in later:
            i = work.axes.index(ax)
            work = OpTensor(work.axes[:i] + work.axes[i + 1:], work.values.sum(axis=i))
    out_axes = [i for i, a in enumerate(work.axes) if a.direction == "out"]
    bound = work.values.sum(axis=tuple(out_axes)) if out_axes else work.values
    if np.any(bound > 1 + tol):
        failures.append(f"OnesBound: max {bound.max()} exceeds 1")
    saturated = bool(np.all(np.abs(bound - 1) <= tol))
    return ConditionReport("fail" if failures else "pass", saturated, failures)


def _later_slot_outs(t: OpTensor) -> list[Axis]:
    """Out axes belonging to the latest stay of any multi-stay system."""
    by_system: dict[SystemId, list[Axis]] = {}
    for a in t.axes:
        if a.direction == "out":
            by_system.setdefault(a.system, []).append(a)
    later = []
    for axes in by_system.values():
        if len(axes) > 1:
            later.append(max(axes, key=lambda a: a.occurrence))
    if not later:
        # single out axis per system: treat the globally latest as the later slot
        all_out = [a for a in t.axes if a.direction == "out"]
        if all_out:
            later.append(max(all_out, key=lambda a: a.occurrence))
    return later


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def brute_force_prob(doc: CircuitDoc, tensors: Mapping[str, OpTensor],
                     closures: Mapping[tuple, np.ndarray],
                     limit: int = ORACLE_LIMIT) -> float:
    """Enumerate every assignment of hidden values to every wire.

    ``tensors`` maps box id to the box tensor; ``closures`` maps
    (system, occurrence, end) to the closure weight vector.  The sum over
    assignments of the product of box entries and closure weights is the
    circuit probability.  Entirely independent of the contraction planner.
    """
    wires: dict[WireKey, int] = {}
    extended: dict[WireKey, bool] = {}
    for t in tensors.values():
        for a in t.axes:
            prev = wires.get(a.wire)
            if prev is not None and prev != a.size:
                raise DimensionMismatch(f"wire {a.wire} has sizes {prev} and {a.size}")
            wires[a.wire] = a.size
            extended[a.wire] = a.extended
    for (system, occ, _end), vec in closures.items():
        key = (system, occ)
        prev = wires.get(key)
        if prev is not None and prev != vec.size:
            raise DimensionMismatch(f"closure on {key} has size {vec.size}, wire {prev}")
        wires.setdefault(key, vec.size)

    order = sorted(wires, key=lambda k: (str(k[0]), k[1]))
    total = 1
    for k in order:
        total *= wires[k]
    if total > limit:
        raise TooLargeForOracle(f"{total} joint assignments exceed {limit}")
    if total == 0:
        return 0.0

    # value of wire k for global assignment g: (g // stride[k]) % size[k]
    strides: dict[WireKey, int] = {}
    acc = 1
    for k in reversed(order):
        strides[k] = acc
        acc *= wires[k]
    g = np.arange(total, dtype=np.int64)
    value = {k: (g // strides[k]) % wires[k] for k in order}

    product = np.ones(total)
    for t in tensors.values():
        flat_index = np.zeros(total, dtype=np.int64)
        for a in t.axes:
            flat_index = flat_index * a.size + value[a.wire]
        product *= t.values.ravel()[flat_index]
    for (system, occ, _end), vec in closures.items():
        product *= np.asarray(vec, dtype=float)[value[(system, occ)]]
    return float(product.sum())
