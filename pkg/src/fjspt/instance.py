"""Problem data model and random instance generation.

An instance of the transport-aware flexible job-shop problem consists of
jobs (ordered chains of operations, each processable on a subset of
machines with machine-dependent processing times), a fleet of vehicles,
and a symmetric travel-time matrix over the depot and the machines.
Location index 0 is the load/unload depot where raw products and idle
vehicles start; machine k occupies location k + 1.

All times are positive integers so that schedules and bounds can be
compared exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

# Sampling ranges for the synthetic generator: per-operation mean
# processing time and per-pair mean travel time.
OP_MEAN_RANGE = (1, 30)
TRAVEL_MEAN_RANGE = (1, 20)


class InstanceError(ValueError):
    """Raised when instance data violates the format or an invariant."""


@dataclass(eq=True)
class Instance:
    """Immutable description of one scheduling problem.

    jobs[i][j] maps 0-based machine index -> integer processing time.
    travel is an (m+1) x (m+1) tuple-of-tuples; row/column 0 is the depot.
    """

    name: str
    n: int
    m: int
    v: int
    jobs: tuple
    travel: tuple

    # Derived lookups, excluded from equality.
    total_ops: int = field(init=False, compare=False, repr=False, default=0)
    op_ids: tuple = field(init=False, compare=False, repr=False, default=())
    op_offsets: tuple = field(init=False, compare=False, repr=False, default=())

    def __post_init__(self):
        self.validate()
        ids = []
        offsets = []
        count = 0
        for i, ops in enumerate(self.jobs):
            offsets.append(count)
            for j in range(len(ops)):
                ids.append((i, j))
            count += len(ops)
        self.total_ops = count
        self.op_ids = tuple(ids)
        self.op_offsets = tuple(offsets)

    def validate(self):
        if self.n < 1 or self.m < 1 or self.v < 1:
            raise InstanceError(
                f"n, m, v must all be >= 1 (got n={self.n}, m={self.m}, v={self.v})")
        if len(self.jobs) != self.n:
            raise InstanceError(f"jobs has {len(self.jobs)} entries, expected n={self.n}")
        total = 0
        for i, ops in enumerate(self.jobs):
            if len(ops) == 0:
                raise InstanceError(f"jobs[{i}]: job must contain at least one operation")
            for j, times in enumerate(ops):
                if len(times) == 0:
                    raise InstanceError(
                        f"jobs[{i}][{j}]: compatible machine set must be nonempty")
                for k, t in times.items():
                    if not (0 <= k < self.m):
                        raise InstanceError(
                            f"jobs[{i}][{j}]: machine index {k + 1} outside 1..{self.m}")
                    if not isinstance(t, int) or t <= 0:
                        raise InstanceError(
                            f"jobs[{i}][{j}]: processing time on machine {k + 1} "
                            f"must be a positive integer (got {t!r})")
                total += 1
        if total < 1:
            raise InstanceError("instance must contain at least one operation")
        size = self.m + 1
        if len(self.travel) != size or any(len(row) != size for row in self.travel):
            raise InstanceError(
                f"travel must be ({size})x({size}) including the depot row/column")
        for a in range(size):
            if self.travel[a][a] != 0:
                raise InstanceError(f"travel[{a}][{a}] must be 0")
            for b in range(size):
                t = self.travel[a][b]
                if not isinstance(t, int) or t < 0:
                    raise InstanceError(
                        f"travel[{a}][{b}] must be a nonnegative integer (got {t!r})")
                if self.travel[a][b] != self.travel[b][a]:
                    raise InstanceError(
                        f"travel must be symmetric: travel[{a}][{b}] != travel[{b}][{a}]")

    # -- Convenience lookups ------------------------------------------------

    def op_index(self, i, j):
        """Global id of operation j of job i (job-major order)."""
        return self.op_offsets[i] + j

    def num_ops(self, i):
        return len(self.jobs[i])

    def machines_for(self, i, j):
        """Sorted compatible machine indices for operation (i, j)."""
        return sorted(self.jobs[i][j].keys())

    def proc_time(self, i, j, k):
        return self.jobs[i][j][k]

    def mean_proc_time(self, i, j):
        """Exact mean processing time over the compatible machine set."""
        times = self.jobs[i][j]
        return Fraction(sum(times.values()), len(times))

    def max_time(self):
        """Largest processing or travel time; used as a feature scale."""
        tmax = max(max(times.values()) for ops in self.jobs for times in ops)
        trav = max(max(row) for row in self.travel)
        return max(tmax, trav)


def _jittered_times(rng, mean_lo, mean_hi, count):
    """Draw an integer mean in [mean_lo, mean_hi] and `count` integer
    samples in [round(0.8*mean), round(1.2*mean)], clamped to >= 1.

    Returns (mean, list of samples). The synthetic generator uses this for
    both processing and travel times; tests probe the marginals through it.
    """
    mean = int(rng.integers(mean_lo, mean_hi + 1))
    lo = max(1, round(0.8 * mean))
    hi = max(lo, round(1.2 * mean))
    values = [int(rng.integers(lo, hi + 1)) for _ in range(count)]
    return mean, values


def generate_instance(n, m, v, seed, name=None):
    """Sample a random instance; deterministic in `seed`.

    Per job the operation count is uniform in [round(0.8m), round(1.2m)]
    (at least 1); each operation gets a uniform-size random subset of
    machines and processing times jittered +/-20% around a per-operation
    mean from U(1, 30); travel times are jittered around per-pair means
    from U(1, 20), symmetric with a zero diagonal.
    """
    if n < 1 or m < 1 or v < 1:
        raise InstanceError(f"n, m, v must all be >= 1 (got n={n}, m={m}, v={v})")
    rng = np.random.default_rng(seed)
    ni_lo = max(1, round(0.8 * m))
    ni_hi = max(ni_lo, round(1.2 * m))
    jobs = []
    for _ in range(n):
        n_i = int(rng.integers(ni_lo, ni_hi + 1))
        ops = []
        for _ in range(n_i):
            n_compat = int(rng.integers(1, m + 1))
            machines = sorted(int(k) for k in rng.choice(m, size=n_compat, replace=False))
            _, times = _jittered_times(rng, *OP_MEAN_RANGE, count=n_compat)
            ops.append({k: t for k, t in zip(machines, times)})
        jobs.append(tuple(ops))
    size = m + 1
    travel = [[0] * size for _ in range(size)]
    for a in range(size):
        for b in range(a + 1, size):
            _, (t,) = _jittered_times(rng, *TRAVEL_MEAN_RANGE, count=1)
            travel[a][b] = t
            travel[b][a] = t
    if name is None:
        name = f"fjspt_n{n}_m{m}_v{v}_s{seed}"
    return Instance(name=name, n=n, m=m, v=v, jobs=tuple(jobs),
                    travel=tuple(tuple(row) for row in travel))


# -- File format ------------------------------------------------------------
#
# UTF-8 JSON object with exactly the keys
#   name   : string
#   n,m,v  : integers
#   jobs   : array (per job) of arrays (per operation) of [machine, time]
#            pairs with 1-based machine indices
#   travel : (m+1) x (m+1) array of integers, index 0 = depot
#
# Unknown keys are rejected.

_REQUIRED_KEYS = ("name", "n", "m", "v", "jobs", "travel")


def write_instance(inst, path):
    """Serialize `inst` as JSON; load_instance inverts this exactly."""
    obj = {
        "name": inst.name,
        "n": inst.n,
        "m": inst.m,
        "v": inst.v,
        "jobs": [[[[k + 1, times[k]] for k in sorted(times)] for times in ops]
                 for ops in inst.jobs],
        "travel": [list(row) for row in inst.travel],
    }
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def load_instance(path):
    """Parse and validate an instance file.

    Raises InstanceError with a line/field diagnostic on malformed JSON,
    schema violations, or invariant violations.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InstanceError(
            f"{path}: JSON parse error at line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(obj, dict):
        raise InstanceError(f"{path}: top-level value must be an object")
    unknown = set(obj) - set(_REQUIRED_KEYS)
    if unknown:
        raise InstanceError(f"{path}: unknown keys {sorted(unknown)}")
    missing = set(_REQUIRED_KEYS) - set(obj)
    if missing:
        raise InstanceError(f"{path}: missing keys {sorted(missing)}")
    if not isinstance(obj["name"], str):
        raise InstanceError(f"{path}: field 'name' must be a string")
    for key in ("n", "m", "v"):
        if not isinstance(obj[key], int):
            raise InstanceError(f"{path}: field '{key}' must be an integer")
    m = obj["m"]
    if not isinstance(obj["jobs"], list):
        raise InstanceError(f"{path}: field 'jobs' must be an array")
    jobs = []
    for i, ops in enumerate(obj["jobs"]):
        if not isinstance(ops, list):
            raise InstanceError(f"{path}: jobs[{i}] must be an array of operations")
        parsed_ops = []
        for j, pairs in enumerate(ops):
            if not isinstance(pairs, list):
                raise InstanceError(
                    f"{path}: jobs[{i}][{j}] must be an array of [machine, time] pairs")
            times = {}
            for pair in pairs:
                if (not isinstance(pair, list) or len(pair) != 2
                        or not all(isinstance(x, int) for x in pair)):
                    raise InstanceError(
                        f"{path}: jobs[{i}][{j}]: each entry must be an "
                        f"integer [machine, time] pair (got {pair!r})")
                k1, t = pair
                if k1 in {k + 1 for k in times}:
                    raise InstanceError(
                        f"{path}: jobs[{i}][{j}]: duplicate machine index {k1}")
                times[k1 - 1] = t
            parsed_ops.append(times)
        jobs.append(tuple(parsed_ops))
    if not isinstance(obj["travel"], list):
        raise InstanceError(f"{path}: field 'travel' must be an array")
    travel = []
    for a, row in enumerate(obj["travel"]):
        if not isinstance(row, list) or not all(isinstance(x, int) for x in row):
            raise InstanceError(f"{path}: travel[{a}] must be an array of integers")
        travel.append(tuple(row))
    try:
        return Instance(name=obj["name"], n=obj["n"], m=m, v=obj["v"],
                        jobs=tuple(jobs), travel=tuple(travel))
    except InstanceError as e:
        raise InstanceError(f"{path}: {e}") from e
