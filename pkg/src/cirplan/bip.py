"""Exact 0-1 linear programs.

A :class:`BinaryProgram` holds named binary variables, a linear objective to
maximize and linear constraints, all with exact rational coefficients.
:func:`solve_exact` is a depth-first branch-and-bound with bound propagation
(no LP relaxation); :func:`solve_bruteforce` enumerates every assignment and
serves as the verification oracle; :func:`export_lp` writes the CPLEX LP text
format read by HiGHS, CBC, Gurobi, COPT and friends.
"""

from __future__ import annotations

import enum
import math
import re
import time
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import BruteForceLimitError, ModelError

Number = Union[int, Fraction, float, str]

SENSES = ("<=", ">=", "==")


def as_fraction(value: Number) -> Fraction:
    if isinstance(value, float) and not math.isfinite(value):
        raise ModelError(f"non-finite coefficient {value}")
    if isinstance(value, (str, Rational, float)):
        return Fraction(value)
    raise ModelError(f"unsupported coefficient type {type(value).__name__}")


@dataclass(frozen=True)
class LinearConstraint:
    coeffs: tuple[tuple[int, Fraction], ...]
    sense: str
    rhs: Fraction
    name: str

    def activity(self, values: Sequence[int]) -> Fraction:
        return sum((a * values[j] for j, a in self.coeffs), Fraction(0))

    def satisfied(self, values: Sequence[int]) -> bool:
        act = self.activity(values)
        if self.sense == "<=":
            return act <= self.rhs
        if self.sense == ">=":
            return act >= self.rhs
        return act == self.rhs


class BinaryProgram:
    """A maximization over binary variables.

    ``priority`` is a per-variable branching class: the solver branches on
    higher classes first. Models mark their decision variables with a high
    priority so auxiliary indicators are settled by propagation.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[str] = []
        self.objective: list[Fraction] = []
        self.priority: list[int] = []
        self.constraints: list[LinearConstraint] = []
        self._index: dict[str, int] = {}

    def __repr__(self) -> str:
        return f"BinaryProgram({self.name!r}, vars={self.n_vars}, constraints={len(self.constraints)})"

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def add_var(self, name: str, objective: Number = 0, priority: int = 0) -> int:
        if name in self._index:
            raise ModelError(f"duplicate variable {name!r}")
        idx = len(self.variables)
        self._index[name] = idx
        self.variables.append(name)
        self.objective.append(as_fraction(objective))
        self.priority.append(priority)
        return idx

    def var(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def add_constraint(
        self,
        coeffs: Mapping[int, Number] | Iterable[tuple[int, Number]],
        sense: str,
        rhs: Number,
        name: str | None = None,
    ) -> LinearConstraint:
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        merged: dict[int, Fraction] = {}
        for j, a in items:
            if not 0 <= j < self.n_vars:
                raise ModelError(f"constraint references undeclared variable index {j}")
            merged[j] = merged.get(j, Fraction(0)) + as_fraction(a)
        terms = tuple((j, a) for j, a in merged.items() if a != 0)
        con = LinearConstraint(terms, sense, as_fraction(rhs), name or f"c{len(self.constraints)}")
        self.constraints.append(con)
        return con

    def evaluate(self, values: Sequence[int]) -> Fraction:
        return sum((c * v for c, v in zip(self.objective, values)), Fraction(0))

    def violated(self, values: Sequence[int]) -> list[str]:
        if len(values) != self.n_vars or any(v not in (0, 1) for v in values):
            raise ModelError("assignment must give 0/1 to every variable")
        return [c.name for c in self.constraints if not c.satisfied(values)]

    def is_feasible(self, values: Sequence[int]) -> bool:
        return not self.violated(values)


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"  # budget exhausted with an unproven incumbent
    INFEASIBLE = "infeasible"
    NO_SOLUTION = "no_solution"  # budget exhausted before any incumbent


@dataclass(frozen=True)
class SolveLimits:
    node_budget: int = 10**7
    time_budget: float = 60.0


@dataclass(frozen=True)
class Assignment:
    status: Status
    values: tuple[int, ...] | None
    objective: Fraction | None
    names: tuple[str, ...] = field(repr=False, default=())
    nodes: int = 0
    incumbents: tuple[Fraction, ...] = field(repr=False, default=())

    @property
    def proven(self) -> bool:
        return self.status in (Status.OPTIMAL, Status.INFEASIBLE)

    @property
    def has_solution(self) -> bool:
        return self.values is not None

    def __getitem__(self, name: str) -> int:
        if self.values is None:
            raise KeyError(name)
        return self.values[self.names.index(name)]

    def as_dict(self) -> dict[str, int]:
        if self.values is None:
            return {}
        return dict(zip(self.names, self.values))


def _lcm_denominators(values: Iterable[Fraction]) -> int:
    out = 1
    for v in values:
        out = math.lcm(out, v.denominator)
    return out


def _integer_rows(program: BinaryProgram) -> list[tuple[list[tuple[int, int]], int]]:
    """Each constraint as one or two integer ``<=`` rows."""
    rows = []
    for con in program.constraints:
        scale = _lcm_denominators([a for _, a in con.coeffs] + [con.rhs])
        terms = [(j, int(a * scale)) for j, a in con.coeffs]
        rhs = int(con.rhs * scale)
        if con.sense in ("<=", "=="):
            rows.append((terms, rhs))
        if con.sense in (">=", "=="):
            rows.append(([(j, -a) for j, a in terms], -rhs))
    return rows


class _Search:
    def __init__(self, program: BinaryProgram):
        n = program.n_vars
        self.n = n
        self.scale = _lcm_denominators(program.objective)
        self.cobj = [int(c * self.scale) for c in program.objective]
        self.rows: list[list[tuple[int, int, int]]] = []
        self.rhs: list[int] = []
        self.minact: list[int] = []
        self.var_rows: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        self.trivially_infeasible = False
        for terms, rhs in _integer_rows(program):
            if not terms:
                if rhs < 0:
                    self.trivially_infeasible = True
                continue
            r = len(self.rows)
            # descending |a| lets the implication scan stop early
            self.rows.append(sorted(((j, a, abs(a)) for j, a in terms), key=lambda t: (-t[2], t[0])))
            self.rhs.append(rhs)
            self.minact.append(sum(a for _, a in terms if a < 0))
            for j, a in terms:
                self.var_rows[j].append((r, a))
        self.val = [-1] * n
        self.ub = sum(c for c in self.cobj if c > 0)
        self.trail: list[int] = []

    def assign(self, j0: int, v0: int) -> bool:
        val, minact, rhs, rows, cobj = self.val, self.minact, self.rhs, self.rows, self.cobj
        queue = [(j0, v0)]
        while queue:
            j, v = queue.pop()
            cur = val[j]
            if cur != -1:
                if cur != v:
                    return False
                continue
            val[j] = v
            self.trail.append(j)
            c = cobj[j]
            if c > 0 and v == 0:
                self.ub -= c
            elif c < 0 and v == 1:
                self.ub += c
            conflict = False
            # every row of j is updated even after a conflict so undo stays exact
            for r, a in self.var_rows[j]:
                if a > 0:
                    if v == 0:
                        continue
                    minact[r] += a
                else:
                    if v == 1:
                        continue
                    minact[r] -= a
                slack = rhs[r] - minact[r]
                if slack < 0:
                    conflict = True
                if conflict:
                    continue
                for k, ak, absak in rows[r]:
                    if absak <= slack:
                        break
                    if val[k] == -1:
                        queue.append((k, 0 if ak > 0 else 1))
            if conflict:
                return False
        return True

    def propagate_root(self) -> bool:
        if self.trivially_infeasible:
            return False
        for r, row in enumerate(self.rows):
            slack = self.rhs[r] - self.minact[r]
            if slack < 0:
                return False
            for k, ak, absak in row:
                if absak <= slack:
                    break
                if self.val[k] == -1 and not self.assign(k, 0 if ak > 0 else 1):
                    return False
        return True

    def undo(self, length: int) -> None:
        val, minact, cobj, trail = self.val, self.minact, self.cobj, self.trail
        while len(trail) > length:
            j = trail.pop()
            v = val[j]
            c = cobj[j]
            if c > 0 and v == 0:
                self.ub += c
            elif c < 0 and v == 1:
                self.ub -= c
            for r, a in self.var_rows[j]:
                if a > 0 and v == 1:
                    minact[r] -= a
                elif a < 0 and v == 0:
                    minact[r] += a
            val[j] = -1


def solve_exact(
    program: BinaryProgram,
    limits: SolveLimits | None = None,
    initial: Sequence[int] | None = None,
) -> Assignment:
    """Depth-first branch-and-bound over the binary variables.

    Variables are branched in a fixed order (priority class, then largest
    ``|objective coefficient|``, then index), trying the objective-preferred
    value first (1 unless the coefficient is negative). An incumbent is only
    replaced by a strictly better one, so among several optima the first in
    that order is returned; the result is fully deterministic.

    ``initial`` optionally seeds the incumbent with a feasible assignment.
    """
    limits = limits or SolveLimits()
    names = tuple(program.variables)
    s = _Search(program)
    n = s.n
    order = sorted(range(n), key=lambda j: (-program.priority[j], -abs(program.objective[j]), j))
    pref = [0 if c < 0 else 1 for c in s.cobj]

    best: list[int] | None = None
    best_obj = 0
    incumbents: list[Fraction] = []
    if initial is not None:
        initial = [int(v) for v in initial]
        if program.is_feasible(initial):
            best = initial
            best_obj = sum(c * v for c, v in zip(s.cobj, initial))
            incumbents.append(Fraction(best_obj, s.scale))

    start = time.monotonic()
    nodes = 0
    exhausted = True
    ok = s.propagate_root()
    stack: list[list] = []  # [order position, var, trail length, second branch tried]

    while True:
        if ok and (best is None or s.ub > best_obj):
            p = stack[-1][0] + 1 if stack else 0
            while p < n and s.val[order[p]] != -1:
                p += 1
            if p == n:
                best = list(s.val)
                best_obj = s.ub
                incumbents.append(Fraction(best_obj, s.scale))
                ok = False
                continue
            nodes += 1
            if nodes > limits.node_budget or (
                nodes % 512 == 0 and time.monotonic() - start > limits.time_budget
            ):
                exhausted = False
                break
            j = order[p]
            stack.append([p, j, len(s.trail), False])
            ok = s.assign(j, pref[j])
            continue
        while stack:
            frame = stack[-1]
            s.undo(frame[2])
            if not frame[3]:
                frame[3] = True
                nodes += 1
                ok = s.assign(frame[1], 1 - pref[frame[1]])
                break
            stack.pop()
        else:
            break

    if best is None:
        status = Status.INFEASIBLE if exhausted else Status.NO_SOLUTION
        return Assignment(status, None, None, names, nodes, ())
    status = Status.OPTIMAL if exhausted else Status.FEASIBLE
    return Assignment(status, tuple(best), Fraction(best_obj, s.scale), names, nodes, tuple(incumbents))


BRUTEFORCE_CAP = 20


def solve_bruteforce(program: BinaryProgram, cap: int = BRUTEFORCE_CAP) -> Assignment:
    """Global optimum by full enumeration.

    Ties resolve to the lexicographically smallest assignment (variables in
    declaration order, 0 < 1).
    """
    n = program.n_vars
    if n > cap:
        raise BruteForceLimitError(f"{n} variables exceed brute-force cap {cap}")
    names = tuple(program.variables)
    scale = _lcm_denominators(program.objective)
    cobj = [int(c * scale) for c in program.objective]
    rows = _integer_rows(program)
    if n == 0:
        if all(rhs >= 0 for _, rhs in rows):
            return Assignment(Status.OPTIMAL, (), Fraction(0), names, 1, (Fraction(0),))
        return Assignment(Status.INFEASIBLE, None, None, names, 1, ())

    magnitude = max([abs(c) for c in cobj] + [abs(a) for t, _ in rows for _, a in t] + [1])
    if magnitude * n < 2**62:
        A = np.zeros((len(rows), n), dtype=np.int64)
        b = np.array([rhs for _, rhs in rows], dtype=np.int64)
        for r, (terms, _) in enumerate(rows):
            for j, a in terms:
                A[r, j] = a
        c = np.array(cobj, dtype=np.int64)
        dtype = np.int64
    else:
        A = np.zeros((len(rows), n), dtype=object)
        b = np.array([rhs for _, rhs in rows], dtype=object)
        for r, (terms, _) in enumerate(rows):
            for j, a in terms:
                A[r, j] = a
        c = np.array(cobj, dtype=object)
        dtype = object

    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)  # variable 0 is the most significant bit
    chunk = 1 << min(n, 16)
    best_idx = None
    best_obj = None
    for lo in range(0, 1 << n, chunk):
        ids = np.arange(lo, min(lo + chunk, 1 << n), dtype=np.int64)
        X = ((ids[:, None] >> shifts[None, :]) & 1).astype(dtype)
        feasible = np.all(X @ A.T <= b, axis=1) if len(rows) else np.ones(len(ids), dtype=bool)
        if not feasible.any():
            continue
        obj = X @ c
        cand = np.flatnonzero(feasible)
        vals = obj[cand]
        top = vals.max()
        first = cand[int(np.flatnonzero(vals == top)[0])]
        if best_obj is None or top > best_obj:
            best_obj = top
            best_idx = int(ids[first])
    if best_idx is None:
        return Assignment(Status.INFEASIBLE, None, None, names, 1 << n, ())
    values = tuple((best_idx >> (n - 1 - j)) & 1 for j in range(n))
    objective = Fraction(int(best_obj), scale)
    return Assignment(Status.OPTIMAL, values, objective, names, 1 << n, (objective,))


# -- LP text format ---------------------------------------------------------
#
# Coefficients are written as integers when integral, otherwise as decimals
# with 15 significant digits. Reading the text back with :func:`read_lp`
# recovers the program up to that decimal rendering (integral and
# terminating-decimal coefficients round-trip exactly).

_LP_NAME_OK = re.compile(r"[^A-Za-z0-9_!\"#$%&()/,.;?@`'{}|~]")


def _lp_name(name: str, used: set[str]) -> str:
    out = _LP_NAME_OK.sub("_", name) or "v"
    if out[0].isdigit() or out[0] in ".eE":
        out = "v_" + out
    base, k = out, 1
    while out in used:
        out = f"{base}_{k}"
        k += 1
    used.add(out)
    return out


def format_coefficient(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return format(float(value), ".15g")


def _lp_terms(terms: Sequence[tuple[str, Fraction]], per_line: int = 8) -> str:
    parts = []
    for idx, (name, a) in enumerate(terms):
        sign = "-" if a < 0 else "+"
        if idx == 0 and sign == "+":
            parts.append(f"{format_coefficient(abs(a))} {name}")
        else:
            parts.append(f"{sign} {format_coefficient(abs(a))} {name}")
    lines = [" ".join(parts[i : i + per_line]) for i in range(0, len(parts), per_line)]
    return "\n   ".join(lines)


def export_lp(program: BinaryProgram) -> str:
    used: set[str] = set()
    vnames = [_lp_name(v, used) for v in program.variables]
    if not vnames:
        vnames = [_lp_name("dummy", used)]
    cused: set[str] = set(used)
    out = [f"\\ Problem: {program.name}", "Maximize"]
    obj = [(vnames[j], c) for j, c in enumerate(program.objective) if c != 0]
    out.append(" obj: " + (_lp_terms(obj) if obj else f"0 {vnames[0]}"))
    out.append("Subject To")
    for con in program.constraints:
        cname = _lp_name(con.name, cused)
        terms = [(vnames[j], a) for j, a in con.coeffs]
        if not terms:
            lhs_zero_ok = {"<=": 0 <= con.rhs, ">=": 0 >= con.rhs, "==": con.rhs == 0}[con.sense]
            if lhs_zero_ok:
                continue
            terms_txt = f"0 {vnames[0]}"
        else:
            terms_txt = _lp_terms(terms)
        sense = "=" if con.sense == "==" else con.sense
        out.append(f" {cname}: {terms_txt} {sense} {format_coefficient(con.rhs)}")
    out.append("Binary")
    for i in range(0, len(vnames), 10):
        out.append(" " + " ".join(vnames[i : i + 10]))
    out.append("End")
    return "\n".join(out) + "\n"


_TERM = re.compile(r"([+-]?)\s*([0-9.eE+-]+)\s+([^\s+-][^\s]*)")


def _parse_terms(text: str) -> list[tuple[str, Fraction]]:
    terms = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TERM.match(text, pos)
        if not m:
            raise ModelError(f"cannot parse LP terms near {text[pos:pos + 30]!r}")
        sign, coef, name = m.groups()
        value = Fraction(coef)
        terms.append((name, -value if sign == "-" else value))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return terms


def read_lp(text: str) -> BinaryProgram:
    """Parse the subset of LP format written by :func:`export_lp`."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("\\")]
    sections: dict[str, list[str]] = {}
    current = None
    for ln in lines:
        key = ln.strip().lower()
        if key in ("maximize", "subject to", "binary", "end"):
            current = key
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ModelError(f"content before any section: {ln!r}")
        if ln.startswith("   ") and sections[current]:
            sections[current][-1] += " " + ln.strip()
        else:
            sections[current].append(ln.strip())
    prog = BinaryProgram()
    for chunk in sections.get("binary", []):
        for name in chunk.split():
            prog.add_var(name)
    obj_text = " ".join(sections.get("maximize", []))
    obj_text = obj_text.split(":", 1)[1] if ":" in obj_text else obj_text
    for name, a in _parse_terms(obj_text):
        prog.objective[prog.var(name)] += a
    for row in sections.get("subject to", []):
        cname, body = row.split(":", 1)
        m = re.search(r"(<=|>=|=)\s*(\S+)\s*$", body)
        if not m:
            raise ModelError(f"constraint without sense: {row!r}")
        sense = {"=": "=="}.get(m.group(1), m.group(1))
        terms = _parse_terms(body[: m.start()])
        prog.add_constraint([(prog.var(nm), a) for nm, a in terms], sense, Fraction(m.group(2)), cname.strip())
    return prog
