"""Hinge-loss Markov random field engine.

Rules are soft implications body -> head over [0,1] atoms.  Body
conjunction uses the Lukasiewicz t-norm max(sum - (n-1), 0) with negation
1-a, so each ground rule's distance to satisfaction collapses to a single
affine hinge max(c + a.x, 0); the energy sum(lambda * hinge^rho) is convex
and MAP inference is projected gradient descent over the unit box.

A small text format describes programs: predicate declarations, observed
atoms, target atoms, and weighted rule templates with uppercase-initial
variables.  Grounding enumerates substitutions lexicographically and
applies the closed-world convention (absent observed atom = 0), pruning
ground rules that can never be violated.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

import numpy as np


class PslError(ValueError):
    """Malformed rule, program, or assignment."""


@dataclass(frozen=True)
class Term:
    """One atom slot in a ground rule: a variable reference or an observed
    value, optionally negated."""

    variable: str | None = None
    value: float | None = None
    negated: bool = False

    def __post_init__(self):
        if (self.variable is None) == (self.value is None):
            raise PslError("term needs exactly one of variable, value")
        if self.value is not None and not 0.0 <= self.value <= 1.0:
            raise PslError(f"observed value {self.value} outside [0, 1]")

    def truth(self, assignment: dict[str, float]) -> float:
        if self.variable is not None:
            if self.variable not in assignment:
                raise PslError(f"unbound variable {self.variable!r}")
            a = assignment[self.variable]
        else:
            a = self.value
        return 1.0 - a if self.negated else a


@dataclass(frozen=True)
class GroundRule:
    weight: float
    exponent: int
    body: tuple[Term, ...]
    head: Term
    origin: int = -1    # index of the template this grounding came from

    def __post_init__(self):
        if not np.isfinite(self.weight) or self.weight < 0:
            raise PslError(f"rule weight must be finite and >= 0, got {self.weight}")
        if self.exponent not in (1, 2):
            raise PslError(f"rule exponent must be 1 or 2, got {self.exponent}")
        if len(self.body) == 0:
            raise PslError("rule body must contain at least one atom")

    def variables(self) -> set[str]:
        out = {t.variable for t in self.body if t.variable is not None}
        if self.head.variable is not None:
            out.add(self.head.variable)
        return out


def rule_potential(rule: GroundRule, assignment: dict[str, float]
                   ) -> tuple[float, float]:
    """(phi, lambda*phi) for one rule under an assignment."""
    body_sum = sum(t.truth(assignment) for t in rule.body) - (len(rule.body) - 1)
    body = max(body_sum, 0.0)
    distance = max(body - rule.head.truth(assignment), 0.0)
    phi = distance ** rule.exponent
    return phi, rule.weight * phi


@dataclass(frozen=True)
class HlMrfInstance:
    variables: dict[str, float]
    rules: tuple[GroundRule, ...]

    def __post_init__(self):
        for name, v in self.variables.items():
            if not 0.0 <= v <= 1.0:
                raise PslError(f"variable {name!r} initial value {v} outside [0, 1]")
        referenced = set()
        for r in self.rules:
            referenced |= r.variables()
        unknown = referenced - set(self.variables)
        if unknown:
            raise PslError(f"rules reference undeclared variables: {sorted(unknown)}")
        silent = set(self.variables) - referenced
        if silent:
            raise PslError(f"variables referenced by no rule: {sorted(silent)}")


def energy(instance: HlMrfInstance, assignment: dict[str, float]) -> float:
    for name in instance.variables:
        v = assignment.get(name)
        if v is None:
            raise PslError(f"assignment missing variable {name!r}")
        if not 0.0 <= v <= 1.0:
            raise PslError(f"assignment for {name!r} is {v}, outside [0, 1]")
    return sum(rule_potential(r, assignment)[1] for r in instance.rules)


# ----------------------------------------------------------------- inference

def compile_instance(instance: HlMrfInstance
                     ) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray,
                                np.ndarray, np.ndarray]:
    """Dense affine form: names, x0, A, c, weights, exponents.

    Each rule's distance to satisfaction is max(c_r + A_r . x, 0).
    """
    names = sorted(instance.variables)
    index = {n: i for i, n in enumerate(names)}
    x0 = np.array([instance.variables[n] for n in names])
    n_rules = len(instance.rules)
    a = np.zeros((n_rules, len(names)))
    c = np.zeros(n_rules)
    lam = np.zeros(n_rules)
    rho = np.zeros(n_rules)
    for r, rule in enumerate(instance.rules):
        lam[r] = rule.weight
        rho[r] = rule.exponent
        c[r] = -(len(rule.body) - 1)
        for t in rule.body:
            if t.variable is not None:
                if t.negated:
                    c[r] += 1.0
                    a[r, index[t.variable]] -= 1.0
                else:
                    a[r, index[t.variable]] += 1.0
            else:
                c[r] += (1.0 - t.value) if t.negated else t.value
        h = rule.head
        if h.variable is not None:
            if h.negated:
                c[r] -= 1.0
                a[r, index[h.variable]] += 1.0
            else:
                a[r, index[h.variable]] -= 1.0
        else:
            c[r] -= (1.0 - h.value) if h.negated else h.value
    return names, x0, a, c, lam, rho


@dataclass
class MapResult:
    assignment: dict[str, float]
    energy: float
    converged: bool
    iterations: int


def map_infer(instance: HlMrfInstance, tol: float = 1e-6,
              max_iters: int = 50000, step0: float = 0.5,
              patience: int = 1000) -> MapResult:
    """Projected subgradient descent with step 0.5/sqrt(t) over [0,1]^V.

    Keeps the best assignment seen; converged means the best energy stopped
    improving by more than ``tol`` for ``patience`` consecutive iterations.
    Subgradients are 0 at hinge kinks.
    """
    names, x, a, c, lam, rho = compile_instance(instance)
    at = a.T.copy()

    def eval_energy(xv: np.ndarray) -> float:
        u = np.maximum(c + a @ xv, 0.0)
        return float(np.sum(lam * np.power(u, rho)))

    best_x = x.copy()
    best_e = eval_energy(x)
    streak = 0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        u = c + a @ x
        active = u > 0.0
        coeff = np.where(rho == 1.0, 1.0, 2.0 * u)
        g = at @ (lam * coeff * active)
        x = np.clip(x - (step0 / np.sqrt(it)) * g, 0.0, 1.0)
        e = eval_energy(x)
        if e < best_e - tol:
            best_e = e
            best_x = x.copy()
            streak = 0
        else:
            if e < best_e:
                best_e = e
                best_x = x.copy()
            streak += 1
            if streak >= patience:
                converged = True
                break
    return MapResult({n: float(v) for n, v in zip(names, best_x)},
                     best_e, converged, it)


# ------------------------------------------------------------------ programs

_ATOM_RE = re.compile(r"^(!?)([A-Za-z_]\w*)\(([^()]*)\)$")


@dataclass(frozen=True)
class TemplateAtom:
    predicate: str
    args: tuple[str, ...]
    negated: bool

    def arg_is_variable(self, i: int) -> bool:
        return self.args[i][0].isupper()


@dataclass(frozen=True)
class RuleTemplate:
    weight: float
    exponent: int
    body: tuple[TemplateAtom, ...]
    head: TemplateAtom


@dataclass
class PslProgram:
    predicates: dict[str, tuple[int, str]] = field(default_factory=dict)
    observations: dict[tuple[str, tuple[str, ...]], float] = field(default_factory=dict)
    targets: dict[tuple[str, tuple[str, ...]], float] = field(default_factory=dict)
    templates: list[RuleTemplate] = field(default_factory=list)


def _parse_atom(text: str, program: PslProgram, line_no: int) -> TemplateAtom:
    m = _ATOM_RE.match(text.strip())
    if not m:
        raise PslError(f"line {line_no}: malformed atom {text.strip()!r}")
    neg, name, arglist = m.groups()
    args = tuple(s.strip() for s in arglist.split(",")) if arglist.strip() else ()
    if name not in program.predicates:
        raise PslError(f"line {line_no}: undeclared predicate {name!r}")
    arity = program.predicates[name][0]
    if len(args) != arity:
        raise PslError(
            f"line {line_no}: {name} expects {arity} arguments, got {len(args)}"
        )
    return TemplateAtom(name, args, neg == "!")


def parse_program(text: str) -> PslProgram:
    program = PslProgram()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        kind, rest = parts[0], parts[1] if len(parts) > 1 else ""
        if kind == "predicate":
            fields = rest.split()
            if len(fields) != 3 or fields[2] not in ("observed", "target"):
                raise PslError(f"line {line_no}: expected "
                               f"'predicate NAME ARITY observed|target'")
            name, arity, role = fields
            if name in program.predicates:
                raise PslError(f"line {line_no}: predicate {name!r} redeclared")
            program.predicates[name] = (int(arity), role)
        elif kind in ("obs", "target"):
            fields = rest.rsplit(None, 1)
            if len(fields) == 2 and _ATOM_RE.match(fields[0].strip()):
                atom_text, value = fields[0], float(fields[1])
            else:
                atom_text, value = rest, 1.0 if kind == "obs" else 0.5
            atom = _parse_atom(atom_text, program, line_no)
            if atom.negated:
                raise PslError(f"line {line_no}: data atoms cannot be negated")
            if any(atom.arg_is_variable(i) for i in range(len(atom.args))):
                raise PslError(f"line {line_no}: data atoms must be ground")
            role = program.predicates[atom.predicate][1]
            expected = "observed" if kind == "obs" else "target"
            if role != expected:
                raise PslError(f"line {line_no}: {atom.predicate!r} is declared "
                               f"{role}, not {expected}")
            if not 0.0 <= value <= 1.0:
                raise PslError(f"line {line_no}: value {value} outside [0, 1]")
            store = program.observations if kind == "obs" else program.targets
            store[(atom.predicate, atom.args)] = value
        elif kind == "rule":
            m = re.match(r"^([\d.eE+-]+)\s+([12])\s*:\s*(.*?)\s*->\s*(.*)$", rest)
            if not m:
                raise PslError(f"line {line_no}: expected "
                               f"'rule WEIGHT EXPONENT : body -> head'")
            weight, exponent, body_text, head_text = m.groups()
            body = tuple(_parse_atom(s, program, line_no)
                         for s in body_text.split("&"))
            head = _parse_atom(head_text, program, line_no)
            program.templates.append(
                RuleTemplate(float(weight), int(exponent), body, head))
        else:
            raise PslError(f"line {line_no}: unknown directive {kind!r}")
    return program


def load_program(path) -> PslProgram:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_program(fh.read())


def _slot_domains(program: PslProgram) -> dict[tuple[str, int], set[str]]:
    domains: dict[tuple[str, int], set[str]] = {}
    for (pred, args) in itertools.chain(program.observations, program.targets):
        for i, const in enumerate(args):
            domains.setdefault((pred, i), set()).add(const)
    return domains


def _atom_key(atom: TemplateAtom, binding: dict[str, str]) -> tuple[str, tuple[str, ...]]:
    args = tuple(binding.get(arg, arg) for arg in atom.args)
    return atom.predicate, args


def _max_distance(body: tuple[Term, ...], head: Term) -> float:
    """Largest achievable distance to satisfaction over the box."""
    best = -(len(body) - 1)
    for t in body:
        if t.variable is not None:
            best += 1.0
        else:
            best += (1.0 - t.value) if t.negated else t.value
    if head.variable is None:
        best -= (1.0 - head.value) if head.negated else head.value
    return best


def ground(program: PslProgram) -> HlMrfInstance:
    """Enumerate substitutions template by template in lexicographic order."""
    domains = _slot_domains(program)
    rules: list[GroundRule] = []
    for origin, tpl in enumerate(program.templates):
        atoms = tpl.body + (tpl.head,)
        variables: list[str] = []
        var_domains: dict[str, set[str]] = {}
        for atom in atoms:
            for i, arg in enumerate(atom.args):
                if not atom.arg_is_variable(i):
                    continue
                slot = domains.get((atom.predicate, i), set())
                if arg in var_domains:
                    var_domains[arg] &= slot
                else:
                    variables.append(arg)
                    var_domains[arg] = set(slot)
        for combo in itertools.product(
                *(sorted(var_domains[v]) for v in variables)):
            binding = dict(zip(variables, combo))
            terms: list[Term] = []
            skip = False
            for atom in atoms:
                key = _atom_key(atom, binding)
                role = program.predicates[atom.predicate][1]
                if role == "observed":
                    value = program.observations.get(key, 0.0)
                    terms.append(Term(value=value, negated=atom.negated))
                else:
                    if key not in program.targets:
                        skip = True          # grounding names no declared target
                        break
                    terms.append(Term(variable=f"{key[0]}({','.join(key[1])})",
                                      negated=atom.negated))
            if skip:
                continue
            body, head = tuple(terms[:-1]), terms[-1]
            if tpl.weight <= 0 or _max_distance(body, head) <= 0:
                continue
            rules.append(GroundRule(tpl.weight, tpl.exponent, body, head, origin))
    variables = {f"{pred}({','.join(args)})": value
                 for (pred, args), value in program.targets.items()}
    referenced = set()
    for r in rules:
        referenced |= r.variables()
    variables = {k: v for k, v in variables.items() if k in referenced}
    return HlMrfInstance(variables, tuple(rules))
