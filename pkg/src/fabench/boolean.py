"""Boolean formula parsing and compilation to rectifier networks.

Formulas use AND / OR / NOT (case-insensitive) over named atoms, with truth
values encoded as +1 (true) / -1 (false) on the network side. NOT is a sign
flip folded into the consuming linear layer.

Binary gates use the constant-free min/max realization

    OR(p, q)  = (p + q + |p - q|) / 2,   AND(p, q) = (p + q - |p - q|) / 2,

with |a| built as relu(a) + relu(-a). Every signal in a network of such
gates is positively homogeneous along rays from the origin, which keeps
straight-path gradient integrals from the zero reference free of interior
kink crossings.

Gates of arity k >= 3 use a single thresholded rectifier unit on the sum
t = v_1 + ... + v_k:

    AND_k(v) = relu(t - k + 2) - 1,      OR_k(v)  = 1 - relu(2 - k - t).

These are exact on the +/-1 support and symmetric in their arguments, so
gradient mass at tied inputs splits evenly across the tied atoms. A fold of
binary gates would send tie gradients through the fold tree unevenly, which
is what the per-feature responsibility split of the standalone AND/OR units
rules out.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .nets import FeedForwardNet, Linear, Relu

__all__ = [
    "Atom",
    "Not",
    "And",
    "Or",
    "BooleanAst",
    "BooleanParseError",
    "parse_boolean",
    "atom_names",
    "eval_truth",
    "compile_boolean",
]


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Not:
    child: "BooleanAst"


@dataclass(frozen=True)
class And:
    children: tuple["BooleanAst", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("AND needs at least two operands")


@dataclass(frozen=True)
class Or:
    children: tuple["BooleanAst", ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise ValueError("OR needs at least two operands")


BooleanAst = Atom | Not | And | Or


class BooleanParseError(ValueError):
    """Syntax error; ``offset`` is the character position in the input."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


_TOKEN_RE = re.compile(r"\s*(?:(?P<lpar>\()|(?P<rpar>\))|(?P<word>[A-Za-z_][A-Za-z0-9_]*))")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == m.start():
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad_at = pos + (len(text[pos:]) - len(stripped))
            raise BooleanParseError(f"unexpected character {text[bad_at]!r}", bad_at)
        if m.group("lpar"):
            tokens.append(("(", "(", m.start("lpar")))
        elif m.group("rpar"):
            tokens.append((")", ")", m.start("rpar")))
        else:
            word = m.group("word")
            upper = word.upper()
            kind = upper if upper in ("AND", "OR", "NOT") else "IDENT"
            tokens.append((kind, word, m.start("word")))
        pos = m.end()
    return tokens


class _Parser:
    # expr := term ('OR' term)* ; term := factor ('AND' factor)*
    # factor := 'NOT' factor | '(' expr ')' | identifier

    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def eof_offset(self) -> int:
        return len(self.text)

    def parse(self) -> BooleanAst:
        node = self.expr()
        tok = self.peek()
        if tok is not None:
            raise BooleanParseError(f"unexpected {tok[1]!r} after expression", tok[2])
        return node

    def expr(self) -> BooleanAst:
        parts = [self.term()]
        while self.peek() and self.peek()[0] == "OR":
            self.pos += 1
            parts.append(self.term())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def term(self) -> BooleanAst:
        parts = [self.factor()]
        while self.peek() and self.peek()[0] == "AND":
            self.pos += 1
            parts.append(self.factor())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def factor(self) -> BooleanAst:
        tok = self.peek()
        if tok is None:
            raise BooleanParseError("expected an operand, found end of input", self.eof_offset())
        kind, value, offset = tok
        if kind == "NOT":
            self.pos += 1
            return Not(self.factor())
        if kind == "(":
            self.pos += 1
            node = self.expr()
            closing = self.peek()
            if closing is None:
                raise BooleanParseError("unbalanced parenthesis", self.eof_offset())
            if closing[0] != ")":
                raise BooleanParseError(f"expected ')', found {closing[1]!r}", closing[2])
            self.pos += 1
            return node
        if kind == "IDENT":
            self.pos += 1
            return Atom(value)
        raise BooleanParseError(f"expected an operand, found {value!r}", offset)


def parse_boolean(text: str) -> BooleanAst:
    """Parse a formula like ``'(A AND B) OR NOT C'`` into an AST."""
    if not text or not text.strip():
        raise BooleanParseError("empty formula", 0)
    return _Parser(text).parse()


def atom_names(ast: BooleanAst) -> list[str]:
    """Atom names in order of first appearance."""
    seen: list[str] = []

    def walk(node: BooleanAst):
        if isinstance(node, Atom):
            if node.name not in seen:
                seen.append(node.name)
        elif isinstance(node, Not):
            walk(node.child)
        else:
            for child in node.children:
                walk(child)

    walk(ast)
    return seen


def eval_truth(ast: BooleanAst, values: dict[str, int]) -> int:
    """Evaluate logically on +/-1 assignments; independent of the compiler."""

    def walk(node: BooleanAst) -> bool:
        if isinstance(node, Atom):
            v = values[node.name]
            if v not in (-1, 1):
                raise ValueError(f"atom {node.name!r} must be +1 or -1, got {v}")
            return v == 1
        if isinstance(node, Not):
            return not walk(node.child)
        if isinstance(node, And):
            return all(walk(c) for c in node.children)
        return any(walk(c) for c in node.children)

    return 1 if walk(ast) else -1


# ---------------------------------------------------------------------------
# Compiler. The AST is first lowered to a flat gate list with signed operand
# references (NOT folds into the sign). Registers — the live +/-1 signals —
# are affine functions of the current hidden vector; each gate level becomes
# one (linear, relu) block, with +/- pass-through pairs keeping still-needed
# registers alive, and a final linear layer reads out the root.
# ---------------------------------------------------------------------------

@dataclass
class _Gate:
    op: str                               # "and" | "or"
    operands: list[tuple[str | int, float]]  # (atom name or gate id, sign)
    level: int


def _lower(ast: BooleanAst) -> tuple[list[_Gate], tuple[str | int, float]]:
    """Flatten the AST into gates; returns (gates, signed root reference)."""
    gates: list[_Gate] = []

    def walk(node: BooleanAst, sign: float) -> tuple[str | int, float, int]:
        if isinstance(node, Not):
            return walk(node.child, -sign)
        if isinstance(node, Atom):
            return node.name, sign, 0
        refs, lvl = [], 0
        for child in node.children:
            key, s, child_lvl = walk(child, 1.0)
            refs.append((key, s))
            lvl = max(lvl, child_lvl)
        gate = _Gate("and" if isinstance(node, And) else "or", refs, lvl + 1)
        gates.append(gate)
        return len(gates) - 1, sign, gate.level

    key, sign, _ = walk(ast, 1.0)
    return gates, (key, sign)


def compile_boolean(ast: BooleanAst, atoms: list[str] | None = None) -> FeedForwardNet:
    """Compile a formula into a rectifier network over +/-1 atom inputs.

    Input order follows ``atoms`` (default: first appearance). The scalar
    output equals ``eval_truth`` on every +/-1 assignment.
    """
    used = atom_names(ast)
    if atoms is None:
        atoms = used
    else:
        missing = [a for a in used if a not in atoms]
        if missing:
            raise ValueError(f"formula references undeclared atoms: {missing}")
    n = len(atoms)

    gates, (root_key, root_sign) = _lower(ast)
    depth = max((g.level for g in gates), default=0)

    # Last level at which each register is consumed.
    last_use: dict[str | int, int] = {root_key: depth + 1}
    for gid, gate in enumerate(gates):
        for key, _ in gate.operands:
            last_use[key] = max(last_use.get(key, 0), gate.level)

    # Registers as (row over current hidden vector, bias).
    regs: dict[str | int, tuple[np.ndarray, float]] = {}
    for i, name in enumerate(atoms):
        row = np.zeros(n)
        row[i] = 1.0
        regs[name] = (row, 0.0)
    width = n

    layers: list = []
    for lvl in range(1, depth + 1):
        level_gates = [(gid, g) for gid, g in enumerate(gates) if g.level == lvl]
        rows: list[np.ndarray] = []
        biases: list[float] = []
        threshold_units: list[tuple[int, int]] = []      # (gate id, unit)
        minmax_units: list[tuple[int, int]] = []         # (gate id, unit of relu(p-q))

        def t_combination(gate):
            t_row = np.zeros(width)
            t_bias = 0.0
            for key, sign in gate.operands:
                reg_row, reg_bias = regs[key]
                t_row = t_row + sign * reg_row
                t_bias += sign * reg_bias
            return t_row, t_bias

        # The affine value of a binary gate's operands re-enters after the
        # rectifier, so those registers must survive this block too.
        carry: dict[str | int, None] = {}
        for key, last in last_use.items():
            if last > lvl and key in regs:
                carry[key] = None
        for gid, gate in level_gates:
            if len(gate.operands) == 2:
                for key, _ in gate.operands:
                    carry[key] = None

        for gid, gate in level_gates:
            k = len(gate.operands)
            if k == 2:
                (p_key, p_sign), (q_key, q_sign) = gate.operands
                p_row, p_bias = regs[p_key]
                q_row, q_bias = regs[q_key]
                diff_row = p_sign * p_row - q_sign * q_row
                diff_bias = p_sign * p_bias - q_sign * q_bias
                rows.append(diff_row)
                biases.append(diff_bias)
                rows.append(-diff_row)
                biases.append(-diff_bias)
                minmax_units.append((gid, len(rows) - 2))
            else:
                t_row, t_bias = t_combination(gate)
                if gate.op == "and":             # relu(t - k + 2) - 1
                    rows.append(t_row)
                    biases.append(t_bias - k + 2.0)
                else:                            # 1 - relu(2 - k - t)
                    rows.append(-t_row)
                    biases.append(2.0 - k - t_bias)
                threshold_units.append((gid, len(rows) - 1))

        pass_units: list[tuple[str | int, int]] = []
        for key in carry:
            reg_row, reg_bias = regs[key]
            rows.append(reg_row)
            biases.append(reg_bias)
            rows.append(-reg_row)
            biases.append(-reg_bias)
            pass_units.append((key, len(rows) - 2))

        layers.append(Linear(np.vstack(rows), np.array(biases)))
        layers.append(Relu())

        hidden = len(rows)
        new_regs: dict[str | int, tuple[np.ndarray, float]] = {}
        passed: dict[str | int, np.ndarray] = {}
        for key, unit in pass_units:
            row = np.zeros(hidden)
            row[unit] = 1.0
            row[unit + 1] = -1.0
            passed[key] = row
            new_regs[key] = (row, 0.0)
        for gid, unit in threshold_units:
            gate = gates[gid]
            row = np.zeros(hidden)
            if gate.op == "and":
                row[unit] = 1.0
                new_regs[gid] = (row, -1.0)
            else:
                row[unit] = -1.0
                new_regs[gid] = (row, 1.0)
        for gid, unit in minmax_units:
            gate = gates[gid]
            (p_key, p_sign), (q_key, q_sign) = gate.operands
            row = 0.5 * (p_sign * passed[p_key] + q_sign * passed[q_key])
            sign = 1.0 if gate.op == "or" else -1.0   # +/- |p - q| / 2
            row = row.copy()
            row[unit] += 0.5 * sign
            row[unit + 1] += 0.5 * sign
            new_regs[gid] = (row, 0.0)
        regs = new_regs
        width = hidden

    root_row, root_bias = regs[root_key]
    out = Linear((root_sign * root_row)[None, :], np.array([root_sign * root_bias]))
    layers.append(out)
    return FeedForwardNet(tuple(layers))
