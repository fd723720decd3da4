"""Small text DSL for properties.

Example::

    property ML-RQ1.2 {
      box BG_in[*]=[180,183]; In_in[*]=0.006525; M_in[0..10]=0; M_in[11]=20;
      post: BG_out[5] > 200;
      units: mixed;
    }

Grammar (informal):
  file     := 'property' NAME '{' stmt* '}'
  stmt     := 'box' assign | assign | 'pre' ':' formula | 'post' ':' formula
              | 'units' ':' NAME            (each terminated by ';')
  assign   := CHANNEL '[' idx ']' '=' val
  idx      := '*' | INT | INT '..' INT
  val      := NUMBER | '[' NUMBER ',' NUMBER ']'
  formula  := conj ('or' conj)* ; conj := unit ('and' unit)*
  unit     := '(' formula ')' | atom
  atom     := ['|'] linear ['|'] CMP NUMBER
  linear   := term (('+'|'-') term)* ; term := NUMBER ['*' var] | var
  var      := CHANNEL '[' INT ']' ; CMP := '<=' '>=' '<' '>'

parse_dsl(render_dsl(p)) reproduces p's AST (And/Or chains are kept
flattened; single-child And/Or nodes are collapsed on both sides).
"""

from __future__ import annotations

import re

import numpy as np

from .dataset import N_INPUTS
from .properties import (
    TRUE, AffineAtom, And, FAtom, Or, Property, VarRef, CHANNEL_RANGE,
)


class DslSyntaxError(ValueError):
    def __init__(self, message, line, col):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<num>\d+\.(?!\.)\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
      | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op><=|>=|\.\.|[{}\[\]()=;:,|+\-*<>])
    """,
    re.VERBOSE,
)


def _tokenize(text):
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        lexeme = m.group(0)
        if not m.lastgroup == "ws":
            kind = m.lastgroup
            tokens.append((kind, lexeme, line, col))
        nl = lexeme.count("\n")
        if nl:
            line += nl
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, msg):
        _, lex, line, col = self.peek()
        raise DslSyntaxError(f"{msg} (found {lex!r})", line, col)

    def expect(self, lexeme):
        kind, lex, line, col = self.next()
        if lex != lexeme:
            raise DslSyntaxError(f"expected {lexeme!r}, found {lex!r}", line, col)

    def accept(self, lexeme):
        if self.peek()[1] == lexeme:
            self.next()
            return True
        return False

    def number(self):
        sign = 1.0
        while self.peek()[1] in ("+", "-"):
            if self.next()[1] == "-":
                sign = -sign
        kind, lex, line, col = self.next()
        if kind != "num":
            raise DslSyntaxError(f"expected a number, found {lex!r}", line, col)
        return sign * float(lex)

    # -- top level ----------------------------------------------------------

    def parse_property(self) -> Property:
        self.expect("property")
        # The property name may contain '-'/'.' so read raw tokens up to '{'.
        parts = []
        while self.peek()[1] != "{":
            if self.peek()[0] == "eof":
                self.fail("expected '{' after property name")
            parts.append(self.next()[1])
        name = "".join(parts)
        if not name:
            self.fail("property name is empty")
        self.expect("{")

        box = np.tile(np.array([0.0, 1.0]), (N_INPUTS, 1))
        pre = TRUE
        post = None
        units = "network"
        while not self.accept("}"):
            kind, lex, line, col = self.peek()
            if lex == "pre":
                self.next(); self.expect(":")
                pre = self.formula()
            elif lex == "post":
                self.next(); self.expect(":")
                post = self.formula()
            elif lex == "units":
                self.next(); self.expect(":")
                units = self.next()[1]
            else:
                if lex == "box":
                    self.next()
                self.assign(box)
            self.expect(";")
        if post is None:
            raise DslSyntaxError("property has no 'post:' clause", *self.toks[-1][2:])
        return Property(name, box, _collapse(pre), _collapse(post), {}, units)

    def assign(self, box):
        kind, ch, line, col = self.next()
        if ch not in ("BG_in", "In_in", "M_in"):
            raise DslSyntaxError(f"unknown input channel {ch!r}", line, col)
        self.expect("[")
        if self.accept("*"):
            lo_i, hi_i = 0, CHANNEL_RANGE[ch] - 1
        else:
            lo_i = int(self.number())
            hi_i = int(self.number()) if self.accept("..") else lo_i
        self.expect("]")
        self.expect("=")
        if self.accept("["):
            lo = self.number()
            self.expect(",")
            hi = self.number()
            self.expect("]")
        else:
            lo = hi = self.number()
        base = {"BG_in": 0, "In_in": 12, "M_in": 24}[ch]
        if not (0 <= lo_i <= hi_i < CHANNEL_RANGE[ch]):
            raise DslSyntaxError(f"index range {lo_i}..{hi_i} out of bounds", line, col)
        for k in range(lo_i, hi_i + 1):
            box[base + k] = (lo, hi)

    # -- formulas -----------------------------------------------------------

    def formula(self):
        parts = [self.conj()]
        while self.accept("or"):
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def conj(self):
        parts = [self.unit()]
        while self.accept("and"):
            parts.append(self.unit())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def unit(self):
        if self.accept("("):
            f = self.formula()
            self.expect(")")
            return f
        return self.atom()

    def atom(self):
        is_abs = self.accept("|")
        terms, offset = self.linear()
        if is_abs:
            self.expect("|")
        kind, cmp_lex, line, col = self.next()
        cmp_map = {"<=": "LE", ">=": "GE", "<": "LT", ">": "GT"}
        if cmp_lex not in cmp_map:
            raise DslSyntaxError(f"expected a comparator, found {cmp_lex!r}", line, col)
        bound = self.number()
        if not terms:
            raise DslSyntaxError("atom has no variables", line, col)
        return FAtom(AffineAtom(tuple(terms), cmp_map[cmp_lex], bound, is_abs, offset))

    def linear(self):
        terms = []
        offset = 0.0
        sign = 1.0
        first = True
        while True:
            if not first:
                if self.accept("+"):
                    sign = 1.0
                elif self.accept("-"):
                    sign = -1.0
                else:
                    break
            elif self.accept("-"):
                sign = -1.0
            first = False
            kind, lex, line, col = self.peek()
            if kind == "num":
                coef = sign * float(self.next()[1])
                if self.accept("*"):
                    terms.append((coef, self.var()))
                else:
                    offset += coef
            elif kind == "name":
                terms.append((sign, self.var()))
            else:
                raise DslSyntaxError(f"expected a term, found {lex!r}", line, col)
            sign = 1.0
        return terms, offset

    def var(self):
        kind, ch, line, col = self.next()
        if ch not in CHANNEL_RANGE:
            raise DslSyntaxError(f"unknown channel {ch!r}", line, col)
        self.expect("[")
        idx = int(self.number())
        self.expect("]")
        return VarRef(ch, idx)


def _collapse(formula):
    """Drop single-child And/Or wrappers so render/parse agree."""
    if isinstance(formula, And):
        items = tuple(_collapse(it) for it in formula.items)
        return items[0] if len(items) == 1 else And(items)
    if isinstance(formula, Or):
        items = tuple(_collapse(it) for it in formula.items)
        return items[0] if len(items) == 1 else Or(items)
    return formula


def parse_dsl(text: str) -> Property:
    return _Parser(text).parse_property()


def _fmt(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def _render_linear(atom: AffineAtom) -> str:
    out = []
    for k, (c, v) in enumerate(atom.terms):
        var = f"{v.channel}[{v.index}]"
        mag = abs(c)
        body = var if mag == 1.0 else f"{_fmt(mag)}*{var}"
        if k == 0:
            out.append(body if c >= 0 else f"-{body}")
        else:
            out.append(f"{'+' if c >= 0 else '-'} {body}")
    if atom.offset:
        out.append(f"{'+' if atom.offset >= 0 else '-'} {_fmt(abs(atom.offset))}")
    return " ".join(out)


def _render_atom(atom: AffineAtom) -> str:
    cmp_map = {"LE": "<=", "GE": ">=", "LT": "<", "GT": ">"}
    lin = _render_linear(atom)
    if atom.abs:
        lin = f"|{lin}|"
    return f"{lin} {cmp_map[atom.cmp]} {_fmt(atom.bound)}"


def _render_formula(formula, parent=None) -> str:
    if isinstance(formula, FAtom):
        return _render_atom(formula.atom)
    if isinstance(formula, And):
        body = " and ".join(_render_formula(it, "and") for it in formula.items)
        return f"({body})" if parent is not None else body
    if isinstance(formula, Or):
        body = " or ".join(_render_formula(it, "or") for it in formula.items)
        return f"({body})" if parent is not None else body
    raise TypeError(f"not a formula: {formula!r}")


def _render_box(box) -> list:
    lines = []
    for ch, base in (("BG_in", 0), ("In_in", 12), ("M_in", 24)):
        n = CHANNEL_RANGE[ch]
        seg = box[base : base + n]
        runs = []
        start = 0
        for k in range(1, n + 1):
            if k == n or not np.array_equal(seg[k], seg[start]):
                runs.append((start, k - 1))
                start = k
        for lo_i, hi_i in runs:
            lo, hi = seg[lo_i]
            idx = "*" if (lo_i, hi_i) == (0, n - 1) else (
                str(lo_i) if lo_i == hi_i else f"{lo_i}..{hi_i}")
            val = _fmt(lo) if lo == hi else f"[{_fmt(lo)},{_fmt(hi)}]"
            lines.append(f"{ch}[{idx}]={val}")
    return lines


def render_dsl(prop: Property) -> str:
    lines = [f"property {prop.id} {{"]
    box_lines = _render_box(prop.input_box)
    lines.append("  box " + "; ".join(box_lines) + ";")
    pre = _collapse(prop.pre)
    if pre != TRUE:
        lines.append(f"  pre: {_render_formula(pre)};")
    lines.append(f"  post: {_render_formula(_collapse(prop.post))};")
    lines.append(f"  units: {prop.unit_mode};")
    lines.append("}")
    return "\n".join(lines) + "\n"
