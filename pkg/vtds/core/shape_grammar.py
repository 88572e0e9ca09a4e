"""
A small shape grammar for procedural buildings.

Rule files hold one rule per line, ``Symbol --> operations``; ``#`` starts a
comment. Supported operations::

    extrude(h)
    split(x|y|z){size: Sym, ~weight: Sym, ...}
    repeat(x|y|z, size, Sym)
    setback(d){Sym}
    color(r, g, b)                  components in [0, 1]
    class(name)                     one of the 15 semantic classes
    choose{p1: ops..., p2: ops...}  weights sum to 1
    primitive(box|cylinder|cone|quad)
    Sym                             apply the rule for Sym to the current shape

A rule may also list weighted alternatives: ``A --> 0.3: ops | 0.7: ops``.
"""

import re
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from shapely.geometry import MultiPolygon, Polygon, box as shapely_box
from shapely.geometry.polygon import orient

from vtds.core.errors import GeometryError, RuleError, RuleSyntaxError
from vtds.core.geometry import Mesh, clean_polygon, cone, cylinder, flat_polygon, prism, regular_polygon
from vtds.core.osm_map import Footprint
from vtds.core.rng import keyed_generator
from vtds.core.semantics import SemanticClass

MAX_DEPTH = 64
WEIGHT_TOLERANCE = 1e-9
AXES = ("x", "y", "z")
PRIMITIVES = ("box", "cylinder", "cone", "quad")
OPERATIONS = ("extrude", "split", "repeat", "setback", "color", "class", "choose", "primitive")


#########
## AST ##
#########


@dataclass(frozen=True)
class Extrude:
    height: float


@dataclass(frozen=True)
class SplitPart:
    size: float
    floating: bool
    symbol: str


@dataclass(frozen=True)
class Split:
    axis: str
    parts: Tuple[SplitPart, ...]


@dataclass(frozen=True)
class Repeat:
    axis: str
    size: float
    symbol: str


@dataclass(frozen=True)
class Setback:
    distance: float
    symbol: str


@dataclass(frozen=True)
class Color:
    rgb: Tuple[float, float, float]


@dataclass(frozen=True)
class SetClass:
    semantic: SemanticClass


@dataclass(frozen=True)
class Primitive:
    kind: str


@dataclass(frozen=True)
class Invoke:
    symbol: str


@dataclass(frozen=True)
class Production:
    weight: Optional[float]
    ops: Tuple


@dataclass(frozen=True)
class Choose:
    branches: Tuple[Production, ...]


Operation = Union[Extrude, Split, Repeat, Setback, Color, SetClass, Primitive, Invoke, Choose]


@dataclass
class RuleProgram:
    rules: Dict[str, List[Production]]
    axiom: str

    def referenced_symbols(self) -> List[Tuple[str, str]]:
        """
        (rule, symbol) pairs for every non-terminal used on a right-hand side.
        """
        found = []
        for name, productions in self.rules.items():
            for production in productions:
                for symbol in _symbols_of(production.ops):
                    found.append((name, symbol))
        return found


def _symbols_of(ops: Sequence[Operation]) -> List[str]:
    out = []
    for op in ops:
        if isinstance(op, Invoke):
            out.append(op.symbol)
        elif isinstance(op, Split):
            out.extend(p.symbol for p in op.parts)
        elif isinstance(op, (Repeat, Setback)):
            out.append(op.symbol)
        elif isinstance(op, Choose):
            for branch in op.branches:
                out.extend(_symbols_of(branch.ops))
    return out


###########
## Lexer ##
###########

TOKEN_SPEC = [
    ("ARROW", r"-->"),
    ("NUMBER", r"-?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|-?\.\d+(?:[eE][-+]?\d+)?"),
    ("IDENT", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("PUNCT", r"[(){},:~|]"),
    ("SKIP", r"[ \t]+"),
    ("MISMATCH", r"."),
]
TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in TOKEN_SPEC))


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize_line(text: str, line: int) -> List[Token]:
    tokens = []
    for match in TOKEN_RE.finditer(text):
        kind = match.lastgroup
        column = match.start() + 1
        if kind == "SKIP":
            continue
        if kind == "MISMATCH":
            raise RuleSyntaxError(f"Unexpected character '{match.group()}'", line, column)
        tokens.append(Token(kind, match.group(), line, column))
    return tokens


############
## Parser ##
############


class _LineParser:
    def __init__(self, tokens: List[Token], line: int, line_length: int):
        self.tokens = tokens
        self.pos = 0
        self.line = line
        self.end_column = line_length + 1

    def peek(self, offset: int = 0) -> Optional[Token]:
        index = self.pos + offset
        return self.tokens[index] if index < len(self.tokens) else None

    def error(self, message: str, token: Optional[Token] = None) -> RuleSyntaxError:
        token = token or self.peek()
        column = token.column if token else self.end_column
        return RuleSyntaxError(message, self.line, column)

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        token = self.peek()
        if token is None or token.kind != kind or (text is not None and token.text != text):
            wanted = f"'{text}'" if text else kind.lower()
            found = f"'{token.text}'" if token else "end of line"
            raise self.error(f"Expected {wanted}, found {found}")
        self.pos += 1
        return token

    def accept(self, text: str) -> bool:
        token = self.peek()
        if token is not None and token.text == text:
            self.pos += 1
            return True
        return False

    def number(self) -> float:
        return float(self.expect("NUMBER").text)

    def parse_rule(self) -> Tuple[str, List[Production]]:
        name = self.expect("IDENT").text
        self.expect("ARROW")
        productions = [self.production(stop=("|",))]
        while self.accept("|"):
            productions.append(self.production(stop=("|",)))
        if self.peek() is not None:
            raise self.error(f"Unexpected '{self.peek().text}'")
        return name, productions

    def production(self, stop: Tuple[str, ...]) -> Production:
        weight = None
        token, after = self.peek(), self.peek(1)
        if token is not None and token.kind == "NUMBER" and after is not None and after.text == ":":
            weight = self.number()
            self.expect("PUNCT", ":")
        ops = []
        while self.peek() is not None and self.peek().text not in stop:
            ops.append(self.operation())
        return Production(weight, tuple(ops))

    def operation(self) -> Operation:
        token = self.expect("IDENT")
        following = self.peek()
        opens_call = following is not None and following.text in ("(", "{")
        if not opens_call:
            return Invoke(token.text)
        name = token.text
        if name not in OPERATIONS:
            raise RuleSyntaxError(f"Unknown operation '{name}'", token.line, token.column)
        return getattr(self, f"op_{name}")(token)

    def axis(self) -> str:
        token = self.expect("IDENT")
        if token.text not in AXES:
            raise RuleSyntaxError(f"Axis must be one of {AXES}, got '{token.text}'", token.line, token.column)
        return token.text

    def op_extrude(self, token: Token) -> Extrude:
        self.expect("PUNCT", "(")
        height = self.number()
        self.expect("PUNCT", ")")
        if height <= 0:
            raise RuleSyntaxError("extrude height must be positive", token.line, token.column)
        return Extrude(height)

    def op_split(self, token: Token) -> Split:
        self.expect("PUNCT", "(")
        axis = self.axis()
        self.expect("PUNCT", ")")
        self.expect("PUNCT", "{")
        parts = []
        while True:
            floating = self.accept("~")
            size = self.number()
            self.expect("PUNCT", ":")
            symbol = self.expect("IDENT").text
            if size < 0:
                raise RuleSyntaxError("split sizes must be non-negative", token.line, token.column)
            parts.append(SplitPart(size, floating, symbol))
            if self.accept("}"):
                break
            if not (self.accept(",") or self.accept("|")):
                raise self.error("Expected ',' or '}' in split")
        return Split(axis, tuple(parts))

    def op_repeat(self, token: Token) -> Repeat:
        self.expect("PUNCT", "(")
        axis = self.axis()
        self.expect("PUNCT", ",")
        size = self.number()
        self.expect("PUNCT", ",")
        symbol = self.expect("IDENT").text
        self.expect("PUNCT", ")")
        if size <= 0:
            raise RuleSyntaxError("repeat size must be positive", token.line, token.column)
        return Repeat(axis, size, symbol)

    def op_setback(self, token: Token) -> Setback:
        self.expect("PUNCT", "(")
        distance = self.number()
        self.expect("PUNCT", ")")
        self.expect("PUNCT", "{")
        symbol = self.expect("IDENT").text
        self.expect("PUNCT", "}")
        return Setback(distance, symbol)

    def op_color(self, token: Token) -> Color:
        self.expect("PUNCT", "(")
        rgb = [self.number()]
        for _ in range(2):
            self.expect("PUNCT", ",")
            rgb.append(self.number())
        self.expect("PUNCT", ")")
        if any(c < 0 or c > 1 for c in rgb):
            raise RuleSyntaxError("color components must lie in [0, 1]", token.line, token.column)
        return Color(tuple(rgb))

    def op_class(self, token: Token) -> SetClass:
        self.expect("PUNCT", "(")
        name = self.expect("IDENT")
        self.expect("PUNCT", ")")
        try:
            return SetClass(SemanticClass.from_label(name.text))
        except ValueError as err:
            raise RuleSyntaxError(str(err), name.line, name.column) from None

    def op_primitive(self, token: Token) -> Primitive:
        self.expect("PUNCT", "(")
        kind = self.expect("IDENT")
        self.expect("PUNCT", ")")
        if kind.text not in PRIMITIVES:
            raise RuleSyntaxError(
                f"Unknown primitive '{kind.text}'; expected one of {PRIMITIVES}", kind.line, kind.column
            )
        return Primitive(kind.text)

    def op_choose(self, token: Token) -> Choose:
        self.expect("PUNCT", "{")
        branches = []
        while True:
            start = self.peek()
            branch = self.production(stop=(",", "}"))
            if branch.weight is None:
                raise self.error("choose branches need a weight", start)
            branches.append(branch)
            if self.accept("}"):
                break
            self.expect("PUNCT", ",")
        return Choose(tuple(branches))


def parse_rules(source: str) -> RuleProgram:
    """
    Compile rule-language text into a RuleProgram.

    The axiom is the symbol of the first rule in the file.

    :raises RuleSyntaxError: On a syntax error, an unknown operation, or an empty program.
    :raises RuleError: On weights that do not sum to 1 or an undefined non-terminal.
    """
    rules: Dict[str, List[Production]] = {}
    axiom = None
    lines = source.splitlines()
    for number, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].rstrip()
        if not text.strip():
            continue
        parser = _LineParser(tokenize_line(text, number), number, len(text))
        name, productions = parser.parse_rule()
        rules.setdefault(name, []).extend(productions)
        axiom = axiom or name
    if axiom is None:
        raise RuleSyntaxError("Missing axiom: the program defines no rules", max(len(lines), 1), 1)

    program = RuleProgram(rules, axiom)
    for name, productions in rules.items():
        _check_weights(name, productions, "alternatives", required=len(productions) > 1)
        for production in productions:
            _check_choose_weights(name, production.ops)
    for name, symbol in program.referenced_symbols():
        if symbol not in rules:
            raise RuleError(f"undefined non-terminal '{symbol}'", name)
    return program


def _check_weights(rule: str, productions: Sequence[Production], what: str, required: bool) -> None:
    weights = [p.weight for p in productions]
    if all(w is None for w in weights) and not required:
        return
    if any(w is None for w in weights):
        raise RuleError(f"all {what} need a probability weight", rule)
    if any(w < 0 for w in weights):
        raise RuleError(f"{what} weights must be non-negative", rule)
    total = sum(weights)
    if abs(total - 1.0) > WEIGHT_TOLERANCE:
        raise RuleError(f"{what} weights sum to {total:g}, expected 1", rule)


def _check_choose_weights(rule: str, ops: Sequence[Operation]) -> None:
    for op in ops:
        if isinstance(op, Choose):
            _check_weights(rule, op.branches, "choose", required=True)
            for branch in op.branches:
                _check_choose_weights(rule, branch.ops)


###############
## Execution ##
###############


@dataclass
class Shape:
    """
    The current shape: a counterclockwise footprint spanning ``[z0, z0 + height]``,
    a scope frame given by its in-plane x axis, and the attributes set so far.
    """

    polygon: np.ndarray
    z0: float
    height: float
    axis_x: np.ndarray
    semantic: SemanticClass = SemanticClass.BUILDING
    color: Tuple[float, float, float] = (0.7, 0.7, 0.7)

    @property
    def axis_y(self) -> np.ndarray:
        return np.array([-self.axis_x[1], self.axis_x[0]])

    def extent(self, axis: str) -> Tuple[float, float]:
        if axis == "z":
            return self.z0, self.z0 + self.height
        direction = self.axis_x if axis == "x" else self.axis_y
        proj = self.polygon @ direction
        return float(proj.min()), float(proj.max())


def _longest_edge_axis(polygon: np.ndarray) -> np.ndarray:
    edges = np.roll(polygon, -1, axis=0) - polygon
    lengths = np.linalg.norm(edges, axis=1)
    k = int(np.argmax(lengths))
    return edges[k] / lengths[k]


class _Interpreter:
    def __init__(self, program: RuleProgram, rng: np.random.Generator):
        self.program = program
        self.rng = rng
        self.meshes: List[Mesh] = []

    def run_symbol(self, symbol: str, shape: Shape, depth: int) -> None:
        if depth > MAX_DEPTH:
            raise RuleError(f"recursion depth exceeds {MAX_DEPTH} (non-terminating grammar?)", symbol)
        productions = self.program.rules[symbol]
        production = productions[0]
        if len(productions) > 1:
            production = productions[self._draw([p.weight for p in productions])]
        self.run_ops(symbol, production.ops, shape, depth)

    def _draw(self, weights: Sequence[float]) -> int:
        u = self.rng.random()
        cumulative = np.cumsum(weights)
        return int(min(np.searchsorted(cumulative, u, side="right"), len(weights) - 1))

    def run_ops(self, rule: str, ops: Sequence[Operation], shape: Shape, depth: int) -> None:
        for op in ops:
            if isinstance(op, Extrude):
                shape = replace(shape, height=op.height)
            elif isinstance(op, Color):
                shape = replace(shape, color=op.rgb)
            elif isinstance(op, SetClass):
                shape = replace(shape, semantic=op.semantic)
            elif isinstance(op, Primitive):
                self.emit(rule, op.kind, shape)
            elif isinstance(op, Invoke):
                self.run_symbol(op.symbol, shape, depth + 1)
            elif isinstance(op, Choose):
                branch = op.branches[self._draw([b.weight for b in op.branches])]
                self.run_ops(rule, branch.ops, shape, depth)
            elif isinstance(op, Split):
                self.split(rule, op, shape, depth)
            elif isinstance(op, Repeat):
                lo, hi = shape.extent(op.axis)
                n = max(1, int(np.floor((hi - lo) / op.size + 1e-9)))
                bounds = np.linspace(lo, hi, n + 1)
                for a, b in zip(bounds[:-1], bounds[1:]):
                    for child in self.slice(shape, op.axis, a, b):
                        self.run_symbol(op.symbol, child, depth + 1)
            elif isinstance(op, Setback):
                inset = Polygon(shape.polygon).buffer(-op.distance, join_style=2)
                pieces = _polygons_of(inset)
                if not pieces:
                    raise RuleError(f"setback({op.distance:g}) consumes the whole footprint", rule)
                for piece in pieces:
                    self.run_symbol(op.symbol, replace(shape, polygon=piece), depth + 1)

    def split(self, rule: str, op: Split, shape: Shape, depth: int) -> None:
        lo, hi = shape.extent(op.axis)
        extent = hi - lo
        fixed = sum(p.size for p in op.parts if not p.floating)
        if fixed > extent + 1e-9:
            raise RuleError(
                f"split({op.axis}) sizes total {fixed:g} m but the extent is only {extent:g} m", rule
            )
        weights = sum(p.size for p in op.parts if p.floating)
        spare = extent - fixed
        cursor = lo
        for part in op.parts:
            if part.floating:
                size = spare * part.size / weights if weights > 0 else 0.0
            else:
                size = part.size
            a, b = cursor, min(cursor + size, hi)
            cursor += size
            if b - a <= 1e-9:
                continue
            for child in self.slice(shape, op.axis, a, b):
                self.run_symbol(part.symbol, child, depth + 1)

    def slice(self, shape: Shape, axis: str, a: float, b: float) -> List[Shape]:
        if axis == "z":
            return [replace(shape, z0=a, height=b - a)]
        ax, ay = shape.axis_x, shape.axis_y
        local = np.column_stack([shape.polygon @ ax, shape.polygon @ ay])
        lo_y, hi_y = local[:, 1].min() - 1.0, local[:, 1].max() + 1.0
        lo_x, hi_x = local[:, 0].min() - 1.0, local[:, 0].max() + 1.0
        slab = shapely_box(a, lo_y, b, hi_y) if axis == "x" else shapely_box(lo_x, a, hi_x, b)
        pieces = _polygons_of(Polygon(local).intersection(slab))
        pieces.sort(key=lambda p: (float((p @ (1, 0)).min()), float((p @ (0, 1)).min())))
        to_world = np.stack([ax, ay])
        return [replace(shape, polygon=piece @ to_world) for piece in pieces]

    def emit(self, rule: str, kind: str, shape: Shape) -> None:
        polygon = shape.polygon
        try:
            if kind == "quad" or (kind == "box" and shape.height <= 0):
                mesh = flat_polygon(polygon, shape.z0 + shape.height, shape.semantic, shape.color)
            elif kind == "box":
                mesh = prism(polygon, shape.z0, shape.height, shape.semantic, shape.color)
            else:
                if shape.height <= 0:
                    raise RuleError(f"primitive({kind}) needs an extruded shape", rule)
                (xa, xb), (ya, yb) = shape.extent("x"), shape.extent("y")
                center = ((xa + xb) / 2) * shape.axis_x + ((ya + yb) / 2) * shape.axis_y
                radius = 0.5 * min(xb - xa, yb - ya)
                build = cylinder if kind == "cylinder" else cone
                mesh = build(center, radius, shape.z0, shape.height, shape.semantic, shape.color)
        except GeometryError as err:
            raise RuleError(f"primitive({kind}) failed: {err}", rule) from None
        if mesh.n_triangles:
            self.meshes.append(mesh)


def _polygons_of(geometry) -> List[np.ndarray]:
    if geometry.is_empty:
        return []
    if isinstance(geometry, Polygon):
        candidates = [geometry]
    elif isinstance(geometry, MultiPolygon):
        candidates = list(geometry.geoms)
    else:
        candidates = [g for g in getattr(geometry, "geoms", []) if isinstance(g, Polygon)]
    out = []
    for polygon in candidates:
        if polygon.area <= 1e-9:
            continue
        ring = clean_polygon(np.asarray(orient(polygon, sign=1.0).exterior.coords))
        if len(ring) >= 3:
            out.append(ring)
    return out


def apply_rules(
    program: RuleProgram,
    footprint: Union[np.ndarray, Footprint],
    seed: int,
    footprint_id: Optional[int] = None,
) -> Mesh:
    """
    Run the program from its axiom on a footprint.

    :param program: A compiled RuleProgram.
    :param footprint: Simple counterclockwise polygon (N, 2), or a Footprint.
    :param seed: Run seed; together with the footprint id it keys the random stream.
    :param footprint_id: Overrides the id taken from a Footprint (0 for bare polygons).
    :return: The merged mesh of every emitted primitive.
    :raises RuleError: On runaway recursion or a split that does not fit its shape.
    """
    if isinstance(footprint, Footprint):
        footprint_id = footprint.way_id if footprint_id is None else footprint_id
        polygon = footprint.polygon
    else:
        polygon = np.asarray(footprint, dtype=np.float64)
    polygon = clean_polygon(polygon)
    rng = keyed_generator(seed, "grammar", footprint_id or 0)
    interpreter = _Interpreter(program, rng)
    shape = Shape(polygon=polygon, z0=0.0, height=0.0, axis_x=_longest_edge_axis(polygon))
    interpreter.run_symbol(program.axiom, shape, depth=0)
    return Mesh.merge(interpreter.meshes)
