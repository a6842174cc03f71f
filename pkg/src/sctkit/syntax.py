"""Typed syntax trees for C/C++ functions, backed by tree-sitter.

The tree keeps every token of the source as a leaf (punctuation included), so
that :func:`flatten` can reproduce the original token stream. Grammar-specific
node names are mapped onto the names the rule engine matches on (for example
the C++ grammar's ``condition_clause`` becomes ``parenthesized_expression``).
"""

from __future__ import annotations

import bisect
import json
import re
import threading
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import tree_sitter
import tree_sitter_c
import tree_sitter_cpp

from .errors import EmptySource, InvalidTree, ParseFailed, RowOutOfRange, UnknownNode

Span = tuple[int, int, int, int]

# Grammar names that differ from the canonical ones used by the rule engine.
CANONICAL_TYPES = {
    "c": {},
    "cpp": {"condition_clause": "parenthesized_expression"},
}

# Nodes whose internal structure would be corrupted by space-joining.
ATOMIC_TYPES = frozenset(
    {
        "string_literal",
        "char_literal",
        "raw_string_literal",
        "system_lib_string",
        "number_literal",
        "comment",
        "preproc_arg",
    }
)

COMMENT = "comment"
ERROR = "ERROR"

_TOKEN_RE = re.compile(
    r"""
    (?P<comment>/\*.*?\*/|//[^\n]*)
  | (?P<string>(?:u8|[uUL])?"(?:\\.|[^"\\\n])*")
  | (?P<char>(?:u8|[uUL])?'(?:\\.|[^'\\\n])*')
  | (?P<word>[A-Za-z_]\w*)
  | (?P<number>\.?\d(?:[eEpP][+-]|[\w.])*)
  | (?P<punct>>>=|<<=|\.\.\.|->\*?|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||::|\#\#|[-+*/%&|^]=|\S)
    """,
    re.VERBOSE | re.DOTALL,
)


def tokenize(text: str, keep_comments: bool = False) -> list[str]:
    """Split C-like text into lexical tokens, independent of any parser.

    Used to compare code before and after transformations that may change
    whitespace. Comments are dropped unless ``keep_comments`` is set.
    """
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        if m.lastgroup == "comment" and not keep_comments:
            continue
        tokens.append(m.group())
    return tokens


@dataclass
class AstNode:
    id: int
    node_type: str
    value: str
    span: Span
    children: list[int] = field(default_factory=list)
    parent: Optional[int] = None
    is_synthetic: bool = False
    # grammar field name under the parent (e.g. "condition"), if any
    field: Optional[str] = None
    # text before a value replacement; flatten keeps rendering it
    original_value: Optional[str] = None

    @property
    def start(self) -> tuple[int, int]:
        return self.span[0], self.span[1]

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class SyntaxTree:
    root: int
    nodes: dict[int, AstNode]
    source: str
    error_count: int = 0
    language: str = "c"
    _row_index: Optional[dict[int, int]] = field(default=None, repr=False, compare=False)

    def node(self, node_id: int) -> AstNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.nodes

    @property
    def lines(self) -> list[str]:
        return self.source.split("\n")

    def copy(self) -> "SyntaxTree":
        nodes = {k: replace(n, children=list(n.children)) for k, n in self.nodes.items()}
        return SyntaxTree(self.root, nodes, self.source, self.error_count, self.language)

    def depth(self, node_id: int) -> int:
        d = 0
        n = self.node(node_id)
        while n.parent is not None:
            d += 1
            n = self.nodes[n.parent]
        return d

    def ancestors(self, node_id: int) -> Iterator[AstNode]:
        n = self.node(node_id)
        while n.parent is not None:
            n = self.nodes[n.parent]
            yield n

    def in_error(self, node_id: int) -> bool:
        """True if the node is, or lies under, a grammar ERROR node."""
        if self.node(node_id).node_type == ERROR:
            return True
        return any(a.node_type == ERROR for a in self.ancestors(node_id))

    def previous_sibling(self, node_id: int) -> Optional[int]:
        n = self.node(node_id)
        if n.parent is None:
            return None
        siblings = self.nodes[n.parent].children
        i = siblings.index(node_id)
        return siblings[i - 1] if i > 0 else None

    def next_sibling(self, node_id: int) -> Optional[int]:
        n = self.node(node_id)
        if n.parent is None:
            return None
        siblings = self.nodes[n.parent].children
        i = siblings.index(node_id)
        return siblings[i + 1] if i + 1 < len(siblings) else None

    def child_by_field(self, node_id: int, name: str) -> Optional[AstNode]:
        for c in self.node(node_id).children:
            if self.nodes[c].field == name:
                return self.nodes[c]
        return None

    # -- mutation ---------------------------------------------------------

    def _new_id(self) -> int:
        return max(self.nodes) + 1

    def insert_before(self, target_id: int, node_type: str, value: str) -> int:
        """Insert a synthetic leaf as the immediately preceding sibling of a node."""
        target = self.node(target_id)
        if target.parent is None:
            raise InvalidTree("cannot insert a sibling of the root")
        sr, sc = target.start
        nid = self._new_id()
        self.nodes[nid] = AstNode(
            nid, node_type, value, (sr, sc, sr, sc), parent=target.parent, is_synthetic=True
        )
        siblings = self.nodes[target.parent].children
        siblings.insert(siblings.index(target_id), nid)
        self._row_index = None
        return nid

    def append_child(self, parent_id: int, node_type: str, value: str) -> int:
        parent = self.node(parent_id)
        er, ec = parent.span[2], parent.span[3]
        nid = self._new_id()
        self.nodes[nid] = AstNode(
            nid, node_type, value, (er, ec, er, ec), parent=parent_id, is_synthetic=True
        )
        parent.children.append(nid)
        self._row_index = None
        return nid

    def replace_value(self, node_id: int, value: str) -> None:
        """Replace a node's value, keeping the pre-replacement text for rendering."""
        n = self.node(node_id)
        if n.original_value is None:
            n.original_value = n.value
        n.value = value
        n.is_synthetic = True

    def validate(self) -> None:
        """Check structural invariants, raising :class:`InvalidTree` on violation."""
        if self.root not in self.nodes:
            raise InvalidTree("root id missing")
        if self.nodes[self.root].parent is not None:
            raise InvalidTree("root has a parent")
        seen: set[int] = set()
        stack = [self.root]
        while stack:
            nid = stack.pop()
            if nid in seen:
                raise InvalidTree(f"node {nid} reachable twice")
            seen.add(nid)
            n = self.nodes[nid]
            if not n.node_type:
                raise InvalidTree(f"node {nid} has empty type")
            if len(set(n.children)) != len(n.children):
                raise InvalidTree(f"node {nid} lists a child twice")
            prev_end = None
            for c in n.children:
                if c not in self.nodes:
                    raise InvalidTree(f"node {nid} has dangling child {c}")
                child = self.nodes[c]
                if child.parent != nid:
                    raise InvalidTree(f"node {c} parent is {child.parent}, expected {nid}")
                stack.append(c)
                # inserted nodes are exempt from span ordering
                if child.is_synthetic and child.original_value is None:
                    continue
                if prev_end is not None and child.start < prev_end:
                    raise InvalidTree(f"children of {nid} overlap or are out of order at {c}")
                prev_end = (child.span[2], child.span[3])
        if seen != set(self.nodes):
            raise InvalidTree(f"unreachable nodes: {sorted(set(self.nodes) - seen)}")

    def dump(self) -> str:
        """Render the tree as indented s-expression text for golden tests."""
        out: list[str] = []

        def walk(nid: int, indent: int) -> None:
            n = self.nodes[nid]
            pad = "  " * indent
            if n.node_type == COMMENT and n.is_synthetic:
                out.append(f"{pad}(comment {json.dumps(n.value)})")
                return
            sr, sc, er, ec = n.span
            head = f"{pad}({n.node_type} [{sr},{sc}]-[{er},{ec}]"
            if n.children:
                if n.original_value is not None:
                    head += f" {json.dumps(n.value)}"
                out.append(head)
                for c in n.children:
                    walk(c, indent + 1)
                out[-1] += ")"
            else:
                out.append(f"{head} {json.dumps(n.value)})")

        walk(self.root, 0)
        return "\n".join(out)


def preorder(tree: SyntaxTree) -> list[int]:
    order = []
    stack = [tree.root]
    while stack:
        nid = stack.pop()
        order.append(nid)
        stack.extend(reversed(tree.nodes[nid].children))
    return order


# -- parsing --------------------------------------------------------------

_LANGUAGES = {
    "c": tree_sitter.Language(tree_sitter_c.language()),
    "cpp": tree_sitter.Language(tree_sitter_cpp.language()),
}
_local = threading.local()


def _parser(language: str) -> tree_sitter.Parser:
    parsers = getattr(_local, "parsers", None)
    if parsers is None:
        parsers = _local.parsers = {}
    if language not in parsers:
        parsers[language] = tree_sitter.Parser(_LANGUAGES[language])
    return parsers[language]


class _Positions:
    """Byte offset to (row, char column) conversion for one source text."""

    def __init__(self, source: str, data: bytes):
        self.data = data
        self.ascii = source.isascii()
        self.line_starts = [0]
        for m in re.finditer(b"\n", data):
            self.line_starts.append(m.end())

    def point(self, offset: int) -> tuple[int, int]:
        row = bisect.bisect_right(self.line_starts, offset) - 1
        start = self.line_starts[row]
        if self.ascii:
            return row, offset - start
        return row, len(self.data[start:offset].decode("utf-8", errors="ignore"))

    def text(self, start: int, end: int) -> str:
        return self.data[start:end].decode("utf-8", errors="replace")


def _convert(ts_tree: tree_sitter.Tree, source: str, data: bytes, language: str) -> SyntaxTree:
    pos = _Positions(source, data)
    mapping = CANONICAL_TYPES[language]
    nodes: dict[int, AstNode] = {}
    errors = 0

    def add(node_type: str, start: int, end: int, parent: Optional[int], fld=None) -> AstNode:
        nid = len(nodes)
        span = pos.point(start) + pos.point(end)
        n = AstNode(nid, node_type, pos.text(start, end), span, parent=parent, field=fld)
        nodes[nid] = n
        if parent is not None:
            nodes[parent].children.append(nid)
        return n

    def fragment(start: int, end: int, parent: int) -> None:
        # text the grammar did not cover; kept so nothing is dropped
        chunk = data[start:end]
        if chunk.strip():
            lead = len(chunk) - len(chunk.lstrip())
            trail = len(chunk.rstrip())
            add("text_fragment", start + lead, start + trail, parent)

    stack: list[tuple[tree_sitter.Node, Optional[int], Optional[str]]] = [
        (ts_tree.root_node, None, None)
    ]
    while stack:
        ts_node, parent, fld = stack.pop()
        if isinstance(ts_node, tuple):
            fragment(ts_node[1], ts_node[2], parent)
            continue
        node_type = mapping.get(ts_node.type, ts_node.type)
        if ts_node.is_missing or ts_node.type == ERROR:
            errors += 1
        n = add(node_type, ts_node.start_byte, ts_node.end_byte, parent, fld)
        if ts_node.type in ATOMIC_TYPES or ts_node.child_count == 0:
            continue
        pending = []
        cursor = ts_node.start_byte
        for i, child in enumerate(ts_node.children):
            if child.start_byte > cursor:
                pending.append((("gap", cursor, child.start_byte), n.id, None))
            pending.append((child, n.id, ts_node.field_name_for_child(i)))
            cursor = max(cursor, child.end_byte)
        if ts_node.end_byte > cursor:
            pending.append((("gap", cursor, ts_node.end_byte), n.id, None))
        stack.extend(reversed(pending))

    return SyntaxTree(root=0, nodes=nodes, source=source, error_count=errors, language=language)


def _parse_with(source: str, language: str) -> SyntaxTree:
    data = source.encode("utf-8")
    ts_tree = _parser(language).parse(data)
    return _convert(ts_tree, source, data, language)


def parse_function(source: str, language: str = "auto") -> SyntaxTree:
    """Parse one C/C++ function (or statement fragment) into a :class:`SyntaxTree`.

    ``language`` is ``"c"``, ``"cpp"`` or ``"auto"``; auto parses as C and
    falls back to C++ only when that yields fewer error nodes.

    Raises:
        EmptySource: the source is blank.
        ParseFailed: the grammar recognised nothing but error nodes.
    """
    if not source.strip():
        raise EmptySource("source is empty")
    if language == "auto":
        tree = _parse_with(source, "c")
        if tree.error_count:
            alt = _parse_with(source, "cpp")
            if alt.error_count < tree.error_count:
                tree = alt
    elif language in _LANGUAGES:
        tree = _parse_with(source, language)
    else:
        raise ValueError(f"unsupported language {language!r}")

    root = tree.nodes[tree.root]
    usable = [
        c for c in root.children
        if tree.nodes[c].node_type not in (ERROR, "text_fragment") and tree.nodes[c].value
    ]
    if not usable:
        raise ParseFailed(f"grammar recognised no constructs ({tree.error_count} error nodes)")
    return tree


# -- queries --------------------------------------------------------------

def first_node_on_row(tree: SyntaxTree, row: int) -> Optional[int]:
    """Return the node starting leftmost on ``row`` (shallowest on ties), or None.

    The root and synthetic nodes never qualify, nor do zero-width nodes the
    parser inserted for missing tokens.
    """
    n_rows = len(tree.lines)
    if not 0 <= row < n_rows:
        raise RowOutOfRange(f"row {row} outside 0..{n_rows - 1}")
    if tree._row_index is None:
        best: dict[int, tuple[int, int, int]] = {}
        stack = [(tree.root, 0)]
        while stack:
            nid, depth = stack.pop()
            n = tree.nodes[nid]
            for c in n.children:
                stack.append((c, depth + 1))
            if nid == tree.root or n.is_synthetic or not n.value:
                continue
            r, col = n.start
            key = (col, depth, nid)
            if r not in best or key < best[r]:
                best[r] = key
        tree._row_index = {r: k[2] for r, k in best.items()}
    return tree._row_index.get(row)


def _emissions(tree: SyntaxTree) -> Iterator[tuple[str, AstNode]]:
    stack = [tree.root]
    while stack:
        n = tree.nodes[stack.pop()]
        if n.is_synthetic and n.original_value is None and (n.node_type == COMMENT or not n.children):
            yield "comment", n
        elif n.children:
            stack.extend(reversed(n.children))
        else:
            text = n.value if n.original_value is None else n.original_value
            if text.strip():
                yield "code", n


def _indent(lines: list[str], row: int, col: int) -> str:
    if row >= len(lines):
        return ""
    indent = lines[row][:col]
    return indent if indent.isspace() else ""


def _comment_line(value: str) -> str:
    value = value.strip()
    return value if value.startswith("//") else f"// {value}"


def flatten(tree: SyntaxTree) -> str:
    """Serialise a tree back to text.

    Code leaves are laid out on their original rows with their original
    indentation and intra-line spacing. Synthetic comment nodes become their
    own ``//`` line, indented like the node they are attached to. Nodes whose value was replaced still render their
    original text, so the code itself is preserved.
    """
    lines = tree.lines
    out: list[str] = []
    buf: list[str] = []
    prev: Optional[AstNode] = None

    def flush() -> None:
        if buf:
            out.append("".join(buf).rstrip())
            buf.clear()

    for kind, n in _emissions(tree):
        if kind == "comment":
            flush()
            out.append(_indent(lines, n.span[0], n.span[1]) + _comment_line(n.value))
            prev = None
            continue
        text = n.value if n.original_value is None else n.original_value
        sr, sc = n.start
        if prev is not None and prev.span[2] == sr:
            gap = lines[sr][prev.span[3]:sc] if sr < len(lines) else " "
            buf.append(gap if gap == "" or gap.isspace() else " ")
        else:
            flush()
            buf.append(_indent(lines, sr, sc))
        buf.append(text)
        prev = n
    flush()
    return "\n".join(out)
