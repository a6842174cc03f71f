"""Weave normalised comment lines into the syntax tree as comment nodes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .comments import CommentedSource
from .syntax import COMMENT, SyntaxTree, first_node_on_row, parse_function

MERGE_SEPARATOR = "; "


@dataclass
class CommentTree:
    tree: SyntaxTree
    # target node id -> comment node id
    attachments: dict[int, int] = field(default_factory=dict)
    # (first normalised row, merged text) of comment groups with no code after them
    unattached: list[tuple[int, str]] = field(default_factory=list)

    def copy(self) -> "CommentTree":
        return CommentTree(self.tree.copy(), dict(self.attachments), list(self.unattached))


def attach_comments(src: CommentedSource, language: str = "auto") -> CommentTree:
    """Parse the code part of ``src`` and attach each comment group to its target.

    The target of a group is the first node on the next code row; the comment
    node becomes that node's immediately preceding sibling. Consecutive
    comment lines form one group, joined with ``"; "``.
    """
    lines = src.lines
    code_lines: list[str] = []
    # comment groups keyed by the code-row index they precede
    groups: list[tuple[int, int, list[str]]] = []
    pending: list[str] = []
    pending_row = 0
    for row, line in enumerate(lines):
        if row in src.comment_rows:
            if not pending:
                pending_row = row
            pending.append(src.comment_rows[row])
            continue
        if pending:
            groups.append((len(code_lines), pending_row, pending))
            pending = []
        code_lines.append(line)

    tree = parse_function("\n".join(code_lines), language=language)
    ct = CommentTree(tree)
    n_code = len(code_lines)
    for code_row, first_row, texts in groups:
        target = None
        for r in range(code_row, n_code):
            target = first_node_on_row(tree, r)
            if target is not None:
                break
        if target is None:
            ct.unattached.append((first_row, MERGE_SEPARATOR.join(texts)))
            continue
        text = MERGE_SEPARATOR.join(texts)
        if target in ct.attachments:
            node = tree.nodes[ct.attachments[target]]
            node.value = node.value + MERGE_SEPARATOR + text
        else:
            ct.attachments[target] = tree.insert_before(target, COMMENT, text)
    if pending:
        ct.unattached.append((pending_row, MERGE_SEPARATOR.join(pending)))
    for _, text in ct.unattached:
        tree.append_child(tree.root, COMMENT, text)
    return ct


def comment_of(ct: Union[CommentTree, SyntaxTree], node_id: int) -> Optional[str]:
    """Return the comment attached to a node, i.e. its preceding synthetic comment sibling."""
    tree = ct.tree if isinstance(ct, CommentTree) else ct
    node = tree.node(node_id)
    if node.node_type == COMMENT:
        return None
    prev = tree.previous_sibling(node_id)
    if prev is None:
        return None
    p = tree.nodes[prev]
    if p.node_type == COMMENT and p.is_synthetic:
        return p.value
    return None


def comment_node_of(tree: SyntaxTree, node_id: int) -> Optional[int]:
    if comment_of(tree, node_id) is None:
        return None
    return tree.previous_sibling(node_id)
