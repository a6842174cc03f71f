"""Structured natural-language rules and SCT construction.

Each rule names a statement type and a template whose bracketed slots are
filled with the statement's attached comment. Construction walks the comment
tree in pre-order; a statement fires when its type is covered by the rule set
and it carries a comment. The slot nodes get the comment as their new value,
and the comment node itself is rewritten to the filled template, so the
flattened output shows the structured comment right above the untouched code.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .comment_tree import CommentTree, comment_node_of, comment_of
from .syntax import SyntaxTree, flatten, preorder

logger = logging.getLogger(__name__)

SELECTION = "Selection"
ITERATION = "Iteration"
JUMP = "Jump"
LABELED = "Labeled"
CATEGORIES = (SELECTION, ITERATION, JUMP, LABELED)

PAREN = "parenthesized_expression"
BLOCK = "compound_statement"

_SLOT_RE = re.compile(r"\[[^\]]*\]")


@dataclass(frozen=True)
class SctRule:
    name: str
    category: str
    target_type: str
    slot: str
    template: str

    def fill(self, values: Iterable[str]) -> str:
        """Substitute ``values`` into the template's bracketed slots, in order."""
        it = iter(values)
        return _SLOT_RE.sub(lambda m: next(it, ""), self.template).rstrip()

    @property
    def slot_names(self) -> list[str]:
        return [m.group()[1:-1] for m in _SLOT_RE.finditer(self.template)]


BUILTIN_RULES = (
    SctRule("if", SELECTION, "if_statement", "child_parenthesized", "if ( [condition] )"),
    SctRule("if_else", SELECTION, "if_statement", "child_parenthesized", "if ( [condition] ) else []"),
    SctRule("switch", SELECTION, "switch_statement", "child_parenthesized", "switch ( [condition] )"),
    SctRule("while", ITERATION, "while_statement", "child_parenthesized", "while ( [expression] )"),
    SctRule(
        "for", ITERATION, "for_statement", "for_clauses",
        "for ( [init-expression; condition-expression; loop-expression] )",
    ),
    SctRule(
        "range_for", ITERATION, "for_range_loop", "range_clauses",
        "for ( [for-range-declaration: expression] )",
    ),
    SctRule("break", JUMP, "break_statement", "self_value", "[break];"),
    SctRule("continue", JUMP, "continue_statement", "self_value", "[continue];"),
    SctRule("return", JUMP, "return_statement", "child_expression", "return [expression] ;"),
    SctRule("goto", JUMP, "goto_statement", "child_identifier", "goto [identifier] ;"),
    SctRule("case", LABELED, "case_statement", "case_constant", "case [constant-expression]:"),
)


def _has_else(tree: SyntaxTree, node_id: int) -> bool:
    return any(
        tree.nodes[c].node_type in ("else_clause", "else") for c in tree.nodes[node_id].children
    )


@dataclass
class SctRuleSet:
    rules: list[SctRule]

    @property
    def action_types(self) -> set[str]:
        return {r.target_type for r in self.rules}

    def get(self, key: str) -> SctRule:
        """Look a rule up by name, or by target type (first match)."""
        for r in self.rules:
            if r.name == key:
                return r
        for r in self.rules:
            if r.target_type == key:
                return r
        raise KeyError(key)

    def by_category(self, *categories: str) -> "SctRuleSet":
        wanted = {c.lower() for c in categories}
        return SctRuleSet([r for r in self.rules if r.category.lower() in wanted])

    def match(self, tree: SyntaxTree, node_id: int) -> Optional[SctRule]:
        node_type = tree.nodes[node_id].node_type
        for r in self.rules:
            if r.target_type != node_type:
                continue
            if node_type == "if_statement" and (r.name == "if_else") != _has_else(tree, node_id):
                continue
            return r
        return None


def builtin_rules() -> SctRuleSet:
    return SctRuleSet(list(BUILTIN_RULES))


def select_rules(selector: str) -> SctRuleSet:
    """Rule set for a CLI selector: ``all`` or a comma-separated list of categories."""
    rules = builtin_rules()
    if selector == "all":
        return rules
    cats = [c.strip() for c in selector.split(",") if c.strip()]
    unknown = [c for c in cats if c.lower() not in {k.lower() for k in CATEGORIES}]
    if unknown:
        raise ValueError(f"unknown rule category: {', '.join(unknown)}")
    return rules.by_category(*cats)


@dataclass(frozen=True)
class Firing:
    rule: str
    category: str
    target_id: int
    replaced_ids: tuple[int, ...]
    comment: str
    target_row: int


@dataclass(frozen=True)
class Skip:
    rule: str
    target_id: int
    reason: str


@dataclass
class SctDocument:
    tree: SyntaxTree
    firings: list[Firing] = field(default_factory=list)
    skipped: list[Skip] = field(default_factory=list)
    rendered: str = ""


def _split_segments(comment: str, sep: str, count: int) -> list[str]:
    parts = [p.strip() for p in comment.split(sep, count - 1)]
    if len(parts) < count:
        parts += [comment.strip()] * (count - len(parts))
    return parts


def _else_comment(tree: SyntaxTree, node_id: int) -> str:
    for c in tree.nodes[node_id].children:
        child = tree.nodes[c]
        if child.node_type == "else_clause":
            found = comment_of(tree, c)
            if found is not None:
                return found
            inner = [k for k in child.children if tree.nodes[k].node_type not in ("else", "comment")]
            if inner:
                return comment_of(tree, inner[0]) or ""
        elif child.field == "alternative":
            return comment_of(tree, c) or ""
    return ""


def _bind(rule: SctRule, tree: SyntaxTree, node_id: int, comment: str, visited: set[int]):
    """Work out (slot node, new value) pairs and the structured comment text.

    Returns None when the rule's slot cannot be bound on this node.
    """
    node = tree.nodes[node_id]
    children = [c for c in node.children if not tree.nodes[c].is_synthetic or tree.nodes[c].original_value]

    if rule.slot == "child_parenthesized":
        slot = next(
            (c for c in children if tree.nodes[c].node_type == PAREN and c not in visited), None
        )
        if slot is None:
            sib = tree.next_sibling(node_id)
            if sib is not None and tree.nodes[sib].node_type in (PAREN, BLOCK) and sib not in visited:
                slot = sib
        if slot is None:
            return None
        values = [comment]
        if rule.name == "if_else":
            values.append(_else_comment(tree, node_id))
        return [(slot, comment)], rule.fill(values)

    if rule.slot in ("for_clauses", "range_clauses"):
        if rule.slot == "for_clauses":
            fields, segments = ("initializer", "condition", "update"), _split_segments(comment, ";", 3)
            joined = "; ".join(segments)
        else:
            fields, segments = ("declarator", "right"), _split_segments(comment, ":", 2)
            joined = ": ".join(segments)
        pairs = []
        for fname, seg in zip(fields, segments):
            for c in children:
                if tree.nodes[c].field == fname and c not in visited:
                    pairs.append((c, seg))
        if not pairs:
            return None
        return pairs, rule.fill([joined])

    if rule.slot == "self_value":
        if node_id in visited:
            return None
        token = node.value.strip().rstrip(";").strip()
        value = f"{token} ; // {comment}"
        return [(node_id, value)], value

    if rule.slot == "child_expression":
        keyword = {"return", ";"}
    elif rule.slot == "child_identifier":
        keyword = {"goto", ";"}
    elif rule.slot == "case_constant":
        value_node = tree.child_by_field(node_id, "value")
        if value_node is None or value_node.id in visited:
            return None
        return [(value_node.id, comment)], rule.fill([comment])
    else:
        raise ValueError(f"unknown slot kind {rule.slot!r}")

    slot = next((c for c in children if tree.nodes[c].node_type not in keyword), None)
    if slot is None or slot in visited or not tree.nodes[slot].value:
        return None
    return [(slot, comment)], rule.fill([comment])


def build_sct(ct: CommentTree, rules: Optional[SctRuleSet] = None) -> SctDocument:
    """Rewrite a comment tree into an SCT. The input tree is left untouched."""
    rules = rules or builtin_rules()
    tree = ct.tree.copy()
    doc = SctDocument(tree)
    action_types = rules.action_types
    visited: set[int] = set()

    for nid in preorder(tree):
        node = tree.nodes[nid]
        if node.node_type not in action_types:
            continue
        comment_id = comment_node_of(tree, nid)
        if comment_id is None:
            continue
        rule = rules.match(tree, nid)
        if rule is None:
            continue
        if tree.in_error(nid):
            doc.skipped.append(Skip(rule.name, nid, "inside parse error"))
            continue
        comment = tree.nodes[comment_id].value
        bound = _bind(rule, tree, nid, comment, visited)
        if bound is None:
            doc.skipped.append(Skip(rule.name, nid, "slot not found"))
            logger.debug("rule %s could not bind on node %d", rule.name, nid)
            continue
        pairs, structured = bound
        for slot_id, value in pairs:
            tree.replace_value(slot_id, value)
            visited.add(slot_id)
        tree.nodes[comment_id].value = structured
        doc.firings.append(
            Firing(rule.name, rule.category, nid, tuple(s for s, _ in pairs), comment, node.span[0])
        )

    doc.rendered = flatten(tree)
    return doc


def render_sct(doc: SctDocument) -> str:
    return flatten(doc.tree)


def to_record(record_id: str, code: str, doc: SctDocument) -> dict:
    """The JSON wire record consumed by downstream training pipelines.

    ``target_row`` is 0-based in the comment-free code the tree was parsed from.
    """
    return {
        "id": record_id,
        "code": code,
        "sct_text": doc.rendered,
        "firings": [
            {"rule": f.rule, "category": f.category, "target_row": f.target_row}
            for f in doc.firings
        ],
    }
