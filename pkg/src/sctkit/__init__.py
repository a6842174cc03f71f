"""Structured natural-language comment trees (SCTs) for C/C++ functions."""

__version__ = "0.1.0"

from .comment_tree import CommentTree, attach_comments, comment_of
from .comments import CommentClient, CommentedSource, CommentProviderConfig, generate_comments, normalize
from .sct import SctDocument, SctRule, SctRuleSet, build_sct, builtin_rules, render_sct
from .syntax import AstNode, SyntaxTree, first_node_on_row, flatten, parse_function, preorder

__all__ = [
    "AstNode",
    "CommentClient",
    "CommentProviderConfig",
    "CommentTree",
    "CommentedSource",
    "SctDocument",
    "SctRule",
    "SctRuleSet",
    "SyntaxTree",
    "attach_comments",
    "build_sct",
    "builtin_rules",
    "comment_of",
    "first_node_on_row",
    "flatten",
    "generate_comments",
    "normalize",
    "parse_function",
    "preorder",
    "render_sct",
]
