"""Lexical token counting for Python source text.

Token counts back the sanity-check deltas applied after sandboxing and test
generation, and the corpus statistics. The convention is fixed here once:
tokens are what :mod:`tokenize` produces, minus comments and pure layout
(NEWLINE/NL/INDENT/DEDENT and the encoding/end markers). A string literal is
one token regardless of length, and two texts differing only in comments or
blank lines count the same.
"""

from __future__ import annotations

import io
import tokenize

from .errors import LexError

_IGNORED = frozenset(
    {
        tokenize.COMMENT,
        tokenize.NL,
        tokenize.NEWLINE,
        tokenize.INDENT,
        tokenize.DEDENT,
        tokenize.ENCODING,
        tokenize.ENDMARKER,
    }
)


def count_tokens(text: str) -> int:
    """Count lexical tokens in ``text``, raising ``LexError`` on unlexable input."""
    if not text:
        return 0
    count = 0
    try:
        for tok in tokenize.generate_tokens(io.StringIO(text).readline):
            if tok.type == tokenize.ERRORTOKEN:
                raise LexError(f"lex-failure: bad token {tok.string!r} at line {tok.start[0]}")
            if tok.type not in _IGNORED and tok.string:
                count += 1
    except (tokenize.TokenError, IndentationError, SyntaxError, ValueError) as exc:
        raise LexError(f"lex-failure: {exc}") from exc
    return count
