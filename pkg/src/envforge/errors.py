"""Exception types shared across the pipeline."""

from __future__ import annotations


class ForgeError(Exception):
    """Base class for all pipeline errors."""


class LexError(ForgeError):
    """Source text could not be tokenized ("lex-failure")."""


class GatewayError(ForgeError):
    """Provider transport, replay, or response-format failure."""


class ConfigError(ForgeError):
    """Invalid pipeline configuration, rejected before any work starts."""


class ExampleDropped(ForgeError):
    """An example left the funnel; ``reason`` is the machine-readable tag."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"dropped: {reason}" + (f" ({detail})" if detail else ""))
