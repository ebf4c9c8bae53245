"""Toolkit for turning repositories into executable sandbox-testing environments.

The pipeline isolates a target function together with its repo-local
dependencies into a single evaluation script, asks a language model to add
equivalence tests, verifies the result by execution, and emits dataset
records that downstream harnesses (pass@k scoring, self-repair, rejection
sampling) consume.
"""

__version__ = "0.1.0"
