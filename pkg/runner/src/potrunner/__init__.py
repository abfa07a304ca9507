"""Sandboxed one-shot runner for generated math programs."""

from .shim import SOURCE_NAME, execute, format_error, install_guards, main, run_request

__all__ = [
    "SOURCE_NAME",
    "execute",
    "format_error",
    "install_guards",
    "main",
    "run_request",
]
