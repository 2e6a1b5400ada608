"""Positional code-recall benchmark harness.

Generates reasoning and retrieval tasks over code snippets, assembles
distractor-padded contexts with controlled target placement, queries
chat-completion endpoints, scores answers, and fits positional/decay
statistics.
"""

__version__ = "0.1.0"
