"""Char-grid form understanding: joint entity labeling and linking."""

try:
    from ._formlink import *  # noqa: F401,F403  (installed package layout)
except ImportError:  # in-tree builds put the extension on sys.path directly
    from _formlink import *  # noqa: F401,F403
