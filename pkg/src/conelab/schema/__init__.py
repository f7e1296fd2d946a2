"""JSON schemas of the result tables."""

from . import from_file as from_file  # noqa
