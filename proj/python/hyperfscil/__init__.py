"""Hyperbolic open-set few-shot class-incremental learning."""

from ._hyperfscil import *  # noqa: F401,F403
from ._hyperfscil import __version__  # noqa: F401
