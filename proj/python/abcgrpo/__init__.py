"""Clipped group-relative policy optimization on toy verifiable-reward tasks."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
