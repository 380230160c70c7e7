"""
Exception hierarchy for curlgfem
Maps failures onto the CLI exit codes (config, divergence, internal assertion)
"""
from typing import Optional


class CurlGfemError(Exception):
    """Base class for all curlgfem errors"""


class ConfigError(CurlGfemError, ValueError):
    """Invalid experiment configuration (field names are included in the message)"""


class NotSPDError(CurlGfemError, ValueError):
    """Factorization met a non-positive pivot"""

    def __init__(self, message: str, pivot_index: Optional[int] = None):
        super().__init__(message)
        self.pivot_index = pivot_index


class DivergenceError(CurlGfemError, RuntimeError):
    """Stationary iteration stopped contracting; the iteration log is kept for the report"""

    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log


class BoundViolation(CurlGfemError, AssertionError):
    """A computed error exceeded its a-priori bound"""
