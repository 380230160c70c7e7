"""
curlgfem - edge-element MS-GFEM coarse spaces and two-level Schwarz solvers
"""

__version__ = "1.0.0"
