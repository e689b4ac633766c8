"""Numerical laboratory for curvature bounds and heat semigroups on totally geodesic foliations."""

__all__ = ["calculus", "heat", "metrics", "models", "verify"]
