"""Numerical toolkit for nonuniform exponential dichotomies of linear processes."""
