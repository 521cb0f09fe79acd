"""Quadratic assignment with externalities: exact solver and oracle."""
from .kernels import BACKEND, available_backends
from .oracle import count_matchings, enumerate_matchings, oracle_solve
from .solver import QapSolution, pairwise, prepare, solve_qap, solve_qap_excluding

__all__ = [
    "BACKEND",
    "QapSolution",
    "available_backends",
    "count_matchings",
    "enumerate_matchings",
    "oracle_solve",
    "pairwise",
    "prepare",
    "solve_qap",
    "solve_qap_excluding",
]
