"""Homotopy-continuation solvers and implicit neural models."""

from ._homoode import (
    DimensionError,
    Model,
    NumericError,
    ParameterError,
    fixed_point_solve,
    load_mnist,
    newton_solve,
    nfe_vs_distance,
    recover_lambda,
    solve,
    solve_benchmark_equation,
    solve_v,
    synth_circles,
    synth_moons,
)

__all__ = [
    "DimensionError",
    "Model",
    "NumericError",
    "ParameterError",
    "fixed_point_solve",
    "load_mnist",
    "newton_solve",
    "nfe_vs_distance",
    "recover_lambda",
    "solve",
    "solve_benchmark_equation",
    "solve_v",
    "synth_circles",
    "synth_moons",
]
