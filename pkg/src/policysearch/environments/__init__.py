"""Environments: tabular adapter, two-state MDP, Tetris and the nonlinear system."""

from .nonlinear import NonlinearSystem, initial_parameters, linear_controller
from .tabular import TabularEnv, lattice_gaussian_factory
from .tetris import Tetris, TetrisState, board_features, board_hash, render
from .two_state import two_state_factory

__all__ = [
    "NonlinearSystem",
    "TabularEnv",
    "Tetris",
    "TetrisState",
    "board_features",
    "board_hash",
    "initial_parameters",
    "lattice_gaussian_factory",
    "linear_controller",
    "render",
    "two_state_factory",
]
