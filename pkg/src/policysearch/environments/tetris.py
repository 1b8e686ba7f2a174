"""
Tetris simulator with placement actions and after-state features.

An action is a full placement (rotation, column): the current piece is dropped straight
down at that column, full rows are cleared and the reward is the number of rows cleared.
A game that tops out continues from the empty board, so the empty board is a recurrent
state of the resulting chain.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import IllegalPlacement, ValidationError
from ..policies import GibbsPolicy

logger = logging.getLogger(__name__)

# Tetromino shapes, top row first
SHAPES = [
    {"shape": [[1, 1, 1, 1]], "name": "I"},
    {"shape": [[1, 1], [1, 1]], "name": "O"},
    {"shape": [[1, 1, 1], [0, 1, 0]], "name": "T"},
    {"shape": [[1, 1, 1], [1, 0, 0]], "name": "L"},
    {"shape": [[1, 1, 1], [0, 0, 1]], "name": "J"},
    {"shape": [[1, 1, 0], [0, 1, 1]], "name": "S"},
    {"shape": [[0, 1, 1], [1, 1, 0]], "name": "Z"},
]
PIECE_NAMES = [shape["name"] for shape in SHAPES]
N_PIECES = len(SHAPES)
OVERFLOW_ROWS = 4
DEFAULT_MAX_PLACEMENTS = 10_000

Placement = Tuple[int, int]


def _rotations(shape: Sequence[Sequence[int]]) -> List[np.ndarray]:
    """Distinct rotations as arrays of (row, col) cell offsets, row 0 at the bottom."""
    grid = np.array(shape, dtype=bool)
    seen, rotations = set(), []
    for k in range(4):
        rotated = np.rot90(grid, k)
        key = (rotated.shape, rotated.tobytes())
        if key in seen:
            continue
        seen.add(key)
        rows, cols = np.nonzero(rotated[::-1])
        rotations.append(np.stack([rows, cols], axis=1))
    return rotations


PIECE_ROTATIONS = [_rotations(shape["shape"]) for shape in SHAPES]


@dataclass(frozen=True, eq=False)
class TetrisState:
    """
    Board occupancy (row 0 at the bottom) and the id of the piece to place next.

    The board array is read-only; states are never mutated.
    """

    board: np.ndarray
    piece: int

    def key(self) -> bytes:
        return self.board.tobytes() + bytes([self.piece])

    def __eq__(self, other) -> bool:
        return isinstance(other, TetrisState) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    @property
    def is_empty(self) -> bool:
        return not self.board.any()


def column_heights(board: np.ndarray) -> np.ndarray:
    """Height of each column: one above its highest filled cell, 0 when empty."""
    filled = board.any(axis=0)
    top = board.shape[0] - np.argmax(board[::-1], axis=0)
    return np.where(filled, top, 0)


def count_holes(board: np.ndarray, heights: Optional[np.ndarray] = None) -> int:
    """Empty cells lying below the top filled cell of their column."""
    if heights is None:
        heights = column_heights(board)
    return int(heights.sum() - board.sum())


def board_features(board: np.ndarray, max_height: Optional[int] = None) -> np.ndarray:
    """
    Feature vector of a board: column heights, absolute height differences between
    adjacent columns, maximum height and number of holes (2 * width + 1 entries).

    Args:
        board: Occupancy grid, row 0 at the bottom
        max_height: Heights are clipped to this value when given
    """
    heights = column_heights(board)
    holes = count_holes(board, heights)
    if max_height is not None:
        heights = np.minimum(heights, max_height)
    diffs = np.abs(np.diff(heights))
    return np.concatenate([heights, diffs, [heights.max(), holes]]).astype(float)


def render(board: np.ndarray) -> str:
    """Text picture of a board, top row first."""
    return "\n".join("".join("#" if c else "." for c in row) for row in board[::-1])


class Tetris:
    """
    Tetris on a width x height board with uniformly drawn pieces.

    Args:
        width: Board width (10 by default)
        height: Board height (10 by default)
        max_placements: Longest game played by :meth:`evaluate`
    """

    horizon = None

    def __init__(
        self,
        width: int = 10,
        height: int = 10,
        max_placements: int = DEFAULT_MAX_PLACEMENTS,
    ):
        if width < 4 or height < 4:
            raise ValidationError(f"Board must be at least 4 x 4, got {width} x {height}")
        self.width = int(width)
        self.height = int(height)
        self.max_placements = int(max_placements)
        self._empty = np.zeros((self.height, self.width), dtype=bool)
        self._empty.setflags(write=False)
        self._tables = [self._placement_table(piece) for piece in range(N_PIECES)]
        self._feature_cache: Optional[Tuple[bytes, List[Placement], np.ndarray]] = None

    @property
    def n_features(self) -> int:
        return 2 * self.width + 1

    def empty_state(self, piece: int) -> TetrisState:
        return TetrisState(self._empty, int(piece))

    def reset(self, rng: np.random.Generator) -> TetrisState:
        return self.empty_state(rng.integers(N_PIECES))

    def recurrent_state(self) -> TetrisState:
        return self.empty_state(0)

    def is_recurrent(self, state: TetrisState) -> bool:
        """Any empty board is recurrent; the next piece is drawn independently."""
        return state.is_empty

    def _placement_table(self, piece: int) -> Tuple[List[Placement], np.ndarray, np.ndarray]:
        """Placements of a piece with the board rows and columns of their cells."""
        acts, rows, cols = [], [], []
        for r, cells in enumerate(PIECE_ROTATIONS[piece]):
            piece_width = int(cells[:, 1].max()) + 1
            for c in range(self.width - piece_width + 1):
                acts.append((r, c))
                rows.append(cells[:, 0])
                cols.append(cells[:, 1] + c)
        return acts, np.array(rows), np.array(cols)

    def placements(self, state: TetrisState) -> List[Placement]:
        """All legal (rotation, column) placements of the current piece."""
        return list(self._tables[state.piece][0])

    def afterstate(self, state: TetrisState, placement: Placement) -> Tuple[np.ndarray, int, bool]:
        """
        Drop the piece, clear full rows.

        Returns:
            Tuple (board on an extended grid, rows cleared, topped_out). The extended
            grid has a few overflow rows above the board.

        Raises:
            IllegalPlacement: If the placement is not legal for the current piece
        """
        rotation, col = placement
        rotations = PIECE_ROTATIONS[state.piece]
        if not 0 <= rotation < len(rotations):
            raise IllegalPlacement(
                f"Piece {PIECE_NAMES[state.piece]} has no rotation {rotation}"
            )
        cells = rotations[rotation]
        piece_width = int(cells[:, 1].max()) + 1
        if not 0 <= col <= self.width - piece_width:
            raise IllegalPlacement(
                f"Column {col} is out of range for piece {PIECE_NAMES[state.piece]} "
                f"rotation {rotation}"
            )

        grid = np.zeros((self.height + OVERFLOW_ROWS, self.width), dtype=bool)
        grid[: self.height] = state.board
        heights = column_heights(state.board)
        lowest = np.full(piece_width, np.iinfo(np.int64).max)
        np.minimum.at(lowest, cells[:, 1], cells[:, 0])
        base = int(np.max(heights[col : col + piece_width] - lowest))
        grid[base + cells[:, 0], col + cells[:, 1]] = True

        full = grid.all(axis=1)
        cleared = int(full.sum())
        if cleared:
            kept = grid[~full]
            grid = np.vstack([kept, np.zeros((cleared, self.width), dtype=bool)])
        topped_out = bool(grid[self.height :].any())
        return grid, cleared, topped_out

    def afterstate_features(self, state: TetrisState) -> np.ndarray:
        """
        After-state features of every placement at once, one row per placement in
        :meth:`placements` order. Matches :func:`board_features` applied to each
        :meth:`afterstate` grid with heights clipped to the board height.
        """
        _, rows, cols = self._tables[state.piece]
        n = len(rows)
        heights = column_heights(state.board)
        base = np.max(heights[cols] - rows, axis=1)

        grids = np.zeros((n, self.height + OVERFLOW_ROWS, self.width), dtype=bool)
        grids[:, : self.height] = state.board
        grids[np.arange(n)[:, None], base[:, None] + rows, cols] = True

        # full rows vanish; a cell's height after clearing is the count of kept rows up to it
        kept = ~grids.all(axis=2)
        filled = grids & kept[:, :, None]
        kept_below = np.cumsum(kept, axis=1)
        top = filled.shape[1] - 1 - np.argmax(filled[:, ::-1, :], axis=1)
        after = np.where(filled.any(axis=1), np.take_along_axis(kept_below, top, axis=1), 0)
        holes = after.sum(axis=1) - filled.sum(axis=(1, 2))

        after = np.minimum(after, self.height)
        diffs = np.abs(np.diff(after, axis=1))
        return np.hstack([after, diffs, after.max(axis=1)[:, None], holes[:, None]]).astype(float)

    def feature_table(self, state: TetrisState) -> Tuple[List[Placement], np.ndarray]:
        """Legal placements and the after-state feature vector of each (last state cached)."""
        key = state.key()
        cached = self._feature_cache
        if cached is not None and cached[0] == key:
            return cached[1], cached[2]
        acts = self.placements(state)
        phi = self.afterstate_features(state)
        phi.setflags(write=False)
        self._feature_cache = (key, acts, phi)
        return acts, phi

    def step(
        self, state: TetrisState, action: Placement, rng: np.random.Generator
    ) -> Tuple[TetrisState, float]:
        """
        Commit a placement and draw the next piece uniformly.

        A top-out yields reward 0 and the empty board (a new game).

        Raises:
            IllegalPlacement: If the placement is not legal
        """
        grid, cleared, topped_out = self.afterstate(state, tuple(action))
        piece = int(rng.integers(N_PIECES))
        if topped_out:
            return self.empty_state(piece), 0.0
        board = grid[: self.height].copy()
        board.setflags(write=False)
        return TetrisState(board, piece), float(cleared)

    def play(self, policy, w: np.ndarray, seed: int) -> float:
        """
        Play one game from the empty board until top-out (or max_placements).

        Pieces and policy choices use separate streams split from the seed, so games
        played with the same seed see the same piece sequence.

        Returns:
            Lines cleared in the game
        """
        piece_seq, action_seq = np.random.SeedSequence(seed).spawn(2)
        piece_rng = np.random.default_rng(piece_seq)
        action_rng = np.random.default_rng(action_seq)
        state = self.reset(piece_rng)
        lines = 0.0
        for _ in range(self.max_placements):
            action = policy.sample(state, w, action_rng)
            state, reward = self.step(state, action, piece_rng)
            lines += reward
            if state.is_empty and reward == 0.0:
                break
        return lines

    def evaluate(self, policy, w: np.ndarray, n_episodes: int, seed: int) -> float:
        """Mean lines per game over n_episodes games seeded from ``seed``."""
        seeds = np.random.SeedSequence(seed).generate_state(n_episodes)
        return float(np.mean([self.play(policy, w, int(s)) for s in seeds]))

    def policy(self) -> GibbsPolicy:
        """Gibbs policy over placements with after-state features."""
        return GibbsPolicy(self.n_features, feature_table=self.feature_table)


def board_hash(state: TetrisState) -> str:
    """Stable digest of a state, for determinism checks."""
    return hashlib.sha1(state.key()).hexdigest()
