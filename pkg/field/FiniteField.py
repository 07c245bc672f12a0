from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence

import galois
import numpy as np

from constants import (
    DEFAULT_FIELD_DEGREE,
    DEFAULT_REDUCTION_POLYNOMIAL,
    LOOKUP_TABLE_MAX_DEGREE,
    MAX_FIELD_DEGREE,
)
from errors import DomainMismatch, RankDeficient, ZeroInverse
from utils import get_logger

logger = get_logger(__name__)

# A field element is a 0-d galois array, a field matrix a 2-d one; both carry their field class.
FieldElement = galois.FieldArray
FieldMatrix = galois.FieldArray


@dataclass(frozen=True)
class FieldSpec:
    """
    GF(2^m) defined by an irreducible reduction polynomial.

    Args:
        m (int): Extension degree, 1 <= m <= 16.
        reduction_polynomial (Optional[int]): Bitmask of a degree-m polynomial over GF(2).
            Defaults to 0x11B for m = 8 and to the Conway polynomial otherwise.

    Raises:
        ValueError: If m is out of range or the polynomial is not an irreducible degree-m polynomial.
    """

    m: int = DEFAULT_FIELD_DEGREE
    reduction_polynomial: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.m <= MAX_FIELD_DEGREE:
            raise ValueError(f"Field degree must be in [1, {MAX_FIELD_DEGREE}], got {self.m}")

        poly = self.reduction_polynomial
        if poly is None:
            if self.m == DEFAULT_FIELD_DEGREE:
                poly = DEFAULT_REDUCTION_POLYNOMIAL
            elif self.m == 1:
                poly = 0b11
            else:
                poly = int(galois.conway_poly(2, self.m))

        if poly.bit_length() - 1 != self.m:
            raise ValueError(f"Reduction polynomial {poly:#x} does not have degree {self.m}")
        if not galois.Poly.Int(poly).is_irreducible():
            raise ValueError(f"Reduction polynomial {poly:#x} is reducible over GF(2)")

        object.__setattr__(self, "reduction_polynomial", poly)

    @property
    def order(self) -> int:
        return 2 ** self.m

    @cached_property
    def gf(self):
        """The galois field class; lookup tables for small fields, shift-and-reduce above."""
        if self.m == 1:
            return galois.GF(2)
        compile_mode = "jit-lookup" if self.m <= LOOKUP_TABLE_MAX_DEGREE else "jit-calculate"
        return galois.GF(2 ** self.m, irreducible_poly=self.reduction_polynomial, compile=compile_mode)

    def element(self, value: int) -> FieldElement:
        return self.gf(int(value))

    def array(self, values) -> galois.FieldArray:
        return self.gf(np.asarray(values, dtype=np.int64))

    def zeros(self, shape) -> galois.FieldArray:
        return self.gf.Zeros(shape)

    def random(self, shape, rng: np.random.Generator) -> galois.FieldArray:
        """Uniform draws over the whole field, zero included."""
        return self.gf(rng.integers(0, self.order, size=shape, dtype=np.int64))

    def describe(self) -> str:
        return f"GF(2^{self.m}) mod {self.reduction_polynomial:#x}"


def _same_field(a: galois.FieldArray, b: galois.FieldArray) -> None:
    if type(a) is not type(b):
        raise DomainMismatch(f"Operands belong to different fields: {type(a).name} and {type(b).name}")


def ff_add(a: FieldElement, b: FieldElement) -> FieldElement:
    _same_field(a, b)
    return a + b


def ff_mul(a: FieldElement, b: FieldElement) -> FieldElement:
    _same_field(a, b)
    return a * b


def ff_inv(a: FieldElement) -> FieldElement:
    if int(a) == 0:
        raise ZeroInverse(f"0 has no multiplicative inverse in {type(a).name}")
    return a ** -1


@dataclass(frozen=True)
class SolveResult:
    rank: int
    solution: Optional[galois.FieldArray]
    pivot_rows: List[int]


def _reduce(A: FieldMatrix, B: FieldMatrix):
    """Row-reduce [A | B] on the columns of A; returns the reduced matrix and the pivot columns."""
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError("gaussian elimination expects 2-d matrices")
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"A has {A.shape[0]} rows but B has {B.shape[0]}")
    _same_field(A, B)

    n_cols = A.shape[1]
    augmented = np.concatenate((A, B), axis=1)
    if augmented.shape[0] == 0:
        return augmented, []
    reduced = augmented.row_reduce(ncols=n_cols)

    pivots = []
    for row in reduced[:, :n_cols]:
        nonzero = np.flatnonzero(row)
        if nonzero.size == 0:
            break
        pivots.append(int(nonzero[0]))
    return reduced, pivots


def matrix_rank(A: FieldMatrix) -> int:
    _, pivots = _reduce(A, type(A).Zeros((A.shape[0], 0)))
    return len(pivots)


def gaussian_solve(A: FieldMatrix, B: FieldMatrix) -> SolveResult:
    """
    Solve A @ X = B for X when A (N' x N) has full column rank.

    Pivots are taken as the first nonzero entry by row order, so the trace of a
    decode is reproducible. Rows of A beyond the first N independent ones are
    redundant equations and are dropped.

    Args:
        A (FieldMatrix): Coefficient matrix, one row per collected equation.
        B (FieldMatrix): Right-hand sides, same number of rows as A.

    Returns:
        SolveResult: rank N and the unique X.

    Raises:
        RankDeficient: If rank(A) < N.
    """
    n_unknowns = A.shape[1]
    reduced, pivots = _reduce(A, B)
    rank = len(pivots)
    if rank < n_unknowns:
        raise RankDeficient(rank, n_unknowns)

    # full column rank: the top N rows of the RREF are [I | X]
    solution = reduced[:n_unknowns, n_unknowns:]
    return SolveResult(rank=rank, solution=solution, pivot_rows=list(range(rank)))


def solve_particular(A: FieldMatrix, B: FieldMatrix) -> Optional[galois.FieldArray]:
    """
    One solution X of A @ X = B with every free variable set to zero, or None if inconsistent.
    """
    n_unknowns = A.shape[1]
    reduced, pivots = _reduce(A, B)
    rank = len(pivots)

    rhs = reduced[:, n_unknowns:]
    if rank < reduced.shape[0] and np.any(rhs[rank:] != 0):
        return None

    solution = type(A).Zeros((n_unknowns, B.shape[1]))
    for row, column in enumerate(pivots):
        solution[column] = rhs[row]
    return solution


def batch_rank(stack: galois.FieldArray) -> np.ndarray:
    """
    Rank of every matrix in a (batch, rows, cols) stack, eliminated column by column in lockstep.

    The pivot for each matrix is its first eligible nonzero row, the same rule
    gaussian_solve follows.

    Returns:
        np.ndarray: Integer ranks, shape (batch,).
    """
    if stack.ndim != 3:
        raise ValueError(f"batch_rank expects a 3-d stack, got shape {stack.shape}")

    batch, n_rows, n_cols = stack.shape
    rank = np.zeros(batch, dtype=np.int64)
    if n_rows == 0 or n_cols == 0 or batch == 0:
        return rank

    work = stack.copy()
    row_index = np.arange(n_rows)
    for column in range(n_cols):
        eligible = (work[:, :, column] != 0) & (row_index[None, :] >= rank[:, None])
        active = np.flatnonzero(eligible.any(axis=1))
        if active.size == 0:
            continue

        pivot = np.argmax(eligible[active], axis=1)
        target = rank[active]

        # swap pivot row into position
        pivot_rows = work[active, pivot].copy()
        work[active, pivot] = work[active, target]
        work[active, target] = pivot_rows

        scale = pivot_rows[:, column] ** -1
        pivot_rows = pivot_rows * scale[:, None]
        work[active, target] = pivot_rows

        factors = work[active, :, column].copy()
        factors[np.arange(active.size), target] = 0
        work[active] = work[active] - factors[:, :, None] * pivot_rows[:, None, :]

        rank[active] += 1
    return rank


def dot(coefficients: galois.FieldArray, rows: Sequence[galois.FieldArray]) -> galois.FieldArray:
    """Sum of coefficients[i] * rows[i] over the field."""
    if len(coefficients) != len(rows):
        raise ValueError(f"{len(coefficients)} coefficients for {len(rows)} rows")
    acc = None
    for coefficient, row in zip(coefficients, rows):
        term = coefficient * row
        acc = term if acc is None else acc + term
    return acc
