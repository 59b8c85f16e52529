"""
Dense linear algebra and transfer functions for the Elman network.

Matrices are 2-D float64 arrays in row-major (C) order, vectors are 1-D
float64 arrays. The helpers check shapes and raise ContractViolation rather
than letting numpy broadcast silently.
"""

import numpy as np
from numpy.typing import ArrayLike, NDArray

from heatcast.errors import ContractViolation

Matrix = NDArray[np.float64]
Vector = NDArray[np.float64]


def as_matrix(data: ArrayLike) -> Matrix:
    m = np.array(data, dtype=np.float64, order="C")
    if m.ndim != 2:
        raise ContractViolation(f"Matrix must be 2-D, got {m.ndim}-D.")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ContractViolation(f"Matrix must have rows >= 1 and cols >= 1, got {m.shape}.")
    return m


def as_vector(data: ArrayLike) -> Vector:
    v = np.array(data, dtype=np.float64)
    if v.ndim != 1:
        raise ContractViolation(f"Vector must be 1-D, got {v.ndim}-D.")
    if v.size < 1:
        raise ContractViolation("Vector must have length >= 1.")
    return v


def mat_vec(m: Matrix, v: Vector) -> Vector:
    """Returns m·v."""
    if m.shape[1] != v.shape[0]:
        raise ContractViolation(
            f"mat_vec dimension mismatch: matrix is {m.shape[0]}x{m.shape[1]}, vector has {v.shape[0]}."
        )
    return m @ v


def tanh_sigmoid(v: Vector) -> Vector:
    return np.tanh(v)


def tanh_sigmoid_deriv(activation: Vector) -> Vector:
    """f'(x) expressed through the stored activation a = tanh(x)."""
    return 1.0 - activation * activation


def linear_transfer(v: Vector) -> Vector:
    return np.array(v, dtype=np.float64)


def linear_deriv(v: Vector) -> Vector:
    return np.ones_like(v, dtype=np.float64)


def outer_update(target: Matrix, scale: float, left: Vector, right: Vector) -> Matrix:
    """In place: target[i][j] += scale * left[i] * right[j]. Returns target."""
    if target.shape != (left.shape[0], right.shape[0]):
        raise ContractViolation(
            f"outer_update dimension mismatch: target {target.shape}, "
            f"left {left.shape[0]}, right {right.shape[0]}."
        )
    if scale != 0.0:
        target += scale * np.outer(left, right)
    return target
