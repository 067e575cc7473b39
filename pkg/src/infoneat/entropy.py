"""Matrix-based Rényi entropy estimators.

Entropies are functionals of the eigenvalue spectrum of a trace-normalised
kernel Gram matrix, so no density estimate is ever formed. Joint quantities
use the Hadamard product of the individual Gram matrices.

Example:
    from infoneat.entropy import PARTITION_KERNEL, gram_matrix, renyi_entropy

    a = gram_matrix(samples, PARTITION_KERNEL)
    bits = renyi_entropy(a)
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from typing import TypeAlias

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, eigh
from scipy.spatial.distance import pdist, squareform

from .exceptions import InputError, NumericError, SizeError

DEFAULT_ALPHA = 1.01

# Round-off tolerances
EIGEN_FLOOR = 1e-9
ENTROPY_FLOOR = 1e-6
SYMMETRY_TOL = 1e-12
TRACE_TOL = 1e-9

# Bits, floored at zero within ENTROPY_FLOOR
EntropyValue: TypeAlias = float


class KernelKind(str, Enum):
    """Kernel families usable for Gram matrices."""

    GAUSSIAN = "gaussian"  # continuous activations
    PARTITION = "partition"  # exact-match, discrete labels


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice for :func:`gram_matrix`.

    A gaussian kernel without a bandwidth uses the median pairwise distance
    of the samples it is applied to.
    """

    kind: KernelKind = KernelKind.GAUSSIAN
    bandwidth: float | None = None

    def __post_init__(self) -> None:
        if self.kind is KernelKind.GAUSSIAN and self.bandwidth is not None:
            if not self.bandwidth > 0:
                raise InputError(
                    f"Gaussian bandwidth must be positive, got {self.bandwidth}"
                )


PARTITION_KERNEL = KernelSpec(KernelKind.PARTITION)
GAUSSIAN_KERNEL = KernelSpec(KernelKind.GAUSSIAN)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Trace-normalised symmetric PSD kernel matrix over ``n`` samples."""

    data: NDArray[np.float64]

    def __post_init__(self) -> None:
        data = self.data
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise InputError(f"Gram matrix must be square, got shape {data.shape}")
        if data.shape[0] < 2:
            raise SizeError(2, data.shape[0])
        if not np.all(np.isfinite(data)):
            raise InputError("Gram matrix contains non-finite entries")
        if not np.allclose(data, data.T, rtol=0.0, atol=SYMMETRY_TOL):
            raise InputError("Gram matrix is not symmetric")
        trace = float(np.trace(data))
        if abs(trace - 1.0) > TRACE_TOL:
            raise InputError(f"Gram matrix trace must be 1, got {trace!r}")

    @property
    def n(self) -> int:
        return int(self.data.shape[0])

    @classmethod
    def from_kernel(cls, kernel: NDArray[np.float64]) -> GramMatrix:
        """Normalise raw kernel values: A_ij = K_ij / (n sqrt(K_ii K_jj))."""
        n = kernel.shape[0]
        diag = np.sqrt(np.diag(kernel))
        return cls(kernel / (n * np.outer(diag, diag)))

    def unit(self) -> NDArray[np.float64]:
        """The underlying kernel rescaled to a unit diagonal."""
        diag = np.diag(self.data)
        return self.data / np.sqrt(np.outer(diag, diag))


def _as_samples(samples: ArrayLike) -> NDArray[np.float64]:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2:
        raise InputError(f"Samples must be a 1-D or 2-D array, got {x.ndim}-D")
    return x


def median_bandwidth(samples: ArrayLike) -> float:
    """Median of the nonzero pairwise distances; 1.0 for coincident samples."""
    x = _as_samples(samples)
    distances = pdist(x, "euclidean")
    distances = distances[distances > 0]
    if distances.size == 0:
        return 1.0
    return float(np.median(distances))


def gram_matrix(samples: ArrayLike, kernel: KernelSpec = GAUSSIAN_KERNEL) -> GramMatrix:
    """Evaluate ``kernel`` over all sample pairs and trace-normalise.

    Args:
        samples: n×d matrix (or length-n vector) of finite values
        kernel: Kernel family and bandwidth

    Raises:
        SizeError: If fewer than two samples are supplied
        InputError: If any entry is NaN or infinite
    """
    x = _as_samples(samples)
    n = x.shape[0]
    if n < 2:
        raise SizeError(2, n)
    if not np.all(np.isfinite(x)):
        raise InputError("Samples contain non-finite values")

    if kernel.kind is KernelKind.PARTITION:
        _, codes = np.unique(x, axis=0, return_inverse=True)
        codes = codes.reshape(-1)
        raw = (codes[:, None] == codes[None, :]).astype(np.float64)
    else:
        sigma = kernel.bandwidth
        if sigma is None:
            sigma = median_bandwidth(x)
        squared = squareform(pdist(x, "sqeuclidean"))
        raw = np.exp(-squared / (2.0 * sigma * sigma))

    return GramMatrix.from_kernel(raw)


def label_gram(labels: ArrayLike, n_classes: int | None = None) -> GramMatrix:
    """Partition Gram matrix of one-hot encoded class ids."""
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.size and y.min() < 0:
        raise InputError("Class ids must be non-negative")
    width = n_classes if n_classes is not None else int(y.max()) + 1
    if y.size and y.max() >= width:
        raise InputError(f"Class id {int(y.max())} out of range for {width} classes")
    onehot = np.eye(width, dtype=np.float64)[y]
    return gram_matrix(onehot, PARTITION_KERNEL)


def activation_gram(
    outputs: ArrayLike,
    kernel: KernelSpec = GAUSSIAN_KERNEL,
) -> list[GramMatrix]:
    """One Gram matrix per unit (column) of a layer's activation matrix."""
    x = _as_samples(outputs)
    if x.shape[1] < 1:
        raise InputError("Activation matrix has no units")
    return [gram_matrix(x[:, unit], kernel) for unit in range(x.shape[1])]


def _check_alpha(alpha: float) -> None:
    if not alpha > 0 or alpha == 1.0:
        raise InputError(f"alpha must be positive and different from 1, got {alpha}")


def _floor(value: float) -> EntropyValue:
    if -ENTROPY_FLOOR <= value < 0.0:
        return 0.0
    return value


def _spectrum(matrix: NDArray[np.float64]) -> NDArray[np.float64]:
    try:
        eigenvalues = eigh(matrix, eigvals_only=True, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise NumericError(f"Eigendecomposition failed: {exc}") from exc
    smallest = float(eigenvalues.min())
    if smallest < -EIGEN_FLOOR:
        raise NumericError(
            f"Matrix is not positive semidefinite (eigenvalue {smallest:.3e})"
        )
    return np.clip(eigenvalues, 0.0, 1.0)


def _spectral_entropy(matrix: NDArray[np.float64], alpha: float) -> float:
    eigenvalues = _spectrum(matrix)
    power = float(np.sum(eigenvalues**alpha))
    if power <= 0.0:
        raise NumericError("Spectrum vanished; matrix has zero trace")
    return _floor(math.log2(power) / (1.0 - alpha))


def renyi_entropy(a: GramMatrix, alpha: float = DEFAULT_ALPHA) -> EntropyValue:
    """Rényi α-entropy in bits of a normalised Gram matrix."""
    _check_alpha(alpha)
    return _spectral_entropy(a.data, alpha)


def _same_size(mats: Sequence[GramMatrix]) -> int:
    if not mats:
        raise InputError("At least one Gram matrix is required")
    n = mats[0].n
    for index, mat in enumerate(mats):
        if mat.n != n:
            raise InputError(
                f"Gram matrix {index} has {mat.n} samples, expected {n}"
            )
    return n


def _hadamard(mats: Sequence[GramMatrix]) -> NDArray[np.float64]:
    # Unit-diagonal factors keep long products away from underflow.
    product = mats[0].unit()
    for mat in mats[1:]:
        product = product * mat.unit()
    return product / np.trace(product)


def joint_entropy(
    mats: Sequence[GramMatrix], alpha: float = DEFAULT_ALPHA
) -> EntropyValue:
    """Joint Rényi α-entropy of the variables behind ``mats``.

    Raises:
        InputError: If the list is empty or the matrices differ in size
    """
    _check_alpha(alpha)
    _same_size(mats)
    return _spectral_entropy(_hadamard(mats), alpha)


def mutual_information(
    a_set: Sequence[GramMatrix],
    b_set: Sequence[GramMatrix],
    alpha: float = DEFAULT_ALPHA,
) -> EntropyValue:
    """I(A; B) = H(A) + H(B) - H(A, B), floored at zero within tolerance."""
    _check_alpha(alpha)
    _same_size([*a_set, *b_set])
    h_a = _spectral_entropy(_hadamard(a_set), alpha)
    h_b = _spectral_entropy(_hadamard(b_set), alpha)
    h_ab = _spectral_entropy(_hadamard([*a_set, *b_set]), alpha)
    return _floor((h_a + h_b) - h_ab)


def cmi(
    c_set: Sequence[GramMatrix],
    b: GramMatrix,
    a_set: Sequence[GramMatrix],
    alpha: float = DEFAULT_ALPHA,
) -> EntropyValue:
    """Conditional mutual information I(C; B | A) in bits.

    Combines four joint entropies:
    H(A,C) + H(A,B) - H(A) - H(A,B,C).

    Raises:
        InputError: If a set is empty or the matrices differ in size
    """
    _check_alpha(alpha)
    if not c_set or not a_set:
        raise InputError("Both conditioning and target sets must be non-empty")
    _same_size([*c_set, b, *a_set])

    h_ac = _spectral_entropy(_hadamard([*a_set, *c_set]), alpha)
    h_ab = _spectral_entropy(_hadamard([*a_set, b]), alpha)
    h_a = _spectral_entropy(_hadamard(a_set), alpha)
    h_abc = _spectral_entropy(_hadamard([*a_set, b, *c_set]), alpha)
    return _floor((h_ac + h_ab) - (h_a + h_abc))
