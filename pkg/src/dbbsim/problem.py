from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dbb_format import DbbTensor
from .errors import ShapeMismatch


@dataclass
class GemmProblem:
    """``output = DAP(activation, a_nnz) @ weight``.

    ``activation`` is a dense ``rows x k`` INT8 matrix (im2col patches);
    ``weight`` is ``k x cols``, dense or a DbbTensor blocked along axis 0.
    Activations are pruned to ``a_nnz`` per block along ``k`` before use.
    """

    activation: np.ndarray
    weight: "np.ndarray | DbbTensor"
    a_nnz: int = 8
    name: str = "gemm"
    seed: int | None = None

    def __post_init__(self):
        self.activation = np.asarray(self.activation)
        if self.activation.ndim != 2:
            raise ShapeMismatch(f"activation must be 2-d, got shape {self.activation.shape}")
        if isinstance(self.weight, DbbTensor):
            if len(self.weight.shape) != 2 or self.weight.axis != 0:
                raise ShapeMismatch("a DBB weight must be 2-d and blocked along axis 0")
            wshape = self.weight.shape
        else:
            self.weight = np.asarray(self.weight)
            if self.weight.ndim != 2:
                raise ShapeMismatch(f"weight must be 2-d, got shape {self.weight.shape}")
            wshape = self.weight.shape
        if wshape[0] != self.activation.shape[1]:
            raise ShapeMismatch(
                f"reduction mismatch: activation {self.activation.shape} vs weight {wshape}"
            )

    @property
    def rows(self) -> int:
        return self.activation.shape[0]

    @property
    def k(self) -> int:
        return self.activation.shape[1]

    @property
    def cols(self) -> int:
        return self.weight.shape[1]

    @property
    def dense_macs(self) -> int:
        return self.rows * self.cols * self.k

    def dense_weight(self) -> np.ndarray:
        if isinstance(self.weight, DbbTensor):
            return self.weight.to_dense()
        return self.weight.astype(np.int8)
