# ABOUTME: Deterministic PCA reduction of embedding matrices before clustering
# ABOUTME: Fits sign-normalized principal components and serializes them to JSON
# SPDX-License-Identifier: MIT

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

import numpy as np
from sklearn.decomposition import PCA

from .exceptions import FormatError, ParameterError
from .models import MIN_EMBEDDING_DIM, EmbeddingMatrix
from .storage import read_json, write_json

logger = logging.getLogger(__name__)

DEFAULT_TARGET_DIM = 5


class Reducer(Protocol):
    """A fitted projection from embedding space to the clustering space."""

    @property
    def target_dim(self) -> int: ...

    def transform(self, matrix: EmbeddingMatrix) -> EmbeddingMatrix: ...

    def to_dict(self) -> dict[str, Any]: ...


@dataclass(frozen=True, eq=False)
class ReducerModel:
    """Principal components of the training embeddings.

    Each component's largest-magnitude entry is positive, which pins the sign
    that SVD leaves free.
    """

    mean_vector: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def target_dim(self) -> int:
        return int(self.components.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.components.shape[1])

    def transform(self, matrix: EmbeddingMatrix) -> EmbeddingMatrix:
        """Project rows by ``(x - mean) · componentsᵀ``, keeping doc order."""
        if matrix.dimension != self.input_dim:
            raise ParameterError(
                f"Embeddings have dimension {matrix.dimension}, reducer expects {self.input_dim}",
                field="dimension",
                value=matrix.dimension,
            )
        projected = (matrix.vectors - self.mean_vector) @ self.components.T
        return EmbeddingMatrix(projected, matrix.doc_ids, matrix.provider_tag)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "pca",
            "mean": self.mean_vector.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ReducerModel":
        try:
            mean = np.asarray(data["mean"], dtype=np.float64)
            components = np.asarray(data["components"], dtype=np.float64)
            variance = np.asarray(data["explained_variance"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError("Reducer model is missing PCA fields", field="reducer") from e
        if components.ndim != 2 or components.shape[1] != mean.shape[0]:  # noqa: PLR2004
            raise FormatError("Reducer components do not match the mean vector", field="reducer")
        return cls(mean, components, variance)


def _fix_signs(components: np.ndarray) -> np.ndarray:
    fixed = components.copy()
    for row in fixed:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return fixed


def fit_reducer(matrix: EmbeddingMatrix, target_dim: int = DEFAULT_TARGET_DIM) -> ReducerModel:
    """Fit a ``target_dim``-component PCA on ``matrix``.

    Raises:
        ParameterError: If target_dim < 2, target_dim ≥ D, or target_dim ≥ N
    """
    n_rows, dim = len(matrix), matrix.dimension
    if target_dim < MIN_EMBEDDING_DIM:
        raise ParameterError(
            f"target_dim must be at least {MIN_EMBEDDING_DIM}", field="target_dim", value=target_dim
        )
    if target_dim >= dim:
        raise ParameterError(
            f"target_dim {target_dim} must be smaller than the embedding dimension {dim}",
            field="target_dim",
            value=target_dim,
        )
    if target_dim >= n_rows:
        raise ParameterError(
            f"target_dim {target_dim} needs more than {n_rows} documents",
            field="target_dim",
            value=target_dim,
        )

    pca = PCA(n_components=target_dim, svd_solver="full").fit(matrix.vectors)
    model = ReducerModel(
        mean_vector=np.asarray(pca.mean_, dtype=np.float64),
        components=_fix_signs(np.asarray(pca.components_, dtype=np.float64)),
        explained_variance=np.asarray(pca.explained_variance_, dtype=np.float64),
    )
    logger.debug(
        "Fitted reducer %d -> %d dims (%.1f%% variance kept)",
        dim,
        target_dim,
        100.0 * float(np.sum(pca.explained_variance_ratio_)),
    )
    return model


def transform(model: Reducer, matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    return model.transform(matrix)


def save_reducer(model: Reducer, path: str | Path) -> None:
    write_json(path, model.to_dict())


def load_reducer(path: str | Path) -> ReducerModel:
    data = read_json(path)
    if not isinstance(data, dict) or data.get("kind", "pca") != "pca":
        raise FormatError("Unsupported reducer file", field="reducer", details={"path": str(path)})
    return ReducerModel.from_dict(data)
