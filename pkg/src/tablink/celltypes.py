"""Cell type vocabulary shared by the corpus, the classifier and retrieval."""

from __future__ import annotations

import enum


class CellType(enum.IntEnum):
    """Single-label cell types; enum order is also the argmax tie-break order."""

    OTHER = 0
    DATASET = 1
    METHOD = 2
    METRIC = 3
    DATASET_AND_METRIC = 4

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "CellType":
        try:
            return _BY_LABEL[label]
        except KeyError:
            raise ValueError(f"unknown cell type label {label!r}") from None


_LABELS = {
    CellType.OTHER: "other",
    CellType.DATASET: "dataset",
    CellType.METHOD: "method",
    CellType.METRIC: "metric",
    CellType.DATASET_AND_METRIC: "dataset_and_metric",
}
_BY_LABEL = {v: k for k, v in _LABELS.items()}

POSITIVE_TYPES = (
    CellType.DATASET,
    CellType.METHOD,
    CellType.METRIC,
    CellType.DATASET_AND_METRIC,
)

# cell types that proceed to entity linking; metric-only cells have no
# entity ontology in the target KB and are never linked
LINKABLE_TYPES = (CellType.DATASET, CellType.METHOD, CellType.DATASET_AND_METRIC)


def entity_kind_for(cell_type: CellType) -> str | None:
    """KB entity kind used to filter candidates for a cell type.

    Combined dataset+metric cells retrieve dataset entities; non-linkable
    types return None.
    """
    if cell_type == CellType.METHOD:
        return "method"
    if cell_type in (CellType.DATASET, CellType.DATASET_AND_METRIC):
        return "dataset"
    return None
