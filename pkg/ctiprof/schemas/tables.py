"""
Rows of every emitted table. Field order is column order.
"""
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator


class TableRow(BaseModel):
    """Base for table rows: frozen, field order = CSV column order"""

    class Config:
        frozen = True


# ============ Overlap (dataset summary) ============

class OverlapRow(TableRow):
    data: str
    attack: Optional[int] = None
    malpedia: Optional[int] = None
    intersection: Optional[int] = None
    union: Optional[int] = None
    jaccard: Optional[float] = None
    jaccard_pct: Optional[float] = None


# ============ Specificity ============

class SpecificitySummary(TableRow):
    """One row of the group profile summary: a scope and a kind mask"""
    scope: str
    kinds: str
    profile: str = ""
    applicable: bool = True
    groups_total: int = 0
    groups_nonempty: int = 0
    nonempty_pct: float = 0.0
    groups_with_group_specific: int = 0
    group_specific_pct: float = 0.0

    @model_validator(mode='after')
    def validate_counts(self):
        if not self.groups_with_group_specific <= self.groups_nonempty <= self.groups_total:
            raise ValueError('expected group_specific <= nonempty <= total')
        return self


class ClassificationRow(TableRow):
    scope: str
    kinds: str
    behavior_kind: str
    behavior: str
    name: str
    group_count: int
    label: str
    specificity_eligible: bool


class TopGenericRow(TableRow):
    scope: str
    kinds: str
    rank: int
    behavior_kind: str
    behavior: str
    name: str
    group_count: int
    group_pct: float


class ProfileRow(TableRow):
    scope: str
    kinds: str
    group_id: int
    group: str
    size: int
    behaviors: str  # space-separated behavior keys


class LabelCountRow(TableRow):
    scope: str
    kinds: str
    behavior_kind: str
    total: int
    unassociated: int
    group_specific: int
    generic: int


# ============ Similarity ============

class SimilarPair(TableRow):
    scope: str
    kinds: str
    group_a: str
    group_b: str
    size_a: int
    size_b: int
    shared: int
    jaccard: float


class SimilarityStats(TableRow):
    scope: str
    kinds: str
    profiles: int
    pairs: int
    mean: float
    median: float
    max: float
    threshold: float
    pairs_at_or_above_threshold: int
    similar_pairs: List[SimilarPair] = Field(default_factory=list)


class CoOccurrenceRow(TableRow):
    scope: str
    kinds: str
    behavior_a: str
    behavior_b: str
    groups_a: int
    groups_b: int
    shared: int
    rate: float


class CdfPoint(TableRow):
    scope: str
    kinds: str
    size: int
    groups: int
    cumulative_fraction: float


class GroupSpecificRow(TableRow):
    scope: str
    kinds: str
    group_id: int
    group: str
    profile_size: int
    group_specific: int
    only_group_specific: bool


class GroupSpecificStats(TableRow):
    scope: str
    kinds: str
    groups_nonempty: int
    mean: float
    median: float
    max: int
    max_group: Optional[str] = None
    groups_only_group_specific: int
