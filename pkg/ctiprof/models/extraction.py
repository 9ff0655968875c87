"""
Identifiers extracted from report text
"""
import re
from dataclasses import dataclass
from typing import FrozenSet, Optional

from ctiprof.models.entities import Source

CVE_ID_RE = re.compile(r"^CVE-\d{4}-\d{4,7}$")
TECHNIQUE_ID_RE = re.compile(r"^T\d{4}(\.\d{3})?$")


@dataclass(frozen=True)
class TechniqueExtraction:
    """Technique IDs found in a text; `unknown` is the subset missing from the taxonomy"""
    ids: FrozenSet[str] = frozenset()
    unknown: FrozenSet[str] = frozenset()

    @property
    def known(self) -> FrozenSet[str]:
        return self.ids - self.unknown


@dataclass(frozen=True)
class ExtractionRecord:
    report_sha256: str
    url: str
    source: Source
    cves: FrozenSet[str] = frozenset()
    technique_ids: FrozenSet[str] = frozenset()
    unknown_technique_ids: FrozenSet[str] = frozenset()
    assigned_groups: FrozenSet[int] = frozenset()  # merged group class_ids

    def __post_init__(self):
        for cve in self.cves:
            if not CVE_ID_RE.match(cve):
                raise ValueError(f"Malformed CVE ID: {cve}")
        for technique in self.technique_ids:
            if not TECHNIQUE_ID_RE.match(technique):
                raise ValueError(f"Malformed technique ID: {technique}")
        if not self.unknown_technique_ids <= self.technique_ids:
            raise ValueError("unknown technique IDs must be a subset of technique_ids")
        if self.source == Source.MALPEDIA and len(self.assigned_groups) > 1:
            raise ValueError(f"{self.url}: Malpedia reports assign to at most one group")

    @property
    def assigned_group(self) -> Optional[int]:
        if len(self.assigned_groups) == 1:
            return next(iter(self.assigned_groups))
        return None
