"""
Knowledge base entities: what ATT&CK and Malpedia describe, before and after merging.

All types are immutable; snapshots are safe to share read-only between threads.
"""
import enum
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from typing import FrozenSet, Optional, Tuple

from ctiprof.utils.net import fqdn_of

TECHNIQUE_ID_RE = re.compile(r"^T\d{4}(\.\d{3})?$")
TACTIC_ID_RE = re.compile(r"^TA\d{4}$")


class Source(str, enum.Enum):
    ATTACK = "attack"
    MALPEDIA = "malpedia"


class EntityKind(str, enum.Enum):
    GROUP = "group"
    SOFTWARE = "software"


class Domain(str, enum.Enum):
    ENTERPRISE = "enterprise"
    MOBILE = "mobile"
    ICS = "ics"


class SoftwareKind(str, enum.Enum):
    TOOL = "tool"
    MALWARE = "malware"
    UNKNOWN = "unknown"  # Malpedia does not classify


class BehaviorKind(str, enum.Enum):
    TECHNIQUE = "technique"
    SOFTWARE = "software"
    VULNERABILITY = "vulnerability"


class Provenance(str, enum.Enum):
    ATTACK_CATALOG = "attack_catalog"
    MALPEDIA_CATALOG = "malpedia_catalog"
    REPORT_EXTRACTED = "report_extracted"


@dataclass(frozen=True)
class SourceEntity:
    """A group or software record as one knowledge base lists it"""
    source: Source
    id: str
    names: Tuple[str, ...]  # primary name first, then aliases
    entity_kind: EntityKind = EntityKind.GROUP

    def __post_init__(self):
        if not self.names:
            raise ValueError(f"{self.source.value}:{self.id} has no names")

    @property
    def primary_name(self) -> str:
        return self.names[0]

    @property
    def member_key(self) -> Tuple[Source, str]:
        return (self.source, self.id)


@dataclass(frozen=True)
class SoftwareEntry(SourceEntity):
    entity_kind: EntityKind = EntityKind.SOFTWARE
    kind: SoftwareKind = SoftwareKind.UNKNOWN

    def __post_init__(self):
        super().__post_init__()
        if self.source == Source.ATTACK and self.kind == SoftwareKind.UNKNOWN:
            raise ValueError(f"ATT&CK software {self.id} must be a tool or malware")
        if self.source == Source.MALPEDIA and self.kind != SoftwareKind.UNKNOWN:
            raise ValueError(f"Malpedia software {self.id} cannot carry a kind")


@dataclass(frozen=True)
class TechniqueEntry:
    id: str
    name: str
    domain: Domain
    tactic_ids: FrozenSet[str] = frozenset()
    parent_id: Optional[str] = None

    def __post_init__(self):
        if not TECHNIQUE_ID_RE.match(self.id):
            raise ValueError(f"Malformed technique ID: {self.id}")
        if ("." in self.id) != (self.parent_id is not None):
            raise ValueError(f"{self.id}: parent_id must be set exactly for sub-techniques")

    @property
    def is_subtechnique(self) -> bool:
        return self.parent_id is not None


@dataclass(frozen=True)
class ReportRef:
    """A threat report URL and the entities the knowledge base links it to"""
    url: str
    source: Source
    fqdn: str = ""
    title: Optional[str] = None
    author: Optional[str] = None
    published: Optional[str] = None
    linked_groups: FrozenSet[str] = frozenset()
    linked_software: FrozenSet[str] = frozenset()
    linked_techniques: FrozenSet[str] = frozenset()

    def __post_init__(self):
        host = fqdn_of(self.url)
        if not self.fqdn:
            object.__setattr__(self, "fqdn", host)
        elif self.fqdn != host:
            raise ValueError(f"fqdn {self.fqdn!r} does not match host of {self.url!r}")

    @property
    def has_linked_entity(self) -> bool:
        return bool(self.linked_groups or self.linked_software or self.linked_techniques)


@dataclass(frozen=True)
class Association:
    """A group -> behavior edge with where it came from"""
    group_id: str
    behavior_id: str
    behavior_kind: BehaviorKind
    provenance: Provenance
    evidence: Optional[ReportRef] = None

    def __post_init__(self):
        if self.provenance == Provenance.REPORT_EXTRACTED and self.evidence is None:
            raise ValueError("Report-extracted associations need an evidence report")

    @property
    def evidence_source(self) -> Optional[Source]:
        return self.evidence.source if self.evidence else None


# ============ Snapshots ============

@dataclass
class AttackDiagnostics:
    skipped_types: Counter = field(default_factory=Counter)
    revoked_or_deprecated: int = 0
    dangling_relationships: int = 0
    duplicate_objects: int = 0
    ignored_relationships: Counter = field(default_factory=Counter)


@dataclass(frozen=True)
class AttackSnapshot:
    version: str
    groups: Tuple[SourceEntity, ...] = ()
    techniques: Tuple[TechniqueEntry, ...] = ()
    software: Tuple[SoftwareEntry, ...] = ()
    associations: Tuple[Association, ...] = ()
    report_refs: Tuple[ReportRef, ...] = ()
    diagnostics: AttackDiagnostics = field(default_factory=AttackDiagnostics, compare=False)


@dataclass
class MalpediaDiagnostics:
    bib_entries: int = 0
    bib_without_url: int = 0
    bib_malformed: int = 0
    unknown_tags: Counter = field(default_factory=Counter)
    unresolved_attributions: Counter = field(default_factory=Counter)


@dataclass(frozen=True)
class MalpediaSnapshot:
    retrieved_at: date
    groups: Tuple[SourceEntity, ...] = ()
    software: Tuple[SoftwareEntry, ...] = ()
    associations: Tuple[Association, ...] = ()
    report_refs: Tuple[ReportRef, ...] = ()
    diagnostics: MalpediaDiagnostics = field(default_factory=MalpediaDiagnostics, compare=False)


# ============ Merged entities ============

@dataclass(frozen=True)
class MergedEntity:
    """An equivalence class of source entities that share a normalized name"""
    class_id: int
    kind: EntityKind
    members: FrozenSet[Tuple[Source, str]]
    canonical_name: str
    normalized_names: FrozenSet[str]
    kind_hint: SoftwareKind = SoftwareKind.UNKNOWN  # Software only: TOOL iff an ATT&CK member is a tool

    @property
    def sources(self) -> FrozenSet[Source]:
        return frozenset(source for source, _ in self.members)

    def has_source(self, source: Source) -> bool:
        return any(member_source == source for member_source, _ in self.members)
