from datetime import date
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from ctiprof.models.entities import AttackSnapshot, MalpediaSnapshot, ReportRef, Source


class RefLine(BaseModel):
    """One line of refs.jsonl"""
    url: str
    source: str
    fqdn: str
    title: Optional[str] = None
    author: Optional[str] = None
    published: Optional[str] = None
    linked_groups: List[str] = []
    linked_software: List[str] = []
    linked_techniques: List[str] = []

    @classmethod
    def from_ref(cls, ref: ReportRef) -> "RefLine":
        return cls(
            url=ref.url,
            source=ref.source.value,
            fqdn=ref.fqdn,
            title=ref.title,
            author=ref.author,
            published=ref.published,
            linked_groups=sorted(ref.linked_groups),
            linked_software=sorted(ref.linked_software),
            linked_techniques=sorted(ref.linked_techniques),
        )

    def to_ref(self) -> ReportRef:
        return ReportRef(
            url=self.url,
            source=Source(self.source),
            fqdn=self.fqdn,
            title=self.title,
            author=self.author,
            published=self.published,
            linked_groups=frozenset(self.linked_groups),
            linked_software=frozenset(self.linked_software),
            linked_techniques=frozenset(self.linked_techniques),
        )


class AttackSummary(BaseModel):
    version: str
    groups: int
    techniques: int
    software: int
    associations: int
    report_refs: int
    group_report_urls: int
    techniques_by_domain: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    skipped_types: Dict[str, int] = Field(default_factory=dict)
    revoked_or_deprecated: int = 0
    dangling_relationships: int = 0
    duplicate_objects: int = 0
    ignored_relationships: Dict[str, int] = Field(default_factory=dict)

    @classmethod
    def from_snapshot(
        cls,
        snapshot: AttackSnapshot,
        group_report_urls: int,
        techniques_by_domain: Dict[str, Dict[str, int]],
    ) -> "AttackSummary":
        diagnostics = snapshot.diagnostics
        return cls(
            version=snapshot.version,
            groups=len(snapshot.groups),
            techniques=len(snapshot.techniques),
            software=len(snapshot.software),
            associations=len(snapshot.associations),
            report_refs=len(snapshot.report_refs),
            group_report_urls=group_report_urls,
            techniques_by_domain=techniques_by_domain,
            skipped_types=dict(diagnostics.skipped_types),
            revoked_or_deprecated=diagnostics.revoked_or_deprecated,
            dangling_relationships=diagnostics.dangling_relationships,
            duplicate_objects=diagnostics.duplicate_objects,
            ignored_relationships=dict(diagnostics.ignored_relationships),
        )


class MalpediaSummary(BaseModel):
    retrieved_at: date
    groups: int
    software: int
    associations: int
    report_refs: int
    bib_entries: int = 0
    bib_without_url: int = 0
    bib_malformed: int = 0
    unknown_tags: Dict[str, int] = Field(default_factory=dict)
    unresolved_attributions: Dict[str, int] = Field(default_factory=dict)

    @classmethod
    def from_snapshot(cls, snapshot: MalpediaSnapshot) -> "MalpediaSummary":
        diagnostics = snapshot.diagnostics
        return cls(
            retrieved_at=snapshot.retrieved_at,
            groups=len(snapshot.groups),
            software=len(snapshot.software),
            associations=len(snapshot.associations),
            report_refs=len(snapshot.report_refs),
            bib_entries=diagnostics.bib_entries,
            bib_without_url=diagnostics.bib_without_url,
            bib_malformed=diagnostics.bib_malformed,
            unknown_tags=dict(diagnostics.unknown_tags),
            unresolved_attributions=dict(diagnostics.unresolved_attributions),
        )
