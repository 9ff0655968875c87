from ctiprof.models.entities import (
    Association,
    AttackDiagnostics,
    AttackSnapshot,
    BehaviorKind,
    Domain,
    EntityKind,
    MalpediaDiagnostics,
    MalpediaSnapshot,
    MergedEntity,
    Provenance,
    ReportRef,
    SoftwareEntry,
    SoftwareKind,
    Source,
    SourceEntity,
    TechniqueEntry,
)
from ctiprof.models.profiles import (
    ALL_KINDS,
    SUMMARY_ROWS,
    Behavior,
    BehaviorClassification,
    BehaviorLabel,
    ProfileKind,
    ProfileSet,
    Scope,
    kind_mask_label,
    parse_kind_mask,
    parse_scope,
)
from ctiprof.models.corpus import DocumentStatus, MediaKind, ReportDocument
from ctiprof.models.extraction import ExtractionRecord, TechniqueExtraction

__all__ = [
    "Association",
    "AttackDiagnostics",
    "AttackSnapshot",
    "BehaviorKind",
    "Domain",
    "EntityKind",
    "MalpediaDiagnostics",
    "MalpediaSnapshot",
    "MergedEntity",
    "Provenance",
    "ReportRef",
    "SoftwareEntry",
    "SoftwareKind",
    "Source",
    "SourceEntity",
    "TechniqueEntry",
    "Behavior",
    "BehaviorClassification",
    "BehaviorLabel",
    "ProfileKind",
    "ProfileSet",
    "Scope",
    "ALL_KINDS",
    "SUMMARY_ROWS",
    "kind_mask_label",
    "parse_kind_mask",
    "parse_scope",
    "DocumentStatus",
    "MediaKind",
    "ReportDocument",
    "ExtractionRecord",
    "TechniqueExtraction",
]
