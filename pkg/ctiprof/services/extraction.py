"""
CVE and technique ID extraction from report text, and assignment of what was
found to groups.

ATT&CK reports are assigned to every group ATT&CK links them to. Malpedia
reports are assigned only when their labeled groups resolve to a single merged
group; reports naming several groups contribute nothing.
"""
import logging
import re
from typing import AbstractSet, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from ctiprof.models.entities import (
    Association,
    BehaviorKind,
    Provenance,
    ReportRef,
    Source,
)
from ctiprof.models.extraction import ExtractionRecord, TechniqueExtraction
from ctiprof.models.profiles import BehaviorClassification, BehaviorLabel, ProfileKind, ProfileSet, Scope
from ctiprof.schemas.extraction import (
    AuditRow,
    AuditSummary,
    ExtractionLine,
    ExtractionSummaryRow,
    GroupSpecificExampleRow,
)
from ctiprof.services.entity_resolution import MergeMap
from ctiprof.services.profiles import build_profiles

logger = logging.getLogger(__name__)

DASHES = "\u2010\u2011\u2012\u2013\u2014\u2015"

CVE_RE = re.compile(r"\bCVE-(\d{4})-(\d{4,7})\b", re.IGNORECASE | re.ASCII)
CVE_LENIENT_RE = re.compile(
    rf"\bCVE[-{DASHES}\s]+(\d{{4}})[-{DASHES}\s]+(\d{{4,7}})\b", re.IGNORECASE | re.ASCII
)
TECHNIQUE_RE = re.compile(r"\bT\d{4}(?:\.\d{3})?\b", re.ASCII)


def refang(text: str) -> str:
    return text.replace("[.]", ".")


def extract_cve_ids(text: str, lenient_separators: bool = False) -> FrozenSet[str]:
    """CVE IDs, canonicalized to upper case"""
    pattern = CVE_LENIENT_RE if lenient_separators else CVE_RE
    return frozenset(f"CVE-{year}-{number}" for year, number in pattern.findall(refang(text)))


def extract_technique_ids(text: str, taxonomy: Optional[AbstractSet[str]] = None) -> TechniqueExtraction:
    """
    Technique IDs. IDs missing from `taxonomy` are kept and flagged unknown;
    without a taxonomy nothing is flagged.
    """
    ids = frozenset(TECHNIQUE_RE.findall(refang(text)))
    unknown = frozenset(ids - taxonomy) if taxonomy else frozenset()
    return TechniqueExtraction(ids=ids, unknown=unknown)


def extract_document(
    ref: ReportRef,
    sha256: str,
    text: str,
    taxonomy: Optional[AbstractSet[str]] = None,
    lenient_cve_separators: bool = False,
    keep_unknown_techniques: bool = True,
) -> ExtractionRecord:
    techniques = extract_technique_ids(text, taxonomy)
    ids = techniques.ids if keep_unknown_techniques else techniques.known
    return ExtractionRecord(
        report_sha256=sha256,
        url=ref.url,
        source=ref.source,
        cves=extract_cve_ids(text, lenient_cve_separators),
        technique_ids=ids,
        unknown_technique_ids=techniques.unknown & ids,
    )


# ============ Assignment ============

def assigned_classes(ref: ReportRef, group_map: MergeMap) -> FrozenSet[int]:
    """Merged group classes a report's findings go to (MergeMapError on unknown groups)"""
    classes = frozenset(
        group_map.class_of(ref.source, group_id).class_id for group_id in ref.linked_groups
    )
    if ref.source == Source.MALPEDIA and len(classes) != 1:
        return frozenset()
    return classes


def _ref_index(refs: Iterable[ReportRef]) -> Dict[Tuple[Source, str], ReportRef]:
    return {(ref.source, ref.url): ref for ref in refs}


def with_assignments(
    records: Iterable[ExtractionRecord],
    refs: Iterable[ReportRef],
    group_map: MergeMap,
) -> List[ExtractionRecord]:
    """Records with `assigned_groups` filled in"""
    index = _ref_index(refs)
    assigned = []
    for record in records:
        ref = index.get((record.source, record.url))
        classes = assigned_classes(ref, group_map) if ref else frozenset()
        assigned.append(ExtractionRecord(
            report_sha256=record.report_sha256,
            url=record.url,
            source=record.source,
            cves=record.cves,
            technique_ids=record.technique_ids,
            unknown_technique_ids=record.unknown_technique_ids,
            assigned_groups=classes,
        ))
    return assigned


def assign_extractions(
    records: Iterable[ExtractionRecord],
    refs: Iterable[ReportRef],
    group_map: MergeMap,
) -> List[Association]:
    """REPORT_EXTRACTED associations for every assignable report"""
    index = _ref_index(refs)
    associations: Set[Association] = set()
    skipped_multi = 0

    for record in sorted(records, key=lambda r: (r.source.value, r.url)):
        ref = index.get((record.source, record.url))
        if ref is None or not ref.linked_groups:
            continue
        if not assigned_classes(ref, group_map):
            skipped_multi += 1
            continue

        if ref.source == Source.ATTACK:
            group_ids = sorted(ref.linked_groups)
        else:
            # Every label resolves to the same class; one member stands for it
            group_ids = [min(ref.linked_groups)]

        behaviors = [(BehaviorKind.VULNERABILITY, cve) for cve in record.cves]
        behaviors += [(BehaviorKind.TECHNIQUE, technique) for technique in record.technique_ids]
        for group_id in group_ids:
            for kind, behavior_id in behaviors:
                associations.add(Association(
                    group_id=group_id,
                    behavior_id=behavior_id,
                    behavior_kind=kind,
                    provenance=Provenance.REPORT_EXTRACTED,
                    evidence=ref,
                ))

    if skipped_multi:
        logger.info(f"Skipped {skipped_multi} Malpedia reports labeled with several groups")
    return sorted(
        associations,
        key=lambda a: (a.evidence.source.value, a.evidence.url, a.group_id, a.behavior_kind.value, a.behavior_id),
    )


# ============ Profiles ============

def build_vulnerability_profiles(
    group_map: MergeMap,
    software_map: MergeMap,
    associations: Iterable[Association],
    scope: Scope = Scope.UNION,
) -> ProfileSet:
    return build_profiles(group_map, software_map, associations, scope, {ProfileKind.VULNERABILITY})


def build_extended_technique_profiles(
    group_map: MergeMap,
    software_map: MergeMap,
    catalog_associations: Iterable[Association],
    extracted_associations: Iterable[Association],
    scope: Scope = Scope.ATTACK,
    taxonomy: AbstractSet[str] = frozenset(),
    collapse_subtechniques: bool = False,
) -> ProfileSet:
    """Cataloged techniques plus technique IDs extracted from assigned reports"""
    return build_profiles(
        group_map,
        software_map,
        list(catalog_associations) + list(extracted_associations),
        scope,
        {ProfileKind.TECHNIQUE, ProfileKind.TECHNIQUE_EXTRACTED},
        technique_universe=taxonomy,
        collapse_subtechniques=collapse_subtechniques,
    )


# ============ Tables ============

def extraction_lines(records: Iterable[ExtractionRecord], group_map: MergeMap) -> List[ExtractionLine]:
    lines = []
    for record in sorted(records, key=lambda r: (r.source.value, r.url)):
        names = sorted(group_map.get(class_id).canonical_name for class_id in record.assigned_groups)
        lines.append(ExtractionLine(
            sha256=record.report_sha256,
            url=record.url,
            source=record.source.value,
            group=names[0] if len(names) == 1 else None,
            groups=names,
            cves=sorted(record.cves),
            techniques=sorted(record.technique_ids),
            unknown_techniques=sorted(record.unknown_technique_ids),
        ))
    return lines


def _pct(part: int, total: int) -> float:
    return round(100.0 * part / total, 1) if total else 0.0


def _summary_row(dataset: str, records: List[ExtractionRecord]) -> ExtractionSummaryRow:
    # Reports are counted by content hash; the same bytes under two URLs count once
    reports: Dict[str, Tuple[Set[str], Set[str]]] = {}
    cve_groups: Set[int] = set()
    technique_groups: Set[int] = set()
    for record in records:
        cves, techniques = reports.setdefault(record.report_sha256, (set(), set()))
        cves |= record.cves
        techniques |= record.technique_ids
        if record.cves:
            cve_groups |= record.assigned_groups
        if record.technique_ids:
            technique_groups |= record.assigned_groups

    with_cves = sum(1 for cves, _ in reports.values() if cves)
    with_techniques = sum(1 for _, techniques in reports.values() if techniques)
    return ExtractionSummaryRow(
        dataset=dataset,
        reports=len(reports),
        reports_with_cves=with_cves,
        reports_with_cves_pct=_pct(with_cves, len(reports)),
        unique_cves=len(set().union(*(cves for cves, _ in reports.values()))),
        cve_groups=len(cve_groups),
        reports_with_techniques=with_techniques,
        reports_with_techniques_pct=_pct(with_techniques, len(reports)),
        unique_techniques=len(set().union(*(techniques for _, techniques in reports.values()))),
        technique_groups=len(technique_groups),
    )


def extraction_summary(records: Iterable[ExtractionRecord]) -> List[ExtractionSummaryRow]:
    """Per dataset (ATT&CK, Malpedia, All) over reports assigned to a group"""
    eligible = [record for record in records if record.assigned_groups]
    return [
        _summary_row("ATT&CK", [r for r in eligible if r.source == Source.ATTACK]),
        _summary_row("Malpedia", [r for r in eligible if r.source == Source.MALPEDIA]),
        _summary_row("All", eligible),
    ]


def group_specific_examples(
    profile_set: ProfileSet,
    classifications: Iterable[BehaviorClassification],
    n: Optional[int] = None,
) -> List[GroupSpecificExampleRow]:
    """Groups with the most group-specific behaviors, listing them"""
    specific = {
        item.behavior for item in classifications if item.label == BehaviorLabel.GROUP_SPECIFIC
    }
    rows = []
    for group, behaviors in profile_set.profiles.items():
        own = sorted((b for b in behaviors if b in specific), key=lambda b: b.sort_key())
        if own:
            rows.append(GroupSpecificExampleRow(
                group=profile_set.name_of(group),
                count=len(own),
                behaviors=" ".join(b.key for b in own),
            ))
    rows.sort(key=lambda row: (-row.count, row.group))
    return rows[:n] if n is not None else rows


def extraction_audit(
    catalog_profiles: ProfileSet,
    extracted_profiles: ProfileSet,
    records: Iterable[ExtractionRecord] = (),
) -> Tuple[List[AuditRow], AuditSummary]:
    """
    Compare technique IDs extracted from reports with the cataloged techniques,
    group by group. Groups without extracted IDs are left out.
    """
    rows = []
    missing_ids: Set[str] = set()
    missing_pairs = 0
    cataloged_any: Set[str] = set()
    for behaviors in catalog_profiles.profiles.values():
        cataloged_any |= {b.key for b in behaviors}

    extracted_any: Set[str] = set()
    for group, behaviors in sorted(extracted_profiles.profiles.items()):
        extracted = {b.key for b in behaviors}
        if not extracted:
            continue
        cataloged = {b.key for b in catalog_profiles.profiles.get(group, frozenset())}
        not_cataloged = extracted - cataloged
        extracted_any |= extracted
        missing_pairs += len(not_cataloged)
        missing_ids |= not_cataloged - cataloged_any
        rows.append(AuditRow(
            group=extracted_profiles.name_of(group),
            cataloged=len(cataloged),
            extracted=len(extracted),
            extracted_not_cataloged=len(not_cataloged),
            extracted_not_cataloged_ids=" ".join(sorted(not_cataloged)),
        ))

    scoped = [
        r for r in records
        if r.assigned_groups and (extracted_profiles.scope == Scope.UNION or r.source.value == extracted_profiles.scope.value)
    ]
    reports_with_ids = {r.report_sha256 for r in scoped if r.technique_ids}
    summary = AuditSummary(
        reports=len({r.report_sha256 for r in scoped}),
        reports_with_ids=len(reports_with_ids),
        unique_extracted_ids=len(extracted_any),
        unique_cataloged_ids=len(cataloged_any),
        extracted_not_cataloged_ids=len(missing_ids),
        extracted_not_cataloged_pairs=missing_pairs,
        groups=len(rows),
    )
    logger.info(
        f"Audit: {summary.unique_extracted_ids} technique IDs extracted from {summary.reports_with_ids} reports, "
        f"{summary.extracted_not_cataloged_pairs} group/technique pairs missing from the catalog"
    )
    return rows, summary

