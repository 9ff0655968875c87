"""
Stage composition behind the CLI subcommands.

Each command method reads what it needs from the lazily built stages (snapshots,
merge maps, corpus, extraction) and hands its tables to an OutputWriter. Only
`fetch` touches the network; every other stage reads the report cache, so `all`
is exactly the subcommands run in order on one configuration.
"""
import logging
from dataclasses import dataclass, field
from datetime import date
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from ctiprof.exceptions import InsufficientDataError
from ctiprof.models.corpus import ReportDocument
from ctiprof.models.entities import (
    Association,
    AttackSnapshot,
    BehaviorKind,
    EntityKind,
    MalpediaSnapshot,
    ReportRef,
    Source,
)
from ctiprof.models.extraction import ExtractionRecord
from ctiprof.models.profiles import (
    Behavior,
    BehaviorClassification,
    BehaviorLabel,
    ProfileKind,
    ProfileSet,
    Scope,
    kind_mask_label,
)
from ctiprof.schemas.corpus import CorpusSummary
from ctiprof.schemas.extraction import (
    AuditRow,
    ExtractionLine,
    ExtractionSummaryRow,
    GroupSpecificExampleRow,
)
from ctiprof.schemas.knowledge import AttackSummary, MalpediaSummary, RefLine
from ctiprof.schemas.pipeline import PipelineConfig
from ctiprof.schemas.rules import RuleTable
from ctiprof.schemas.tables import (
    CdfPoint,
    ClassificationRow,
    CoOccurrenceRow,
    GroupSpecificRow,
    GroupSpecificStats,
    LabelCountRow,
    OverlapRow,
    ProfileRow,
    SimilarityStats,
    SimilarPair,
    SpecificitySummary,
    TopGenericRow,
)
from ctiprof.services.attack_ingest import (
    attack_group_report_urls,
    domain_split,
    load_attack_bundles,
    technique_taxonomy,
)
from ctiprof.services.entity_resolution import MergeMap, build_merge_map, load_rules, rules_for
from ctiprof.services.extraction import (
    assign_extractions,
    extract_document,
    extraction_audit,
    extraction_lines,
    extraction_summary,
    group_specific_examples,
    with_assignments,
)
from ctiprof.services.malpedia_ingest import load_malpedia
from ctiprof.services.outputs import OutputWriter
from ctiprof.services.profiles import (
    ProfileInputs,
    classify_behaviors,
    dataset_overlap_summary,
    group_specific_counts,
    label_counts,
    profiles_for_group,
    profile_similarity_stats,
    profile_size_cdf,
    row_applicable,
    software_kind_hints,
    specificity_table,
    technique_co_occurrence,
    top_generic_rows,
)
from ctiprof.services.report_corpus import Corpus, ReportCache, fetch_corpus_sync, load_corpus, load_refs

logger = logging.getLogger(__name__)

COMMANDS = ("ingest", "merge", "fetch", "extract", "profile", "overlap", "summarize")
TECHNIQUE_KINDS = frozenset({ProfileKind.TECHNIQUE, ProfileKind.TECHNIQUE_EXTRACTED})


def corpus_refs(refs: Iterable[ReportRef]) -> Tuple[ReportRef, ...]:
    """Refs whose reports make up the corpus: group-linked ATT&CK refs and every Malpedia ref"""
    selected = [ref for ref in refs if ref.source == Source.MALPEDIA or ref.linked_groups]
    return tuple(sorted(selected, key=lambda ref: (ref.source.value, ref.url)))


@dataclass(frozen=True)
class KnowledgeBase:
    """Both snapshots plus the merge maps that join them"""
    attack: AttackSnapshot
    malpedia: MalpediaSnapshot
    rules: RuleTable
    group_map: MergeMap
    software_map: MergeMap

    @property
    def catalog_associations(self) -> Tuple[Association, ...]:
        return self.attack.associations + self.malpedia.associations

    @cached_property
    def taxonomy(self) -> FrozenSet[str]:
        return technique_taxonomy(self.attack)

    @cached_property
    def report_refs(self) -> Tuple[ReportRef, ...]:
        return corpus_refs(self.attack.report_refs + self.malpedia.report_refs)

    def behavior_names(self) -> Dict[Behavior, str]:
        names: Dict[Behavior, str] = {}
        for technique in self.attack.techniques:
            names[Behavior(BehaviorKind.TECHNIQUE, technique.id)] = technique.name
        for merged in self.software_map.classes:
            names[Behavior(BehaviorKind.SOFTWARE, str(merged.class_id))] = merged.canonical_name
        return names


@dataclass
class ExtractionResult:
    records: List[ExtractionRecord] = field(default_factory=list)
    associations: List[Association] = field(default_factory=list)


def _read(path: Optional[Path]) -> bytes:
    return path.read_bytes() if path is not None else b""


class Pipeline:
    """One run's stages, built on first use and shared by every command of the run"""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self._corpus: Optional[Corpus] = None

    # ============ Stages ============

    @cached_property
    def attack(self) -> AttackSnapshot:
        if not self.config.stix:
            logger.warning("No STIX bundles given; the ATT&CK side is empty")
            return AttackSnapshot(version="none")
        return load_attack_bundles(
            (path.read_bytes() for path in self.config.stix),
            relationship_citations=self.config.attack_relationship_citations,
        )

    @cached_property
    def malpedia(self) -> MalpediaSnapshot:
        config = self.config
        if not config.has_malpedia:
            logger.warning("No Malpedia inputs given; the Malpedia side is empty")
            return MalpediaSnapshot(retrieved_at=config.malpedia_date or date.min)
        return load_malpedia(
            _read(config.malpedia_actors),
            _read(config.malpedia_families),
            _read(config.malpedia_bib),
            retrieved_at=config.malpedia_date,
            tag_fields=config.malpedia_tag_fields,
            cotag_associations=config.malpedia_cotag_associations,
        )

    @cached_property
    def knowledge_base(self) -> KnowledgeBase:
        rules = load_rules(self.config.rules_file)
        group_map = build_merge_map(
            self.attack.groups + self.malpedia.groups,
            EntityKind.GROUP,
            rules_for(rules, EntityKind.GROUP),
        )
        software_map = build_merge_map(
            self.attack.software + self.malpedia.software,
            EntityKind.SOFTWARE,
            rules_for(rules, EntityKind.SOFTWARE),
        )
        logger.info(f"Merged {len(group_map)} group classes and {len(software_map)} software classes")
        return KnowledgeBase(self.attack, self.malpedia, rules, group_map, software_map)

    @cached_property
    def report_refs(self) -> Tuple[ReportRef, ...]:
        """The corpus URL list: a --refs file when given, otherwise the knowledge bases"""
        if self.config.refs_file is not None:
            return corpus_refs(load_refs(self.config.refs_file))
        return self.knowledge_base.report_refs

    @property
    def corpus(self) -> Corpus:
        """The corpus as the cache holds it (fetched in this run, or loaded offline)"""
        if self._corpus is None:
            self._corpus = load_corpus(self.report_refs, self.config.cache_dir)
        return self._corpus

    def fetch_reports(self) -> Corpus:
        config = self.config
        self._corpus = fetch_corpus_sync(
            self.report_refs,
            config.cache_dir,
            concurrency_limit=config.fetch_concurrency,
            rate_per_host=config.fetch_rate_per_host,
            timeout=config.fetch_timeout,
            max_redirects=config.fetch_max_redirects,
            user_agent=config.user_agent,
            offline=config.offline,
        )
        self.__dict__.pop("extraction", None)
        return self._corpus

    @cached_property
    def extraction(self) -> ExtractionResult:
        kb = self.knowledge_base
        cache = ReportCache(self.config.cache_dir)
        texts: Dict[str, str] = {}
        records = []
        for document in self.corpus.downloaded():
            records.append(self._extract(cache, document, texts))
        records = with_assignments(records, kb.report_refs, kb.group_map)
        associations = assign_extractions(records, kb.report_refs, kb.group_map)
        logger.info(f"Extracted identifiers from {len(records)} reports, {len(associations)} associations")
        return ExtractionResult(records=records, associations=associations)

    def _extract(self, cache: ReportCache, document: ReportDocument, texts: Dict[str, str]) -> ExtractionRecord:
        sha256 = document.content_sha256
        if sha256 not in texts:
            texts[sha256] = cache.text_for(document)
        return extract_document(
            document.ref,
            sha256,
            texts[sha256],
            taxonomy=self.knowledge_base.taxonomy,
            lenient_cve_separators=self.config.lenient_cve_separators,
            keep_unknown_techniques=self.config.keep_unknown_techniques,
        )

    def profile_inputs(self, kind_masks: List[FrozenSet[ProfileKind]]) -> ProfileInputs:
        """Catalog associations, plus report-extracted ones when a mask needs them"""
        kb = self.knowledge_base
        associations = kb.catalog_associations
        extracted_kinds = {ProfileKind.TECHNIQUE_EXTRACTED, ProfileKind.VULNERABILITY}
        if any(mask & extracted_kinds for mask in kind_masks):
            associations = associations + tuple(self.extraction.associations)
        return ProfileInputs(
            group_map=kb.group_map,
            software_map=kb.software_map,
            associations=associations,
            technique_universe=kb.taxonomy,
            collapse_subtechniques=self.config.collapse_subtechniques,
        )

    # ============ Commands ============

    def ingest(self, writer: OutputWriter) -> None:
        writer.require_directory("ingest")
        attack, malpedia = self.attack, self.malpedia
        domains = {
            domain: dict(counts) for domain, counts in domain_split(attack).items()
        }
        writer.document("attack_summary", AttackSummary.from_snapshot(
            attack, len(attack_group_report_urls(attack)), domains
        ))
        writer.document("malpedia_summary", MalpediaSummary.from_snapshot(malpedia))
        refs = sorted(attack.report_refs + malpedia.report_refs, key=lambda ref: (ref.source.value, ref.url))
        writer.jsonl("refs", (RefLine.from_ref(ref) for ref in refs), RefLine)

    def merge(self, writer: OutputWriter) -> None:
        writer.require_directory("merge")
        kb = self.knowledge_base
        writer.merge_map("group_merge_map", kb.group_map)
        writer.merge_map("software_merge_map", kb.software_map)

    def fetch(self, writer: OutputWriter) -> CorpusSummary:
        writer.require_directory("fetch")
        summary = self.fetch_reports().summary
        writer.document("corpus_summary", summary)
        return summary

    def overlap(self, writer: OutputWriter) -> List[OverlapRow]:
        kb = self.knowledge_base
        corpus = self.corpus
        hashes = corpus.hashes_by_source() if corpus.downloaded() else None
        rows = dataset_overlap_summary(kb.attack, kb.malpedia, kb.group_map, kb.software_map, hashes)
        writer.table("overlap", rows, OverlapRow, primary=True, title="Dataset overlap")
        return rows

    def summarize(self, writer: OutputWriter) -> List[SpecificitySummary]:
        rows = list(self.config.kind_rows)
        inputs = self.profile_inputs([mask for _, mask in rows])
        summaries = specificity_table(inputs, self.config.scopes, rows)
        writer.table("specificity_summary", summaries, SpecificitySummary, primary=True, title="Group profiles")
        return summaries

    def extract(self, writer: OutputWriter) -> List[ExtractionSummaryRow]:
        kb = self.knowledge_base
        result = self.extraction
        writer.jsonl("extractions", extraction_lines(result.records, kb.group_map), ExtractionLine)

        summary = extraction_summary(result.records)
        writer.table("extraction_summary", summary, ExtractionSummaryRow, primary=True, title="Extraction")

        inputs = self.profile_inputs([frozenset({ProfileKind.VULNERABILITY})])
        scope = Scope.UNION if self.config.scope is None else self.config.scopes[0]
        vulnerabilities = inputs.build(scope, {ProfileKind.VULNERABILITY})
        classifications = classify_behaviors(vulnerabilities, {})
        writer.table(
            "top_generic_vulnerabilities",
            top_generic_rows(vulnerabilities, classifications, self.config.generic_top_n),
            TopGenericRow,
            title="Top generic vulnerabilities",
        )
        writer.table(
            "group_specific_vulnerabilities",
            group_specific_examples(vulnerabilities, classifications),
            GroupSpecificExampleRow,
            title="Group-specific vulnerabilities",
        )

        catalog = inputs.build(Scope.ATTACK, {ProfileKind.TECHNIQUE})
        extracted = inputs.build(Scope.ATTACK, {ProfileKind.TECHNIQUE_EXTRACTED})
        audit_rows, audit_summary = extraction_audit(catalog, extracted, result.records)
        writer.table("extraction_audit", audit_rows, AuditRow, title="Extracted vs cataloged techniques")
        writer.document("extraction_audit_summary", audit_summary)
        return summary

    def profile(self, writer: OutputWriter) -> List[ProfileRow]:
        config = self.config
        kb = self.knowledge_base
        combinations = [
            (scope, label, mask)
            for label, mask in config.kind_rows
            for scope in config.scopes
            if row_applicable(scope, mask)
        ]
        inputs = self.profile_inputs([mask for _, _, mask in combinations])
        if config.group is not None:
            return self._profile_group(writer, inputs, combinations)

        hints = software_kind_hints(kb.software_map)
        names = kb.behavior_names()
        tables = _ProfileTables()
        for scope, _, mask in combinations:
            profile_set = inputs.build(scope, mask)
            classifications = classify_behaviors(profile_set, hints)
            tables.add(profile_set, classifications, names, config, strict=config.single_combination)

        writer.table("profiles", tables.profiles, ProfileRow, primary=True, title="Group profiles")
        writer.table("classifications", tables.classifications, ClassificationRow, title="Behavior classifications")
        writer.table("label_counts", tables.label_counts, LabelCountRow, title="Behaviors by label")
        writer.table("top_generic", tables.top_generic, TopGenericRow, title="Top generic behaviors")
        writer.table("similarity", tables.similarity, SimilarityStats, title="Profile similarity")
        writer.table("similar_pairs", tables.similar_pairs, SimilarPair, title="Similar group pairs")
        writer.table("co_occurrence", tables.co_occurrence, CoOccurrenceRow, title="Technique co-occurrence")
        writer.table("profile_size_cdf", tables.cdf, CdfPoint, title="Profile size CDF")
        writer.table("group_specific", tables.group_specific, GroupSpecificRow, title="Group-specific behaviors per group")
        writer.table("group_specific_stats", tables.group_specific_stats, GroupSpecificStats, title="Group-specific statistics")
        return tables.profiles

    def _profile_group(self, writer: OutputWriter, inputs: ProfileInputs, combinations) -> List[ProfileRow]:
        kb = self.knowledge_base
        hints = software_kind_hints(kb.software_map)
        names = kb.behavior_names()
        rows: List[ProfileRow] = []
        details: List[ClassificationRow] = []
        profile_sets = [inputs.build(scope, mask) for scope, _, mask in combinations]
        for profile_set, merged, behaviors in profiles_for_group(profile_sets, kb.group_map, self.config.group):
            rows.append(_profile_row(profile_set, merged.class_id, behaviors))
            counts = {item.behavior: item for item in classify_behaviors(profile_set, hints)}
            details += [
                _classification_row(profile_set, counts[behavior], names)
                for behavior in sorted(behaviors, key=Behavior.sort_key)
            ]
            logger.info(
                f"{merged.canonical_name} ({profile_set.scope.value}/{kind_mask_label(profile_set.kind_mask)}): "
                f"{len(behaviors)} behaviors"
            )
        writer.table("group_profile", rows, ProfileRow, primary=True, title=f"Profile of {self.config.group}")
        writer.table("group_behaviors", details, ClassificationRow, title=f"Behaviors of {self.config.group}")
        return rows

    def all(self, writer: OutputWriter) -> None:
        """Every subcommand in order, one configuration"""
        writer.require_directory("all")
        for command in COMMANDS:
            logger.info(f"all: running {command}")
            self.run(command, writer)

    def run(self, command: str, writer: OutputWriter):
        return getattr(self, command)(writer)


# ============ Profile tables ============

def _profile_row(profile_set: ProfileSet, group: int, behaviors: FrozenSet[Behavior]) -> ProfileRow:
    return ProfileRow(
        scope=profile_set.scope.value,
        kinds=kind_mask_label(profile_set.kind_mask),
        group_id=group,
        group=profile_set.name_of(group),
        size=len(behaviors),
        behaviors=" ".join(b.key for b in sorted(behaviors, key=Behavior.sort_key)),
    )


def _classification_row(
    profile_set: ProfileSet,
    item: BehaviorClassification,
    names: Dict[Behavior, str],
) -> ClassificationRow:
    return ClassificationRow(
        scope=profile_set.scope.value,
        kinds=kind_mask_label(profile_set.kind_mask),
        behavior_kind=item.behavior.kind.value,
        behavior=item.behavior.key,
        name=names.get(item.behavior, item.behavior.key),
        group_count=item.group_count,
        label=item.label.value,
        specificity_eligible=item.specificity_eligible,
    )


class _ProfileTables:
    """Accumulates the per-combination tables of the profile command"""

    def __init__(self):
        self.profiles: List[ProfileRow] = []
        self.classifications: List[ClassificationRow] = []
        self.label_counts: List[LabelCountRow] = []
        self.top_generic: List[TopGenericRow] = []
        self.similarity: List[SimilarityStats] = []
        self.similar_pairs: List[SimilarPair] = []
        self.co_occurrence: List[CoOccurrenceRow] = []
        self.cdf: List[CdfPoint] = []
        self.group_specific: List[GroupSpecificRow] = []
        self.group_specific_stats: List[GroupSpecificStats] = []

    def add(
        self,
        profile_set: ProfileSet,
        classifications: List[BehaviorClassification],
        names: Dict[Behavior, str],
        config: PipelineConfig,
        strict: bool,
    ) -> None:
        scope, kinds = profile_set.scope.value, kind_mask_label(profile_set.kind_mask)
        self.profiles += [
            _profile_row(profile_set, group, behaviors) for group, behaviors in profile_set.profiles.items()
        ]
        self.classifications += [_classification_row(profile_set, item, names) for item in classifications]

        for kind, counts in sorted(label_counts(classifications).items(), key=lambda item: item[0].value):
            self.label_counts.append(LabelCountRow(
                scope=scope,
                kinds=kinds,
                behavior_kind=kind.value,
                total=sum(counts.values()),
                unassociated=counts[BehaviorLabel.UNASSOCIATED],
                group_specific=counts[BehaviorLabel.GROUP_SPECIFIC],
                generic=counts[BehaviorLabel.GENERIC],
            ))

        self.top_generic += top_generic_rows(profile_set, classifications, config.generic_top_n, names)

        try:
            stats = profile_similarity_stats(profile_set, config.similarity_threshold)
        except InsufficientDataError as e:
            if strict:
                raise
            logger.warning(f"Skipping similarity for {scope}/{kinds}: {e}")
        else:
            self.similarity.append(stats)
            self.similar_pairs += stats.similar_pairs

        if profile_set.kind_mask & TECHNIQUE_KINDS:
            self.co_occurrence += technique_co_occurrence(profile_set, config.co_occurrence_threshold)

        self.cdf += profile_size_cdf(profile_set)
        rows, stats = group_specific_counts(profile_set, classifications)
        self.group_specific += rows
        self.group_specific_stats.append(stats)
