"""
Group behavior profiles and specificity metrics.

A profile is the set of behaviors (technique IDs, software classes, CVE IDs) a
merged group is associated with in a source scope. A behavior used by exactly one
group is group-specific, unless it is software ATT&CK classifies as a tool.
"""
import logging
import statistics
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import (
    AbstractSet,
    Collection,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
)

from ctiprof.exceptions import ConfigError, InsufficientDataError, UndefinedInputError
from ctiprof.models.entities import (
    Association,
    AttackSnapshot,
    BehaviorKind,
    MalpediaSnapshot,
    MergedEntity,
    Provenance,
    SoftwareKind,
    Source,
)
from ctiprof.models.profiles import (
    SUMMARY_ROWS,
    Behavior,
    BehaviorClassification,
    BehaviorLabel,
    ProfileKind,
    ProfileSet,
    Scope,
    classify_label,
    kind_mask_label,
)
from ctiprof.schemas.tables import (
    CdfPoint,
    CoOccurrenceRow,
    GroupSpecificRow,
    GroupSpecificStats,
    OverlapRow,
    SimilarityStats,
    SimilarPair,
    SpecificitySummary,
    TopGenericRow,
)
from ctiprof.services.attack_ingest import attack_group_report_urls
from ctiprof.services.entity_resolution import MergeMap

logger = logging.getLogger(__name__)


# ============ Building profiles ============

def _group_source(association: Association) -> Source:
    if association.provenance == Provenance.ATTACK_CATALOG:
        return Source.ATTACK
    if association.provenance == Provenance.MALPEDIA_CATALOG:
        return Source.MALPEDIA
    return association.evidence.source


def _in_scope(association: Association, scope: Scope) -> bool:
    if scope == Scope.UNION:
        return True
    return _group_source(association).value == scope.value


def _profile_kind(association: Association) -> ProfileKind:
    if association.behavior_kind == BehaviorKind.SOFTWARE:
        return ProfileKind.SOFTWARE
    if association.behavior_kind == BehaviorKind.VULNERABILITY:
        return ProfileKind.VULNERABILITY
    if association.provenance == Provenance.REPORT_EXTRACTED:
        return ProfileKind.TECHNIQUE_EXTRACTED
    return ProfileKind.TECHNIQUE


def _technique_key(technique_id: str, collapse_subtechniques: bool) -> str:
    return technique_id.split(".")[0] if collapse_subtechniques else technique_id


def _scope_has(merged: MergedEntity, scope: Scope) -> bool:
    return scope == Scope.UNION or merged.has_source(Source(scope.value))


def build_profiles(
    group_map: MergeMap,
    software_map: MergeMap,
    associations: Iterable[Association],
    scope: Scope,
    kind_mask: Collection[ProfileKind],
    technique_universe: AbstractSet[str] = frozenset(),
    collapse_subtechniques: bool = False,
) -> ProfileSet:
    """
    Profiles for every group class known in the scope.

    `technique_universe` is the technique taxonomy, so techniques no group uses still
    count as unassociated. Associations must resolve through the merge maps;
    MergeMapError is raised otherwise.
    """
    kind_mask = frozenset(kind_mask)
    groups = [merged for merged in group_map.classes if _scope_has(merged, scope)]
    profiles: Dict[int, Set[Behavior]] = {merged.class_id: set() for merged in groups}
    provenance: Dict[Tuple[int, Behavior], Set[Association]] = {}

    for association in associations:
        if _profile_kind(association) not in kind_mask or not _in_scope(association, scope):
            continue

        source = _group_source(association)
        group = group_map.class_of(source, association.group_id).class_id

        if association.behavior_kind == BehaviorKind.SOFTWARE:
            software_source = Source.MALPEDIA if association.provenance == Provenance.MALPEDIA_CATALOG else Source.ATTACK
            key = str(software_map.class_of(software_source, association.behavior_id).class_id)
        elif association.behavior_kind == BehaviorKind.TECHNIQUE:
            key = _technique_key(association.behavior_id, collapse_subtechniques)
        else:
            key = association.behavior_id

        behavior = Behavior(association.behavior_kind, key)
        profiles.setdefault(group, set()).add(behavior)
        provenance.setdefault((group, behavior), set()).add(association)

    universe: Set[Behavior] = set()
    if kind_mask & {ProfileKind.TECHNIQUE, ProfileKind.TECHNIQUE_EXTRACTED}:
        universe |= {
            Behavior(BehaviorKind.TECHNIQUE, _technique_key(t, collapse_subtechniques))
            for t in technique_universe
        }
    if ProfileKind.SOFTWARE in kind_mask:
        universe |= {
            Behavior(BehaviorKind.SOFTWARE, str(merged.class_id))
            for merged in software_map.classes
            if _scope_has(merged, scope)
        }
    for behaviors in profiles.values():
        universe |= behaviors

    profile_set = ProfileSet(
        scope=scope,
        kind_mask=kind_mask,
        profiles={group: frozenset(behaviors) for group, behaviors in sorted(profiles.items())},
        provenance={key: frozenset(value) for key, value in provenance.items()},
        universe=frozenset(universe),
        group_names={merged.class_id: merged.canonical_name for merged in group_map.classes},
    )
    logger.debug(
        f"Profiles {scope.value}/{kind_mask_label(kind_mask)}: "
        f"{len(profile_set.nonempty())}/{profile_set.groups_total} non-empty"
    )
    return profile_set


def software_kind_hints(software_map: MergeMap) -> Dict[int, SoftwareKind]:
    return {merged.class_id: merged.kind_hint for merged in software_map.classes}


def classify_behaviors(
    profile_set: ProfileSet,
    software_kind_hints: Mapping[int, SoftwareKind],
) -> List[BehaviorClassification]:
    """Label every behavior of the universe by how many groups use it"""
    counts = {behavior: len(groups) for behavior, groups in profile_set.groups_by_behavior().items()}
    classifications = []
    for behavior in sorted(profile_set.universe | set(counts), key=Behavior.sort_key):
        eligible = not (
            behavior.kind == BehaviorKind.SOFTWARE
            and software_kind_hints.get(int(behavior.key)) == SoftwareKind.TOOL
        )
        count = counts.get(behavior, 0)
        classifications.append(BehaviorClassification(
            behavior=behavior,
            group_count=count,
            label=classify_label(count, eligible),
            specificity_eligible=eligible,
        ))
    return classifications


def label_counts(classifications: Iterable[BehaviorClassification]) -> Dict[BehaviorKind, Counter]:
    counts: Dict[BehaviorKind, Counter] = {}
    for item in classifications:
        counts.setdefault(item.behavior.kind, Counter())[item.label] += 1
    return counts


# ============ Set metrics ============

def jaccard(a: AbstractSet, b: AbstractSet) -> float:
    """|a ∩ b| / |a ∪ b|; two empty sets are identical (1.0)"""
    union = len(a | b)
    if union == 0:
        return 1.0
    return len(a & b) / union


def co_occurrence_rate(groups_of_a: AbstractSet, groups_of_b: AbstractSet) -> float:
    """|A ∩ B| / max(|A|, |B|) over the group sets of two behaviors"""
    largest = max(len(groups_of_a), len(groups_of_b))
    if largest == 0:
        raise UndefinedInputError("Co-occurrence rate is undefined for two empty sets")
    return len(groups_of_a & groups_of_b) / largest


def _pct(part: int, total: int) -> float:
    return round(100.0 * part / total, 1) if total else 0.0


def profile_similarity_stats(profile_set: ProfileSet, threshold: float = 0.4) -> SimilarityStats:
    """
    Pairwise Jaccard over groups with non-empty profiles. Groups with empty
    profiles take no part in the statistics.
    """
    nonempty = profile_set.nonempty()
    if len(nonempty) < 2:
        raise InsufficientDataError(
            f"Similarity needs at least 2 non-empty profiles, got {len(nonempty)}"
        )

    kinds = kind_mask_label(profile_set.kind_mask)
    values: List[float] = []
    similar: List[SimilarPair] = []
    for a, b in combinations(sorted(nonempty), 2):
        value = jaccard(nonempty[a], nonempty[b])
        values.append(value)
        if value >= threshold:
            similar.append(SimilarPair(
                scope=profile_set.scope.value,
                kinds=kinds,
                group_a=profile_set.name_of(a),
                group_b=profile_set.name_of(b),
                size_a=len(nonempty[a]),
                size_b=len(nonempty[b]),
                shared=len(nonempty[a] & nonempty[b]),
                jaccard=value,
            ))
    similar.sort(key=lambda pair: (-pair.jaccard, pair.group_a, pair.group_b))

    return SimilarityStats(
        scope=profile_set.scope.value,
        kinds=kinds,
        profiles=len(nonempty),
        pairs=len(values),
        mean=statistics.fmean(values),
        median=statistics.median(values),
        max=max(values),
        threshold=threshold,
        pairs_at_or_above_threshold=len(similar),
        similar_pairs=similar,
    )


def technique_co_occurrence(
    profile_set: ProfileSet,
    min_rate: float = 0.75,
    kind: BehaviorKind = BehaviorKind.TECHNIQUE,
) -> List[CoOccurrenceRow]:
    """Behavior pairs whose group sets co-occur at `min_rate` or more"""
    index = {
        behavior: groups
        for behavior, groups in profile_set.groups_by_behavior().items()
        if behavior.kind == kind
    }
    rows = []
    for a, b in combinations(sorted(index, key=Behavior.sort_key), 2):
        rate = co_occurrence_rate(index[a], index[b])
        if rate >= min_rate:
            rows.append(CoOccurrenceRow(
                scope=profile_set.scope.value,
                kinds=kind_mask_label(profile_set.kind_mask),
                behavior_a=a.key,
                behavior_b=b.key,
                groups_a=len(index[a]),
                groups_b=len(index[b]),
                shared=len(index[a] & index[b]),
                rate=rate,
            ))
    rows.sort(key=lambda row: (-row.rate, row.behavior_a, row.behavior_b))
    return rows


# ============ Summaries ============

def specificity_summary(
    profile_set: ProfileSet,
    classifications: Iterable[BehaviorClassification],
    profile: str = "",
    applicable: bool = True,
) -> SpecificitySummary:
    specific = {
        item.behavior for item in classifications if item.label == BehaviorLabel.GROUP_SPECIFIC
    }
    total = profile_set.groups_total
    nonempty = sum(1 for behaviors in profile_set.profiles.values() if behaviors)
    with_specific = sum(1 for behaviors in profile_set.profiles.values() if behaviors & specific)
    return SpecificitySummary(
        scope=profile_set.scope.value,
        kinds=kind_mask_label(profile_set.kind_mask),
        profile=profile,
        applicable=applicable,
        groups_total=total,
        groups_nonempty=nonempty,
        nonempty_pct=_pct(nonempty, total),
        groups_with_group_specific=with_specific,
        group_specific_pct=_pct(with_specific, total),
    )


def top_generic(
    classifications: Iterable[BehaviorClassification],
    n: int,
) -> List[Tuple[Behavior, int]]:
    """Generic behaviors by group count (descending), ties by key ascending"""
    generic = [item for item in classifications if item.label == BehaviorLabel.GENERIC]
    generic.sort(key=lambda item: (-item.group_count, item.behavior.sort_key()))
    return [(item.behavior, item.group_count) for item in generic[:n]]


def top_generic_rows(
    profile_set: ProfileSet,
    classifications: Iterable[BehaviorClassification],
    n: int,
    names: Optional[Mapping[Behavior, str]] = None,
) -> List[TopGenericRow]:
    names = names or {}
    return [
        TopGenericRow(
            scope=profile_set.scope.value,
            kinds=kind_mask_label(profile_set.kind_mask),
            rank=rank,
            behavior_kind=behavior.kind.value,
            behavior=behavior.key,
            name=names.get(behavior, behavior.key),
            group_count=count,
            group_pct=_pct(count, profile_set.groups_total),
        )
        for rank, (behavior, count) in enumerate(top_generic(classifications, n), start=1)
    ]


def profile_size_cdf(profile_set: ProfileSet) -> List[CdfPoint]:
    sizes = Counter(len(behaviors) for behaviors in profile_set.nonempty().values())
    total = sum(sizes.values())
    points = []
    running = 0
    for size in sorted(sizes):
        running += sizes[size]
        points.append(CdfPoint(
            scope=profile_set.scope.value,
            kinds=kind_mask_label(profile_set.kind_mask),
            size=size,
            groups=sizes[size],
            cumulative_fraction=running / total,
        ))
    return points


def group_specific_counts(
    profile_set: ProfileSet,
    classifications: Iterable[BehaviorClassification],
) -> Tuple[List[GroupSpecificRow], GroupSpecificStats]:
    """Per non-empty group: profile size and how many of its behaviors are group-specific"""
    specific = {
        item.behavior for item in classifications if item.label == BehaviorLabel.GROUP_SPECIFIC
    }
    scope, kinds = profile_set.scope.value, kind_mask_label(profile_set.kind_mask)
    rows = []
    for group, behaviors in sorted(profile_set.nonempty().items()):
        count = len(behaviors & specific)
        rows.append(GroupSpecificRow(
            scope=scope,
            kinds=kinds,
            group_id=group,
            group=profile_set.name_of(group),
            profile_size=len(behaviors),
            group_specific=count,
            only_group_specific=count == len(behaviors),
        ))

    counts = [row.group_specific for row in rows]
    top = max(rows, key=lambda row: (row.group_specific, -row.group_id), default=None)
    stats = GroupSpecificStats(
        scope=scope,
        kinds=kinds,
        groups_nonempty=len(rows),
        mean=statistics.fmean(counts) if counts else 0.0,
        median=statistics.median(counts) if counts else 0.0,
        max=top.group_specific if top else 0,
        max_group=top.group if top else None,
        groups_only_group_specific=sum(1 for row in rows if row.only_group_specific),
    )
    return rows, stats


def profile_for_group(
    profile_set: ProfileSet,
    group_map: MergeMap,
    name: str,
) -> Tuple[MergedEntity, FrozenSet[Behavior]]:
    """Look a group up by canonical name, alias or source ID"""
    merged = group_map.find(name)
    if merged is None:
        raise ConfigError(f"Unknown group {name!r}")
    if merged.class_id not in profile_set.profiles:
        raise ConfigError(f"Group {merged.canonical_name!r} is not in the {profile_set.scope.value} scope")
    return merged, profile_set.profiles[merged.class_id]


def profiles_for_group(
    profile_sets: Iterable[ProfileSet],
    group_map: MergeMap,
    name: str,
) -> List[Tuple[ProfileSet, MergedEntity, FrozenSet[Behavior]]]:
    """
    A group's profile in every profile set whose scope contains the group.
    Raises ConfigError for unknown names and for groups no scope contains.
    """
    merged = group_map.find(name)
    if merged is None:
        raise ConfigError(f"Unknown group {name!r}")
    found, skipped = [], []
    for profile_set in profile_sets:
        if merged.class_id in profile_set.profiles:
            found.append((profile_set, *profile_for_group(profile_set, group_map, name)))
        else:
            skipped.append(profile_set.scope.value)
    if not found:
        scopes = ", ".join(dict.fromkeys(skipped)) or "requested"
        raise ConfigError(f"Group {merged.canonical_name!r} is not in the {scopes} scope")
    if skipped:
        logger.info(f"{merged.canonical_name} is not in scope {', '.join(dict.fromkeys(skipped))}; skipped")
    return found


# ============ Tables ============

@dataclass(frozen=True)
class ProfileInputs:
    """Everything build_profiles needs, bundled for the multi-row tables"""
    group_map: MergeMap
    software_map: MergeMap
    associations: Tuple[Association, ...]
    technique_universe: FrozenSet[str] = frozenset()
    collapse_subtechniques: bool = False

    def build(self, scope: Scope, kind_mask: Collection[ProfileKind]) -> ProfileSet:
        return build_profiles(
            self.group_map,
            self.software_map,
            self.associations,
            scope,
            kind_mask,
            technique_universe=self.technique_universe,
            collapse_subtechniques=self.collapse_subtechniques,
        )


def row_applicable(scope: Scope, kind_mask: FrozenSet[ProfileKind]) -> bool:
    # Malpedia has no technique catalog
    return not (scope == Scope.MALPEDIA and kind_mask == frozenset({ProfileKind.TECHNIQUE}))


def specificity_table(
    inputs: ProfileInputs,
    scopes: Sequence[Scope] = (Scope.ATTACK, Scope.MALPEDIA, Scope.UNION),
    rows: Sequence[Tuple[str, FrozenSet[ProfileKind]]] = SUMMARY_ROWS,
) -> List[SpecificitySummary]:
    hints = software_kind_hints(inputs.software_map)
    summaries = []
    for label, kind_mask in rows:
        for scope in scopes:
            profile_set = inputs.build(scope, kind_mask)
            applicable = row_applicable(scope, kind_mask)
            summary = specificity_summary(
                profile_set, classify_behaviors(profile_set, hints), profile=label, applicable=applicable
            )
            summaries.append(summary)
    logger.info(f"Summarized {len(summaries)} scope/profile combinations")
    return summaries


def _overlap_row(label: str, a: AbstractSet, b: AbstractSet) -> OverlapRow:
    value = jaccard(a, b)
    return OverlapRow(
        data=label,
        attack=len(a),
        malpedia=len(b),
        intersection=len(a & b),
        union=len(a | b),
        jaccard=value,
        jaccard_pct=round(100.0 * value, 1),
    )


def dataset_overlap_summary(
    attack_snapshot: AttackSnapshot,
    malpedia_snapshot: MalpediaSnapshot,
    group_map: MergeMap,
    software_map: MergeMap,
    corpus_hashes: Optional[Mapping[Source, AbstractSet[str]]] = None,
) -> List[OverlapRow]:
    """
    Per-source counts, intersection, union and Jaccard for groups, techniques,
    software, report URLs, report FQDNs and (when a corpus is given) report hashes.
    Groups and software are compared as merged classes.
    """
    def classes_with(merge_map: MergeMap, source: Source) -> Set[int]:
        return {merged.class_id for merged in merge_map.classes if merged.has_source(source)}

    attack_urls = {ref.url for ref in attack_group_report_urls(attack_snapshot)}
    malpedia_urls = {ref.url for ref in malpedia_snapshot.report_refs}
    attack_fqdns = {ref.fqdn for ref in attack_group_report_urls(attack_snapshot) if ref.fqdn}
    malpedia_fqdns = {ref.fqdn for ref in malpedia_snapshot.report_refs if ref.fqdn}

    rows = [
        _overlap_row("Groups", classes_with(group_map, Source.ATTACK), classes_with(group_map, Source.MALPEDIA)),
        OverlapRow(
            data="Techniques",
            attack=len(attack_snapshot.techniques),
            union=len(attack_snapshot.techniques),
        ),
        _overlap_row("Software", classes_with(software_map, Source.ATTACK), classes_with(software_map, Source.MALPEDIA)),
        _overlap_row("Report URLs", attack_urls, malpedia_urls),
        _overlap_row("Report FQDNs", attack_fqdns, malpedia_fqdns),
    ]
    if corpus_hashes is not None:
        rows.append(_overlap_row(
            "Reports",
            set(corpus_hashes.get(Source.ATTACK, ())),
            set(corpus_hashes.get(Source.MALPEDIA, ())),
        ))
    else:
        logger.info("No report corpus given; omitting the Reports row")
    return rows
