"""
Entity resolution across ATT&CK and Malpedia.

Names are normalized with a data-driven rule table, then every entity that shares
a normalized name or alias with another is merged into one equivalence class
(union-find, so the result does not depend on input order).
"""
import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from pydantic import ValidationError

from ctiprof.exceptions import ConfigError, MergeMapError
from ctiprof.models.entities import (
    EntityKind,
    MergedEntity,
    SoftwareEntry,
    SoftwareKind,
    Source,
    SourceEntity,
)
from ctiprof.schemas.rules import NormalizationRuleSet, RuleTable

logger = logging.getLogger(__name__)

MAX_NORMALIZE_PASSES = 10

MemberKey = Tuple[Source, str]


# ============ Rules ============

def load_rules(path: Optional[Path] = None) -> RuleTable:
    """Load a rule table; None loads the bundled default"""
    try:
        if path is None:
            raw = resources.files("ctiprof.data").joinpath("normalization_rules.json").read_text("utf-8")
        else:
            raw = Path(path).read_text("utf-8")
        return RuleTable.model_validate(json.loads(raw))
    except FileNotFoundError as e:
        raise ConfigError(f"Rules file not found: {path}") from e
    except (json.JSONDecodeError, ValidationError) as e:
        raise ConfigError(f"Invalid rules file {path or '<default>'}: {e}") from e


def rules_for(table: RuleTable, kind: EntityKind) -> NormalizationRuleSet:
    return table.group if kind == EntityKind.GROUP else table.software


# ============ Normalization ============

def _fallback(raw: str) -> str:
    return " ".join(raw.lower().split())


def _normalize(raw: str, rules: NormalizationRuleSet) -> Tuple[str, bool]:
    """
    Apply the rule set until nothing changes.

    Returns (name, edge_eligible). Names consumed entirely by the rules fall back
    to the lower-cased raw string and must not create merge edges.
    """
    current = raw
    for _ in range(MAX_NORMALIZE_PASSES):
        nxt = rules.apply_once(current)
        if nxt == current:
            break
        current = nxt
    else:
        logger.warning(f"Normalization of {raw!r} did not converge; using {current!r}")

    if not current:
        return _fallback(raw), False
    return current, len(current) > 1


def normalize_group_name(raw: str, rules: NormalizationRuleSet) -> str:
    return _normalize(raw, rules)[0]


def normalize_software_name(raw: str, rules: NormalizationRuleSet) -> str:
    return _normalize(raw, rules)[0]


# ============ Merging ============

class _UnionFind:
    """Union-find over entity indexes that refuses unions joining a force-split pair"""

    def __init__(self, size: int, cannot_link: Set[FrozenSet[int]]):
        self.parent = list(range(size))
        self.members: Dict[int, Set[int]] = {i: {i} for i in range(size)}
        self.cannot_link = cannot_link
        self.refused = 0

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return True
        if self.cannot_link and any(
            frozenset((x, y)) in self.cannot_link
            for x in self.members[ra]
            for y in self.members[rb]
        ):
            self.refused += 1
            return False
        # Smaller index wins so roots are stable for a given sorted input
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.members[ra] |= self.members.pop(rb)
        return True


def _parse_member(member: str) -> MemberKey:
    source, _, source_id = member.partition(":")
    return Source(source), source_id


def canonical_name(members: Iterable[SourceEntity]) -> str:
    """
    ATT&CK name wins: primary name of the smallest ATT&CK ID; otherwise the
    smallest Malpedia primary name.
    """
    members = list(members)
    if not members:
        raise ValueError("canonical_name needs at least one member")
    attack = sorted((m for m in members if m.source == Source.ATTACK), key=lambda m: m.id)
    if attack:
        return attack[0].primary_name
    return min(m.primary_name for m in members)


def _kind_hint(members: Sequence[SourceEntity]) -> SoftwareKind:
    kinds = {m.kind for m in members if isinstance(m, SoftwareEntry) and m.source == Source.ATTACK}
    if SoftwareKind.TOOL in kinds:
        return SoftwareKind.TOOL
    if SoftwareKind.MALWARE in kinds:
        return SoftwareKind.MALWARE
    return SoftwareKind.UNKNOWN


def merge_entities(
    entities: Iterable[SourceEntity],
    kind: EntityKind,
    rules: NormalizationRuleSet,
) -> List[MergedEntity]:
    """
    Merge entities sharing any normalized name into classes.

    class_ids are assigned by sorting classes on canonical name, so they are stable
    across runs and independent of input order.
    """
    ordered = sorted(entities, key=lambda e: (e.source.value, e.id))
    index: Dict[MemberKey, int] = {}
    for i, entity in enumerate(ordered):
        if entity.entity_kind != kind:
            raise ValueError(f"{entity.source.value}:{entity.id} is a {entity.entity_kind.value}, not a {kind.value}")
        if entity.member_key in index:
            raise ValueError(f"Duplicate entity {entity.source.value}:{entity.id}")
        index[entity.member_key] = i

    def resolve_pairs(pairs: List[Tuple[str, str]], label: str) -> List[Tuple[int, int]]:
        resolved = []
        for left, right in pairs:
            keys = (_parse_member(left), _parse_member(right))
            if all(key in index for key in keys):
                resolved.append((index[keys[0]], index[keys[1]]))
            else:
                logger.warning(f"Ignoring {label} override {left} / {right}: member not loaded")
        return resolved

    splits = {frozenset(pair) for pair in resolve_pairs(rules.force_split, "force-split")}
    uf = _UnionFind(len(ordered), splits)

    for a, b in resolve_pairs(rules.force_merge, "force-merge"):
        uf.union(a, b)

    eligible_names: List[Set[str]] = []
    first_owner: Dict[str, int] = {}
    for i, entity in enumerate(ordered):
        names = set()
        for raw in entity.names:
            name, eligible = _normalize(raw, rules)
            if eligible:
                names.add(name)
        eligible_names.append(names)
        for name in sorted(names):
            if name in first_owner:
                uf.union(first_owner[name], i)
            else:
                first_owner[name] = i

    if uf.refused:
        logger.info(f"Force-split overrides blocked {uf.refused} {kind.value} merges")

    classes = []
    for root in sorted(uf.members):
        members = [ordered[i] for i in sorted(uf.members[root])]
        classes.append((
            canonical_name(members),
            members,
            frozenset().union(*(eligible_names[i] for i in uf.members[root])),
        ))
    classes.sort(key=lambda c: (c[0], [(m.source.value, m.id) for m in c[1]]))

    merged = [
        MergedEntity(
            class_id=class_id,
            kind=kind,
            members=frozenset(m.member_key for m in members),
            canonical_name=name,
            normalized_names=names,
            kind_hint=_kind_hint(members) if kind == EntityKind.SOFTWARE else SoftwareKind.UNKNOWN,
        )
        for class_id, (name, members, names) in enumerate(classes)
    ]

    shared = sum(1 for m in merged if len(m.sources) > 1)
    logger.info(f"Merged {len(ordered)} {kind.value} entities into {len(merged)} classes ({shared} shared)")
    return merged


# ============ Merge map ============

@dataclass(frozen=True)
class MergeMap:
    """Merged classes of one kind with lookups from source members and names"""
    kind: EntityKind
    classes: Tuple[MergedEntity, ...]
    entities: Dict[MemberKey, SourceEntity] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        by_member = {member: merged for merged in self.classes for member in merged.members}
        object.__setattr__(self, "_by_member", by_member)
        object.__setattr__(self, "_by_id", {merged.class_id: merged for merged in self.classes})

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def get(self, class_id: int) -> MergedEntity:
        try:
            return self._by_id[class_id]
        except KeyError:
            raise MergeMapError(f"Unknown {self.kind.value} class {class_id}") from None

    def class_of(self, source: Source, source_id: str) -> MergedEntity:
        try:
            return self._by_member[(source, source_id)]
        except KeyError:
            raise MergeMapError(f"{self.kind.value} {source.value}:{source_id} is not in the merge map") from None

    def has_member(self, source: Source, source_id: str) -> bool:
        return (source, source_id) in self._by_member

    def find(self, name: str, rules: Optional[NormalizationRuleSet] = None) -> Optional[MergedEntity]:
        """
        Look a class up by canonical name, source ID ("G0032" or "attack:G0032"),
        any member name or alias, or (given rules) a normalized name.
        """
        needle = name.strip()
        lowered = needle.lower()
        for merged in self.classes:
            if merged.canonical_name.lower() == lowered:
                return merged
        for (source, source_id), merged in sorted(self._by_member.items(), key=lambda kv: kv[1].class_id):
            if needle in (source_id, f"{source.value}:{source_id}"):
                return merged
        for merged in self.classes:
            for member in sorted(merged.members, key=lambda m: (m[0].value, m[1])):
                entity = self.entities.get(member)
                if entity and any(alias.lower() == lowered for alias in entity.names):
                    return merged
        if rules is not None:
            normalized, _ = _normalize(needle, rules)
            for merged in self.classes:
                if normalized in merged.normalized_names:
                    return merged
        return None

    def source_counts(self) -> Dict[str, int]:
        attack = sum(1 for m in self.classes if m.has_source(Source.ATTACK))
        malpedia = sum(1 for m in self.classes if m.has_source(Source.MALPEDIA))
        both = sum(1 for m in self.classes if len(m.sources) > 1)
        return {"attack": attack, "malpedia": malpedia, "both": both, "union": len(self.classes)}


def build_merge_map(
    entities: Iterable[SourceEntity],
    kind: EntityKind,
    rules: NormalizationRuleSet,
) -> MergeMap:
    entities = list(entities)
    classes = merge_entities(entities, kind, rules)
    return MergeMap(
        kind=kind,
        classes=tuple(classes),
        entities={entity.member_key: entity for entity in entities},
    )


def write_merge_map_csv(merge_map: MergeMap, path: Path) -> None:
    """Two columns: source:source_id -> class_id/canonical_name"""
    rows = sorted(
        (f"{source.value}:{source_id}", f"{merged.class_id}/{merged.canonical_name}")
        for merged in merge_map.classes
        for source, source_id in merged.members
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
        writer.writerow(["member", "class"])
        writer.writerows(rows)
