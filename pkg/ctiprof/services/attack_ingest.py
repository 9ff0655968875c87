"""
ATT&CK STIX 2.1 ingestion.

Turns one or more ATT&CK release bundles (enterprise, mobile, ICS, or a merged
bundle) into an AttackSnapshot: groups, techniques, software, group -> behavior
associations from "uses" relationships, and the report URLs cited for groups.

Bundle objects are loaded into a stix2 MemoryStore and read back with Filter
queries; the store keeps every version of an object and `get` returns the newest.
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple, Union

from stix2 import Filter, MemoryStore
from stix2.exceptions import STIXError
from stix2.utils import get_type_from_id

from ctiprof.exceptions import BundleParseError
from ctiprof.models.entities import (
    Association,
    AttackDiagnostics,
    AttackSnapshot,
    BehaviorKind,
    Domain,
    Provenance,
    ReportRef,
    SoftwareEntry,
    SoftwareKind,
    Source,
    SourceEntity,
    TechniqueEntry,
)

logger = logging.getLogger(__name__)

# external_references source names that carry the ATT&CK ID of the object itself
ATTACK_SOURCE_NAMES = {"mitre-attack", "mitre-mobile-attack", "mitre-ics-attack"}

DOMAIN_BY_NAME = {
    "enterprise-attack": Domain.ENTERPRISE,
    "mobile-attack": Domain.MOBILE,
    "ics-attack": Domain.ICS,
}
DOMAIN_BY_KILL_CHAIN = {
    "mitre-attack": Domain.ENTERPRISE,
    "mitre-mobile-attack": Domain.MOBILE,
    "mitre-ics-attack": Domain.ICS,
}
KILL_CHAIN_BY_DOMAIN = {domain: chain for chain, domain in DOMAIN_BY_KILL_CHAIN.items()}

ENTITY_TYPES = ("intrusion-set", "attack-pattern", "malware", "tool")

# Types the snapshot is built from; everything else is counted as skipped
CONSUMED_TYPES = {*ENTITY_TYPES, "relationship", "x-mitre-tactic", "x-mitre-collection"}

BundleInput = Union[bytes, str]


# ============ Bundle loading ============

def _decode_bundle(bundle: BundleInput) -> list:
    """The bundle's object list; offsets in errors count bytes of the input"""
    if isinstance(bundle, bytes):
        try:
            text = bundle.decode("utf-8")
        except UnicodeDecodeError as e:
            raise BundleParseError(f"STIX bundle is not UTF-8: {e.reason}", offset=e.start) from e
    else:
        text = bundle
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise BundleParseError(f"Malformed STIX JSON: {e.msg}", offset=offset) from e

    if not isinstance(data, dict) or not isinstance(data.get("objects"), list):
        raise BundleParseError("Not a STIX bundle: missing 'objects' list")
    return data["objects"]


def _load_store(bundles: Iterable[BundleInput], diagnostics: AttackDiagnostics) -> Tuple[MemoryStore, str]:
    store = MemoryStore()
    seen: Counter = Counter()
    versions: Set[str] = set()

    for bundle in bundles:
        for obj in _decode_bundle(bundle):
            if not isinstance(obj, dict) or "id" not in obj or "type" not in obj:
                diagnostics.skipped_types["<invalid>"] += 1
                continue
            try:
                store.add(obj)
            except (STIXError, ValueError) as e:
                logger.warning(f"Skipping invalid STIX object {obj['id']}: {e}")
                diagnostics.skipped_types["<invalid>"] += 1
                continue
            seen[obj["id"]] += 1
            if obj["type"] == "x-mitre-collection" and obj.get("x_mitre_version"):
                versions.add(str(obj["x_mitre_version"]))

    diagnostics.duplicate_objects = sum(count - 1 for count in seen.values())
    return store, "/".join(sorted(versions)) or "unknown"


def _current(store: MemoryStore, *filters: Filter) -> list:
    """Newest version of every object matching the filters, in STIX id order"""
    stix_ids = sorted({obj["id"] for obj in store.query(list(filters))})
    return [store.get(stix_id) for stix_id in stix_ids]


def _is_active(obj) -> bool:
    return not obj.get("revoked", False) and not obj.get("x_mitre_deprecated", False)


def _active(store: MemoryStore, diagnostics: AttackDiagnostics, *filters: Filter) -> list:
    objects = []
    for obj in _current(store, *filters):
        if _is_active(obj):
            objects.append(obj)
        else:
            diagnostics.revoked_or_deprecated += 1
    return objects


# ============ Object fields ============

def _attack_id(obj) -> Optional[str]:
    for ref in obj.get("external_references", []) or []:
        if ref.get("source_name") in ATTACK_SOURCE_NAMES and ref.get("external_id"):
            return ref["external_id"]
    return None


def _unique_names(*candidates: Iterable[str]) -> Tuple[str, ...]:
    names: List[str] = []
    for group in candidates:
        for name in group or []:
            name = (name or "").strip()
            if name and name not in names:
                names.append(name)
    return tuple(names)


def _object_domain(obj) -> Optional[Domain]:
    for name in obj.get("x_mitre_domains", []) or []:
        if name in DOMAIN_BY_NAME:
            return DOMAIN_BY_NAME[name]
    for phase in obj.get("kill_chain_phases", []) or []:
        if phase.get("kill_chain_name") in DOMAIN_BY_KILL_CHAIN:
            return DOMAIN_BY_KILL_CHAIN[phase["kill_chain_name"]]
    return None


@dataclass
class _RefBuilder:
    """Accumulates the entities linked to one URL before freezing it into a ReportRef"""
    url: str
    title: Optional[str] = None
    groups: Set[str] = field(default_factory=set)
    software: Set[str] = field(default_factory=set)
    techniques: Set[str] = field(default_factory=set)

    def build(self) -> ReportRef:
        return ReportRef(
            url=self.url,
            source=Source.ATTACK,
            title=self.title,
            linked_groups=frozenset(self.groups),
            linked_software=frozenset(self.software),
            linked_techniques=frozenset(self.techniques),
        )


def _collect_refs(refs: Dict[str, _RefBuilder], obj, owner_id: str, owner: str) -> None:
    for ext in obj.get("external_references", []) or []:
        url = (ext.get("url") or "").strip()
        if not url or ext.get("source_name") in ATTACK_SOURCE_NAMES:
            continue
        builder = refs.setdefault(url, _RefBuilder(url=url))
        if builder.title is None:
            builder.title = ext.get("source_name")
        getattr(builder, owner).add(owner_id)


# ============ Snapshot ============

def load_attack_bundles(
    bundles: Iterable[BundleInput],
    relationship_citations: bool = False,
) -> AttackSnapshot:
    """
    Load several ATT&CK bundles (one per domain, or merged) into one snapshot.

    Group report refs are the external references of group objects. With
    `relationship_citations`, the citations on a group's "uses" relationships
    are linked to the group as well.
    """
    diagnostics = AttackDiagnostics()
    store, version = _load_store(bundles, diagnostics)

    diagnostics.skipped_types.update(
        obj["type"] for obj in _current(store, *(Filter("type", "!=", kind) for kind in CONSUMED_TYPES))
    )

    # Tactic short names repeat across domains, so key them by kill chain too
    tactic_ids: Dict[Tuple[str, str], str] = {}
    for obj in _active(store, diagnostics, Filter("type", "=", "x-mitre-tactic")):
        tactic_id = _attack_id(obj)
        domain = _object_domain(obj)
        if tactic_id and domain and obj.get("x_mitre_shortname"):
            tactic_ids[(KILL_CHAIN_BY_DOMAIN[domain], obj["x_mitre_shortname"])] = tactic_id

    groups: Dict[str, SourceEntity] = {}
    techniques: Dict[str, TechniqueEntry] = {}
    software: Dict[str, SoftwareEntry] = {}
    attack_ids: Dict[str, str] = {}  # STIX id -> ATT&CK id for groups/techniques/software
    refs: Dict[str, _RefBuilder] = {}

    for kind in ENTITY_TYPES:
        for obj in _active(store, diagnostics, Filter("type", "=", kind)):
            attack_id = _attack_id(obj)
            if attack_id is None:
                logger.warning(f"Skipping {kind} {obj['id']}: no ATT&CK external ID")
                diagnostics.skipped_types[f"{kind}:no-attack-id"] += 1
                continue

            if kind == "intrusion-set":
                groups[attack_id] = SourceEntity(
                    source=Source.ATTACK,
                    id=attack_id,
                    names=_unique_names([obj.get("name", attack_id)], obj.get("aliases")),
                )
                _collect_refs(refs, obj, attack_id, "groups")

            elif kind == "attack-pattern":
                domain = _object_domain(obj)
                if domain is None:
                    logger.warning(f"Skipping technique {attack_id}: no domain")
                    diagnostics.skipped_types["attack-pattern:no-domain"] += 1
                    continue
                tactics = frozenset(
                    tactic_ids[(phase.get("kill_chain_name"), phase.get("phase_name"))]
                    for phase in obj.get("kill_chain_phases", []) or []
                    if (phase.get("kill_chain_name"), phase.get("phase_name")) in tactic_ids
                )
                techniques[attack_id] = TechniqueEntry(
                    id=attack_id,
                    name=obj.get("name", attack_id),
                    domain=domain,
                    tactic_ids=tactics,
                    parent_id=attack_id.split(".")[0] if "." in attack_id else None,
                )
                _collect_refs(refs, obj, attack_id, "techniques")

            else:
                software[attack_id] = SoftwareEntry(
                    source=Source.ATTACK,
                    id=attack_id,
                    names=_unique_names([obj.get("name", attack_id)], obj.get("x_mitre_aliases")),
                    kind=SoftwareKind.TOOL if kind == "tool" else SoftwareKind.MALWARE,
                )
                _collect_refs(refs, obj, attack_id, "software")
            attack_ids[obj["id"]] = attack_id

    relationship = Filter("type", "=", "relationship")
    for obj in _active(store, diagnostics, relationship, Filter("relationship_type", "!=", "uses")):
        diagnostics.ignored_relationships[obj["relationship_type"]] += 1

    associations: Set[Association] = set()
    for obj in _active(store, diagnostics, relationship, Filter("relationship_type", "=", "uses")):
        source_ref, target_ref = obj["source_ref"], obj["target_ref"]
        if get_type_from_id(source_ref) != "intrusion-set":
            diagnostics.ignored_relationships[f"uses:{get_type_from_id(source_ref)}"] += 1
            continue
        if source_ref not in attack_ids or target_ref not in attack_ids:
            diagnostics.dangling_relationships += 1
            continue

        target_type = get_type_from_id(target_ref)
        if target_type == "attack-pattern":
            behavior_kind = BehaviorKind.TECHNIQUE
        elif target_type in {"malware", "tool"}:
            behavior_kind = BehaviorKind.SOFTWARE
        else:
            diagnostics.ignored_relationships[f"uses:{target_type}"] += 1
            continue

        group_id = attack_ids[source_ref]
        associations.add(Association(
            group_id=group_id,
            behavior_id=attack_ids[target_ref],
            behavior_kind=behavior_kind,
            provenance=Provenance.ATTACK_CATALOG,
        ))
        if relationship_citations:
            _collect_refs(refs, obj, group_id, "groups")

    snapshot = AttackSnapshot(
        version=version,
        groups=tuple(groups[key] for key in sorted(groups)),
        techniques=tuple(techniques[key] for key in sorted(techniques)),
        software=tuple(software[key] for key in sorted(software)),
        associations=tuple(sorted(
            associations, key=lambda a: (a.group_id, a.behavior_kind.value, a.behavior_id)
        )),
        report_refs=tuple(refs[url].build() for url in sorted(refs)),
        diagnostics=diagnostics,
    )

    logger.info(
        f"ATT&CK {snapshot.version}: {len(snapshot.groups)} groups, "
        f"{len(snapshot.techniques)} techniques, {len(snapshot.software)} software, "
        f"{len(snapshot.associations)} associations, {len(snapshot.report_refs)} report URLs"
    )
    if diagnostics.skipped_types:
        logger.debug(f"Skipped STIX types: {dict(diagnostics.skipped_types)}")
    return snapshot


def load_attack_bundle(bundle: BundleInput, relationship_citations: bool = False) -> AttackSnapshot:
    """Load a single STIX 2.1 bundle"""
    return load_attack_bundles([bundle], relationship_citations=relationship_citations)


def attack_group_report_urls(snapshot: AttackSnapshot) -> Set[ReportRef]:
    """Report references linked to at least one group, one per URL"""
    return {ref for ref in snapshot.report_refs if ref.linked_groups}


def technique_taxonomy(snapshot: AttackSnapshot) -> FrozenSet[str]:
    return frozenset(technique.id for technique in snapshot.techniques)


def domain_split(snapshot: AttackSnapshot) -> Dict[str, Dict[str, int]]:
    """Per-domain counts of techniques and sub-techniques"""
    split: Dict[str, Counter] = {domain.value: Counter() for domain in Domain}
    for technique in snapshot.techniques:
        bucket = "subtechniques" if technique.is_subtechnique else "techniques"
        split[technique.domain.value][bucket] += 1
    return {
        domain: {
            "techniques": counts["techniques"],
            "subtechniques": counts["subtechniques"],
            "total": counts["techniques"] + counts["subtechniques"],
        }
        for domain, counts in split.items()
    }
