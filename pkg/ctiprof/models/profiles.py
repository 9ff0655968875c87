"""
Group profiles and behavior classifications
"""
import enum
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Mapping, NamedTuple, Set, Tuple

from ctiprof.exceptions import ConfigError
from ctiprof.models.entities import Association, BehaviorKind


class Scope(str, enum.Enum):
    ATTACK = "attack"
    MALPEDIA = "malpedia"
    UNION = "union"


class ProfileKind(str, enum.Enum):
    TECHNIQUE = "technique"  # cataloged techniques
    TECHNIQUE_EXTRACTED = "technique_extracted"  # technique IDs found in reports
    SOFTWARE = "software"
    VULNERABILITY = "vulnerability"


class BehaviorLabel(str, enum.Enum):
    UNASSOCIATED = "unassociated"
    GROUP_SPECIFIC = "group_specific"
    GENERIC = "generic"


class Behavior(NamedTuple):
    """
    A behavior key. Techniques are keyed by technique ID (cataloged and extracted
    IDs share keys), software by merged class_id, vulnerabilities by CVE ID.
    """
    kind: BehaviorKind
    key: str

    def sort_key(self) -> Tuple[str, int, str]:
        if self.kind == BehaviorKind.SOFTWARE:
            return (self.kind.value, int(self.key), "")
        return (self.kind.value, 0, self.key)


KIND_ORDER = {
    ProfileKind.TECHNIQUE: 0,
    ProfileKind.TECHNIQUE_EXTRACTED: 1,
    ProfileKind.SOFTWARE: 2,
    ProfileKind.VULNERABILITY: 3,
}


def kind_mask_label(kind_mask: FrozenSet[ProfileKind]) -> str:
    """Stable text form of a kind mask, e.g. "technique+software" """
    return "+".join(kind.value for kind in sorted(kind_mask, key=KIND_ORDER.__getitem__))


ALL_KINDS = frozenset(ProfileKind)

# Profile rows of the summary table, in display order
SUMMARY_ROWS: Tuple[Tuple[str, FrozenSet[ProfileKind]], ...] = (
    ("Techniques", frozenset({ProfileKind.TECHNIQUE})),
    ("Software", frozenset({ProfileKind.SOFTWARE})),
    ("Techniques ∪ Software", frozenset({ProfileKind.TECHNIQUE, ProfileKind.SOFTWARE})),
    ("Vulnerabilities", frozenset({ProfileKind.VULNERABILITY})),
    ("Techniques*", frozenset({ProfileKind.TECHNIQUE, ProfileKind.TECHNIQUE_EXTRACTED})),
    ("Tech* ∪ Soft. ∪ Vuln.", ALL_KINDS),
)

KIND_ALIASES = {
    "tech": ProfileKind.TECHNIQUE,
    "technique": ProfileKind.TECHNIQUE,
    "techniques": ProfileKind.TECHNIQUE,
    "tech-ext": ProfileKind.TECHNIQUE_EXTRACTED,
    "technique_extracted": ProfileKind.TECHNIQUE_EXTRACTED,
    "soft": ProfileKind.SOFTWARE,
    "software": ProfileKind.SOFTWARE,
    "vuln": ProfileKind.VULNERABILITY,
    "vulnerability": ProfileKind.VULNERABILITY,
    "vulnerabilities": ProfileKind.VULNERABILITY,
}


def parse_kind_mask(text: str) -> FrozenSet[ProfileKind]:
    """
    Parse "tech,soft,vuln" style masks. "tech*" means cataloged plus extracted
    techniques; "all" means every kind.
    """
    kinds: Set[ProfileKind] = set()
    for token in text.replace("+", ",").split(","):
        token = token.strip().lower()
        if not token:
            continue
        if token == "all":
            kinds |= ALL_KINDS
        elif token in ("tech*", "techniques*"):
            kinds |= {ProfileKind.TECHNIQUE, ProfileKind.TECHNIQUE_EXTRACTED}
        elif token in KIND_ALIASES:
            kinds.add(KIND_ALIASES[token])
        else:
            raise ConfigError(f"Unknown profile kind {token!r}; use tech, tech*, tech-ext, soft, vuln or all")
    if not kinds:
        raise ConfigError("Empty kind mask")
    return frozenset(kinds)


def parse_scope(text: str) -> Scope:
    try:
        return Scope(text.strip().lower())
    except ValueError:
        raise ConfigError(f"Unknown scope {text!r}; use attack, malpedia or union") from None


@dataclass(frozen=True)
class ProfileSet:
    """
    Per-group behavior sets for one scope and kind mask.

    `profiles` has an entry for every group known in the scope (possibly empty).
    `universe` is every behavior of the masked kinds that could be observed, so a
    behavior no group uses still gets classified as unassociated.
    """
    scope: Scope
    kind_mask: FrozenSet[ProfileKind]
    profiles: Mapping[int, FrozenSet[Behavior]]
    provenance: Mapping[Tuple[int, Behavior], FrozenSet[Association]] = field(default_factory=dict)
    universe: FrozenSet[Behavior] = frozenset()
    group_names: Mapping[int, str] = field(default_factory=dict)

    @property
    def groups_total(self) -> int:
        return len(self.profiles)

    def nonempty(self) -> Dict[int, FrozenSet[Behavior]]:
        return {group: behaviors for group, behaviors in self.profiles.items() if behaviors}

    def groups_by_behavior(self) -> Dict[Behavior, FrozenSet[int]]:
        """Inverse index: behavior -> groups using it (only behaviors with >= 1 group)"""
        index: Dict[Behavior, set] = {}
        for group, behaviors in self.profiles.items():
            for behavior in behaviors:
                index.setdefault(behavior, set()).add(group)
        return {behavior: frozenset(groups) for behavior, groups in index.items()}

    def name_of(self, group: int) -> str:
        return self.group_names.get(group, str(group))


@dataclass(frozen=True)
class BehaviorClassification:
    behavior: Behavior
    group_count: int
    label: BehaviorLabel
    specificity_eligible: bool = True

    def __post_init__(self):
        if self.group_count < 0:
            raise ValueError("group_count cannot be negative")
        expected = classify_label(self.group_count, self.specificity_eligible)
        if self.label != expected:
            raise ValueError(f"{self.behavior}: label {self.label} contradicts count {self.group_count}")


def classify_label(group_count: int, specificity_eligible: bool) -> BehaviorLabel:
    if group_count == 0:
        return BehaviorLabel.UNASSOCIATED
    if group_count == 1 and specificity_eligible:
        return BehaviorLabel.GROUP_SPECIFIC
    return BehaviorLabel.GENERIC
