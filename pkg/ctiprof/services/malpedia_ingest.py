"""
Malpedia ingestion.

Inputs are the API actor dump, the API family dump and the BibTeX library export.
Report references are labeled from three places and merged by URL: BibTeX tag
fields, family `urls`, and actor `meta.refs`. The library alone decides which URLs exist.
"""
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from datetime import date
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import bibtexparser
from bibtexparser.bparser import BibTexParser
from dateutil import parser as date_parser

from ctiprof.exceptions import MalpediaParseError
from ctiprof.models.entities import (
    Association,
    BehaviorKind,
    MalpediaDiagnostics,
    MalpediaSnapshot,
    Provenance,
    ReportRef,
    SoftwareEntry,
    Source,
    SourceEntity,
)

logger = logging.getLogger(__name__)

DEFAULT_TAG_FIELDS = ("keywords", "tags", "malpedia")

# Entry headers that are not references
NON_ENTRY_TYPES = {"comment", "string", "preamble"}
ENTRY_HEADER_RE = re.compile(r"^[ \t]*@([A-Za-z]+)[ \t]*[{(]", re.MULTILINE)

RawInput = Union[bytes, str]


# ============ BibTeX unescaping ============

ACCENTS = {
    "'": "\u0301",  # acute
    "`": "\u0300",
    '"': "\u0308",
    "^": "\u0302",
    "~": "\u0303",
    "=": "\u0304",
    ".": "\u0307",
    "c": "\u0327",  # cedilla
    "v": "\u030c",
    "u": "\u0306",
    "H": "\u030b",
}
SYMBOL_ACCENT_RE = re.compile(r"\{?\\([`'\"^~=.])\s*\{?([A-Za-z])\}?\}?")
LETTER_ACCENT_RE = re.compile(r"\{?\\([cvuH])(?:\s*\{([A-Za-z])\}|\s+([A-Za-z]))\}?")
ESCAPED_CHAR_RE = re.compile(r"\\([_%&#$])")
BRACE_RE = re.compile(r"(?<!\\)[{}]")


def _accented(letter: str, command: str) -> str:
    return unicodedata.normalize("NFC", letter + ACCENTS[command])


def unescape_bibtex(value: str) -> str:
    """
    Undo braces, accent commands and escaped specials. Anything else
    (math, unknown macros) passes through verbatim.
    """
    value = SYMBOL_ACCENT_RE.sub(lambda m: _accented(m.group(2), m.group(1)), value)
    value = LETTER_ACCENT_RE.sub(lambda m: _accented(m.group(2) or m.group(3), m.group(1)), value)
    value = BRACE_RE.sub("", value)
    value = ESCAPED_CHAR_RE.sub(r"\1", value)
    return " ".join(value.split())


# ============ Input decoding ============

def _load_json(raw: RawInput, label: str):
    text = raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw
    if not text.strip():
        return {}
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise MalpediaParseError(f"Malformed Malpedia {label} JSON: {e.msg} at position {e.pos}") from e


def _as_records(data, label: str, id_keys: Sequence[str]) -> Dict[str, dict]:
    """Accept both the {id: record} dump shape and a list of records carrying their id"""
    if isinstance(data, dict):
        return {str(key): value for key, value in data.items() if isinstance(value, dict)}
    if isinstance(data, list):
        records = {}
        for record in data:
            if not isinstance(record, dict):
                continue
            key = next((record[k] for k in id_keys if record.get(k)), None)
            if key is None:
                logger.warning(f"Skipping Malpedia {label} record without an id")
                continue
            records[str(key)] = record
        return records
    raise MalpediaParseError(f"Malpedia {label} dump must be an object or a list")


def _names(*candidates) -> Tuple[str, ...]:
    names: List[str] = []
    for group in candidates:
        if isinstance(group, str):
            group = [group]
        for name in group or []:
            name = (name or "").strip() if isinstance(name, str) else ""
            if name and name not in names:
                names.append(name)
    return tuple(names)


def _split_tags(value: str) -> List[str]:
    return [tag.strip() for tag in re.split(r"[,;]", value) if tag.strip()]


# ============ Report label accumulation ============

@dataclass
class _RefBuilder:
    url: str
    titles: Set[str] = field(default_factory=set)
    authors: Set[str] = field(default_factory=set)
    published: Set[str] = field(default_factory=set)
    groups: Set[str] = field(default_factory=set)
    software: Set[str] = field(default_factory=set)

    def build(self) -> ReportRef:
        # Smallest value wins so the result does not depend on entry order
        return ReportRef(
            url=self.url,
            source=Source.MALPEDIA,
            title=min(self.titles) if self.titles else None,
            author=min(self.authors) if self.authors else None,
            published=min(self.published) if self.published else None,
            linked_groups=frozenset(self.groups),
            linked_software=frozenset(self.software),
        )


class _Resolver:
    """Maps Malpedia ids and names (case-insensitive) to actor/family keys"""

    def __init__(self, groups: Dict[str, SourceEntity], software: Dict[str, SoftwareEntry]):
        self.group_ids = set(groups)
        self.software_ids = set(software)
        self.group_names: Dict[str, str] = {}
        self.software_names: Dict[str, str] = {}
        for key in sorted(groups):
            self.group_names.setdefault(key.lower(), key)
            for name in groups[key].names:
                self.group_names.setdefault(name.lower(), key)
        for key in sorted(software):
            self.software_names.setdefault(key.lower(), key)
            for name in software[key].names:
                self.software_names.setdefault(name.lower(), key)

    def group(self, value: str) -> Optional[str]:
        if value in self.group_ids:
            return value
        return self.group_names.get(value.lower())

    def family(self, value: str) -> Optional[str]:
        if value in self.software_ids:
            return value
        return self.software_names.get(value.lower())


# ============ BibTeX ============

def _make_parser() -> BibTexParser:
    parser = BibTexParser(common_strings=True)
    parser.ignore_nonstandard_types = False  # Malpedia uses @online
    parser.homogenise_fields = False
    return parser


def _entry_chunks(text: str) -> List[str]:
    starts = [m.start() for m in ENTRY_HEADER_RE.finditer(text)]
    return [text[start:end] for start, end in zip(starts, starts[1:] + [len(text)])]


def parse_bibtex_library(library: RawInput, diagnostics: MalpediaDiagnostics) -> List[dict]:
    """
    Parse the whole library; malformed entries are skipped and counted, never fatal.
    Returns bibtexparser entry dicts (lower-cased field names).
    """
    text = library.decode("utf-8", errors="replace") if isinstance(library, bytes) else library
    declared = sum(
        1 for m in ENTRY_HEADER_RE.finditer(text) if m.group(1).lower() not in NON_ENTRY_TYPES
    )

    try:
        entries = bibtexparser.loads(text, parser=_make_parser()).entries
    except Exception as e:
        # One broken entry can derail the whole-file grammar; parse entry by entry
        logger.warning(f"BibTeX library did not parse as a whole ({e}); parsing entries one by one")
        entries = []
        for chunk in _entry_chunks(text):
            try:
                entries.extend(bibtexparser.loads(chunk, parser=_make_parser()).entries)
            except Exception as chunk_error:
                logger.warning(f"Skipping malformed BibTeX entry: {chunk[:60]!r} ({chunk_error})")

    diagnostics.bib_entries = len(entries)
    diagnostics.bib_malformed = max(declared - len(entries), 0)
    if diagnostics.bib_malformed:
        logger.warning(f"Skipped {diagnostics.bib_malformed} malformed BibTeX entries")
    return entries


# ============ Snapshot ============

def _retrieved_at(families: Dict[str, dict], explicit: Optional[date]) -> date:
    if explicit is not None:
        return explicit
    newest: Optional[date] = None
    for family in families.values():
        updated = family.get("updated")
        if not updated:
            continue
        try:
            day = date_parser.parse(str(updated)).date()
        except (ValueError, OverflowError):
            continue
        if newest is None or day > newest:
            newest = day
    return newest or date.today()


def load_malpedia(
    actors: RawInput,
    families: RawInput,
    library: RawInput,
    retrieved_at: Optional[date] = None,
    tag_fields: Iterable[str] = DEFAULT_TAG_FIELDS,
    cotag_associations: bool = False,
) -> MalpediaSnapshot:
    """Build a MalpediaSnapshot from the actor dump, family dump and BibTeX export"""
    diagnostics = MalpediaDiagnostics()
    actor_records = _as_records(_load_json(actors, "actors"), "actors", ("id", "value"))
    family_records = _as_records(_load_json(families, "families"), "families", ("id", "common_name"))

    groups: Dict[str, SourceEntity] = {}
    for key, record in actor_records.items():
        meta = record.get("meta") or {}
        names = _names(record.get("value"), meta.get("synonyms"), key)
        groups[key] = SourceEntity(source=Source.MALPEDIA, id=key, names=names)

    software: Dict[str, SoftwareEntry] = {}
    for key, record in family_records.items():
        names = _names(record.get("common_name"), record.get("alt_names"), key)
        software[key] = SoftwareEntry(source=Source.MALPEDIA, id=key, names=names)

    resolver = _Resolver(groups, software)
    links: Set[Tuple[str, str]] = set()

    # Catalog links from both directions: actor pages list families, families list attribution
    for key, record in actor_records.items():
        actor_families = record.get("families") or {}
        family_keys = actor_families.keys() if isinstance(actor_families, dict) else actor_families
        for family in family_keys:
            resolved = resolver.family(str(family))
            if resolved is None:
                diagnostics.unresolved_attributions[str(family)] += 1
                continue
            links.add((key, resolved))

    for key, record in family_records.items():
        for actor in record.get("attribution") or []:
            resolved = resolver.group(str(actor))
            if resolved is None:
                diagnostics.unresolved_attributions[str(actor)] += 1
                continue
            links.add((resolved, key))

    if diagnostics.unresolved_attributions:
        logger.warning(
            f"{sum(diagnostics.unresolved_attributions.values())} Malpedia attributions "
            f"point at unknown actors/families"
        )

    refs: Dict[str, _RefBuilder] = {}

    # Library references
    tag_fields = [name.lower() for name in tag_fields]
    for entry in parse_bibtex_library(library, diagnostics):
        url = (entry.get("url") or "").strip()
        if not url:
            diagnostics.bib_without_url += 1
            continue
        builder = refs.setdefault(url, _RefBuilder(url=url))
        if entry.get("title"):
            builder.titles.add(unescape_bibtex(entry["title"]))
        if entry.get("author"):
            builder.authors.add(unescape_bibtex(entry["author"]))
        published = entry.get("date") or entry.get("year")
        if published:
            builder.published.add(published.strip())

        for field_name in tag_fields:
            for tag in _split_tags(entry.get(field_name, "")):
                # Exact keys first; family keys look like "win.plugx", actor keys like "apt28"
                if tag in software:
                    builder.software.add(tag)
                elif tag in groups:
                    builder.groups.add(tag)
                elif resolver.group(tag):
                    builder.groups.add(resolver.group(tag))
                elif resolver.family(tag):
                    builder.software.add(resolver.family(tag))
                else:
                    diagnostics.unknown_tags[tag] += 1

    # Page references label library URLs; they never add URLs of their own
    for key, record in actor_records.items():
        for url in (record.get("meta") or {}).get("refs") or []:
            if isinstance(url, str) and url.strip() in refs:
                refs[url.strip()].groups.add(key)
    for key, record in family_records.items():
        for url in record.get("urls") or []:
            if isinstance(url, str) and url.strip() in refs:
                refs[url.strip()].software.add(key)

    if diagnostics.bib_without_url:
        logger.info(f"Skipped {diagnostics.bib_without_url} BibTeX entries without a URL")

    report_refs = tuple(
        refs[url].build() for url in sorted(refs) if refs[url].groups or refs[url].software
    )

    associations = {
        Association(
            group_id=group,
            behavior_id=family,
            behavior_kind=BehaviorKind.SOFTWARE,
            provenance=Provenance.MALPEDIA_CATALOG,
        )
        for group, family in links
    }
    if cotag_associations:
        associations |= {
            Association(
                group_id=group,
                behavior_id=family,
                behavior_kind=BehaviorKind.SOFTWARE,
                provenance=Provenance.MALPEDIA_CATALOG,
                evidence=ref,
            )
            for ref in report_refs
            for group in ref.linked_groups
            for family in ref.linked_software
        }

    snapshot = MalpediaSnapshot(
        retrieved_at=_retrieved_at(family_records, retrieved_at),
        groups=tuple(groups[key] for key in sorted(groups)),
        software=tuple(software[key] for key in sorted(software)),
        associations=tuple(sorted(
            associations,
            key=lambda a: (a.group_id, a.behavior_id, a.evidence.url if a.evidence else ""),
        )),
        report_refs=report_refs,
        diagnostics=diagnostics,
    )

    logger.info(
        f"Malpedia {snapshot.retrieved_at}: {len(snapshot.groups)} groups, "
        f"{len(snapshot.software)} software, {len(snapshot.associations)} associations, "
        f"{len(snapshot.report_refs)} report URLs"
    )
    return snapshot


def single_group_reports(snapshot: MalpediaSnapshot) -> List[ReportRef]:
    """Refs labeled with exactly one Malpedia actor"""
    return [ref for ref in snapshot.report_refs if len(ref.linked_groups) == 1]
