"""
Tests for Malpedia ingestion.

Tests cover:
- Actors and families from the API dumps
- Catalog associations from both link directions
- BibTeX library parsing, tag resolution and page-reference labels
- Retrieval date resolution
- Diagnostics and malformed input
"""
import json
from datetime import date

import pytest

from ctiprof.exceptions import MalpediaParseError
from ctiprof.models.entities import (
    BehaviorKind,
    EntityKind,
    MalpediaDiagnostics,
    Provenance,
    SoftwareKind,
    Source,
)
from ctiprof.services.malpedia_ingest import (
    load_malpedia,
    parse_bibtex_library,
    single_group_reports,
    unescape_bibtex,
)
from tests.conftest import MALPEDIA_ACTORS, MALPEDIA_BIB, MALPEDIA_DATE, MALPEDIA_FAMILIES


def load(**kwargs):
    return load_malpedia(
        json.dumps(MALPEDIA_ACTORS),
        json.dumps(MALPEDIA_FAMILIES),
        kwargs.pop("library", MALPEDIA_BIB),
        **kwargs,
    )


class TestEntities:
    """Tests for actors and families."""

    def test_groups(self, malpedia_snapshot):
        """Test that every actor becomes a group with value, synonyms and key as names."""
        assert [group.id for group in malpedia_snapshot.groups] == ["apt27", "lazarus_group", "sofacy", "turla"]
        apt27 = next(group for group in malpedia_snapshot.groups if group.id == "apt27")
        assert apt27.source == Source.MALPEDIA
        assert apt27.entity_kind == EntityKind.GROUP
        assert apt27.names == ("APT27", "TG-3390", "Emissary Panda", "apt27")

    def test_software(self, malpedia_snapshot):
        """Test that families become software without a tool/malware kind."""
        assert [family.id for family in malpedia_snapshot.software] == [
            "win.mimikatz", "win.plugx", "win.snake", "win.xagent",
        ]
        plugx = next(family for family in malpedia_snapshot.software if family.id == "win.plugx")
        assert plugx.names == ("PlugX", "Korplug", "win.plugx")
        assert all(family.kind == SoftwareKind.UNKNOWN for family in malpedia_snapshot.software)

    def test_list_shaped_dump(self):
        """Test that a list of records carrying their id is accepted."""
        snapshot = load_malpedia(
            json.dumps([{"id": "apt27", "value": "APT27"}]),
            json.dumps([{"id": "win.plugx", "common_name": "PlugX", "attribution": ["apt27"]}]),
            "",
            retrieved_at=MALPEDIA_DATE,
        )
        assert [group.id for group in snapshot.groups] == ["apt27"]
        assert [(a.group_id, a.behavior_id) for a in snapshot.associations] == [("apt27", "win.plugx")]


class TestAssociations:
    """Tests for catalog group -> family links."""

    def test_links_from_both_directions(self, malpedia_snapshot):
        """Test that actor family lists and family attributions both create links."""
        edges = {(a.group_id, a.behavior_id) for a in malpedia_snapshot.associations}
        assert edges == {
            ("apt27", "win.plugx"),
            ("lazarus_group", "win.mimikatz"),
            ("sofacy", "win.xagent"),
            ("turla", "win.snake"),
        }
        for association in malpedia_snapshot.associations:
            assert association.behavior_kind == BehaviorKind.SOFTWARE
            assert association.provenance == Provenance.MALPEDIA_CATALOG

    def test_unresolved_attributions_counted(self, malpedia_snapshot):
        """Test that links to unknown actors or families are counted, not loaded."""
        assert malpedia_snapshot.diagnostics.unresolved_attributions == {
            "win.nonexistent": 1,
            "Unknown Actor": 1,
        }

    def test_cotag_associations_off_by_default(self, malpedia_snapshot):
        """Test that co-tagged reports add no associations unless asked to."""
        assert all(a.evidence is None for a in malpedia_snapshot.associations)

    def test_cotag_associations(self):
        """Test that co-tagging adds one association per group/family pair of a report."""
        snapshot = load(retrieved_at=MALPEDIA_DATE, cotag_associations=True)
        with_evidence = {
            (a.group_id, a.behavior_id, a.evidence.url) for a in snapshot.associations if a.evidence
        }
        assert with_evidence == {
            ("apt27", "win.plugx", "https://example.com/apt27-plugx"),
            ("turla", "win.snake", "https://example.org/turla-snake"),
        }
        assert len(snapshot.associations) == 6


class TestReportRefs:
    """Tests for references built from the BibTeX library."""

    def test_labeled_urls(self, malpedia_snapshot):
        """Test that every labeled library URL becomes one ref, sorted by URL."""
        assert [ref.url for ref in malpedia_snapshot.report_refs] == [
            "https://example.com/apt27-plugx",
            "https://example.net/multi",
            "https://example.org/lazarus-blog",
            "https://example.org/turla-snake",
        ]

    def test_fields_unescaped(self, malpedia_snapshot):
        """Test that title, author and date come from the entry with BibTeX escapes undone."""
        refs = {ref.url: ref for ref in malpedia_snapshot.report_refs}
        blog = refs["https://example.org/lazarus-blog"]
        assert blog.title == "Lazarus targets énergy"
        assert blog.author == "Jane Doe"
        assert blog.published == "2020-01-02"
        assert blog.linked_groups == frozenset({"lazarus_group"})
        assert blog.source == Source.MALPEDIA

    def test_tags_resolve_to_groups_and_families(self, malpedia_snapshot):
        """Test that tags name actor and family keys."""
        refs = {ref.url: ref for ref in malpedia_snapshot.report_refs}
        plugx = refs["https://example.com/apt27-plugx"]
        assert plugx.linked_groups == frozenset({"apt27"})
        assert plugx.linked_software == frozenset({"win.plugx"})
        snake = refs["https://example.org/turla-snake"]
        assert snake.linked_groups == frozenset({"turla"})
        assert snake.linked_software == frozenset({"win.snake"})

    def test_page_refs_only_label_library_urls(self, malpedia_snapshot):
        """Test that family page URLs missing from the library are not added."""
        urls = {ref.url for ref in malpedia_snapshot.report_refs}
        assert "https://not-in-library.example/plugx" not in urls

    def test_bib_diagnostics(self, malpedia_snapshot):
        """Test entry, missing-URL and unknown-tag counters."""
        diagnostics = malpedia_snapshot.diagnostics
        assert diagnostics.bib_entries == 5
        assert diagnostics.bib_without_url == 1
        assert diagnostics.bib_malformed == 0
        assert diagnostics.unknown_tags == {"mystery_tag": 1}

    def test_single_group_reports(self, malpedia_snapshot):
        """Test that reports labeled with several actors are left out."""
        urls = {ref.url for ref in single_group_reports(malpedia_snapshot)}
        assert urls == {
            "https://example.com/apt27-plugx",
            "https://example.org/lazarus-blog",
            "https://example.org/turla-snake",
        }

    def test_broken_entry_does_not_abort(self):
        """Test that a malformed trailing entry leaves the good entries loaded."""
        library = MALPEDIA_BIB + "\n@online{broken,\n  title = {Unclosed\n"
        snapshot = load(library=library, retrieved_at=MALPEDIA_DATE)
        urls = {ref.url for ref in snapshot.report_refs}
        assert "https://example.org/lazarus-blog" in urls
        assert "https://example.org/turla-snake" in urls

    def test_parse_library_counts(self):
        """Test that the parser returns entries with lower-cased field names."""
        diagnostics = MalpediaDiagnostics()
        entries = parse_bibtex_library(MALPEDIA_BIB, diagnostics)
        assert len(entries) == 5
        assert diagnostics.bib_entries == 5
        assert all("title" in entry for entry in entries)


class TestRetrievalDate:
    """Tests for the snapshot date."""

    def test_explicit_date(self, malpedia_snapshot):
        """Test that an explicit date wins."""
        assert malpedia_snapshot.retrieved_at == MALPEDIA_DATE

    def test_newest_family_update(self):
        """Test that without a date the newest family update is used."""
        assert load().retrieved_at == date(2024, 5, 2)


class TestUnescape:
    """Tests for BibTeX value unescaping."""

    @pytest.mark.parametrize("raw,expected", [
        (r"{\'e}t{\'e}", "été"),
        (r"M{\"u}ller", "Müller"),
        (r"Fran\c{c}ois", "François"),
        (r"50\% of \_tmp", "50% of _tmp"),
        ("{{Braced}} title", "Braced title"),
        ("  spaced   out ", "spaced out"),
        ("$x^2$", "$x^2$"),
    ])
    def test_unescape(self, raw, expected):
        """Test accent commands, escaped specials, braces and whitespace."""
        assert unescape_bibtex(raw) == expected


class TestMalformedInput:
    """Tests for dumps that are not JSON."""

    def test_bad_actor_json(self):
        """Test that a malformed actor dump raises MalpediaParseError."""
        with pytest.raises(MalpediaParseError):
            load_malpedia("{not json", json.dumps(MALPEDIA_FAMILIES), MALPEDIA_BIB)

    def test_wrong_shape(self):
        """Test that a dump that is neither an object nor a list is rejected."""
        with pytest.raises(MalpediaParseError):
            load_malpedia('"actors"', "{}", "")

    def test_empty_inputs(self):
        """Test that empty inputs give an empty snapshot."""
        snapshot = load_malpedia("", "", "", retrieved_at=MALPEDIA_DATE)
        assert snapshot.groups == ()
        assert snapshot.report_refs == ()
