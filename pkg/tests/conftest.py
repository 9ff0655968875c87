"""
Pytest configuration and fixtures for ctiprof tests.

The fixtures describe one small world seen from both knowledge bases:

    ATT&CK    G0007 APT28, G0032 Lazarus Group, G0088 TEMP.Veles, G0027 Threat Group-3390
    Malpedia  sofacy, lazarus_group, apt27, turla

which merges into five group classes (APT28, Lazarus Group, TEMP.Veles,
Threat Group-3390, Turla) and five software classes (Mimikatz, Net, PlugX,
Snake, X-Agent).
"""
import json
import os
import uuid
from datetime import date
from pathlib import Path

import pytest

from ctiprof.config import get_settings
from ctiprof.models.entities import EntityKind, ReportRef, Source
from ctiprof.services.attack_ingest import load_attack_bundle
from ctiprof.services.entity_resolution import build_merge_map, load_rules, rules_for
from ctiprof.services.malpedia_ingest import load_malpedia
from ctiprof.services.report_corpus import ReportCache

MALPEDIA_DATE = date(2024, 6, 1)


# ============================================================================
# STIX builders
# ============================================================================

CREATED = "2023-01-01T00:00:00.000Z"
MODIFIED = "2024-01-01T00:00:00.000Z"


def stix_id(stix_type: str, key: str) -> str:
    """Deterministic STIX identifier for a fixture object"""
    return f"{stix_type}--{uuid.uuid5(uuid.NAMESPACE_URL, f'ctiprof:{stix_type}:{key}')}"


def stix_object(stix_type: str, key: str, modified: str = MODIFIED, **properties) -> dict:
    return {
        "type": stix_type,
        "spec_version": "2.1",
        "id": stix_id(stix_type, key),
        "created": CREATED,
        "modified": modified,
        **properties,
    }


def attack_ref(attack_id: str, source_name: str = "mitre-attack") -> dict:
    return {
        "source_name": source_name,
        "external_id": attack_id,
        "url": f"https://attack.mitre.org/{attack_id.replace('.', '/')}",
    }


def stix_tactic(attack_id: str, shortname: str, domain: str = "enterprise-attack") -> dict:
    return stix_object(
        "x-mitre-tactic", attack_id,
        name=shortname.replace("-", " ").title(),
        x_mitre_shortname=shortname,
        x_mitre_domains=[domain],
        external_references=[attack_ref(attack_id)],
    )


def stix_technique(
    attack_id: str,
    name: str,
    phase: str,
    domain: str = "enterprise-attack",
    kill_chain: str = "mitre-attack",
    **extra,
) -> dict:
    properties = {
        "name": name,
        "x_mitre_domains": [domain],
        "kill_chain_phases": [{"kill_chain_name": kill_chain, "phase_name": phase}],
        "external_references": [attack_ref(attack_id)],
    }
    properties.update(extra)
    return stix_object("attack-pattern", attack_id, **properties)


def stix_group(attack_id: str, name: str, aliases=(), refs=(), modified: str = MODIFIED, **extra) -> dict:
    return stix_object(
        "intrusion-set", attack_id, modified=modified,
        name=name,
        aliases=[name, *aliases],
        external_references=[attack_ref(attack_id), *refs],
        **extra,
    )


def stix_software(attack_id: str, name: str, stix_type: str = "malware", aliases=()) -> dict:
    properties = {
        "name": name,
        "x_mitre_aliases": [name, *aliases],
        "external_references": [attack_ref(attack_id)],
    }
    if stix_type == "malware":
        properties["is_family"] = True
    return stix_object(stix_type, attack_id, **properties)


def stix_uses(source: dict, target: dict, refs=(), relationship_type: str = "uses") -> dict:
    properties = {
        "relationship_type": relationship_type,
        "source_ref": source["id"],
        "target_ref": target["id"],
    }
    if refs:
        properties["external_references"] = list(refs)
    return stix_object("relationship", f"{source['id']}>{target['id']}", **properties)


def report(url: str, source_name: str) -> dict:
    return {"source_name": source_name, "url": url, "description": f"{source_name}. Retrieved 2024."}


def bundle(objects, version: str = "15.1") -> dict:
    collection = stix_object(
        "x-mitre-collection", version,
        name="Enterprise ATT&CK",
        x_mitre_version=version,
    )
    return {"type": "bundle", "id": stix_id("bundle", version), "objects": [collection, *objects]}


# Cited by a "uses" relationship only, so it is a group report only with relationship citations on
RELATIONSHIP_ONLY_URL = "https://example.com/apt28-procedure"


def enterprise_objects() -> list:
    initial_access = stix_tactic("TA0001", "initial-access")
    execution = stix_tactic("TA0002", "execution")

    phishing = stix_technique("T1566", "Phishing", "initial-access")
    attachment = stix_technique("T1566.001", "Spearphishing Attachment", "initial-access")
    interpreter = stix_technique(
        "T1059", "Command and Scripting Interpreter", "execution",
        external_references=[attack_ref("T1059"), report("https://example.com/t1059-doc", "Interpreter docs")],
    )
    transfer = stix_technique("T1105", "Ingress Tool Transfer", "execution")
    user_execution = stix_technique("T1204", "User Execution", "execution")
    deprecated = stix_technique("T1999", "Retired Technique", "execution", x_mitre_deprecated=True)

    lazarus_report = report("https://example.com/lazarus-report", "Vendor 2020")
    plugx_report = report("https://example.com/apt27-plugx", "Vendor 2021")

    apt28 = stix_group("G0007", "APT28", aliases=["Sofacy", "Fancy Bear"])
    lazarus = stix_group(
        "G0032", "Lazarus Group", aliases=["HIDDEN COBRA"],
        refs=[report("https://example.com/lazarus-overview", "Lazarus overview"), lazarus_report],
    )
    veles = stix_group("G0088", "TEMP.Veles", aliases=["XENOTIME"])
    tg3390 = stix_group("G0027", "Threat Group-3390", aliases=["APT27"], refs=[plugx_report])
    revoked = stix_group("G9999", "Old Group", revoked=True)

    mimikatz = stix_software("S0002", "Mimikatz", "tool")
    net = stix_software("S0039", "Net", "tool")
    plugx = stix_software("S0013", "PlugX", "malware", aliases=["Korplug"])

    mitigation = stix_object("course-of-action", "M1049", name="Antivirus")
    missing = {"id": stix_id("attack-pattern", "T0000")}

    relationships = [
        stix_uses(apt28, interpreter, refs=[report(RELATIONSHIP_ONLY_URL, "Vendor 2019")]),
        stix_uses(apt28, attachment),
        stix_uses(lazarus, attachment, refs=[lazarus_report]),
        stix_uses(lazarus, interpreter),
        stix_uses(lazarus, mimikatz),
        stix_uses(veles, user_execution),
        stix_uses(veles, net),
        stix_uses(tg3390, attachment),
        stix_uses(tg3390, transfer, refs=[plugx_report]),
        stix_uses(tg3390, plugx),
        stix_uses(tg3390, mimikatz),
        stix_uses(plugx, transfer),
        stix_uses(mitigation, attachment, relationship_type="mitigates"),
        stix_uses(apt28, missing),
    ]
    return [
        initial_access, execution,
        phishing, attachment, interpreter, transfer, user_execution, deprecated,
        apt28, lazarus, veles, tg3390, revoked,
        mimikatz, net, plugx,
        mitigation,
        *relationships,
    ]


def mobile_objects() -> list:
    """A second domain plus a newer copy of APT28"""
    return [
        stix_tactic("TA0027", "initial-access", domain="mobile-attack"),
        stix_technique(
            "T1660", "Phishing", "initial-access",
            domain="mobile-attack", kill_chain="mitre-mobile-attack",
        ),
        stix_group(
            "G0007", "APT28", aliases=["Sofacy", "Fancy Bear", "STRONTIUM"],
            modified="2024-06-01T00:00:00.000Z",
        ),
    ]


# ============================================================================
# Malpedia builders
# ============================================================================

MALPEDIA_ACTORS = {
    "lazarus_group": {
        "value": "Lazarus Group",
        "meta": {"synonyms": ["Hidden Cobra"], "refs": ["https://example.org/lazarus-blog"]},
        "families": {"win.mimikatz": {}, "win.nonexistent": {}},
    },
    "apt27": {"value": "APT27", "meta": {"synonyms": ["TG-3390", "Emissary Panda"]}},
    "sofacy": {"value": "Sofacy", "meta": {"synonyms": ["APT28", "Fancy Bear"]}},
    "turla": {"value": "Turla", "meta": {"synonyms": ["Snake"]}},
}

MALPEDIA_FAMILIES = {
    "win.plugx": {
        "common_name": "PlugX",
        "alt_names": ["Korplug"],
        "attribution": ["APT27"],
        "updated": "2024-03-01",
        "urls": ["https://example.com/apt27-plugx", "https://not-in-library.example/plugx"],
    },
    "win.mimikatz": {"common_name": "MimiKatz", "attribution": [], "updated": "2024-05-02"},
    "win.snake": {"common_name": "Snake", "attribution": ["Turla"], "updated": "2023-01-01"},
    "win.xagent": {"common_name": "X-Agent", "attribution": ["Sofacy", "Unknown Actor"]},
}

MALPEDIA_BIB = r"""
@online{doe:lazarus,
  author = {Jane Doe},
  title = {{Lazarus targets {\'e}nergy}},
  date = {2020-01-02},
  url = {https://example.org/lazarus-blog},
  keywords = {lazarus_group}
}

@online{vendor:apt27_plugx,
  title = {APT27 and PlugX},
  url = {https://example.com/apt27-plugx},
  keywords = {apt27, win.plugx}
}

@online{vendor:multi,
  title = {Two groups, one report},
  url = {https://example.net/multi},
  keywords = {apt27, sofacy}
}

@online{vendor:snake,
  title = {Snake},
  url = {https://example.org/turla-snake},
  keywords = {turla; win.snake; mystery_tag}
}

@online{vendor:no_url,
  title = {Printed only},
  keywords = {turla}
}
"""


# ============================================================================
# Report bodies
# ============================================================================

def make_pdf(text: str) -> bytes:
    """One-page PDF showing `text` in Helvetica"""
    stream = f"BT /F1 12 Tf 72 720 Td ({text}) Tj ET".encode("latin-1")
    objects = [
        b"<< /Type /Catalog /Pages 2 0 R >>",
        b"<< /Type /Pages /Kids [3 0 R] /Count 1 >>",
        b"<< /Type /Page /Parent 2 0 R /MediaBox [0 0 612 792] /Contents 4 0 R "
        b"/Resources << /Font << /F1 5 0 R >> >> >>",
        b"<< /Length %d >>\nstream\n" % len(stream) + stream + b"\nendstream",
        b"<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica >>",
    ]
    out = bytearray(b"%PDF-1.4\n")
    offsets = []
    for number, body in enumerate(objects, start=1):
        offsets.append(len(out))
        out += b"%d 0 obj\n" % number + body + b"\nendobj\n"
    xref = len(out)
    out += b"xref\n0 %d\n" % (len(objects) + 1)
    out += b"0000000000 65535 f \n"
    for offset in offsets:
        out += b"%010d 00000 n \n" % offset
    out += b"trailer\n<< /Size %d /Root 1 0 R >>\nstartxref\n%d\n%%%%EOF\n" % (len(objects) + 1, xref)
    return bytes(out)


# (url, content type, body) of the reports the cached_reports fixture stores
REPORT_BODIES = [
    (
        "https://example.com/lazarus-report",
        "text/html; charset=utf-8",
        b"<html><head><style>p {}</style></head><body>"
        b"<p>Lazarus used CVE-2017-11882 and T1566.001, then T1105.</p>"
        b"<script>var x = 'T1204';</script></body></html>",
    ),
    (
        "https://example.com/apt27-plugx",
        "text/plain",
        b"PlugX dropped via CVE-2018-0802; see T1105 and T1027.",
    ),
    (
        "https://example.org/lazarus-blog",
        "text/plain",
        b"Exploits cve-2021-44228 through T1190.",
    ),
    (
        "https://example.net/multi",
        "text/plain",
        b"Both groups used CVE-2019-0708.",
    ),
]


# ============================================================================
# Fixtures
# ============================================================================

@pytest.fixture(autouse=True)
def clean_settings(monkeypatch):
    """Keep CTIPROF_* variables and cached settings from leaking between tests."""
    for key in list(os.environ):
        if key.upper().startswith("CTIPROF_"):
            monkeypatch.delenv(key)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def attack_bundle() -> dict:
    return bundle(enterprise_objects())


@pytest.fixture
def mobile_bundle() -> dict:
    return bundle(mobile_objects(), version="15.0")


@pytest.fixture
def attack_snapshot(attack_bundle):
    return load_attack_bundle(json.dumps(attack_bundle))


@pytest.fixture
def malpedia_snapshot():
    return load_malpedia(
        json.dumps(MALPEDIA_ACTORS),
        json.dumps(MALPEDIA_FAMILIES),
        MALPEDIA_BIB,
        retrieved_at=MALPEDIA_DATE,
    )


@pytest.fixture
def rule_table():
    return load_rules()


@pytest.fixture
def group_rules(rule_table):
    return rules_for(rule_table, EntityKind.GROUP)


@pytest.fixture
def software_rules(rule_table):
    return rules_for(rule_table, EntityKind.SOFTWARE)


@pytest.fixture
def group_map(attack_snapshot, malpedia_snapshot, group_rules):
    return build_merge_map(attack_snapshot.groups + malpedia_snapshot.groups, EntityKind.GROUP, group_rules)


@pytest.fixture
def software_map(attack_snapshot, malpedia_snapshot, software_rules):
    return build_merge_map(
        attack_snapshot.software + malpedia_snapshot.software, EntityKind.SOFTWARE, software_rules
    )


@pytest.fixture
def input_files(tmp_path: Path, attack_bundle) -> dict:
    """The fixture world written to disk the way the CLI reads it"""
    inputs = tmp_path / "inputs"
    inputs.mkdir()
    files = {
        "stix": inputs / "enterprise-attack.json",
        "actors": inputs / "actors.json",
        "families": inputs / "families.json",
        "bib": inputs / "malpedia.bib",
    }
    files["stix"].write_text(json.dumps(attack_bundle), encoding="utf-8")
    files["actors"].write_text(json.dumps(MALPEDIA_ACTORS), encoding="utf-8")
    files["families"].write_text(json.dumps(MALPEDIA_FAMILIES), encoding="utf-8")
    files["bib"].write_text(MALPEDIA_BIB, encoding="utf-8")
    return files


@pytest.fixture
def cache_dir(tmp_path: Path) -> Path:
    return tmp_path / "cache"


@pytest.fixture
def cached_reports(cache_dir: Path):
    """Store REPORT_BODIES in the cache; https://example.org/turla-snake stays uncached"""
    cache = ReportCache(cache_dir)
    for url, content_type, body in REPORT_BODIES:
        cache.store(ReportRef(url=url, source=Source.ATTACK), body, content_type)
    return cache
