"""
Tests for the command-line interface.

Tests cover:
- Every subcommand against the fixture world, offline
- Exit codes for bad flags, bad configuration and broken input
- Single-file output
- Byte-identical reruns
- Settings from config files and the environment
"""
import json

import pytest

from ctiprof import __version__
from ctiprof.cli import run_command
from ctiprof.config import get_settings, load_settings
from ctiprof.exceptions import ConfigError


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def base_args(input_files, cache_dir, cached_reports, workdir):
    return [
        "--stix", str(input_files["stix"]),
        "--malpedia-actors", str(input_files["actors"]),
        "--malpedia-families", str(input_files["families"]),
        "--malpedia-bib", str(input_files["bib"]),
        "--malpedia-date", "2024-06-01",
        "--cache", str(cache_dir),
        "--offline",
    ]


def run(command, base_args, *extra):
    return run_command([command, *base_args, *extra])


class TestCommands:
    """Tests for each subcommand in directory mode."""

    def test_ingest(self, base_args, workdir):
        """Test per-source summaries and the reference list."""
        assert run("ingest", base_args, "--out", str(workdir / "out")) == 0
        attack = json.loads((workdir / "out" / "attack_summary.json").read_text("utf-8"))
        assert attack["version"] == "15.1"
        refs = (workdir / "out" / "refs.jsonl").read_text("utf-8").splitlines()
        assert len(refs) == 4 + 4
        assert (workdir / "out" / "manifest.json").exists()

    def test_merge(self, base_args, workdir):
        """Test that both merge maps are written."""
        assert run("merge", base_args, "--out", str(workdir / "out")) == 0
        lines = (workdir / "out" / "group_merge_map.csv").read_text("utf-8").splitlines()
        assert lines[0] == '"member","class"'
        assert len(lines) == 1 + 8
        assert (workdir / "out" / "software_merge_map.csv").exists()

    def test_fetch_offline(self, base_args, workdir):
        """Test that an offline fetch reports what the cache holds."""
        assert run("fetch", base_args, "--out", str(workdir / "out")) == 0
        summary = json.loads((workdir / "out" / "corpus_summary.json").read_text("utf-8"))
        assert summary["fetched"] == 0
        assert summary["missing"] == 2  # lazarus-overview and turla-snake
        assert summary["downloaded"] == 4

    def test_extract(self, base_args, workdir):
        """Test the extraction summary table."""
        assert run("extract", base_args, "--out", str(workdir / "out"), "-f", "json") == 0
        rows = json.loads((workdir / "out" / "extraction_summary.json").read_text("utf-8"))
        assert [(row["dataset"], row["reports"]) for row in rows] == [("ATT&CK", 2), ("Malpedia", 2), ("All", 3)]
        assert (workdir / "out" / "extractions.jsonl").exists()
        assert (workdir / "out" / "extraction_audit_summary.json").exists()

    def test_summarize(self, base_args, workdir):
        """Test the summary table over every scope and profile row."""
        assert run("summarize", base_args, "--out", str(workdir / "out"), "-f", "json") == 0
        rows = json.loads((workdir / "out" / "specificity_summary.json").read_text("utf-8"))
        assert len(rows) == 18
        attack_techniques = rows[0]
        assert (attack_techniques["scope"], attack_techniques["profile"]) == ("attack", "Techniques")
        assert attack_techniques["group_specific_pct"] == 50.0

    def test_summarize_narrowed(self, base_args, workdir):
        """Test --scope and --kinds."""
        args = ("--scope", "union", "--kinds", "soft", "--out", str(workdir / "out"), "-f", "json")
        assert run("summarize", base_args, *args) == 0
        rows = json.loads((workdir / "out" / "specificity_summary.json").read_text("utf-8"))
        assert [(row["scope"], row["groups_with_group_specific"]) for row in rows] == [("union", 3)]

    def test_profile(self, base_args, workdir):
        """Test that profile writes its tables."""
        assert run("profile", base_args, "--out", str(workdir / "out"), "-f", "csv") == 0
        for name in ("profiles", "classifications", "similarity", "profile_size_cdf", "group_specific_stats"):
            assert (workdir / "out" / f"{name}.csv").exists()

    def test_profile_one_group(self, base_args, workdir):
        """Test the profile of one group found by alias."""
        args = ("--group", "Hidden Cobra", "--scope", "attack", "--kinds", "tech", "--out", str(workdir / "out"), "-f", "json")
        assert run("profile", base_args, *args) == 0
        rows = json.loads((workdir / "out" / "group_profile.json").read_text("utf-8"))
        assert [(row["group"], row["behaviors"]) for row in rows] == [("Lazarus Group", "T1059 T1566.001")]

    def test_profile_malpedia_only_group(self, base_args, workdir):
        """Test that a group only Malpedia knows is profiled in the scopes that hold it."""
        args = ("--group", "Turla", "--kinds", "soft", "--out", str(workdir / "out"), "-f", "json")
        assert run("profile", base_args, *args) == 0
        rows = json.loads((workdir / "out" / "group_profile.json").read_text("utf-8"))
        assert [(row["scope"], row["group"], row["size"]) for row in rows] == [
            ("malpedia", "Turla", 1),
            ("union", "Turla", 1),
        ]

    def test_fetch_from_refs_file(self, base_args, cache_dir, workdir):
        """Test that fetch --refs reads the reference list ingest wrote, without the knowledge bases."""
        assert run("ingest", base_args, "--out", str(workdir / "ingest")) == 0
        assert run("fetch", base_args, "--out", str(workdir / "direct")) == 0

        args = [
            "fetch",
            "--refs", str(workdir / "ingest" / "refs.jsonl"),
            "--cache", str(cache_dir),
            "--offline",
            "--out", str(workdir / "from-refs"),
        ]
        assert run_command(args) == 0
        from_refs = json.loads((workdir / "from-refs" / "corpus_summary.json").read_text("utf-8"))
        direct = json.loads((workdir / "direct" / "corpus_summary.json").read_text("utf-8"))
        assert from_refs == direct
        assert (from_refs["total_urls"], from_refs["downloaded"], from_refs["missing"]) == (6, 4, 2)

        manifest = json.loads((workdir / "from-refs" / "manifest.json").read_text("utf-8"))
        assert list(manifest["inputs"]) == ["refs_file"]

    def test_overlap(self, base_args, workdir):
        """Test that the cached corpus adds a Reports row."""
        assert run("overlap", base_args, "--out", str(workdir / "out"), "-f", "json") == 0
        rows = json.loads((workdir / "out" / "overlap.json").read_text("utf-8"))
        assert [row["data"] for row in rows][-1] == "Reports"

    def test_version(self, capsys):
        """Test the version command."""
        assert run_command(["version"]) == 0
        assert __version__ in capsys.readouterr().out


class TestSingleFile:
    """Tests for --out naming a file."""

    def test_summarize_markdown(self, base_args, workdir):
        """Test that only the primary table is written, titled."""
        assert run("summarize", base_args, "--out", str(workdir / "result.md")) == 0
        assert (workdir / "result.md").read_text("utf-8").startswith("## Group profiles")
        assert sorted(path.name for path in workdir.iterdir() if path.is_file()) == ["manifest.json", "result.md"]

    def test_overlap_csv(self, base_args, workdir):
        """Test a CSV primary table."""
        assert run("overlap", base_args, "--out", str(workdir / "overlap.csv")) == 0
        assert (workdir / "overlap.csv").read_text("utf-8").startswith('"data","attack"')


class TestExitCodes:
    """Tests for error exit codes."""

    def test_missing_stix(self, workdir):
        """Test that a missing STIX file is a configuration error."""
        assert run_command(["ingest", "--stix", str(workdir / "missing.json")]) == 1

    def test_bad_kinds(self, base_args):
        """Test that an unknown kind is a configuration error."""
        assert run("summarize", base_args, "--kinds", "tech,bogus") == 1

    def test_bad_threshold(self, base_args):
        """Test that an out-of-range threshold is a configuration error."""
        assert run("profile", base_args, "--similarity-threshold", "2") == 1

    def test_unknown_group(self, base_args, workdir):
        """Test that an unknown --group is a configuration error."""
        assert run("profile", base_args, "--group", "Nobody", "--out", str(workdir / "out")) == 1

    def test_unknown_command(self):
        """Test that an unknown subcommand is a usage error."""
        assert run_command(["bogus"]) == 1

    def test_single_file_for_multi_file_command(self, base_args, workdir):
        """Test that ingest cannot write to a single file."""
        assert run("ingest", base_args, "--out", str(workdir / "x.csv")) == 1

    def test_missing_config_file(self, base_args, workdir):
        """Test that a missing --config file is a configuration error."""
        assert run("ingest", base_args, "--config", str(workdir / "nope.env")) == 1

    def test_missing_refs_file(self, workdir):
        """Test that a missing --refs file is a configuration error."""
        assert run_command(["fetch", "--refs", str(workdir / "refs.jsonl"), "--offline"]) == 1

    def test_broken_refs_file(self, workdir):
        """Test that an unreadable reference line is a data error."""
        refs = workdir / "refs.jsonl"
        refs.write_text('{"url": "https://example.com/a"}\n', encoding="utf-8")
        assert run_command(["fetch", "--refs", str(refs), "--offline", "--out", str(workdir / "out")]) == 2

    def test_broken_bundle(self, workdir):
        """Test that a malformed STIX bundle is a data error."""
        broken = workdir / "broken.json"
        broken.write_text('{"type": "bundle", "objects": [', encoding="utf-8")
        assert run_command(["ingest", "--stix", str(broken), "--out", str(workdir / "out")]) == 2


class TestDeterminism:
    """Tests for reproducible output."""

    def test_all_twice(self, base_args, workdir):
        """Test that two runs of every command give byte-identical files apart from the manifest."""
        assert run("all", base_args, "--out", str(workdir / "first")) == 0
        assert run("all", base_args, "--out", str(workdir / "second")) == 0

        first = {path.name: path.read_bytes() for path in (workdir / "first").iterdir()}
        second = {path.name: path.read_bytes() for path in (workdir / "second").iterdir()}
        assert set(first) == set(second)
        assert "specificity_summary.csv" in first
        assert "extraction_summary.md" in first
        first.pop("manifest.json")
        second.pop("manifest.json")
        assert first == second


class TestSettings:
    """Tests for settings resolution."""

    def test_config_file(self, workdir):
        """Test KEY=value config files."""
        config = workdir / "ctiprof.env"
        config.write_text("CTIPROF_SCOPE=union\nCTIPROF_GENERIC_TOP_N=3\n", encoding="utf-8")
        settings = load_settings(config)
        assert settings.scope == "union"
        assert settings.generic_top_n == 3

    def test_flags_override_config_file(self, workdir):
        """Test that explicit values win over the config file."""
        config = workdir / "ctiprof.env"
        config.write_text("CTIPROF_SCOPE=union\n", encoding="utf-8")
        assert load_settings(config, scope="attack").scope == "attack"

    def test_cache_environment_alias(self, workdir, monkeypatch):
        """Test that CTIPROF_CACHE sets the cache directory."""
        monkeypatch.setenv("CTIPROF_CACHE", str(workdir / "elsewhere"))
        get_settings.cache_clear()
        assert get_settings().cache_dir == workdir / "elsewhere"

    def test_invalid_settings(self, monkeypatch):
        """Test that unparsable settings are a configuration error."""
        monkeypatch.setenv("CTIPROF_FETCH_TIMEOUT", "soon")
        with pytest.raises(ConfigError):
            load_settings(scope="attack")
