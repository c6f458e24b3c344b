"""Command line interface: exit codes, outputs and manifests."""

import json
import subprocess
import sys

import pytest

from pinchaos.cli import parse_and_dispatch
from pinchaos.io import TableCache, read_manifest, sha256_file

FAST = ["--alpha", "0.75", "--H", "0.8", "--reps", "100", "--tau-paths", "64", "--n-max", "1024"]


def _run(*argv):
    return parse_and_dispatch([str(a) for a in argv])


def test_selftest_quick(tmp_path, capsys):
    assert _run("selftest", "--quick", "--out", tmp_path) == 0
    assert "PASS" in capsys.readouterr().out


def test_usage_errors(tmp_path, capsys):
    assert _run("simulate", "--bogus", "1") == 2
    assert "usage" in capsys.readouterr().err.lower()
    assert _run() == 2


def test_domain_violation_names_assumption(tmp_path, capsys):
    assert _run("simulate", "--H", "1.2", "--N", "16", "--out", tmp_path) == 2
    assert "H" in capsys.readouterr().err


def test_simulate_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert _run("simulate", *FAST, "--N", "32", "--seed", "3", "--out", d) == 0
    assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()
    man = read_manifest(a / "manifest.json")
    assert man["subcommand"] == "simulate"
    assert man["outputs"]["samples.csv"] == sha256_file(a / "samples.csv")
    assert man["params"]["seed"] == 3
    # the manifest doubles as a configuration file
    c = tmp_path / "c"
    assert _run("simulate", "--config", a / "manifest.json", "--out", c) == 0
    assert (c / "samples.csv").read_bytes() == (a / "samples.csv").read_bytes()


def test_config_file_under_command_line(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nalpha = 0.75\nH = 0.8\nreps = 100\ntau_paths = 64\n"
                   "n_max = 1024\nN = 16\nseed = 1\n")
    assert _run("simulate", "--config", cfg, "--seed", "2", "--out", tmp_path / "o") == 0
    man = read_manifest(tmp_path / "o" / "manifest.json")
    assert man["params"]["seed"] == 2 and man["params"]["reps"] == 100


def test_converge_exit_reflects_flags(tmp_path):
    args = ("converge", *FAST, "--ladder", "16,32", "--out", tmp_path)
    code = _run(*args, "--ks-threshold", "1e-9")
    assert code == 1
    flags = json.loads((tmp_path / "converge_report.json").read_text())["flags"]
    assert flags["ks_final_below_threshold"] is False


def test_critical_and_renewal(tmp_path):
    assert _run("critical", "--alphas", "0.3,0.75", "--H", "0.8", "--ladder", "5,6",
                "--out", tmp_path / "c") == 0
    assert (tmp_path / "c" / "critical.csv").read_text().startswith("alpha,N,second_moment")
    assert _run("renewal", "--alpha", "0.5", "--N", "64", "--n-max", "4096", "--out", tmp_path / "r") == 0
    assert (tmp_path / "r" / "renewal_mass.csv").exists()


def test_chaos_domain(tmp_path):
    assert _run("chaos", "--alpha", "0.4", "--H", "0.8", "--beta-hat", "0.5",
                "--out", tmp_path) == 2


def test_cache_detects_tampering(tmp_path):
    assert _run("renewal", "--alpha", "0.5", "--N", "16", "--n-max", "512",
                "--cache", tmp_path / "cache", "--out", tmp_path / "r") == 0
    cache = TableCache(str(tmp_path / "cache"))
    assert all(cache.validate().values())
    name = next(iter(cache.index))
    path = tmp_path / "cache" / name
    path.write_text(path.read_text().replace("1", "2", 1))
    assert not cache.validate()[name]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pinchaos", "selftest", "--quick",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
