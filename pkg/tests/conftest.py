"""Shared fixtures: a session-scoped simulated corpus plus synthetic signal helpers."""

import numpy as np
import pytest

from stylepref import analysis, pairing, simulate
from stylepref.acoustics import Waveform, extract_proxies, load_wav
from stylepref.corpus import load_manifest

SIM_SEED = 11


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" in nodeid and getattr(rep, "when", "call") == "call":
                rows.append((nodeid.split("::")[-1], outcome))
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, outcome in sorted(rows):
            status = "PASS" if outcome == "passed" else "FAIL"
            terminalreporter.write_line(f"[{status}] {name}")


@pytest.fixture(scope="session")
def sim_run(tmp_path_factory):
    """Simulated corpus with known latent quality; reused by the heavier tests."""
    out = tmp_path_factory.mktemp("sim")
    cfg = simulate.SimulationConfig(
        n_utterances=200,
        n_pairs=2000,
        n_judgments=6000,
        latent_spread=1.5,
        seed=SIM_SEED,
    )
    paths = simulate.run_simulation(cfg, str(out))
    return cfg, paths


@pytest.fixture(scope="session")
def sim_data(sim_run):
    cfg, paths = sim_run
    return {
        "cfg": cfg,
        "paths": paths,
        "records": load_manifest(paths["manifest"]),
        "pairs_train": pairing.load_pairs(paths["pairs_train"]),
        "pairs_test": pairing.load_pairs(paths["pairs_test"]),
        "judgments": analysis.load_judgments(paths["judgments"]),
        "theta": simulate.load_theta(paths["theta"]),
    }


@pytest.fixture(scope="session")
def sim_proxies(sim_data):
    """Acoustic proxies extracted from every simulated waveform."""
    return {
        r.id: extract_proxies(r, load_wav(r.audio_path))
        for r in sim_data["records"]
    }


def make_sine(f0: float, sr: int = 16_000, duration_s: float = 1.0, amp: float = 0.5) -> Waveform:
    t = np.arange(int(duration_s * sr)) / sr
    return Waveform(samples=amp * np.sin(2.0 * np.pi * f0 * t), sample_rate_hz=sr)


def make_sawtooth(f0: float, sr: int = 16_000, duration_s: float = 1.0, amp: float = 0.5) -> Waveform:
    # integer phase accumulation keeps period boundaries exact, so the signal
    # is genuinely periodic even when the period divides the sample rate
    k = np.arange(int(duration_s * sr), dtype=np.int64)
    phase = np.mod(k * int(round(f0)), sr) / sr
    return Waveform(samples=amp * (2.0 * phase - 1.0), sample_rate_hz=sr)
