import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest

from alcurve.agent import AgentConfig, AgentParams
from alcurve.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def rel_err(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def random_params(cfg, rng, scale=0.5):
    """Params with every entry (biases included) drawn from N(0, scale)."""
    p = AgentParams.zeros(cfg)
    vec = rng.normal(0.0, scale, size=p.size)
    return AgentParams.from_flat(cfg, vec)


def small_agent_cfg(rng=None, budget=2):
    if rng is None:
        return AgentConfig(feat_dim=3, hidden_dim=4, decoder_hidden=3, budget=budget)
    return AgentConfig(feat_dim=int(rng.integers(1, 5)), hidden_dim=int(rng.integers(1, 6)),
                       decoder_hidden=int(rng.integers(1, 5)), budget=budget)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def final_perfs(rows, strategy):
    last = max(int(r["cycle"]) for r in rows)
    return {int(r["seed"]): float(r["perf"]) for r in rows
            if r["strategy"] == strategy and int(r["cycle"]) == last}


@pytest.fixture(scope="session")
def planted_bench(tmp_path_factory):
    """All four strategies on the shipped planted config, 10 seeds, via the CLI."""
    out = tmp_path_factory.mktemp("planted_bench")
    code = cli_main(["bench", "--config", str(CONFIGS / "planted.json"),
                     "--strategies", "mgral,random,entropy,coreset", "--out", str(out),
                     "--workers", str(os.cpu_count() or 1)])
    assert code == 0
    with open(out / "summary.json") as fh:
        summary = json.load(fh)
    return read_csv(out / "bench.csv"), summary
