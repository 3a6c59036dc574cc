"""Smoke test for the qsalign Python extension.

Build the extension first:

    cargo build --release -p qsalign-py
    python3 python/smoke_test.py

The script copies the built shared library next to a temporary module path
as ``qsalign.so`` and exercises the bindings end to end.
"""

import math
import os
import shutil
import sys
import tempfile
import importlib

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def find_library():
    if len(sys.argv) > 1:
        return sys.argv[1]
    for profile in ("release", "debug"):
        path = os.path.join(ROOT, "target", profile, "libqsalign_py.so")
        if os.path.exists(path):
            return path
    sys.exit("libqsalign_py.so not found; run `cargo build -p qsalign-py` first")


def main():
    tmp = tempfile.mkdtemp(prefix="qsalign-smoke-")
    shutil.copy(find_library(), os.path.join(tmp, "qsalign.so"))
    sys.path.insert(0, tmp)
    qsalign = importlib.import_module("qsalign")

    w = qsalign.GaussianScore(0.8, 0.3)
    l = qsalign.GaussianScore(0.1, 0.9)
    p = qsalign.pref_prob(w, l)
    z = 0.7 / math.sqrt(1 + math.pi / 8 * (0.09 + 0.81))
    assert abs(p - 1 / (1 + math.exp(-z))) < 1e-12
    assert abs(qsalign.pref_prob_mc(w, l, 100000, 1) - p) < 0.01
    print(f"pref_prob closed {p:.6f}")

    cfg = qsalign.RunConfig.from_toml(
        """
seed = 3
[world]
n_contexts = 30
[logs]
impressions = 3000
[rm.train]
epochs = 2
[sft.fit]
epochs = 5
[fusion]
tune = false
[grpo]
steps = 10
[rft]
k = 10
[eval]
test_contexts = 30
test_impressions = 3000
ctr_impressions = 2000
min_bin_count = 5
"""
    )
    out = os.path.join(tmp, "run")
    report = qsalign.run_seed(cfg, out=out)
    print(report.summary(), end="")

    world = qsalign.World.load(os.path.join(out, "world.json"))
    rm = qsalign.RewardModel.load(os.path.join(out, "rm_garm.json"))
    ref = qsalign.ReferenceModel.load(os.path.join(out, "reference.json"))
    policy = qsalign.Policy.load(os.path.join(out, "policy_grpo.json"))
    for i in range(3):
        action = policy.greedy(world, i)
        shown = "refuse" if action is None else [world.pool(i)[j] for j in action]
        print(f"context {i}: {world.prior_query(i)!r} -> {shown}")
        if action is not None:
            mu, sigma = rm.score(world, i, world.pool(i)[action[0]])
            assert sigma > 0 and math.isfinite(mu)
            assert ref.mean_logprob(world.pool(i)[action[0]]) < 0
    shutil.rmtree(tmp)
    print("smoke test passed")


if __name__ == "__main__":
    main()
