"""Smoke test of the toolpath_rl extension module.

Build the module first, e.g.
    cargo build --release -p toolpath-rl-py --features extension-module
    cp target/release/libtoolpath_rl.so python/toolpath_rl.so
"""
import json
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import toolpath_rl as tp


def square_grid(k, pitch=10.0):
    nodes = [[c * pitch, r * pitch, 0.0] for r in range(k) for c in range(k)]
    edges = []
    for r in range(k):
        for c in range(k):
            v = r * k + c
            if c + 1 < k:
                edges.append((v, v + 1))
            if r + 1 < k:
                edges.append((v, v + k))
    return tp.Graph(nodes, edges)


def main():
    g = square_grid(4)
    assert (g.node_count, g.edge_count) == (16, 24), g

    cfg = tp.PlanConfig("ccf", rings=1, seed=7)
    cfg.set_widths(4, 8, 8, 32)
    cfg.validate()
    assert json.loads(cfg.to_json())["rings"] == 1

    res = tp.plan(g, cfg)
    assert res.complete and res.feasible, res
    again = tp.plan(g, cfg)
    assert res.to_json() == again.to_json(), "planning is not deterministic"
    doc = json.loads(res.to_json())
    assert doc["header"]["seed"] == 7
    assert len(doc["steps"]) == len(res.nodes)

    for algo in ("greedy", "bfs", "dfs"):
        b = tp.baseline(g, cfg, algo)
        assert b.complete, (algo, b)
        print(f"{algo:>7}: length={b.total_length:.1f} sharp={b.sharp_turns}")
    print(f"    dqn: length={res.total_length:.1f} sharp={res.sharp_turns}")

    s = tp.lsg_state(g, cfg, 5)
    t = tp.lsg_state(g, cfg, 6)
    assert s.m == 50 and s.occupied == 5
    assert math.isclose(s.similarity(s), 1 / 0.76, rel_tol=1e-12)
    assert 0.0 < s.similarity(t) <= 1 / 0.76

    try:
        tp.PlanConfig("plastic")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown mode accepted")
    print("ok")


if __name__ == "__main__":
    main()
