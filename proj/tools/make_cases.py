#!/usr/bin/env python3
"""Writes the bundled cases under data/cases: network, fleet, profiles,
historical forecast-error samples and the case file tying them together."""

import argparse
import json
import math
from pathlib import Path

import numpy as np


def line(scale, phases):
    n = len(phases)
    return {
        "z": [[[0.02 * scale, 0.06 * scale] if r == c else [0.006 * scale, 0.02 * scale] for c in range(n)]
              for r in range(n)]
    }


def box(p0, p1, q0, q1):
    return {"shape": "box", "p_min": p0, "p_max": p1, "q_min": q0, "q_max": q1}


def write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def write_samples(path, labels, x):
    with path.open("w") as f:
        f.write("# format_version=1 units=p.u.\n")
        f.write(",".join(labels) + "\n")
        for row in x:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def gaussian_samples(rng, sigmas, n):
    return rng.normal(size=(n, len(sigmas))) * np.asarray(sigmas)


def one_bus(out, rng, n):
    write_json(out / "network.json", {
        "format_version": 1, "base_mva": 1.0, "base_kv": 12.47, "pcc": "pcc",
        "buses": [{"id": "pcc", "phases": "a", "v_min": 0.9, "v_max": 1.1},
                  {"id": "b1", "phases": "a", "v_min": 0.9, "v_max": 1.1}],
        "branches": [{"from": "pcc", "to": "b1", "phases": "a", "i_max": 2.0, "z_self": [0.0, 1e-4]}],
    })
    write_json(out / "fleet.json", {"format_version": 1, "units": [
        {"id": "pv", "kind": "PV", "bus": "b1", "slots": ["a"], "chart": box(0.0, 1.0, -0.3, 0.3)}]})
    write_json(out / "profiles.json", {
        "format_version": 1, "periods": 1, "dt": 1.0,
        "loads": [{"bus": "b1", "slot": "a", "p": [0.1], "phi": 0.25}],
        "forecasts": {"pv": [[0.6]]}})
    write_samples(out / "errors.csv", ["e:pv:a", "e:load:b1:0"], gaussian_samples(rng, [0.08, 0.002], n))


def two_bus(out, rng, n):
    write_json(out / "network.json", {
        "format_version": 1, "base_mva": 1.0, "base_kv": 12.47, "pcc": "pcc",
        "buses": [{"id": "pcc", "phases": "a", "v_min": 0.9, "v_max": 1.1},
                  {"id": "b2", "phases": "a", "v_min": 0.9, "v_max": 1.1}],
        "branches": [{"from": "pcc", "to": "b2", "phases": "a", "i_max": 2.0, "z_self": [0.01, 0.1]}],
    })
    write_json(out / "fleet.json", {"format_version": 1, "units": [
        {"id": "pv", "kind": "PV", "bus": "b2", "slots": ["a"], "chart": box(0.0, 1.0, -0.3, 0.3)}]})
    write_json(out / "profiles.json", {
        "format_version": 1, "periods": 1, "dt": 1.0,
        "loads": [{"bus": "b2", "slot": "a", "p": [0.2], "phi": 0.2}],
        "forecasts": {"pv": [[0.8]]}})
    write_samples(out / "errors.csv", ["e:pv:a", "e:load:b2:0"], gaussian_samples(rng, [0.05, 0.01], n))


def four_bus(out, rng, n, periods):
    write_json(out / "network.json", {
        "format_version": 1, "base_mva": 1.0, "base_kv": 12.47, "pcc": "pcc",
        "buses": [{"id": "pcc", "phases": "abc", "connection": "wye"},
                  {"id": "n1", "phases": "abc", "connection": "wye"},
                  {"id": "n2", "phases": "abc", "connection": "delta"},
                  {"id": "n3", "phases": "ab", "connection": "wye"}],
        "branches": [dict(line(1.0, "abc"), **{"from": "pcc", "to": "n1", "phases": "abc", "i_max": 1.5}),
                     dict(line(1.5, "abc"), **{"from": "n1", "to": "n2", "phases": "abc", "i_max": 1.0}),
                     dict(line(2.0, "ab"), **{"from": "n1", "to": "n3", "phases": "ab", "i_max": 1.0})],
    })
    write_json(out / "fleet.json", {"format_version": 1, "units": [
        {"id": "chp", "kind": "CHP", "bus": "n2", "slots": ["ab", "bc", "ca"], "chart": box(0.0, 0.12, -0.06, 0.06),
         "ramp": 0.1, "cost": {"a": 4.0, "b": 0.6, "c": 0.05}},
        {"id": "pv", "kind": "PV", "bus": "n1", "slots": ["a", "b", "c"], "chart": box(0.0, 0.3, -0.1, 0.1)},
        {"id": "ess", "kind": "ESS", "bus": "n3", "slots": ["a", "b"], "chart": box(-0.1, 0.1, -0.05, 0.05),
         "ess": {"alpha": 0.99, "e_min": 0.02, "e_max": 0.2, "e0": 0.1}, "cost": {"k_ch": 0.08, "k_dis": 0.12}},
        {"id": "wt", "kind": "WT", "bus": "n3", "slots": ["a", "b"], "chart": box(0.0, 0.25, -0.08, 0.08)}]})

    def shape(t):
        return 1.0 + 0.3 * math.sin(0.7 * t)

    loads = [("n1", "a", 0.1, 0.2), ("n1", "b", 0.12, 0.2), ("n1", "c", 0.08, 0.2), ("n3", "a", 0.05, 0.3),
             ("n3", "b", 0.05, 0.3)]
    k = [1.0 + 0.4 * math.cos(0.5 * t) - 0.4 for t in range(periods)]
    write_json(out / "profiles.json", {
        "format_version": 1, "periods": periods, "dt": 0.25,
        "loads": [{"bus": b, "slot": s, "p": [round(p * shape(t), 12) for t in range(periods)], "phi": phi}
                  for b, s, p, phi in loads],
        "forecasts": {"pv": [[round(v * kt, 12) for v in (0.2, 0.22, 0.18)] for kt in k],
                      "wt": [[round(v * (2.0 - kt), 12) for v in (0.15, 0.2)] for kt in k]}})

    # Bimodal renewable errors (correlated block), independent small load errors.
    s_ren, s_load, d = 0.04, 0.005, 10
    weights = [0.35, 0.65]
    covs, means = [], []
    for c in range(2):
        L = np.zeros((d, d))
        L[:5, :5] = s_ren / 2.2 * rng.normal(size=(5, 5))
        L[5:, 5:] = np.eye(5) * s_load
        covs.append(L @ L.T + 1e-8 * np.eye(d))
        mu = np.zeros(d)
        mu[:5] = (-0.65 if c == 0 else 0.35) * s_ren
        means.append(mu)
    comp = rng.choice(2, size=n, p=weights)
    x = np.stack([rng.multivariate_normal(means[c], covs[c]) for c in comp])
    labels = ["e:pv:a", "e:pv:b", "e:pv:c", "e:wt:a", "e:wt:b"] + [f"e:load:{b}:{i}" for b, i in
                                                                   [("n1", 0), ("n1", 1), ("n1", 2), ("n3", 0),
                                                                    ("n3", 1)]]
    write_samples(out / "errors.csv", labels, x)


def case_file(out, name, config):
    write_json(out / "case.json", {
        "format_version": 1, "name": name, "network": "network.json", "fleet": "fleet.json",
        "profiles": "profiles.json", "samples": "errors.csv", "config": config})


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "cases"))
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    root = Path(args.out)
    for name in ("one_bus", "two_bus", "four_bus"):
        (root / name).mkdir(parents=True, exist_ok=True)
    one_bus(root / "one_bus", rng, args.samples)
    case_file(root / "one_bus", "one_bus", {"components": 1, "seed": 7})
    two_bus(root / "two_bus", rng, args.samples)
    case_file(root / "two_bus", "two_bus", {"components": 1, "seed": 7})
    four_bus(root / "four_bus", rng, args.samples, 6)
    case_file(root / "four_bus", "four_bus", {"components": "auto", "max_components": 4, "seed": 7})


if __name__ == "__main__":
    main()
