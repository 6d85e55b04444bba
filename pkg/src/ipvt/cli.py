"""Seeded experiment runner.

Usage::

    python -m ipvt <subcommand> [--config FILE] [--seed N] [--out DIR]
                   [--replicas K] [--threads K] [--allow-uncertified]
                   [--space NAME] [--t-max T]

Every run writes ``<subcommand>.csv`` and ``manifest.json`` into ``--out``.
Each CSV row carries the seed, the replica index and a hash of the resolved
configuration.  Exit codes: 0 ok, 2 configuration error, 3 numeric
failure, 4 resource limit.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import experiments as ex
from . import pp_core as pp
from . import tessellation as ts
from .errors import (DecompositionFailure, InvalidArgument, NumericFailure, ResourceLimit,
                     UncertifiedCells)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_RESOURCE = 0, 2, 3, 4

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer", "minimum": 1}
_numlist = {"type": "array", "items": _pos, "minItems": 1}

COMMON = {
    "space": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    "replicas": _int,
    "threads": _int,
    "allow_uncertified": {"type": "boolean"},
}

# command -> (schema properties, defaults)
COMMANDS = {
    "volume-growth": ({"t_max": _pos, "step": _pos},
                      {"space": "sl2", "t_max": 40.0, "step": 1.0}),
    "busemann-converge": ({"times": _numlist, "probes": _int, "directions": _int},
                          {"space": "sl2", "times": [5, 10, 20, 30], "probes": 20,
                           "directions": 20}),
    "sample-pv": ({"intensity": _pos, "radius": _pos, "s_max": _pos, "probes": _int},
                  {"space": "sl2", "intensity": 1.0, "radius": 2.0, "s_max": 3.0,
                   "probes": 200}),
    "sample-ipvt": ({"radius": _pos, "s_max": _num, "probes": _int},
                    {"space": "sl2", "radius": 2.0, "s_max": 5.0, "probes": 200}),
    "walls": ({"radii": _numlist, "delta": _pos, "r": _pos, "probes_per_radius": _pos,
               "margin": _pos},
              {"space": "sl3", "radii": [2, 4, 6, 8], "delta": 0.05, "r": 0.5,
               "probes_per_radius": 200, "margin": 2.0}),
    "adjacency": ({"radius": _pos, "s_max": _num, "probes": _int, "k": _int},
                  {"space": "sl2", "radius": 2.0, "s_max": 5.0, "probes": 300, "k": 6}),
    "graphing-cost": ({"radii": _numlist, "epsilons": _numlist, "intensity": _pos,
                       "n_max": _int, "buffer": {"type": "number", "minimum": 0}},
                      {"space": "sl3", "radii": [2, 4, 6], "epsilons": [0.1, 0.2],
                       "intensity": 30.0, "n_max": 3}),
    "mecke-check": ({"reps": {"type": "integer", "minimum": 2}, "intensity": _pos,
                     "radius": _pos, "s_max": _num},
                    {"space": "sl2", "reps": 2000, "intensity": 1.0, "radius": 2.0,
                     "s_max": 1.0}),
    "export-disk": ({"kind": {"enum": ["pv", "ipvt"]}, "intensity": _pos, "radius": _pos,
                     "s_max": _num, "probes": _int},
                    {"space": "sl2", "kind": "ipvt", "intensity": 1.0, "radius": 2.0,
                     "s_max": 5.0, "probes": 500}),
}

RUN_DEFAULTS = {"seed": 0, "replicas": 1, "threads": 1, "allow_uncertified": False}
# keys that may not change any output byte
_UNHASHED = ("threads",)


class ConfigError(Exception):
    pass


def resolve_config(command: str, file_cfg: dict, overrides: dict) -> dict:
    """Merge defaults, the config file and command-line overrides, then validate."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown subcommand {command!r}")
    props, defaults = COMMANDS[command]
    schema = {"type": "object", "properties": {**COMMON, **props},
              "additionalProperties": False}
    try:
        jsonschema.validate(file_cfg, schema)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from None
    cfg = {**RUN_DEFAULTS, **defaults, **file_cfg,
           **{k: v for k, v in overrides.items() if v is not None}}
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from None
    try:
        spec = ex.SpaceSpec(cfg["space"])
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from None
    lie_only = ("busemann-converge", "walls")
    if command in lie_only and not spec.is_lie:
        raise ConfigError(f"{command} needs space sl2, sl3 or sl4")
    if command == "export-disk" and spec.name != "sl2":
        raise ConfigError("export-disk needs space sl2")
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps({k: v for k, v in sorted(cfg.items()) if k not in _UNHASHED},
                       sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ----------------------------------------------------------- subcommands

def _volume_growth(cfg, rng):
    return ex.volume_growth(ex.SpaceSpec(cfg["space"]), cfg["t_max"], cfg["step"])


def _busemann(cfg, rng):
    return ex.busemann_converge(ex.SpaceSpec(cfg["space"]).n, cfg["times"], rng,
                                cfg["probes"], cfg["directions"])


def _sample_pv(cfg, rng):
    return ex.tessellation_rows(ex.SpaceSpec(cfg["space"]), "pv", rng, cfg["radius"],
                                cfg["s_max"], cfg["intensity"], cfg["probes"])


def _sample_ipvt(cfg, rng):
    return ex.tessellation_rows(ex.SpaceSpec(cfg["space"]), "ipvt", rng, cfg["radius"],
                                cfg["s_max"], probes=cfg["probes"])


def _walls(cfg, rng):
    res = ex.wall_hits(ex.SpaceSpec(cfg["space"]).n, rng, cfg["radii"], cfg["delta"], cfg["r"],
                       cfg["probes_per_radius"], cfg["margin"])
    return [{"cell_a": res["pair"][0], "cell_b": res["pair"][1], "radius": float(R),
             "hits": h} for R, h in zip(cfg["radii"], res["hits"])]


def _adjacency(cfg, rng):
    return ex.adjacency_rows(ex.SpaceSpec(cfg["space"]), rng, cfg["radius"], cfg["s_max"],
                             cfg["probes"], cfg["k"])


def _graphing(cfg, rng):
    res = ex.graphing_replica(ex.SpaceSpec(cfg["space"]), cfg["radii"], cfg["epsilons"],
                              cfg["intensity"], rng, cfg["n_max"], cfg.get("buffer"),
                              cfg["allow_uncertified"])
    return [{"radius": r.radius, "epsilon": r.epsilon, "points": r.n_points,
             "cells": r.n_cells, "centers": r.centers, "star_cost": r.star_cost,
             "total_cost": r.total_cost, "connected": int(r.connected),
             "components": r.components} for r in res]


def _mecke(cfg, rng):
    return ex.mecke_rows(ex.SpaceSpec(cfg["space"]), cfg["reps"], rng,
                         intensity=cfg["intensity"], radius=cfg["radius"], s_max=cfg["s_max"])


def _export_disk(cfg, rng):
    spec = ex.SpaceSpec(cfg["space"])
    space = spec.space()
    if cfg["kind"] == "ipvt":
        fns = ts.corona_functions(spec.corona(cfg["s_max"], rng.split(0)))
    else:
        fns = ts.site_functions(spec.ball_poisson(cfg["intensity"], cfg["radius"] + cfg["s_max"],
                                                  rng.split(0)))
    if not fns:
        raise InvalidArgument("the sampled configuration is empty")
    P = ex._lie_probe_cloud(2, cfg["radius"], cfg["probes"], rng.split(1))
    assign = ts.assign_cells(fns, P, space, cfg["s_max"] if cfg["kind"] == "ipvt" else None)
    w = ex.to_disk(P)
    return [{"point_id": i, "cell_id": int(assign.winner[i]), "re": float(w[i].real),
             "im": float(w[i].imag)} for i in range(len(P))]


HANDLERS = {
    "volume-growth": _volume_growth,
    "busemann-converge": _busemann,
    "sample-pv": _sample_pv,
    "sample-ipvt": _sample_ipvt,
    "walls": _walls,
    "adjacency": _adjacency,
    "graphing-cost": _graphing,
    "mecke-check": _mecke,
    "export-disk": _export_disk,
}

DETERMINISTIC = ("volume-growth",)


def _mecke_line(row):
    verdict = "PASS" if row["passed"] else "FAIL"
    return f"{verdict} {row['sampler']} {row['function']} z={row['z']:+.3f} (replica {row['replica']})"


# one stdout line per row, printed after the files are written
SUMMARIES = {"mecke-check": _mecke_line}


# ---------------------------------------------------------------- output

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def render_csv(rows: list) -> bytes:
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\r\n")
        header = list(rows[0])
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])
    return buf.getvalue().encode()


def run(command: str, cfg: dict, out: Path) -> dict:
    """Run all replicas and write the CSV and the manifest; returns the manifest."""
    start = time.perf_counter()
    handler = HANDLERS[command]
    h = config_hash(cfg)
    root = pp.RngStream(cfg["seed"])
    reps = 1 if command in DETERMINISTIC else cfg["replicas"]

    def one(r):
        rows = handler(cfg, root.split(r))
        return [{"seed": cfg["seed"], "replica": r, "config_hash": h, **row} for row in rows]

    if cfg["threads"] > 1 and reps > 1:
        with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(r) for r in range(reps)]
    data = render_csv([row for rows in results for row in rows])
    out.mkdir(parents=True, exist_ok=True)
    name = f"{command}.csv"
    (out / name).write_bytes(data)
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": h,
        "version": __version__,
        "outputs": {name: hashlib.sha256(data).hexdigest()},
        "wall_clock_seconds": round(time.perf_counter() - start, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if command in SUMMARIES:
        for rows in results:
            for row in rows:
                print(SUMMARIES[command](row))
    return manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ipvt", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="flat JSON file of parameters")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--replicas", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--allow-uncertified", action="store_true", default=None)
    p.add_argument("--space")
    p.add_argument("--t-max", type=float, dest="t_max")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        file_cfg = {}
        if args.config is not None:
            try:
                file_cfg = json.loads(args.config.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from None
            if not isinstance(file_cfg, dict):
                raise ConfigError("config must be a JSON object")
        overrides = {"seed": args.seed, "replicas": args.replicas, "threads": args.threads,
                     "allow_uncertified": args.allow_uncertified, "space": args.space,
                     "t_max": args.t_max}
        if args.t_max is not None and args.command != "volume-growth":
            raise ConfigError("--t-max applies to volume-growth only")
        cfg = resolve_config(args.command, file_cfg, overrides)
        run(args.command, cfg, args.out)
    except (ConfigError, InvalidArgument) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DecompositionFailure, NumericFailure, UncertifiedCells, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ResourceLimit, MemoryError) as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
