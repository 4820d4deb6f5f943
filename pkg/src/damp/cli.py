"""Command-line front end.

Every subcommand takes a JSON config document (--config) plus the global
flags --seed, --threads and --out. Runs are reproducible: a missing seed is
drawn once, echoed to stdout and recorded in the outputs.

Exit codes: 0 success, 2 config error, 3 layout non-convergence, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import random
import sys
from pathlib import Path

from damp.bitcode import BitCode, SimilarityConfig, from_literal, to_literal
from damp.chroma import MergePolicy, colour_merge, coloured_literal
from damp.detect import (
    DetectionConfig,
    activate,
    active_detectors,
    build_hierarchy,
    embed,
    load_hierarchy,
    save_hierarchy,
)
from damp.encoders import (
    alphabet_from_config,
    build_polar_encoder,
    build_scalar_space,
    encode_integer_lexical,
    encode_polar,
    encode_scalar,
    encode_word_positional,
    polar_from_config,
    scalar_space_from_config,
)
from damp.formats import load_space, read_pgm, save_space, write_pgm, write_ppm
from damp.layout import EnergyMap, LayoutSchedule, energy_map, init_space, layout_quality, run_layout
from damp.memory import FuzzyStore, StoreConfig
from damp.morph import (
    FragmentDictionary,
    SaturationTable,
    build_dictionary,
    fill_morph_space,
    word_codes,
    word_embedding,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


def _fail(path: str, message: str):
    raise ConfigError(f"config error at {path}: {message}")


def _get(cfg: dict, path: str, kind=None, default=..., root="config"):
    node = cfg
    walked = root
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is not ...:
                return default
            _fail(f"{walked}.{part}", "missing required field")
        node = node[part]
        walked = f"{walked}.{part}"
    if kind is not None and not isinstance(node, kind):
        _fail(walked, f"expected {getattr(kind, '__name__', kind)}, got {type(node).__name__}")
    return node


def _load_config(args) -> dict:
    if args.config is None:
        return {}
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config error at <root>: invalid JSON ({exc})") from exc


def _resolve_seed(cfg: dict, args) -> int:
    if args.seed is not None:
        return args.seed
    seed = _get(cfg, "seed", int, default=None)
    if seed is None:
        seed = random.SystemRandom().getrandbits(32)
        print(f"seed: {seed}  (generated; pass --seed {seed} to reproduce)")
    return seed


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sim_config(cfg: dict, default_metric="cosine_discrete", default_lambda=0.0) -> SimilarityConfig:
    eta = _get(cfg, "eta", default=None)
    return SimilarityConfig(
        _get(cfg, "metric", str, default=default_metric),
        lam=float(_get(cfg, "lambda", (int, float), default=default_lambda)),
        eta=math.inf if eta in (None, "inf") else float(eta),
    )


def _build_encoder(cfg: dict, seed: int):
    kind = _get(cfg, "kind", str)
    params = {k: v for k, v in cfg.items() if k != "kind"}
    params.setdefault("seed", seed)
    try:
        if kind == "scalar":
            return build_scalar_space(**params)
        if kind == "polar":
            return build_polar_encoder(**params)
        if kind == "lexical":
            params["symbols"] = (
                frozenset(params["symbols"]) if params.get("symbols") else None
            )
            return alphabet_from_config({"code_length": 128, "bits_per_symbol": 4,
                                         "positions": 20, "indexing": "from_start",
                                         **params})
    except TypeError as exc:
        _fail("encoder", str(exc))
    except ValueError as exc:
        _fail("encoder", str(exc))
    _fail("encoder.kind", f"unknown encoder kind {kind!r}")


# -- subcommands ---------------------------------------------------------------


def cmd_encode(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(cfg, args)
    enc_cfg = _get(cfg, "encoder", dict)
    values = _get(cfg, "values", list)
    encoder = _build_encoder(enc_cfg, seed)
    out = _out_dir(args) / _get(cfg, "output", str, default="codes.jsonl")
    kind = _get(enc_cfg, "kind", str)
    with open(out, "w", encoding="utf-8") as fh:
        for i, value in enumerate(values):
            try:
                if kind == "scalar":
                    code = encode_scalar(encoder, float(value))
                elif kind == "polar":
                    angle, modulus = value
                    code = encode_polar(encoder, float(angle), float(modulus))
                elif isinstance(value, int):
                    code = encode_integer_lexical(value, encoder)
                else:
                    code = encode_word_positional(str(value), encoder)
            except ValueError as exc:
                _fail(f"values[{i}]", str(exc))
            fh.write(json.dumps({"value": value, "code": coloured_literal(code)},
                                sort_keys=True) + "\n")
    print(f"wrote {len(values)} codes to {out}")
    return EXIT_OK


def _gradient_points(cfg: dict, seed: int):
    kind = _get(cfg, "kind", str, default="polar")
    if kind == "polar":
        enc = polar_from_config({"seed": seed, **_get(cfg, "encoder", dict, default={})})
        angles = _get(cfg, "grid.angles", int, default=100)
        moduli = _get(cfg, "grid.moduli", int, default=100)
        span = enc.mod_hi - enc.mod_lo
        points = []
        for i in range(angles):
            for j in range(moduli):
                modulus = enc.mod_lo + span * j / moduli
                points.append(encode_polar(enc, 360.0 * i / angles, modulus).code)
        return points
    if kind == "linear":
        side = _get(cfg, "grid.side", int, default=100)
        enc_cfg = _get(cfg, "encoder", dict, default={})
        layer_count = _get(enc_cfg, "layer_count", int, default=5)
        bits = _get(enc_cfg, "bits_per_detector", int, default=3)
        code_length = _get(enc_cfg, "code_length", int, default=128)
        fx = build_scalar_space(0.0, side - 1.0, layer_count=layer_count,
                                code_length=code_length, bits_per_detector=bits,
                                seed=seed * 2 + 1)
        fy = build_scalar_space(0.0, side - 1.0, layer_count=layer_count,
                                code_length=code_length, bits_per_detector=bits,
                                seed=seed * 2 + 2)
        points = []
        for x in range(side):
            for y in range(side):
                merged = colour_merge(
                    [encode_scalar(fx, float(x)), encode_scalar(fy, float(y))],
                    MergePolicy(code_length),
                )
                points.append(merged.code)
        return points
    _fail("kind", f"unknown gradient kind {kind!r}")


def cmd_gradient_space(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(cfg, args)
    points = _gradient_points(cfg, seed)
    counts: dict[int, int] = {}
    for p in points:
        counts[p.value] = counts.get(p.value, 0) + 1
    space = init_space(points, _get(cfg, "fill_margin", (int, float), default=0.15), seed)
    out = _out_dir(args)
    container = out / _get(cfg, "output", str, default="space.jsonl")
    save_space(space, container)
    report = {
        "total_codes": len(points),
        "distinct_codes": len(counts),
        "resolution_ratio": len(points) / len(counts),
        "largest_cluster": max(counts.values()),
        "grid": [space.m, space.n],
        "seed": seed,
    }
    report_path = out / _get(cfg, "report", str, default="resolution.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"space {space.m}x{space.n} -> {container}")
    print(f"resolution ratio {report['resolution_ratio']:.2f}, "
          f"largest cluster {report['largest_cluster']}")
    return EXIT_OK


def _schedule_from(cfg: dict, seed: int, threads: int, prefix: str) -> LayoutSchedule:
    known = {f.name for f in LayoutSchedule.__dataclass_fields__.values()}
    unknown = set(cfg) - known
    if unknown:
        _fail(f"{prefix}.{sorted(unknown)[0]}", "unknown schedule field")
    eta = cfg.get("eta")
    params = dict(cfg)
    params["eta"] = math.inf if eta in (None, "inf") else float(eta)
    params.setdefault("seed", seed)
    params.setdefault("threads", threads)
    try:
        return LayoutSchedule(**params)
    except (TypeError, ValueError) as exc:
        _fail(prefix, str(exc))


def cmd_layout(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(cfg, args)
    space = load_space(_get(cfg, "space", str))
    out = _out_dir(args)
    phases = _get(cfg, "phases", list, default=None)
    if phases is None:
        phases = [_get(cfg, "schedule", dict)]
    quality_cfg = _sim_config(_get(cfg, "quality", dict, default={}),
                              default_lambda=0.65)
    r_e = float(_get(cfg, "quality.r_e", (int, float), default=3.0))

    rows = []
    converged = True
    budget = args.steps
    offset = 0
    for i, phase in enumerate(phases):
        schedule = _schedule_from(phase, seed + i, args.threads, f"phases[{i}]")
        if budget is not None:
            remaining = max(0, budget - offset)
            if remaining == 0:
                break
            schedule = LayoutSchedule(
                **{**{f: getattr(schedule, f) for f in schedule.__dataclass_fields__},
                   "max_steps": min(schedule.max_steps, remaining)}
            )
        base = offset

        def log_step(rec, base=base):
            rows.append([base + rec.step, rec.swaps, rec.quality, rec.lam, rec.radius])

        report = run_layout(space, schedule, progress=log_step)
        offset = base + report.step_count
        converged &= report.converged

    container = out / _get(cfg, "output", str, default="laid_out.jsonl")
    save_space(space, container)
    with open(out / _get(cfg, "log", str, default="layout_log.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "swaps", "quality", "lambda", "r"])
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])
    emap = energy_map(space, r_e, quality_cfg)
    write_pgm(emap, out / "energy.pgm")
    write_ppm(space, emap, out / "composite.ppm")
    quality = layout_quality(space, r_e, quality_cfg)
    print(f"final quality {quality:.4f}; outputs in {out}")
    if budget is not None and budget == 0:
        return EXIT_OK
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_energy_map(args) -> int:
    cfg = _load_config(args)
    space = load_space(_get(cfg, "space", str))
    sim = _sim_config(cfg, default_lambda=float(_get(cfg, "lambda", (int, float), default=0.65)))
    r_e = float(_get(cfg, "r_e", (int, float), default=3.0))
    emap = energy_map(space, r_e, sim, normalize=_get(cfg, "normalize", str, default="global"))
    out = _out_dir(args) / _get(cfg, "output", str, default="energy.pgm")
    write_pgm(emap, out)
    print(f"energy map -> {out} (E_max {emap.e_max:.4f})")
    return EXIT_OK


def cmd_build_detectors(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(cfg, args)
    space = load_space(_get(cfg, "space", str))
    sim = _sim_config(cfg, default_lambda=0.0)
    r_e = float(_get(cfg, "r_e", (int, float), default=3.0))
    emap = energy_map(space, r_e, SimilarityConfig(sim.metric, lam=_get(
        cfg, "energy_lambda", (int, float), default=0.5), eta=sim.eta))
    detection = DetectionConfig(**_get(cfg, "detection", dict, default={}))
    hierarchy = build_hierarchy(
        space,
        emap,
        _get(cfg, "lambdas", list, default=[0.5, 0.6, 0.7, 0.8]),
        detection,
        seed=seed,
        budget=_get(cfg, "budget", int, default=64),
        r_a=float(_get(cfg, "r_a", (int, float), default=12.0)),
        metric=sim.metric,
    )
    out = _out_dir(args) / _get(cfg, "output", str, default="hierarchy.json")
    save_hierarchy(hierarchy, out)
    print(f"{hierarchy.detector_count()} detectors -> {out}")
    return EXIT_OK


def _stimuli_from(cfg: dict) -> list[BitCode]:
    literals = _get(cfg, "stimuli", list)
    return [from_literal(lit) for lit in literals]


def cmd_activate(args) -> int:
    cfg = _load_config(args)
    space = load_space(_get(cfg, "space", str))
    hierarchy = load_hierarchy(_get(cfg, "hierarchy", str))
    sim = _sim_config(cfg)
    lambda_a = float(_get(cfg, "lambda_a", (int, float), default=0.55))
    detection = DetectionConfig(**_get(cfg, "detection", dict, default={}))
    emap_path = _get(cfg, "energy", str, default=None)
    r_e = float(_get(cfg, "r_e", (int, float), default=3.0))
    if emap_path:
        emap = EnergyMap(read_pgm(emap_path), r_e, 1.0)
    else:
        emap = energy_map(space, r_e, SimilarityConfig(sim.metric, lam=0.5, eta=sim.eta))
    out = _out_dir(args) / _get(cfg, "output", str, default="activations.jsonl")
    stimuli = _stimuli_from(cfg)
    with open(out, "w", encoding="utf-8") as fh:
        for i, stim in enumerate(stimuli):
            amap = activate(space, emap, [stim], lambda_a, sim.metric, sim.eta)
            actives = active_detectors(hierarchy, amap, emap, detection)
            fh.write(json.dumps({
                "stimulus": i,
                "active": [
                    {"layer": d.layer, "bit": d.bits.bits()[0], "level": round(level, 6)}
                    for d, level in actives
                ],
            }, sort_keys=True) + "\n")
    print(f"activated {len(stimuli)} stimuli -> {out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg = _load_config(args)
    space = load_space(_get(cfg, "space", str))
    hierarchy = load_hierarchy(_get(cfg, "hierarchy", str))
    sim = _sim_config(cfg)
    lambda_a = float(_get(cfg, "lambda_a", (int, float), default=0.55))
    detection = DetectionConfig(**_get(cfg, "detection", dict, default={}))
    r_e = float(_get(cfg, "r_e", (int, float), default=3.0))
    emap = energy_map(space, r_e, SimilarityConfig(sim.metric, lam=0.5, eta=sim.eta))
    out = _out_dir(args) / _get(cfg, "output", str, default="embeddings.jsonl")
    stimuli = _stimuli_from(cfg)
    with open(out, "w", encoding="utf-8") as fh:
        for i, stim in enumerate(stimuli):
            amap = activate(space, emap, [stim], lambda_a, sim.metric, sim.eta)
            actives = active_detectors(hierarchy, amap, emap, detection)
            code = embed(hierarchy, amap, emap, detection)
            fh.write(json.dumps({
                "stimulus": i,
                "code": coloured_literal(code),
                "detectors": [d.bits.bits()[0] for d, _ in actives],
                "levels": [round(level, 6) for _, level in actives],
            }, sort_keys=True) + "\n")
    print(f"embedded {len(stimuli)} stimuli -> {out}")
    return EXIT_OK


def cmd_dict_build(args) -> int:
    cfg = _load_config(args)
    corpus_path = _get(cfg, "corpus", str)
    try:
        with open(corpus_path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError:
        raise
    dictionary = build_dictionary(lines, passes=_get(cfg, "passes", int, default=2))
    out = _out_dir(args) / _get(cfg, "output", str, default="dictionary.json")
    dictionary.save(out)
    print(f"{len(dictionary.tokens)} tokens -> {out}")
    return EXIT_OK


def _morph_parts(cfg: dict, seed: int):
    dictionary = FragmentDictionary.load(_get(cfg, "dictionary", str))
    alphabet = alphabet_from_config({
        "code_length": 256, "bits_per_symbol": 8, "positions": 20,
        "indexing": "from_start", "seed": seed,
        **_get(cfg, "alphabet", dict, default={}),
    })
    table_cfg = _get(cfg, "table", dict, default={})
    table = SaturationTable(
        mode=_get(table_cfg, "mode", str, default="per_fragment", root="config.table"),
        sigma_max=_get(table_cfg, "sigma_max", int, default=12, root="config.table"),
    )
    return dictionary, alphabet, table


def cmd_morph_fill(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(cfg, args)
    dictionary, alphabet, table = _morph_parts(cfg, seed)
    words = _get(cfg, "words", list)
    space = fill_morph_space(
        words, dictionary, alphabet, table,
        fill_margin=float(_get(cfg, "fill_margin", (int, float), default=0.15)),
        seed=seed,
    )
    out = _out_dir(args) / _get(cfg, "output", str, default="morph_space.jsonl")
    save_space(space, out)
    print(f"{space.point_count} fragmentation codes on {space.m}x{space.n} -> {out}")
    return EXIT_OK


def cmd_morph_embed(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(cfg, args)
    dictionary, alphabet, table = _morph_parts(cfg, seed)
    space = load_space(_get(cfg, "space", str))
    hierarchy = load_hierarchy(_get(cfg, "hierarchy", str))
    sim = _sim_config(cfg)
    detection = DetectionConfig(**_get(cfg, "detection", dict, default={}))
    r_e = float(_get(cfg, "r_e", (int, float), default=3.0))
    emap = energy_map(space, r_e, SimilarityConfig(sim.metric, lam=0.5, eta=sim.eta))
    lambda_a = float(_get(cfg, "lambda_a", (int, float), default=0.55))
    out = _out_dir(args) / _get(cfg, "output", str, default="word_embeddings.jsonl")
    with open(out, "w", encoding="utf-8") as fh:
        for word in _get(cfg, "words", list):
            code = word_embedding(word, space, emap, hierarchy, dictionary,
                                  alphabet, table, detection, lambda_a, sim.metric)
            fh.write(json.dumps({"word": word, "code": coloured_literal(code)},
                                sort_keys=True, ensure_ascii=False) + "\n")
    print(f"word embeddings -> {out}")
    return EXIT_OK


def cmd_viz(args) -> int:
    cfg = _load_config(args)
    space = load_space(_get(cfg, "space", str))
    sim = _sim_config(cfg, default_lambda=float(_get(cfg, "lambda", (int, float), default=0.65)))
    emap_path = _get(cfg, "energy", str, default=None)
    if emap_path:
        emap = EnergyMap(read_pgm(emap_path), 0.0, 1.0)
    else:
        emap = energy_map(space, float(_get(cfg, "r_e", (int, float), default=3.0)), sim)
    out = _out_dir(args) / _get(cfg, "output", str, default="composite.ppm")
    write_ppm(space, emap, out)
    print(f"composite -> {out}")
    return EXIT_OK


def _store_config(cfg: dict, seed: int) -> StoreConfig:
    sc = _get(cfg, "store_config", dict, default={})
    return StoreConfig(
        code_length=_get(sc, "code_length", int, default=128, root="config.store_config"),
        bucket_count=_get(sc, "bucket_count", int, default=64, root="config.store_config"),
        mask_density=float(_get(sc, "mask_density", (int, float), default=0.25,
                                root="config.store_config")),
        seed=_get(sc, "seed", int, default=seed, root="config.store_config"),
    )


def cmd_fuzzy_store(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(cfg, args)
    store = FuzzyStore(_store_config(cfg, seed))
    entries = _get(cfg, "entries", list)
    for i, entry in enumerate(entries):
        if isinstance(entry, str):
            code, payload = from_literal(entry), None
        else:
            code = from_literal(_get(entry, "code", str, root=f"config.entries[{i}]"))
            payload = entry.get("payload")
        store.store(code, payload)
    out = _out_dir(args) / _get(cfg, "output", str, default="store.jsonl")
    store.save(out)
    print(f"{len(store)} entries -> {out}")
    return EXIT_OK


def cmd_fuzzy_query(args) -> int:
    cfg = _load_config(args)
    seed = _resolve_seed(cfg, args)
    store = FuzzyStore.load(_get(cfg, "store", str), _store_config(cfg, seed))
    sim = _sim_config(cfg, default_metric="jaccard")
    probe = from_literal(_get(cfg, "probe", str))
    hits = store.query(probe, sim, float(_get(cfg, "epsilon", (int, float))))
    result = [
        {"entry": h.entry_id, "code": to_literal(h.code), "distance": round(h.distance, 9),
         **({"payload": h.payload} if h.payload is not None else {})}
        for h in hits
    ]
    out = _get(cfg, "output", str, default=None)
    text = json.dumps(result, sort_keys=True, indent=2)
    if out:
        path = _out_dir(args) / out
        path.write_text(text + "\n", encoding="utf-8")
        print(f"{len(result)} hits -> {path}")
    else:
        print(text)
    return EXIT_OK


COMMANDS = {
    "encode": cmd_encode,
    "gradient-space": cmd_gradient_space,
    "layout": cmd_layout,
    "energy-map": cmd_energy_map,
    "build-detectors": cmd_build_detectors,
    "activate": cmd_activate,
    "embed": cmd_embed,
    "dict-build": cmd_dict_build,
    "morph-fill": cmd_morph_fill,
    "morph-embed": cmd_morph_embed,
    "viz": cmd_viz,
    "fuzzy-store": cmd_fuzzy_store,
    "fuzzy-query": cmd_fuzzy_query,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="damp",
        description="Sparse-code encoding, code-space layout, detection and embeddings.",
    )
    parser.add_argument("--config", help="path to the JSON config document")
    parser.add_argument("--seed", type=int, help="seed override for stochastic runs")
    parser.add_argument("--threads", type=int, default=1,
                        help="parallel pair evaluation threads (default 1)")
    parser.add_argument("--out", default=".", help="output directory (default: cwd)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        if name == "layout":
            cmd.add_argument("--steps", type=int, default=None,
                             help="cap on total layout steps; 0 copies input through")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
