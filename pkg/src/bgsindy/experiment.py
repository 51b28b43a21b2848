"""Declarative experiment runner over (system, noise level, replicate).

One trajectory is simulated per system and reused across noise levels
and replicates (the integration is deterministic from the fixed initial
condition); noise and row splits are redrawn per cell from seeds
derived by a stable hash, so reruns of the same config are byte
identical.  Each cell fits the three equations independently with
multiple GMJMCMC chains, and results land in metrics.csv, terms.csv and
curves.csv plus a JSON manifest; completed cells can be skipped on
resume.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from bgsindy import __version__
from bgsindy.evaluate import MetricsRow, evaluate_equation
from bgsindy.features import DEFAULT_ALPHABET, RESTRICTED_ALPHABET, TransformKind
from bgsindy.gmjmcmc import GmjmcmcTuning, aggregate_chains, run_chain
from bgsindy.linmodel import DEFAULT_PSI, evidence_for
from bgsindy.mjmcmc import MjmcmcTuning
from bgsindy.systems import (
    SYSTEMS,
    TrajectoryDataset,
    add_noise,
    finite_difference_derivatives,
    get_system,
    make_splits,
    noise_ladder,
    simulate_system,
)

SCHEMA_METRICS = "# bgsindy-metrics-v1"
SCHEMA_TERMS = "# bgsindy-terms-v1"
SCHEMA_CURVES = "# bgsindy-curves-v1"
SCHEMA_DIAGNOSTICS = "# bgsindy-diagnostics-v1"

METRICS_COLUMNS = (
    "system,noise_sd,replicate,equation,power,fdr,r2_train,r2_insample,r2_oos,"
    "excluded_rows_train,excluded_rows_insample,excluded_rows_oos"
)
TERMS_COLUMNS = "system,noise_sd,replicate,equation,feature,inclusion_prob,in_mpm,beta"
CURVES_COLUMNS = "system,noise_sd,metric,mean,sd,n_replicates"
DIAGNOSTICS_COLUMNS = "system,noise_sd,replicate,equation,chain,generation,feature,inclusion_prob"

CURVE_METRICS = ("power", "fdr", "r2_train", "r2_insample", "r2_oos")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    systems: list[str]
    dt: float
    horizon: float
    noise_ks: list[int]
    replicates: int
    split_sizes: tuple[int, int, int]
    sampler: GmjmcmcTuning
    psi: float
    seed_base: int
    output_dir: str
    threads: int = 1
    paper_faithful: bool = False
    diagnostics: bool = False


_TRANSFORM_NAMES = {k.render(): k for k in DEFAULT_ALPHABET}

_MJMCMC_KEYS = {
    "iterations": int,
    "jump_size_min": int,
    "jump_size_max": int,
    "local_opt_steps": int,
    "mode_jump_prob": float,
    "randomization_prob": float,
}
_SAMPLER_KEYS = {
    "pop_size": int,
    "generations": int,
    "chains": int,
    "filtration_threshold": float,
    "operator_weights": None,
    "keep_originals": bool,
    "max_depth": int,
    "max_complexity": int,
    "transforms": None,
    "mjmcmc": None,
}
_TOP_KEYS = {
    "systems": None,
    "dt": float,
    "horizon": float,
    "noise_ks": None,
    "replicates": int,
    "split_sizes": None,
    "psi": float,
    "seed_base": int,
    "output_dir": str,
    "threads": int,
    "paper_faithful": bool,
    "diagnostics": bool,
    "sampler": None,
}


def _check_keys(section: dict, allowed: dict, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(unknown)}")


def _coerce(section: dict, allowed: dict, where: str) -> dict:
    out = {}
    for name, value in section.items():
        typ = allowed[name]
        if typ is None:
            out[name] = value
            continue
        try:
            if typ is bool:
                if not isinstance(value, bool):
                    raise TypeError
                out[name] = value
            elif typ is int:
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                out[name] = int(value)
            else:
                out[name] = typ(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.{name}: expected {typ.__name__}, got {value!r}") from None
    return out


def parse_transforms(names) -> tuple[TransformKind, ...]:
    kinds = []
    for name in names:
        if name not in _TRANSFORM_NAMES:
            raise ConfigError(
                f"sampler.transforms: unknown transform {name!r}; "
                f"choose from {sorted(_TRANSFORM_NAMES)}"
            )
        kinds.append(_TRANSFORM_NAMES[name])
    return tuple(kinds)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(raw, _TOP_KEYS, "config")
    for required in ("systems", "dt", "horizon", "noise_ks", "replicates",
                     "split_sizes", "seed_base", "output_dir"):
        if required not in raw:
            raise ConfigError(f"config.{required} is required")
    top = _coerce(raw, _TOP_KEYS, "config")

    systems = top["systems"]
    if not isinstance(systems, list) or not systems:
        raise ConfigError("config.systems must be a non-empty list")
    for s in systems:
        if s not in SYSTEMS:
            raise ConfigError(f"config.systems: unknown system {s!r}")

    noise_ks = top["noise_ks"]
    if not isinstance(noise_ks, list) or not noise_ks:
        raise ConfigError("config.noise_ks must be a non-empty list")
    for k in noise_ks:
        if isinstance(k, bool) or not isinstance(k, int) or k < 0:
            raise ConfigError(f"config.noise_ks: entries must be integers >= 0, got {k!r}")

    sizes = top["split_sizes"]
    if not isinstance(sizes, (list, tuple)) or len(sizes) != 3:
        raise ConfigError("config.split_sizes must hold exactly 3 integers")
    if any(isinstance(v, bool) or not isinstance(v, int) or v < 2 for v in sizes):
        raise ConfigError("config.split_sizes entries must be integers >= 2")

    if top["replicates"] < 1:
        raise ConfigError("config.replicates must be >= 1")
    if top["dt"] <= 0:
        raise ConfigError("config.dt must be positive")
    if top["horizon"] <= 0:
        raise ConfigError("config.horizon must be positive")
    if top.get("threads", 1) < 1:
        raise ConfigError("config.threads must be >= 1")

    sampler_raw = raw.get("sampler", {}) or {}
    if not isinstance(sampler_raw, dict):
        raise ConfigError("config.sampler must be a mapping")
    _check_keys(sampler_raw, _SAMPLER_KEYS, "sampler")
    sampler_vals = _coerce(sampler_raw, _SAMPLER_KEYS, "sampler")

    mj_raw = sampler_vals.pop("mjmcmc", {}) or {}
    if not isinstance(mj_raw, dict):
        raise ConfigError("sampler.mjmcmc must be a mapping")
    _check_keys(mj_raw, _MJMCMC_KEYS, "sampler.mjmcmc")
    mjmcmc = MjmcmcTuning(**_coerce(mj_raw, _MJMCMC_KEYS, "sampler.mjmcmc"))

    paper_faithful = top.get("paper_faithful", False)
    if "transforms" in sampler_vals:
        alphabet = parse_transforms(sampler_vals.pop("transforms"))
    else:
        alphabet = RESTRICTED_ALPHABET if paper_faithful else DEFAULT_ALPHABET
    if paper_faithful:
        bad = [k for k in noise_ks if k > 7]
        if bad:
            raise ConfigError(f"config.noise_ks: paper-faithful mode allows k in 0..7, got {bad}")
        radian = [k.render() for k in alphabet if k.name in ("sin_rad", "cos_rad")]
        if radian:
            raise ConfigError(
                f"sampler.transforms: paper-faithful mode excludes radian trig, got {radian}"
            )

    if "operator_weights" in sampler_vals:
        ow = sampler_vals.pop("operator_weights")
        if not isinstance(ow, (list, tuple)) or len(ow) != 2:
            raise ConfigError("sampler.operator_weights must hold exactly 2 numbers")
        sampler_vals["operator_weights"] = (float(ow[0]), float(ow[1]))

    sampler = GmjmcmcTuning(mjmcmc=mjmcmc, alphabet=alphabet, **sampler_vals)
    try:
        sampler.validate()
    except ValueError as exc:
        raise ConfigError(f"sampler: {exc}") from None

    chains_default = sampler.chains
    return ExperimentConfig(
        systems=list(systems),
        dt=float(top["dt"]),
        horizon=float(top["horizon"]),
        noise_ks=[int(k) for k in noise_ks],
        replicates=int(top["replicates"]),
        split_sizes=tuple(int(v) for v in sizes),
        sampler=sampler,
        psi=float(top.get("psi", DEFAULT_PSI)),
        seed_base=int(top["seed_base"]),
        output_dir=str(top["output_dir"]),
        threads=int(top.get("threads", 1)),
        paper_faithful=bool(paper_faithful),
        diagnostics=bool(top.get("diagnostics", False)),
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw)


def derive_seed(seed_base: int, *parts) -> int:
    """Stable 63-bit seed from the base seed and a label tuple.

    Uses SHA-256 over "bgsindy-v1|<base>|<part>|..." so seeds are fixed
    across runs, platforms and Python versions.
    """
    msg = "bgsindy-v1|" + "|".join([str(int(seed_base))] + [str(p) for p in parts])
    digest = hashlib.sha256(msg.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(_config_payload(config), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _config_payload(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["sampler"]["alphabet"] = [k.render() for k in config.sampler.alphabet]
    d["split_sizes"] = list(config.split_sizes)
    d["sampler"]["operator_weights"] = list(config.sampler.operator_weights)
    return d


# per-process trajectory cache: simulation is deterministic, so states
# and derivatives are identical across noise levels and replicates
_TRAJ_CACHE: dict = {}


def _trajectory(system: str, dt: float, horizon: float):
    key = (system, dt, horizon)
    if key not in _TRAJ_CACHE:
        spec = get_system(system)
        times, states = simulate_system(spec, dt, horizon)
        derivs = finite_difference_derivatives(times, states)
        _TRAJ_CACHE[key] = (times, states, derivs)
    return _TRAJ_CACHE[key]


def cell_id(system: str, k: int, replicate: int) -> str:
    return f"{system}_k{k}_r{replicate}"


def cell_seeds(config: ExperimentConfig, system: str, k: int, replicate: int) -> dict:
    seeds = {
        "noise": derive_seed(config.seed_base, "noise", system, k, replicate),
        "split": derive_seed(config.seed_base, "split", system, k, replicate),
    }
    for eq in range(3):
        for c in range(config.sampler.chains):
            seeds[f"chain_eq{eq}_c{c}"] = derive_seed(
                config.seed_base, "chain", system, k, replicate, eq, c
            )
    return seeds


def run_cell(config: ExperimentConfig, system: str, k: int, replicate: int) -> dict:
    """Fit all three equations of one (system, noise, replicate) cell."""
    spec = get_system(system)
    times, states, derivs = _trajectory(system, config.dt, config.horizon)
    seeds = cell_seeds(config, system, k, replicate)
    noise_sd = noise_ladder(k)
    responses = add_noise(derivs, noise_sd, seeds["noise"])
    splits = make_splits(times, config.split_sizes, seeds["split"])
    dataset = TrajectoryDataset(
        system=system,
        times=times,
        states=states,
        responses=responses,
        noise_sd=noise_sd,
        seed=seeds["noise"],
        splits=splits,
    )
    metrics = []
    terms = []
    diagnostics = []
    for eq in range(3):
        evidence = evidence_for(dataset, "train", eq, psi=config.psi)
        results = [
            run_chain(evidence, 3, config.sampler, seeds[f"chain_eq{eq}_c{c}"])
            for c in range(config.sampler.chains)
        ]
        summary = aggregate_chains(results, evidence, eq)
        row = evaluate_equation(summary, dataset, spec.true_terms[eq], replicate)
        metrics.append(_metrics_dict(row))
        beta_by_key = dict(zip(summary.mpm_keys, summary.mpm_betas))
        ordered = sorted(summary.inclusion_probs.items(), key=lambda kv: (-kv[1], kv[0]))
        for feat, prob in ordered:
            terms.append(
                {
                    "system": system,
                    "noise_sd": noise_sd,
                    "replicate": replicate,
                    "equation": eq,
                    "feature": feat,
                    "inclusion_prob": prob,
                    "in_mpm": int(feat in beta_by_key),
                    "beta": beta_by_key.get(feat),
                }
            )
        if config.diagnostics:
            for c, res in enumerate(results):
                for g, incl in enumerate(res.history):
                    for feat, prob in sorted(incl.items()):
                        diagnostics.append(
                            {
                                "system": system,
                                "noise_sd": noise_sd,
                                "replicate": replicate,
                                "equation": eq,
                                "chain": c,
                                "generation": g,
                                "feature": feat,
                                "inclusion_prob": prob,
                            }
                        )
    return {
        "cell": cell_id(system, k, replicate),
        "system": system,
        "k": k,
        "replicate": replicate,
        "seeds": seeds,
        "metrics": metrics,
        "terms": terms,
        "diagnostics": diagnostics,
    }


def _metrics_dict(row: MetricsRow) -> dict:
    return {
        "system": row.system,
        "noise_sd": row.noise_sd,
        "replicate": row.replicate,
        "equation": row.equation,
        "power": row.power,
        "fdr": row.fdr,
        "r2_train": row.r2_train,
        "r2_insample": row.r2_insample,
        "r2_oos": row.r2_oos,
        "excluded_rows_train": row.excluded_rows_train,
        "excluded_rows_insample": row.excluded_rows_insample,
        "excluded_rows_oos": row.excluded_rows_oos,
    }


def _run_cell_job(args):
    config_payload, system, k, replicate = args
    config = _config_from_payload(config_payload)
    return run_cell(config, system, k, replicate)


def _config_from_payload(payload: dict) -> ExperimentConfig:
    sampler = payload["sampler"]
    tuning = GmjmcmcTuning(
        pop_size=sampler["pop_size"],
        generations=sampler["generations"],
        mjmcmc=MjmcmcTuning(**sampler["mjmcmc"]),
        filtration_threshold=sampler["filtration_threshold"],
        chains=sampler["chains"],
        operator_weights=tuple(sampler["operator_weights"]),
        keep_originals=sampler["keep_originals"],
        max_depth=sampler["max_depth"],
        max_complexity=sampler["max_complexity"],
        alphabet=parse_transforms(sampler["alphabet"]),
    )
    return ExperimentConfig(
        systems=payload["systems"],
        dt=payload["dt"],
        horizon=payload["horizon"],
        noise_ks=payload["noise_ks"],
        replicates=payload["replicates"],
        split_sizes=tuple(payload["split_sizes"]),
        sampler=tuning,
        psi=payload["psi"],
        seed_base=payload["seed_base"],
        output_dir=payload["output_dir"],
        threads=payload["threads"],
        paper_faithful=payload["paper_faithful"],
        diagnostics=payload["diagnostics"],
    )


def effective_threads(config: ExperimentConfig, cli_threads: int | None = None) -> int:
    env = os.environ.get("BGNLM_SINDY_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"BGNLM_SINDY_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("BGNLM_SINDY_THREADS must be >= 1")
        return n
    if cli_threads is not None:
        if cli_threads < 1:
            raise ConfigError("--threads must be >= 1")
        return cli_threads
    return config.threads


def run_experiment(
    config: ExperimentConfig,
    resume: bool = False,
    threads: int | None = None,
    progress=None,
) -> dict:
    """Execute the full grid; returns a report with paths and failures."""
    outdir = Path(config.output_dir)
    cells_dir = outdir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = outdir / "manifest.json"
    manifest = _load_manifest(manifest_path)
    chash = config_hash(config)
    if manifest.get("config_hash") not in (None, chash):
        if resume:
            raise ConfigError(
                "manifest belongs to a different config; refusing to resume"
            )
        manifest = {}
    manifest.setdefault("config_hash", chash)
    manifest["version"] = __version__
    manifest.setdefault("cells", {})
    manifest["config"] = _config_payload(config)

    grid = [
        (system, k, rep)
        for system in config.systems
        for k in config.noise_ks
        for rep in range(config.replicates)
    ]
    pending = []
    for system, k, rep in grid:
        cid = cell_id(system, k, rep)
        entry = manifest["cells"].get(cid)
        done = entry and entry.get("status") == "completed" and (cells_dir / f"{cid}.json").exists()
        if resume and done:
            continue
        pending.append((system, k, rep))

    n_threads = effective_threads(config, threads)
    payload = _config_payload(config)
    failures = []

    def handle(system, k, rep, result, error):
        cid = cell_id(system, k, rep)
        if error is None:
            with open(cells_dir / f"{cid}.json", "w") as fh:
                json.dump(result, fh)
            manifest["cells"][cid] = {
                "status": "completed",
                "seeds": result["seeds"],
                "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
            }
        else:
            failures.append((cid, error))
            manifest["cells"][cid] = {
                "status": "failed",
                "error": error,
                "seeds": cell_seeds(config, system, k, rep),
                "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
            }
        _write_manifest(manifest_path, manifest)
        if progress is not None:
            progress(cid, manifest["cells"][cid]["status"])

    if n_threads > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=n_threads) as pool:
            futures = {
                pool.submit(_run_cell_job, (payload, system, k, rep)): (system, k, rep)
                for system, k, rep in pending
            }
            for fut, (system, k, rep) in futures.items():
                try:
                    handle(system, k, rep, fut.result(), None)
                except Exception as exc:  # cell failures don't stop the run
                    handle(system, k, rep, None, f"{type(exc).__name__}: {exc}")
    else:
        for system, k, rep in pending:
            try:
                handle(system, k, rep, run_cell(config, system, k, rep), None)
            except Exception as exc:
                handle(system, k, rep, None, f"{type(exc).__name__}: {exc}")

    metrics_rows, terms_rows, diag_rows = [], [], []
    for system, k, rep in grid:
        cid = cell_id(system, k, rep)
        path = cells_dir / f"{cid}.json"
        if manifest["cells"].get(cid, {}).get("status") != "completed" or not path.exists():
            continue
        with open(path) as fh:
            cell = json.load(fh)
        metrics_rows.extend(cell["metrics"])
        terms_rows.extend(cell["terms"])
        diag_rows.extend(cell.get("diagnostics", []))

    metrics_rows.sort(key=lambda r: (r["system"], r["noise_sd"], r["replicate"], r["equation"]))
    terms_rows.sort(
        key=lambda r: (
            r["system"], r["noise_sd"], r["replicate"], r["equation"],
            -r["inclusion_prob"], r["feature"],
        )
    )
    write_metrics_csv(outdir / "metrics.csv", metrics_rows)
    write_terms_csv(outdir / "terms.csv", terms_rows)
    curve_rows, missing = emit_curves(metrics_rows)
    write_curves_csv(outdir / "curves.csv", curve_rows)
    if config.diagnostics:
        write_diagnostics_csv(outdir / "diagnostics.csv", diag_rows)
    _write_manifest(manifest_path, manifest)
    return {
        "output_dir": str(outdir),
        "metrics": str(outdir / "metrics.csv"),
        "terms": str(outdir / "terms.csv"),
        "curves": str(outdir / "curves.csv"),
        "manifest": str(manifest_path),
        "failures": failures,
        "missing": missing,
        "n_cells": len(grid),
        "n_run": len(pending),
    }


def _load_manifest(path: Path) -> dict:
    if path.exists():
        with open(path) as fh:
            return json.load(fh)
    return {}


def _write_manifest(path: Path, manifest: dict) -> None:
    tmp = path.with_suffix(".json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    tmp.replace(path)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_metrics_csv(path, rows) -> None:
    cols = METRICS_COLUMNS.split(",")
    with open(path, "w") as fh:
        fh.write(SCHEMA_METRICS + "\n")
        fh.write(METRICS_COLUMNS + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")


def write_terms_csv(path, rows) -> None:
    cols = TERMS_COLUMNS.split(",")
    with open(path, "w") as fh:
        fh.write(SCHEMA_TERMS + "\n")
        fh.write(TERMS_COLUMNS + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")


def write_curves_csv(path, rows) -> None:
    cols = CURVES_COLUMNS.split(",")
    with open(path, "w") as fh:
        fh.write(SCHEMA_CURVES + "\n")
        fh.write(CURVES_COLUMNS + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")


def write_diagnostics_csv(path, rows) -> None:
    cols = DIAGNOSTICS_COLUMNS.split(",")
    with open(path, "w") as fh:
        fh.write(SCHEMA_DIAGNOSTICS + "\n")
        fh.write(DIAGNOSTICS_COLUMNS + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in cols) + "\n")


def read_metrics_csv(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        return rows
    header = lines[0].split(",")
    for ln in lines[1:]:
        values = ln.split(",")
        row = dict(zip(header, values))
        for col in header:
            if col == "system":
                continue
            if col in ("replicate", "equation") or col.startswith("excluded"):
                row[col] = int(row[col])
            else:
                row[col] = float(row[col])
        rows.append(row)
    return rows


def emit_curves(metrics_rows) -> tuple[list[dict], list[str]]:
    """Aggregate metrics into per-(system, noise) curve points.

    Each replicate contributes the mean of its three equations; the
    curve holds the mean and sample standard deviation over replicates
    (sd 0 for a single replicate).  Returns (rows, notes) where notes
    list (system, noise) groups with fewer replicates than the maximum
    observed for that system.
    """
    groups: dict = {}
    for r in metrics_rows:
        groups.setdefault((r["system"], r["noise_sd"]), {}).setdefault(
            r["replicate"], []
        ).append(r)
    rows = []
    counts: dict = {}
    for (system, noise_sd), reps in sorted(groups.items()):
        n_rep = len(reps)
        counts.setdefault(system, {})[noise_sd] = n_rep
        for metric in CURVE_METRICS:
            per_rep = [
                float(np.mean([row[metric] for row in rep_rows]))
                for _, rep_rows in sorted(reps.items())
            ]
            mean = float(np.mean(per_rep))
            sd = float(np.std(per_rep, ddof=1)) if n_rep > 1 else 0.0
            rows.append(
                {
                    "system": system,
                    "noise_sd": noise_sd,
                    "metric": metric,
                    "mean": mean,
                    "sd": sd,
                    "n_replicates": n_rep,
                }
            )
    notes = []
    for system, by_noise in counts.items():
        full = max(by_noise.values())
        for noise_sd, n_rep in sorted(by_noise.items()):
            if n_rep < full:
                notes.append(
                    f"{system} at noise_sd={noise_sd:g}: {n_rep}/{full} replicates present"
                )
    return rows, notes
