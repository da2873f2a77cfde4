"""CSV and JSON formats for gridded ensembles, reanalyses and run configuration."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .gibbs import ChainConfig
from .model import EnsembleData, InadequacyConfig, ModelRuns, PriorConfig, ReanalysisData

ENSEMBLE_HEADER = ("gridbox_id", "model_id", "scenario", "run_id", "value")
REANALYSIS_HEADER = ("gridbox_id", "reanalysis_id", "value")
SCENARIOS = {"hist": "hist", "fut": "fut"}


class InputError(ValueError):
    """Malformed input file; the message names the file and line."""


@dataclass(frozen=True)
class GridboxDataset:
    gridbox_id: str
    data: EnsembleData
    rean: ReanalysisData


def fmt(x: float) -> str:
    """Shortest round-tripping representation of a float."""
    return repr(float(x))


def _rows(path: Path, header: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return
        got = tuple(c.strip() for c in first)
        if got[: len(header)] != tuple(header):
            raise InputError(f"{path}:1: expected header {','.join(header)}, got {','.join(got)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row[: len(header)]]


def _float(path, lineno, text) -> float:
    try:
        return float(text)
    except ValueError:
        raise InputError(f"{path}:{lineno}: value {text!r} is not a number") from None


def load_ensemble_csv(path, model_subset: Iterable[str] | None = None) -> dict[str, EnsembleData]:
    """Group runs by gridbox and model; runs are ordered by run_id.

    Models appear in order of first occurrence within each gridbox.  With
    ``model_subset`` only the listed model ids are kept.
    """
    path = Path(path)
    keep = set(model_subset) if model_subset is not None else None
    runs: dict[str, dict[str, dict[str, dict[int, float]]]] = defaultdict(dict)
    for lineno, (gid, mid, scen, run_id, value) in _rows(path, ENSEMBLE_HEADER):
        if scen not in SCENARIOS:
            raise InputError(f"{path}:{lineno}: unknown scenario {scen!r} (expected hist or fut)")
        try:
            rid = int(run_id)
        except ValueError:
            raise InputError(f"{path}:{lineno}: run_id {run_id!r} is not an integer") from None
        if rid < 1:
            raise InputError(f"{path}:{lineno}: run_id must be positive")
        v = _float(path, lineno, value)
        if not gid or not mid:
            raise InputError(f"{path}:{lineno}: empty gridbox_id or model_id")
        if keep is not None and mid not in keep:
            continue
        per_model = runs[gid].setdefault(mid, {"hist": {}, "fut": {}})
        if rid in per_model[scen]:
            raise InputError(f"{path}:{lineno}: duplicate run {gid}/{mid}/{scen}/{rid}")
        per_model[scen][rid] = v
    out = {}
    for gid, models in runs.items():
        out[gid] = EnsembleData(
            tuple(
                ModelRuns(
                    mid,
                    tuple(r["hist"][k] for k in sorted(r["hist"])),
                    tuple(r["fut"][k] for k in sorted(r["fut"])),
                )
                for mid, r in models.items()
            )
        )
    return out


def write_ensemble_csv(path, ensembles: Mapping[str, EnsembleData]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENSEMBLE_HEADER)
        for gid, data in ensembles.items():
            for m in data.models:
                for scen, values in (("hist", m.hist_runs), ("fut", m.fut_runs)):
                    for r, v in enumerate(values, start=1):
                        w.writerow((gid, m.model_id, scen, r, fmt(v)))


def load_reanalysis_csv(path) -> dict[str, ReanalysisData]:
    path = Path(path)
    values: dict[str, dict[str, float]] = defaultdict(dict)
    for lineno, (gid, rid, value) in _rows(path, REANALYSIS_HEADER):
        if rid in values[gid]:
            raise InputError(f"{path}:{lineno}: duplicate reanalysis {gid}/{rid}")
        values[gid][rid] = _float(path, lineno, value)
    return {gid: ReanalysisData(tuple(v.values())) for gid, v in values.items()}


def write_reanalysis_csv(path, reanalyses: Mapping[str, ReanalysisData]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REANALYSIS_HEADER)
        for gid, rean in reanalyses.items():
            for i, v in enumerate(rean.values, start=1):
                w.writerow((gid, f"r{i}", fmt(v)))


def pair_gridboxes(ensembles: Mapping[str, EnsembleData], reanalyses: Mapping[str, ReanalysisData]) -> list[GridboxDataset]:
    """Join the two inputs by gridbox id; a side that is missing becomes empty."""
    ids = sorted(set(ensembles) | set(reanalyses))
    return [
        GridboxDataset(g, ensembles.get(g, EnsembleData(())), reanalyses.get(g, ReanalysisData(())))
        for g in ids
    ]


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    priors: PriorConfig = PriorConfig()
    inadequacy: InadequacyConfig = InadequacyConfig()
    chains: ChainConfig = ChainConfig()
    model_subset: tuple[str, ...] | None = None


def _pick(section: Mapping, cls, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise InputError(f"config: unknown keys in {where}: {', '.join(sorted(unknown))}")
    return dict(section)


def parse_config(raw: Mapping) -> RunConfig:
    """Build a RunConfig from a JSON object; missing keys keep their defaults."""
    top = {"kappa", "kappa_w", "priors", "chains", "seed", "model_subset"}
    unknown = set(raw) - top
    if unknown:
        raise InputError(f"config: unknown keys: {', '.join(sorted(unknown))}")
    try:
        priors = PriorConfig(**_pick(raw.get("priors", {}), PriorConfig, "priors"))
        inadequacy = InadequacyConfig(raw.get("kappa", 1.2), raw.get("kappa_w", 1.2))
        chain_kw = _pick(raw.get("chains", {}), ChainConfig, "chains")
        if "seed" in raw:
            chain_kw["base_seed"] = int(raw["seed"])
        chains = ChainConfig(**chain_kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"config: {exc}") from None
    bad = priors.violations()
    if bad:
        raise InputError("config: " + "; ".join(bad))
    subset = raw.get("model_subset")
    return RunConfig(priors, inadequacy, chains, tuple(subset) if subset is not None else None)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return parse_config(raw)
