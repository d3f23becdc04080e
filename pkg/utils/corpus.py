"""
Training corpora for Model-A and Model-B, swept from the simulator.

For every surface and load level the oracle labels the OAA and RCliff; the
service is then observed on a batch of random grants. Model-A rows pair that
telemetry with the oracle labels, Model-B rows pair it with a candidate grant
and the latency/target ratio the service would show there. Half of the
Model-B candidates are drawn around the OAA and the RCliff, where the
interesting labels are.
"""
import logging
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError
from .features import FEATURE_ORDER, MODEL_FIELDS, NormalizationSpec
from .oracle import latency_grid, oracle_oaa_rcliff
from .predictor import MAX_QOS_RATIO
from .simenv import BW_UNITS, COUNTER_JITTER, LatencySurface, ServerSpec, capacity, latency_ms, lc_counters
from .surfaces import LC_PRESETS, lc_preset, random_surface

logger = logging.getLogger(__name__)

CORPUS_SCHEMA_VERSION = 1
DEFAULT_LOADS = tuple(float(x) for x in np.round(np.linspace(0.1, 1.0, 19), 4))
A_LABELS = ("label_oaa_cores", "label_oaa_ways", "label_oaa_bw", "label_rcliff_cores", "label_rcliff_ways")
B_LABELS = ("label_qos_ratio",)
# share of observations taken with a backlog built up
BACKLOG_SHARE = 0.3


@dataclass(frozen=True)
class CorpusSurface:
    name: str
    surface: LatencySurface
    qos_target_ms: float


@dataclass(frozen=True)
class CorpusFiles:
    model_a: str
    model_b: str
    rows_a: int
    rows_b: int
    excluded: tuple[str, ...]


def corpus_surfaces(
    names: Iterable[str] = LC_PRESETS,
    n_random: int = 0,
    seed: int = 0,
    held_out: Sequence[str] = (),
) -> list[CorpusSurface]:
    """Named presets minus ``held_out``, followed by ``n_random`` seeded random surfaces."""
    out = []
    for name in names:
        if name in held_out:
            continue
        surface, target = lc_preset(name)
        out.append(CorpusSurface(name, surface, target))
    rng = np.random.default_rng([seed, 7])
    for i in range(n_random):
        surface, target = random_surface(rng, f"random-{i:03d}")
        out.append(CorpusSurface(surface.name, surface, target))
    return out


def _observe(
    entry: CorpusSurface,
    server: ServerSpec,
    load: float,
    cores: np.ndarray,
    ways: np.ndarray,
    bw: np.ndarray,
    rng: np.random.Generator,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Raw telemetry columns for the service on each grant, plus the backlog it was seen with."""
    n = cores.size
    cap = capacity(entry.surface, server, cores, ways, bw)
    # a backlog only builds up where the grant cannot serve the load
    backlogged = (cap < load) & (rng.random(n) < BACKLOG_SHARE)
    queue = np.where(backlogged, rng.uniform(0.0, 2.0, n), 0.0)
    jitter = 1.0 + COUNTER_JITTER * rng.standard_normal((3, n))
    raw = lc_counters(entry.surface, server, cores, ways, bw, load, queue, jitter)
    raw = {k: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy() for k, v in raw.items()}
    spare_cores = server.n_cores - cores
    spare_cache = server.cache_mb - ways * server.way_size_mb
    raw["neighbor_cores"] = rng.uniform(0.0, 1.0, n) * spare_cores
    raw["neighbor_cache"] = rng.uniform(0.0, 1.0, n) * spare_cache
    raw["neighbor_mbl"] = rng.uniform(0.0, 0.5, n) * server.mem_bw_gbps
    return raw, queue


def _near(center: int, high: int, rng: np.random.Generator, n: int) -> np.ndarray:
    return np.clip(center + rng.integers(-1, 2, n), 1, high)


def sweep_surface(
    entry: CorpusSurface,
    server: ServerSpec,
    norm: NormalizationSpec,
    loads: Sequence[float],
    grants_per_load: int,
    rng: np.random.Generator,
) -> tuple[Optional[pd.DataFrame], Optional[pd.DataFrame]]:
    """Model-A and Model-B rows of one surface; (None, None) when no load level is feasible."""
    frames_a, frames_b = [], []
    n = grants_per_load
    for load in loads:
        grid = latency_grid(entry.surface, server, load)
        result = oracle_oaa_rcliff(entry.surface, server, load, entry.qos_target_ms, grid)
        if not result.feasible:
            continue
        cores = rng.integers(1, server.n_cores + 1, n).astype(float)
        ways = rng.integers(1, server.n_llc_ways + 1, n).astype(float)
        bw = rng.integers(1, BW_UNITS + 1, n).astype(float)
        raw, queue = _observe(entry, server, load, cores, ways, bw, rng)

        meta = {"surface": entry.name, "load": load}
        frame_a = pd.DataFrame(norm.normalize_columns(raw, "A"), columns=list(MODEL_FIELDS["A"]))
        for name, value in zip(A_LABELS, result.labels()):
            frame_a[name] = float(value)
        frames_a.append(frame_a.assign(**meta))

        # expected allocations: random for one half, around the OAA/RCliff for the other
        half = n // 2
        exp_cores = rng.integers(1, server.n_cores + 1, n)
        exp_ways = rng.integers(1, server.n_llc_ways + 1, n)
        around_cliff = rng.random(n - half) < 0.5
        exp_cores[half:] = np.where(
            around_cliff,
            _near(result.rcliff_cores, server.n_cores, rng, n - half),
            _near(result.oaa_cores, server.n_cores, rng, n - half),
        )
        exp_ways[half:] = np.where(
            around_cliff,
            _near(result.rcliff_ways, server.n_llc_ways, rng, n - half),
            _near(result.oaa_ways, server.n_llc_ways, rng, n - half),
        )
        raw["expected_cores"] = exp_cores.astype(float)
        raw["expected_cache"] = exp_ways * server.way_size_mb
        lat = latency_ms(entry.surface, server, exp_cores, exp_ways, bw, load, queue)
        ratio = np.clip(np.asarray(lat) / entry.qos_target_ms, 0.0, MAX_QOS_RATIO)
        frame_b = pd.DataFrame(norm.normalize_columns(raw, "B"), columns=list(MODEL_FIELDS["B"]))
        frame_b[B_LABELS[0]] = ratio
        frames_b.append(frame_b.assign(**meta))
    if not frames_a:
        return None, None
    return pd.concat(frames_a, ignore_index=True), pd.concat(frames_b, ignore_index=True)


def build_corpus(
    server: ServerSpec,
    surfaces: Sequence[CorpusSurface],
    loads: Sequence[float] = DEFAULT_LOADS,
    grants_per_load: int = 256,
    seed: int = 0,
    norm: Optional[NormalizationSpec] = None,
) -> tuple[pd.DataFrame, pd.DataFrame, tuple[str, ...]]:
    """In-memory corpora for both models and the names of the surfaces left out as infeasible."""
    norm = norm or NormalizationSpec.for_server(server)
    rng = np.random.default_rng(seed)
    frames_a, frames_b, excluded = [], [], []
    for entry in surfaces:
        a, b = sweep_surface(entry, server, norm, loads, grants_per_load, rng)
        if a is None:
            logger.warning("%s meets QoS nowhere on %s, excluded from the corpus", entry.name, server.platform_id)
            excluded.append(entry.name)
            continue
        frames_a.append(a)
        frames_b.append(b)
    if not frames_a:
        raise ConfigError(f"no feasible surface on {server.platform_id}, corpus would be empty")
    return pd.concat(frames_a, ignore_index=True), pd.concat(frames_b, ignore_index=True), tuple(excluded)


def write_corpus(path: str, frame: pd.DataFrame, model: str, norm: NormalizationSpec) -> str:
    """CSV preceded by ``#`` lines naming the schema version, feature order and normalization id."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# schema_version={CORPUS_SCHEMA_VERSION}\n")
        f.write(f"# model={model}\n")
        f.write(f"# feature_order={','.join(FEATURE_ORDER)}\n")
        f.write(f"# normalization={norm.spec_id}\n")
        frame.to_csv(f, index=False, float_format="%.10g", lineterminator="\n")
    return path


def read_corpus(path: str) -> tuple[pd.DataFrame, dict[str, str]]:
    header = {}
    try:
        with open(path) as f:
            for line in f:
                if not line.startswith("#"):
                    break
                key, _, value = line[1:].strip().partition("=")
                header[key] = value
        frame = pd.read_csv(path, comment="#")
    except (OSError, pd.errors.ParserError) as e:
        raise ConfigError(f"cannot read corpus {path}: {e}")
    if header.get("schema_version") != str(CORPUS_SCHEMA_VERSION):
        raise ConfigError(f"{path}: corpus schema {header.get('schema_version')}, expected {CORPUS_SCHEMA_VERSION}")
    if header.get("feature_order") != ",".join(FEATURE_ORDER):
        raise ConfigError(f"{path}: feature order differs from this build")
    model = header.get("model", "")
    missing = [c for c in MODEL_FIELDS.get(model, ()) if c not in frame.columns]
    if model not in ("A", "B") or missing:
        raise ConfigError(f"{path}: not a Model-A/B corpus or columns missing: {missing}")
    return frame, header


def corpus_paths(out_dir: str, platform_id: str, tag: str = "") -> tuple[str, str]:
    suffix = f"-{tag}" if tag else ""
    return (
        os.path.join(out_dir, f"{platform_id}{suffix}-model_a.csv"),
        os.path.join(out_dir, f"{platform_id}{suffix}-model_b.csv"),
    )


def generate_corpus(
    server: ServerSpec,
    out_dir: str,
    seed: int = 0,
    n_random: int = 40,
    grants_per_load: int = 256,
    loads: Sequence[float] = DEFAULT_LOADS,
    held_out: Sequence[str] = (),
    unseen: bool = False,
) -> CorpusFiles:
    """
    Write both corpora for one platform.

    :param held_out: preset services kept out of the training corpus
    :param unseen: write the evaluation corpus of the held-out services instead
    """
    norm = NormalizationSpec.for_server(server)
    if unseen:
        if not held_out:
            raise ConfigError("an unseen-service corpus needs at least one held-out service")
        surfaces = corpus_surfaces(held_out, 0, seed)
    else:
        surfaces = corpus_surfaces(LC_PRESETS, n_random, seed, held_out)
    frame_a, frame_b, excluded = build_corpus(server, surfaces, loads, grants_per_load, seed, norm)
    path_a, path_b = corpus_paths(out_dir, server.platform_id, "unseen" if unseen else "")
    write_corpus(path_a, frame_a, "A", norm)
    write_corpus(path_b, frame_b, "B", norm)
    norm.save(os.path.join(out_dir, f"{server.platform_id}-normalization.yaml"))
    logger.info(
        "Corpus for %s written: %d Model-A rows, %d Model-B rows, %d surfaces excluded",
        server.platform_id,
        len(frame_a),
        len(frame_b),
        len(excluded),
    )
    return CorpusFiles(path_a, path_b, len(frame_a), len(frame_b), excluded)
