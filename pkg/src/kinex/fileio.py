"""CSV and manifest formats.

Two CSV flavors are produced, both with a magic first line and `# key =
value` metadata lines before the column header:

* ``# kinex pdf v1``: columns (u, f).
* ``# kinex population v1``: columns (agent_index, wealth).

Floats are printed with 17 significant digits so a read-back is lossless.
Each run directory also gets a flat key=value manifest, written last, with
SHA-256 digests of every artifact; a run directory without a manifest is
incomplete by definition.
"""

from __future__ import annotations

import hashlib
import sys
from pathlib import Path

import numpy as np

from .grid import GridPdf, WealthGrid, quadrature
from .montecarlo import Population

PDF_MAGIC = "# kinex pdf v1"
POPULATION_MAGIC = "# kinex population v1"


def fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_metadata(lines, metadata):
    for key, value in metadata.items():
        lines.append(f"# {key} = {value}")


def _model_metadata(model) -> dict:
    meta = {"model": model.kind}
    if model.saving_fraction is not None:
        meta["lambda"] = fmt(model.saving_fraction)
    if model.exchange_fraction is not None:
        meta["omega"] = fmt(model.exchange_fraction)
    meta["mean_wealth"] = fmt(model.mean_wealth)
    return meta


def write_pdf_csv(path, pdf: GridPdf, metadata: dict | None = None):
    lines = [PDF_MAGIC]
    meta = {} if metadata is None else dict(metadata)
    meta.setdefault("grid", pdf.grid.spacing)
    meta.setdefault("mean_wealth", fmt(pdf.mean_wealth))
    _write_metadata(lines, meta)
    lines.append("u,f")
    for u, f in zip(pdf.grid.nodes, pdf.values):
        lines.append(f"{fmt(u)},{fmt(f)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _read_csv(path, magic):
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != magic:
        raise ValueError(f"{path}: expected leading '{magic}' line")
    meta = {}
    rows = []
    header_seen = False
    for line in text[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
        elif not header_seen:
            header_seen = True
        else:
            rows.append([float(tok) for tok in line.split(",")])
    return meta, np.asarray(rows, dtype=float)


def read_pdf_csv(path):
    """Read a pdf CSV back into (GridPdf, metadata)."""
    meta, data = _read_csv(path, PDF_MAGIC)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (u, f)")
    spacing = meta.get("grid", "custom")
    grid = WealthGrid(data[:, 0], spacing)
    if "mean_wealth" in meta:
        mean = float(meta["mean_wealth"])
    else:
        probe = GridPdf(grid, data[:, 1], 1.0)
        mean = quadrature(probe, grid.nodes * probe.values)
    return GridPdf(grid, data[:, 1], mean), meta


def write_population_csv(path, pop: Population, seed: int,
                         extra: dict | None = None):
    lines = [POPULATION_MAGIC]
    meta = _model_metadata(pop.model)
    meta["seed"] = str(seed)
    meta["steps"] = str(pop.step_count)
    if extra:
        meta.update(extra)
    _write_metadata(lines, meta)
    lines.append("agent_index,wealth")
    for i, w in enumerate(pop.wealth):
        lines.append(f"{i},{fmt(w)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_population_csv(path):
    """Read a population CSV back into (wealth array, metadata)."""
    meta, data = _read_csv(path, POPULATION_MAGIC)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (agent_index, wealth)")
    order = np.argsort(data[:, 0])
    return data[order, 1], meta


def sha256_of(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(run_dir, command: str, config: dict, artifacts,
                   wall_time_s: float, extra: dict | None = None) -> Path:
    """Write manifest.txt last; artifacts are paths relative to run_dir."""
    import numba

    from . import __version__

    run_dir = Path(run_dir)
    lines = ["manifest_version = 1", f"command = {command}"]
    for key in sorted(config):
        lines.append(f"config.{key} = {config[key]}")
    if extra:
        for key in sorted(extra):
            lines.append(f"{key} = {extra[key]}")
    for i, name in enumerate(artifacts):
        lines.append(f"artifact.{i}.path = {name}")
        lines.append(f"artifact.{i}.sha256 = {sha256_of(run_dir / name)}")
    lines.append(f"walltime_s = {wall_time_s:.3f}")
    lines.append(f"version.kinex = {__version__}")
    lines.append(f"version.numpy = {np.__version__}")
    lines.append(f"version.numba = {numba.__version__}")
    lines.append(f"version.python = {sys.version.split()[0]}")
    path = run_dir / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / "manifest.txt"
    out = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def verify_manifest(run_dir) -> bool:
    """True when every artifact digest recorded in the manifest matches."""
    run_dir = Path(run_dir)
    meta = read_manifest(run_dir)
    i = 0
    while f"artifact.{i}.path" in meta:
        actual = sha256_of(run_dir / meta[f"artifact.{i}.path"])
        if actual != meta[f"artifact.{i}.sha256"]:
            return False
        i += 1
    return True
