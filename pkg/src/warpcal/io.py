"""Readers and writers for every on-disk format.

All floats are written with Python's shortest round-trip representation,
so write -> read -> write is byte-identical.  CSV layouts:

* grid files: ``time,row,col,value`` long format plus a ``.meta.json``
  sidecar holding nx, ny, n_times and the bounding box;
* stations: ``station_id,x,y,time,value`` with an empty value marking a
  missing observation; x, y are raw bounding-box coordinates;
* posterior samples: one row per kept iteration, columns
  ``b0, b_j_k, a_j_k_l, beta_l, sigma2, sigma02, sigmaa2, rho0, rhoa, rhox``
  (blocks absent from a variant are omitted).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .inference import ModelConfig, PosteriorSamples, PredictiveDraws
from .spatial import Grid, StationData, denormalize, normalize
from .spectral import GriddedField, SpectralLayers
from .warp import displacement_significance


def _fmt(value) -> str:
    return repr(float(value))


def meta_path(path) -> Path:
    path = Path(path)
    stem = path.name[:-4] if path.name.endswith(".csv") else path.name
    return path.with_name(stem + ".meta.json")


# ---------------------------------------------------------------------------
# Gridded fields


def write_grid_csv(path, field: GriddedField) -> None:
    path = Path(path)
    grid = field.grid
    lines = ["time,row,col,value"]
    for t in range(field.n_times):
        slab = field.values[t]
        for r in range(grid.ny):
            row = slab[r]
            lines.extend(f"{t},{r},{c},{_fmt(row[c])}" for c in range(grid.nx))
    path.write_text("\n".join(lines) + "\n")
    meta = {"nx": grid.nx, "ny": grid.ny, "n_times": field.n_times,
            "bbox": list(grid.bbox)}
    meta_path(path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def read_grid_csv(path) -> GriddedField:
    path = Path(path)
    mpath = meta_path(path)
    if not path.exists() or not mpath.exists():
        raise DataError(f"grid file or metadata missing: {path}")
    meta = json.loads(mpath.read_text())
    grid = Grid(int(meta["nx"]), int(meta["ny"]), tuple(meta["bbox"]))
    values = np.zeros((int(meta["n_times"]), grid.ny, grid.nx))
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["time", "row", "col", "value"]:
            raise DataError(f"{path}:1: expected header time,row,col,value")
        for lineno, row in enumerate(reader, start=2):
            try:
                t, r, c = int(row[0]), int(row[1]), int(row[2])
                values[t, r, c] = float(row[3])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: bad grid row {row!r}") from exc
    return GriddedField(grid, values)


def write_layers(directory, layers: SpectralLayers) -> list[Path]:
    """Export each frequency band as its own grid CSV (diagnostics)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for l in range(layers.n_layers):
        p = directory / f"layer_{l + 1:02d}.csv"
        write_grid_csv(p, GriddedField(layers.grid, layers.layers[l]))
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# Stations


def write_stations_csv(path, stations: StationData, grid: Grid) -> None:
    path = Path(path)
    raw = denormalize(grid, stations.locations)
    lines = ["station_id,x,y,time,value"]
    for i, sid in enumerate(stations.ids):
        x, y = _fmt(raw[i, 0]), _fmt(raw[i, 1])
        for t in range(stations.n_times):
            val = "" if stations.missing[t, i] else _fmt(stations.values[t, i])
            lines.append(f"{sid},{x},{y},{t},{val}")
    path.write_text("\n".join(lines) + "\n")


def read_stations_csv(path, grid: Grid) -> StationData:
    path = Path(path)
    if not path.exists():
        raise DataError(f"stations file missing: {path}")
    ids: list[str] = []
    index: dict[str, int] = {}
    raw_xy: list[tuple[float, float]] = []
    records = []
    max_t = -1
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["station_id", "x", "y", "time", "value"]:
            raise DataError(f"{path}:1: expected header station_id,x,y,time,value")
        for lineno, row in enumerate(reader, start=2):
            try:
                sid, x, y, t = row[0], float(row[1]), float(row[2]), int(row[3])
                val = None if row[4] == "" else float(row[4])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: bad station row {row!r}") from exc
            if sid not in index:
                index[sid] = len(ids)
                ids.append(sid)
                raw_xy.append((x, y))
            records.append((index[sid], t, val))
            max_t = max(max_t, t)
    if max_t < 0:
        raise DataError(f"{path}: no station records")
    values = np.zeros((max_t + 1, len(ids)))
    missing = np.ones((max_t + 1, len(ids)), dtype=bool)
    for i, t, val in records:
        if val is not None:
            values[t, i] = val
            missing[t, i] = False
    locations = normalize(grid, np.asarray(raw_xy))
    return StationData(tuple(ids), locations, values, missing)


# ---------------------------------------------------------------------------
# Posterior samples


def _sample_columns(samples: PosteriorSamples):
    cols: list[tuple[str, np.ndarray]] = [("b0", samples.intercept)]
    j0, k0 = samples.config.intercept_basis
    if samples.intercept_coef.shape[1]:
        for j in range(j0):
            for k in range(k0):
                cols.append((f"b_{j + 1}_{k + 1}", samples.intercept_coef[:, j * k0 + k]))
    jw, kw = samples.config.warp_basis
    if samples.warp_coef.shape[1]:
        for j in range(jw):
            for k in range(kw):
                for l in range(2):
                    cols.append((f"a_{j + 1}_{k + 1}_{l + 1}",
                                 samples.warp_coef[:, j * kw + k, l]))
    for l in range(samples.layer_coef.shape[1]):
        cols.append((f"beta_{l + 1}", samples.layer_coef[:, l]))
    cols.append(("sigma2", samples.noise_var))
    if samples.intercept_coef.shape[1]:
        cols.append(("sigma02", samples.intercept_var))
    if samples.warp_coef.shape[1]:
        cols.append(("sigmaa2", samples.warp_var))
    if samples.intercept_coef.shape[1]:
        cols.append(("rho0", samples.rho_intercept))
    if samples.warp_coef.shape[1]:
        cols.append(("rhoa", samples.rho_warp))
    cols.append(("rhox", samples.rho_layer))
    return cols


def write_samples_csv(path, samples: PosteriorSamples) -> None:
    path = Path(path)
    cols = _sample_columns(samples)
    names = [name for name, _ in cols]
    arrays = [arr for _, arr in cols]
    lines = [",".join(names)]
    for i in range(samples.n_kept):
        lines.append(",".join(_fmt(arr[i]) for arr in arrays))
    path.write_text("\n".join(lines) + "\n")


def read_samples_csv(path) -> PosteriorSamples:
    """Rebuild posterior draws from a samples file.

    Dimensions come from the column names; diagnostics that are not stored
    in the file (acceptance rates, station displacements) come back empty.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"samples file missing: {path}")
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "b0":
            raise DataError(f"{path}:1: not a samples file")
        try:
            data = np.array([[float(v) for v in row] for row in reader])
        except ValueError as exc:
            raise DataError(f"{path}: bad numeric value") from exc
    if data.size == 0:
        raise DataError(f"{path}: no sample rows")
    col = {name: data[:, i] for i, name in enumerate(header)}
    m = data.shape[0]

    b_names = [n for n in header if n.startswith("b_")]
    a_names = [n for n in header if n.startswith("a_")]
    beta_names = [n for n in header if n.startswith("beta_")]
    j0 = max((int(n.split("_")[1]) for n in b_names), default=0)
    k0 = max((int(n.split("_")[2]) for n in b_names), default=0)
    jw = max((int(n.split("_")[1]) for n in a_names), default=0)
    kw = max((int(n.split("_")[2]) for n in a_names), default=0)
    n_layers = max(int(n.split("_")[1]) for n in beta_names)

    intercept_coef = np.zeros((m, j0 * k0))
    for j in range(j0):
        for k in range(k0):
            intercept_coef[:, j * k0 + k] = col[f"b_{j + 1}_{k + 1}"]
    warp_coef = np.zeros((m, jw * kw, 2))
    for j in range(jw):
        for k in range(kw):
            for l in range(2):
                warp_coef[:, j * kw + k, l] = col[f"a_{j + 1}_{k + 1}_{l + 1}"]
    layer_coef = np.column_stack([col[f"beta_{l + 1}"] for l in range(n_layers)])

    if a_names and n_layers > 1:
        variant = "full"
    elif a_names:
        variant = "warp"
    elif b_names:
        variant = "smooth"
    else:
        variant = "slr"
    config = ModelConfig(intercept_basis=(j0, k0) if b_names else (4, 4),
                         warp_basis=(jw, kw) if a_names else (4, 4),
                         n_layers=n_layers)
    ones = np.ones(m)
    return PosteriorSamples(
        variant=variant, config=config,
        intercept=col["b0"], layer_coef=layer_coef, intercept_coef=intercept_coef,
        warp_coef=warp_coef, noise_var=col["sigma2"],
        intercept_var=col.get("sigma02", ones.copy()),
        warp_var=col.get("sigmaa2", ones.copy()),
        rho_intercept=col.get("rho0", 0.9 * ones.copy()),
        rho_warp=col.get("rhoa", 0.9 * ones.copy()),
        rho_layer=col["rhox"],
        displacement=np.zeros((m, 0, 2)), acceptance={}, proposal_scales={})


def write_acceptance_json(path, samples: PosteriorSamples) -> None:
    payload = {"variant": samples.variant,
               "acceptance": {k: samples.acceptance[k] for k in sorted(samples.acceptance)},
               "proposal_scales": samples.proposal_scales,
               "n_kept": samples.n_kept}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_warp_summary_csv(path, samples: PosteriorSamples, stations: StationData,
                           grid: Grid, level: float = 0.95) -> None:
    """Per-station displacement summary with credible-interval significance flags."""
    disp = samples.displacement
    per_coord, overall = displacement_significance(disp, level=level)
    mean = disp.mean(axis=0)
    alpha = 1.0 - level
    lo = np.quantile(disp, alpha / 2.0, axis=0)
    hi = np.quantile(disp, 1.0 - alpha / 2.0, axis=0)
    raw = denormalize(grid, stations.locations)
    lines = ["station_id,x,y,mean_dx,mean_dy,dx_lo,dx_hi,dy_lo,dy_hi,sig_x,sig_y,significant"]
    for i, sid in enumerate(stations.ids):
        lines.append(",".join([
            sid, _fmt(raw[i, 0]), _fmt(raw[i, 1]),
            _fmt(mean[i, 0]), _fmt(mean[i, 1]),
            _fmt(lo[i, 0]), _fmt(hi[i, 0]), _fmt(lo[i, 1]), _fmt(hi[i, 1]),
            str(int(per_coord[i, 0])), str(int(per_coord[i, 1])), str(int(overall[i])),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_warp_draws_csv(path, samples: PosteriorSamples, stations: StationData) -> None:
    """Per-iteration displacement draws at the stations (trace-plot export)."""
    lines = ["iteration,station_id,dx,dy"]
    disp = samples.displacement
    for m in range(disp.shape[0]):
        for i, sid in enumerate(stations.ids):
            lines.append(f"{m},{sid},{_fmt(disp[m, i, 0])},{_fmt(disp[m, i, 1])}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Predictions


def _obs_names(stations: StationData, pred: PredictiveDraws):
    return [f"{stations.ids[s]}@{t}" for s, t in zip(pred.station_idx, pred.time_idx)]


def write_prediction_summary_csv(path, pred: PredictiveDraws, stations: StationData,
                                 level: float = 0.95) -> None:
    from .inference import summarize_predictions
    summary = summarize_predictions(pred, level=level)
    lines = ["station_id,time,mean,sd,skewness,kurtosis,lo,hi"]
    for i in range(len(pred.station_idx)):
        lines.append(",".join([
            stations.ids[pred.station_idx[i]], str(int(pred.time_idx[i])),
            _fmt(summary["mean"][i]), _fmt(summary["sd"][i]),
            _fmt(summary["skewness"][i]), _fmt(summary["kurtosis"][i]),
            _fmt(summary["lo"][i]), _fmt(summary["hi"][i]),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_draws_csv(path, draws: np.ndarray, names: list[str]) -> None:
    lines = ["iteration," + ",".join(names)]
    for m in range(draws.shape[0]):
        lines.append(str(m) + "," + ",".join(_fmt(v) for v in draws[m]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_draws_csv(path):
    """Returns (names, draws) from a draw file written by write_draws_csv."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"draws file missing: {path}")
    with path.open() as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "iteration":
            raise DataError(f"{path}:1: not a draws file")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad numeric value") from exc
    if not rows:
        raise DataError(f"{path}: no draws")
    return header[1:], np.asarray(rows)


def write_prediction_draws(out_dir, variant: str, pred: PredictiveDraws,
                           stations: StationData) -> None:
    names = _obs_names(stations, pred)
    write_draws_csv(Path(out_dir) / f"mean_draws_{variant}.csv", pred.mean_draws, names)
    write_draws_csv(Path(out_dir) / f"pred_draws_{variant}.csv", pred.draws, names)


# ---------------------------------------------------------------------------
# Scores and study tables


def write_scores(path_json, path_txt, report, level: float) -> None:
    payload = dict(report.as_dict(), level=level)
    Path(path_json).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    lines = [f"{k:<10} {payload[k]}" for k in ("mse", "mad", "coverage", "crps", "n_scored")]
    Path(path_txt).write_text("\n".join(lines) + "\n")


def write_study_cells_csv(path, rows) -> None:
    lines = ["scenario,n,variant,replicate,mse,mad,coverage,crps,n_scored,error"]
    for r in rows:
        lines.append(",".join([
            r["scenario"], str(r["n"]), r["variant"], str(r["replicate"]),
            _fmt(r["mse"]), _fmt(r["mad"]), _fmt(r["coverage"]), _fmt(r["crps"]),
            str(r["n_scored"]), r.get("error", ""),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_study_summary_csv(path, table) -> None:
    lines = ["scenario,n,variant,metric,mean,se,replicates"]
    for r in table:
        lines.append(",".join([
            r["scenario"], str(r["n"]), r["variant"], r["metric"],
            _fmt(r["mean"]), _fmt(r["se"]), str(r["replicates"]),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def format_study_text(table, variants) -> str:
    """Plain-text study summary: one block per metric, rows by (scenario, n)."""
    cells = {}
    keys = []
    for r in table:
        key = (r["metric"], r["scenario"], r["n"])
        cells[key + (r["variant"],)] = (r["mean"], r["se"])
        if (r["scenario"], r["n"]) not in keys:
            keys.append((r["scenario"], r["n"]))
    out = []
    for metric in ("mse", "mad", "coverage", "crps"):
        header = f"{'scenario':<16}{'n':>5}"
        for v in variants:
            header += f"{v:>16}"
        block = [metric.upper(), header]
        for scenario, n in keys:
            line = f"{scenario:<16}{n:>5}"
            for v in variants:
                mean, se = cells.get((metric, scenario, n, v), (float("nan"), float("nan")))
                line += f"{mean:>9.3f}({se:.3f})"
            block.append(line)
        out.append("\n".join(block))
    return "\n\n".join(out) + "\n"


def write_truth_json(path, truth: dict) -> None:
    Path(path).write_text(json.dumps(truth, sort_keys=True, indent=2) + "\n")


def read_truth_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"truth file missing: {path}")
    return json.loads(path.read_text())
