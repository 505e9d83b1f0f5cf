import csv
import json
from pathlib import Path

import numpy as np

VERSION = "0.1.0"

SPECTRUM_COLUMNS = ["re", "im", "abs"]
SWEEP_COLUMNS = ["m", "rmse"]
RESIDUAL_COLUMNS = ["i", "N", "J_N", "I_N_error", "norm_sq"]
KERNEL_SUMMARY_COLUMNS = ["observable", "m", "rms_error"]
CONDITIONING_COLUMNS = ["quantity", "value"]


def _num(value) -> str:
    return repr(float(value))


def _write_meta(f, meta: dict | None):
    if meta:
        f.write("# " + json.dumps(meta, sort_keys=True) + "\n")


def write_rows(path: Path, columns: list[str], rows: list[dict], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        _write_meta(f, meta)
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _num(v) if isinstance(v, (float, np.floating)) else v for k, v in row.items()})
    print(f"  CSV saved to {path} ({len(rows)} rows)")
    return path


def read_rows(path: Path) -> tuple[list[dict], dict]:
    """Rows as strings plus the metadata line (empty when absent)."""
    with open(path, newline="", encoding="utf-8") as f:
        first = f.readline()
        meta = {}
        if first.startswith("# "):
            meta = json.loads(first[2:])
        else:
            f.seek(0)
        return list(csv.DictReader(f)), meta


def write_matrix_csv(path: Path, M: np.ndarray, meta: dict) -> Path:
    """Row-major matrix. Complex matrices interleave re/im columns."""
    M = np.asarray(M)
    is_complex = np.iscomplexobj(M)
    m = M.shape[1]
    if is_complex:
        header = [f"{part}{j}" for j in range(m) for part in ("re", "im")]
    else:
        header = [f"c{j}" for j in range(m)]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        _write_meta(f, {**meta, "rows": M.shape[0], "cols": m, "dtype": "complex" if is_complex else "real"})
        writer = csv.writer(f)
        writer.writerow(header)
        for row in M:
            if is_complex:
                writer.writerow([_num(v) for z in row for v in (z.real, z.imag)])
            else:
                writer.writerow([_num(v) for v in row])
    print(f"  Matrix saved to {path} ({M.shape[0]}x{m})")
    return path


def read_matrix_csv(path: Path) -> tuple[np.ndarray, dict]:
    with open(path, newline="", encoding="utf-8") as f:
        meta = json.loads(f.readline()[2:])
        reader = csv.reader(f)
        next(reader)
        body = np.asarray([[float(v) for v in row] for row in reader]).reshape(meta["rows"], -1)
    if meta["dtype"] == "complex":
        return body[:, 0::2] + 1j * body[:, 1::2], meta
    return body, meta


def write_trajectory_csv(path: Path, trajectory, labels: list[str], meta: dict | None = None) -> Path:
    has_regions = trajectory.regions is not None
    columns = ["step", *labels] + (["region"] if has_regions else [])
    rows = []
    for t, values in zip(trajectory.times, np.real(trajectory.values)):
        row = {"step": int(t), **{name: float(v) for name, v in zip(labels, values)}}
        if has_regions:
            row["region"] = trajectory.regions[t - trajectory.start]
        rows.append(row)
    return write_rows(path, columns, rows, {"provenance": trajectory.provenance, **(meta or {})})


def write_comparison_csv(path: Path, comparison, labels: list[str]) -> Path:
    """Per step: truth, predicted and error per component, plus the error norm."""
    columns = ["step"]
    for name in labels:
        columns += [f"truth_{name}", f"predicted_{name}", f"error_{name}"]
    columns.append("error_norm")
    truth = np.real(comparison.truth.values)
    pred = np.real(comparison.predicted.values)
    rows = []
    for t in range(len(truth)):
        row = {"step": int(comparison.truth.times[t]), "error_norm": float(comparison.per_step[t])}
        for j, name in enumerate(labels):
            row[f"truth_{name}"] = float(truth[t, j])
            row[f"predicted_{name}"] = float(pred[t, j])
            row[f"error_{name}"] = float(comparison.errors[t, j])
        rows.append(row)
    meta = {"rmse": comparison.rmse, "max_error": comparison.max_error}
    return write_rows(path, columns, rows, meta)


def write_spectrum_csv(path: Path, result, meta: dict | None = None) -> Path:
    rows = [{"re": float(z.real), "im": float(z.imag), "abs": float(abs(z))} for z in result.eigenvalues]
    info = {"classification": result.classification, "eps": result.eps, "max_abs": result.max_abs}
    return write_rows(path, SPECTRUM_COLUMNS, rows, {**info, **(meta or {})})


def write_sweep_csv(path: Path, results: list[tuple[int, float]], meta: dict | None = None) -> Path:
    rows = [{"m": m, "rmse": float(rmse)} for m, rmse in results]
    return write_rows(path, SWEEP_COLUMNS, rows, meta)


def write_residuals_csv(path: Path, results: list[tuple[int, float, list]]) -> Path:
    """results: (i, |phi_i o F|^2, membership rows) per wavenumber."""
    rows = [
        {"i": i, "N": r.N, "J_N": r.J_N, "I_N_error": r.I_N_error, "norm_sq": norm_sq}
        for i, norm_sq, membership in results
        for r in membership
    ]
    return write_rows(path, RESIDUAL_COLUMNS, rows)


def write_kernel_profile_csv(path: Path, profile) -> Path:
    columns = ["x", "target", "reproduced_re", "reproduced_im"]
    rows = [
        {"x": float(x), "target": float(np.real(g)), "reproduced_re": float(z.real), "reproduced_im": float(z.imag)}
        for x, g, z in zip(profile.x, profile.target, np.asarray(profile.reproduced, dtype=complex))
    ]
    return write_rows(path, columns, rows, {"observable": profile.name, "m": profile.m, "rms_error": profile.rms_error})


def write_kernel_summary_csv(path: Path, profiles: list) -> Path:
    rows = [{"observable": p.name, "m": p.m, "rms_error": p.rms_error} for p in profiles]
    return write_rows(path, KERNEL_SUMMARY_COLUMNS, rows)


def write_conditioning_csv(path: Path, report: dict) -> Path:
    rows = [{"quantity": k, "value": v} for k, v in report.items()]
    return write_rows(path, CONDITIONING_COLUMNS, rows)


def write_manifest(out_dir: Path, config, subcommand: str, files: list[Path]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "version": VERSION,
        "seed": config.seed,
        "config_sha256": config.sha256(),
        "config": config.to_dict(),
        "files": sorted(Path(p).name for p in files),
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    print(f"  Manifest saved to {path}")
    return path
