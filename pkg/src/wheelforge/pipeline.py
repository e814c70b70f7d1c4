"""Batch stages over a design family, with an on-disk manifest as the shared state.

Every stage reads its inputs from disk, so a stage rerun or resumed in a fresh
process sees exactly what an uninterrupted run would.
"""
from __future__ import annotations

import csv
import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem2d
from .config import PipelineConfig
from .depthsynth import read_depth_png, read_mask_png, synthesize_depth, write_depth_png, write_mask_png
from .designspace import cluster_quality, depth_features, diversity, kmeans, lhs_sample, reduce_2d
from .errors import EmptyManifest, MissingPredecessor, UndefinedIndex, WheelforgeError
from .modal import ModalResult, modal_analysis, performance_score, result_row, voxel_hex_mesh
from .recon import read_stl, reconstruct_wheel, write_stl
from .topo import TopoParams, optimize_segment, param_grid, reference_designs, replicate_segment

log = logging.getLogger(__name__)

STAGES = ("generate", "depth", "recon", "simulate", "analyze")
DESIGN_STAGES = STAGES[:-1]
STAGE_DIRS = {"generate": "masks", "depth": "depths", "recon": "meshes", "simulate": "modal"}
MANIFEST_FIELDS = ["design_id", "provenance", "source_id", "n_seg", "stage", "status",
                   "error", "mask_path", "depth_path", "mesh_path", "score"]
# failures of a single design; anything else (I/O, programming errors) aborts the run
DESIGN_ERRORS = (WheelforgeError, ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError)


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    if isinstance(value, (tuple, list)):
        return " ".join(fmt(v) for v in value)
    return str(value)


def write_csv(path: Path, rows: list[dict], fields: list[str] | None = None) -> Path:
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([fmt(r.get(f)) for f in fields])
    return path


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass(frozen=True)
class DesignSpec:
    design_id: str
    provenance: str  # reference | topo
    source_id: str
    n_seg: int
    phase: float  # raster rotation, rad
    bolt_phase: float
    params: TopoParams | None = None


@dataclass
class StageReport:
    stage: str
    ok: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def summary(self) -> str:
        return (f"{self.stage}: {len(self.ok)} ok, {len(self.failed)} failed, "
                f"{len(self.skipped)} skipped")


def plan_designs(cfg: PipelineConfig) -> list[DesignSpec]:
    """Deterministic design list: references first, then topology-optimized variants."""
    t = cfg.topo
    n_ref = int(round(cfg.designs * t.reference_fraction))
    n_topo = cfg.designs - n_ref
    rng = np.random.default_rng(cfg.seed)
    refs = reference_designs(t.nx, t.ny, max(n_ref, 1), seed=cfg.seed)
    grid = param_grid(t.lambdas, t.volume_fractions, t.normal_shear_ratios, t.n_segs,
                      filter_radius=t.filter_radius, max_iters=t.max_iters,
                      move_limit=t.move_limit, change_tol=t.change_tol)
    order = rng.permutation(len(grid))
    bolt_step = 2 * math.pi / cfg.template.n_bolts
    specs = []
    for i in range(cfg.designs):
        if i < n_ref:
            ref, n_seg = refs[i]
            params, prov = None, "reference"
        else:
            j = i - n_ref
            ref, _ = refs[j % len(refs)]
            params = grid[order[j % len(grid)]]
            n_seg, prov = params.n_seg, "topo"
        phase = float(rng.uniform(0.0, 2 * math.pi / n_seg))
        bolt_phase = float(rng.uniform(0.0, bolt_step))
        specs.append(DesignSpec(f"w{i:04d}", prov, ref.source_id, n_seg, phase, bolt_phase, params))
    return specs


def _reference_map(cfg: PipelineConfig):
    t = cfg.topo
    n_ref = max(int(round(cfg.designs * t.reference_fraction)), 1)
    return {r.source_id: r for r, _ in reference_designs(t.nx, t.ny, n_ref, seed=cfg.seed)}


def _paths(root: Path, design_id: str) -> dict[str, Path]:
    return {
        "generate": root / "masks" / f"{design_id}.png",
        "depth": root / "depths" / f"{design_id}.png",
        "recon": root / "meshes" / f"{design_id}.stl",
        "simulate": root / "modal" / f"{design_id}.csv",
    }


def _write_meta(path: Path, meta: dict) -> None:
    path.write_text("".join(f"{k}={fmt(v)}\n" for k, v in meta.items()))


def _read_meta(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


# per-design stage bodies; module level so worker processes can import them

def _generate_one(spec: DesignSpec, cfg: PipelineConfig) -> None:
    t = cfg.topo
    ref = _reference_map(cfg)[spec.source_id]
    meta = {"provenance": spec.provenance, "source_id": spec.source_id, "n_seg": spec.n_seg,
            "phase": spec.phase, "bolt_phase": spec.bolt_phase}
    if spec.params is None:
        segment = ref.densities.reshape(t.nx, t.ny)
    else:
        model = fem2d.GridModel2D(t.nx, t.ny)
        loads = fem2d.segment_load(model, spec.params.normal_shear_ratio)
        design, trace = optimize_segment(spec.params, ref, model, loads)
        segment = design.grid()
        p = spec.params
        meta.update(lambda_sim=p.lambda_sim, volume_fraction=p.volume_fraction,
                    normal_shear_ratio=p.normal_shear_ratio, compliance=trace.compliance[-1],
                    iterations=trace.iterations, converged=trace.converged,
                    volume=float(design.segment.mean()))
    raster = replicate_segment(segment, spec.n_seg, cfg.raster_size, cfg.template, spec.phase)
    path = _paths(cfg.output_root, spec.design_id)["generate"]
    write_mask_png(path, raster)
    _write_meta(path.with_suffix(".txt"), meta)


def _depth_one(spec: DesignSpec, cfg: PipelineConfig) -> None:
    paths = _paths(cfg.output_root, spec.design_id)
    d = synthesize_depth(read_mask_png(paths["generate"]), cfg.template, spec.bolt_phase)
    write_depth_png(paths["depth"], d)


def _recon_one(spec: DesignSpec, cfg: PipelineConfig) -> None:
    paths = _paths(cfg.output_root, spec.design_id)
    mesh = reconstruct_wheel(read_depth_png(paths["depth"]), cfg.template, cfg.recon)
    write_stl(paths["recon"], mesh)


def _simulate_one(spec: DesignSpec, cfg: PipelineConfig) -> None:
    paths = _paths(cfg.output_root, spec.design_id)
    hexes = voxel_hex_mesh(read_stl(paths["recon"]), cfg.modal.elem_size)
    result = modal_analysis(hexes, cfg.material, cfg.modal.n_modes)
    row = result_row(spec.design_id, result)
    row["rigid_mode_count"] = result.rigid_mode_count
    row["n_elements"] = hexes.n_elements
    write_csv(paths["simulate"], [row])


_BODIES = {"generate": _generate_one, "depth": _depth_one, "recon": _recon_one,
           "simulate": _simulate_one}


def _run_guarded(spec: DesignSpec, cfg: PipelineConfig, stage: str) -> str | None:
    try:
        _BODIES[stage](spec, cfg)
        return None
    except DESIGN_ERRORS as exc:
        return f"{type(exc).__name__}: {exc}".replace("\n", " ")


def load_manifest(root: Path) -> dict[str, dict]:
    path = root / "manifest.csv"
    if not path.exists():
        return {}
    return {r["design_id"]: r for r in read_csv(path)}


def save_manifest(root: Path, rows: dict[str, dict]) -> Path:
    return write_csv(root / "manifest.csv", [rows[k] for k in sorted(rows)], MANIFEST_FIELDS)


def _stage_index(name: str) -> int:
    return STAGES.index(name) if name in STAGES else -1


def _needs_run(row: dict, stage: str, force: bool) -> bool:
    """Whether a design's stage should run.

    The previous stage must have succeeded. Completed and failed stages are
    skipped unless forced.
    """
    idx = _stage_index(stage)
    done = _stage_index(row.get("stage", ""))
    if stage != "generate" and done < idx - 1:
        return False
    if force:
        return True
    if row.get("status") == f"failed:{stage}":
        return False
    return done < idx


def _mark(row: dict, stage: str, error: str | None) -> None:
    if error is None:
        row.update(stage=stage, status="ok", error="")
    else:
        prev = STAGES[_stage_index(stage) - 1] if stage != "generate" else ""
        row.update(stage=prev, status=f"failed:{stage}", error=error)
    key = {"generate": "mask_path", "depth": "depth_path", "recon": "mesh_path"}.get(stage)
    if key:
        row[key] = f"{STAGE_DIRS[stage]}/{row['design_id']}.{'stl' if stage == 'recon' else 'png'}" \
            if error is None else ""
    if stage != "analyze":
        # downstream artefacts no longer describe this design
        for later in DESIGN_STAGES[_stage_index(stage) + 1:]:
            k = {"depth": "depth_path", "recon": "mesh_path"}.get(later)
            if k:
                row[k] = ""
        row["score"] = ""


def _check_predecessor(cfg: PipelineConfig, stage: str) -> dict[str, dict]:
    root = cfg.output_root
    manifest = load_manifest(root)
    if stage == "generate":
        return manifest
    if not manifest:
        raise MissingPredecessor(f"{root / 'manifest.csv'} not found; run 'generate' first")
    prev = STAGES[_stage_index(stage) - 1]
    if prev in STAGE_DIRS and not (root / STAGE_DIRS[prev]).is_dir():
        raise MissingPredecessor(f"{root / STAGE_DIRS[prev]} not found; run '{prev}' first")
    return manifest


def run_stage(stage: str, cfg: PipelineConfig, force: bool = False) -> StageReport:
    """Run one stage over every planned design (or the batch analysis)."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    manifest = _check_predecessor(cfg, stage)
    root = cfg.output_root
    if stage == "analyze":
        return analyze(cfg, manifest)

    specs = plan_designs(cfg)
    (root / STAGE_DIRS[stage]).mkdir(parents=True, exist_ok=True)
    for s in specs:
        manifest.setdefault(s.design_id, {
            "design_id": s.design_id, "provenance": s.provenance, "source_id": s.source_id,
            "n_seg": s.n_seg, "stage": "", "status": "pending", "error": ""})
    report = StageReport(stage)
    todo = [s for s in specs if _needs_run(manifest[s.design_id], stage, force)]
    report.skipped = [s.design_id for s in specs if s not in todo]
    work = functools.partial(_run_guarded, cfg=cfg, stage=stage)
    if cfg.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            errors = list(pool.map(work, todo))
    else:
        errors = [work(s) for s in todo]
    for spec, err in zip(todo, errors):
        _mark(manifest[spec.design_id], stage, err)
        if err is None:
            report.ok.append(spec.design_id)
        else:
            report.failed[spec.design_id] = err
            log.warning("%s %s failed: %s", stage, spec.design_id, err)
    save_manifest(root, manifest)
    if stage == "generate":
        _write_designs_table(cfg, specs)
    return report


def _write_designs_table(cfg: PipelineConfig, specs: list[DesignSpec]) -> None:
    fields = ["design_id", "provenance", "source_id", "n_seg", "phase", "bolt_phase", "lambda_sim",
              "volume_fraction", "normal_shear_ratio", "compliance", "iterations", "converged", "volume"]
    rows = []
    for s in specs:
        meta_path = _paths(cfg.output_root, s.design_id)["generate"].with_suffix(".txt")
        meta = _read_meta(meta_path) if meta_path.exists() else {}
        rows.append({"design_id": s.design_id, **meta})
    write_csv(cfg.output_root / "designs.csv", rows, fields)


def _load_result(path: Path) -> ModalResult:
    row = read_csv(path)[0]
    freqs = []
    i = 1
    while f"f{i}_hz" in row:
        freqs.append(float(row[f"f{i}_hz"]))
        i += 1
    return ModalResult(float(row["mass_kg"]), np.array(freqs), int(row["rigid_mode_count"]))


def analyze(cfg: PipelineConfig, manifest: dict[str, dict]) -> StageReport:
    """Scores, design-space embedding, clustering, LHS picks, diversity and plot tables."""
    root = cfg.output_root
    report = StageReport("analyze")
    ids = sorted(k for k, r in manifest.items() if r.get("status") == "ok" and r.get("stage") == "simulate")
    if not ids:
        raise EmptyManifest("no design completed the simulate stage")
    results = {i: _load_result(_paths(root, i)["simulate"]) for i in ids}
    scores = {}
    if len(ids) >= 2:
        scores = {i: s.overall for i, s in zip(ids, performance_score([results[i] for i in ids]))}
    rows = []
    for i in ids:
        row = result_row(i, results[i], scores.get(i))
        rows.append(row)
        manifest[i]["score"] = scores.get(i)
    write_csv(root / "results.csv", rows)
    save_manifest(root, manifest)

    feats = [depth_features(read_depth_png(_paths(root, i)["depth"]), i) for i in ids]
    write_csv(root / "features.csv",
              [{"design_id": f.design_id, **{f"f{j}": v for j, v in enumerate(f.values)}} for f in feats])
    prov = {i: manifest[i]["provenance"] for i in ids}
    perf = {i: (results[i].mass, results[i].mode7_hz, results[i].mode11_hz) for i in ids}

    emb = []
    if len(ids) >= 3:
        emb, _ = reduce_2d(feats)
        write_csv(root / "embedding.csv", [{"design_id": e.design_id, "x": e.x, "y": e.y} for e in emb])
        k = min(cfg.sampling.k, len(ids))
        labels, _ = kmeans(emb, k, cfg.seed)
        write_csv(root / "clusters.csv", [{"design_id": e.design_id, "label": int(l)} for e, l in zip(emb, labels)])
        try:
            sil, dbi, ch = cluster_quality(emb, labels)
            write_csv(root / "cluster_quality.csv",
                      [{"k": k, "silhouette": sil, "davies_bouldin": dbi, "calinski_harabasz": ch}])
        except UndefinedIndex as exc:
            log.warning("cluster quality undefined: %s", exc)
        picks = lhs_sample(emb, min(cfg.sampling.n_samples, len(ids)), cfg.seed)
        write_csv(root / "samples.csv", [{"design_id": p} for p in picks])

    div_rows = []
    for group, members in (("reference", [i for i in ids if prov[i] == "reference"]), ("overall", ids)):
        if len(members) < 2:
            continue
        fv = {f.design_id: f.values for f in feats}
        _, dsd = diversity([fv[i] for i in members])
        _, psd = diversity([perf[i] for i in members])
        div_rows.append({"group": group, "n": len(members), "dsd": dsd, "psd": psd})
    write_csv(root / "diversity.csv", div_rows, ["group", "n", "dsd", "psd"])

    export_plots(root, cfg.sampling.histogram_bins)
    report.ok = ids
    report.skipped = sorted(set(manifest) - set(ids))
    return report


def _histogram(values, bins: int, domain=None) -> list[dict]:
    v = np.asarray(values, dtype=float)
    if domain is None:
        lo, hi = float(v.min()), float(v.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        domain = (lo, hi)
    counts, edges = np.histogram(v, bins=bins, range=domain)
    return [{"bin_lo": edges[b], "bin_hi": edges[b + 1], "count": int(counts[b])} for b in range(bins)]


def export_plots(root, bins: int = 10) -> list[Path]:
    """Histogram and scatter tables for the ok designs, written under ``plots/``."""
    root = Path(root)
    manifest = load_manifest(root)
    ok = {k: r for k, r in manifest.items() if r.get("status") == "ok" and r.get("stage") == "simulate"}
    if not ok or not (root / "results.csv").exists():
        raise EmptyManifest("no ok designs to plot")
    results = [r for r in read_csv(root / "results.csv") if r["design_id"] in ok]
    plots = root / "plots"
    plots.mkdir(exist_ok=True)
    out = []
    for col, name in (("mass_kg", "mass"), ("mode7_hz", "mode7"), ("mode11_hz", "mode11")):
        out.append(write_csv(plots / f"hist_{name}.csv",
                             _histogram([float(r[col]) for r in results], bins)))
    scores = [float(r["score"]) if r["score"] else 0.5 for r in results]
    out.append(write_csv(plots / "hist_score.csv", _histogram(scores, bins, (0.0, 1.0))))
    out.append(write_csv(plots / "scatter_performance.csv", [
        {"design_id": r["design_id"], "mass_kg": r["mass_kg"], "mode7_hz": r["mode7_hz"],
         "mode11_hz": r["mode11_hz"], "provenance": ok[r["design_id"]]["provenance"]} for r in results]))
    emb_path = root / "embedding.csv"
    if emb_path.exists():
        out.append(write_csv(plots / "scatter_embedding.csv", [
            {"design_id": e["design_id"], "x": e["x"], "y": e["y"],
             "provenance": ok[e["design_id"]]["provenance"]}
            for e in read_csv(emb_path) if e["design_id"] in ok]))
    return out


def run_all(cfg: PipelineConfig, force: bool = False) -> list[StageReport]:
    return [run_stage(s, cfg, force) for s in STAGES]
