"""Config-driven runs: each task writes ``<task>.csv`` plus a text summary.

A run config is a YAML mapping. Paths are resolved relative to the config
file. Minimal example::

    seed: 7
    output: out
    points: points.csv
    infrastructure: {lines: fiber.geojson, nodes: nodes.geojson}
    zones:
      - {name: narrow, treat_radius: 0.005, control_radius: 0.1}
      - {name: wide, treat_radius: 0.1, control_radius: 0.2, referent: nodes}
    grid: {cell_size: 0.1}
    tasks:
      classify: {}
      meta:
        studies:
          - {label: DHS, estimate: 0.046, se: 0.014}
          - {label: Afrobarometer, estimate: 0.077, se: 0.036}
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import platform
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .femodel import RegressionSpec, event_time_effects, fit
from .fidelity import CoverageObservation, fidelity_test
from .geom import DistanceMetric, GeoPoint
from .ingest import ingest_infrastructure, ingest_points
from .lights import (
    build_light_panel,
    downsample,
    intercalibrate,
    read_ascii_grid,
    region_mask,
    validate_grid,
    write_ascii_grid,
)
from .meta import StudyEstimate, dersimonian_laird
from .mesim import Dist, GaussianBump, MeSimConfig, bump_channel, scaling_sweep
from .zones import (
    GridSpec,
    Referent,
    ZoneSpec,
    cell_label,
    classify,
    compare_classifications,
    grid_cell,
    infra_distances,
    status_codes,
)

log = logging.getLogger(__name__)

TASKS = ("classify", "compare", "fidelity", "did", "event", "meta", "lights", "mesim")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path
    out_dir: Path
    seed: int
    config_hash: str
    zones: dict[str, ZoneSpec]
    grid: GridSpec
    tasks: dict[str, dict]

    @classmethod
    def load(cls, path, out: str | None = None, seed: int | None = None) -> "RunConfig":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            raw = yaml.safe_load(data) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(
            raw,
            base_dir=path.parent,
            config_hash=hashlib.sha256(data).hexdigest(),
            out=out,
            seed=seed,
        )

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".", config_hash: str = "", out=None, seed=None) -> "RunConfig":
        base_dir = Path(base_dir)
        if not config_hash:
            config_hash = hashlib.sha256(yaml.safe_dump(raw, sort_keys=True).encode()).hexdigest()
        zones = {}
        for i, z in enumerate(raw.get("zones") or []):
            try:
                spec = ZoneSpec(
                    treat_radius=float(z["treat_radius"]),
                    control_radius=float(z["control_radius"]),
                    referent=Referent(z.get("referent", "lines")),
                    metric=DistanceMetric(z.get("metric", "planar_degrees")),
                    name=str(z.get("name", "")),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"zone {i}: {exc}") from None
            if spec.name in zones:
                raise ConfigError(f"duplicate zone name {spec.name!r}")
            zones[spec.name] = spec
        try:
            grid = GridSpec(float((raw.get("grid") or {}).get("cell_size", 0.1)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"grid: {exc}") from None
        tasks = raw.get("tasks") or {}
        if not isinstance(tasks, dict):
            raise ConfigError("tasks must be a mapping of task name to options")
        unknown = sorted(set(tasks) - set(TASKS))
        if unknown:
            raise ConfigError(f"unknown tasks: {unknown}")
        tasks = {k: (v or {}) for k, v in tasks.items()}
        out_dir = Path(out) if out is not None else base_dir / str(raw.get("output", "out"))
        return cls(
            raw=raw,
            base_dir=base_dir,
            out_dir=out_dir,
            seed=int(seed if seed is not None else raw.get("seed", 0)),
            config_hash=config_hash,
            zones=zones,
            grid=grid,
            tasks=tasks,
        )

    def path(self, value) -> Path:
        p = Path(value)
        p = p if p.is_absolute() else self.base_dir / p
        if not p.exists():
            raise ConfigError(f"input not found: {p}")
        return p

    def zone(self, name: str | None) -> ZoneSpec:
        if not self.zones:
            raise ConfigError("no zones defined")
        if name is None:
            return next(iter(self.zones.values()))
        if name not in self.zones:
            raise ConfigError(f"unknown zone {name!r}")
        return self.zones[name]

    def zone_list(self, names) -> list[ZoneSpec]:
        if names is None:
            if not self.zones:
                raise ConfigError("no zones defined")
            return list(self.zones.values())
        return [self.zone(n) for n in names]

    def infrastructure(self, zone: ZoneSpec, opts: dict | None = None):
        src = (opts or {}).get("infrastructure", self.raw.get("infrastructure"))
        if src is None:
            raise ConfigError("no infrastructure configured")
        if isinstance(src, str):
            src = {"lines": src}
        key = zone.referent.value
        if key not in src:
            raise ConfigError(f"zone {zone.name!r} needs {key!r} infrastructure")
        max_year = (opts or {}).get("max_year", self.raw.get("infrastructure_year"))
        return ingest_infrastructure(self.path(src[key]), max_year=max_year)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if not isinstance(v, str) and pd.isna(v):
        return ""
    return str(v)


def write_csv(df: pd.DataFrame, path) -> None:
    """Comma-separated, header row, ``repr`` floats, LF endings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(df.columns))
        for row in df.itertuples(index=False, name=None):
            w.writerow([_fmt(v) for v in row])


@dataclass
class TaskOutcome:
    name: str
    ok: bool
    table: pd.DataFrame | None = None
    summary: list[str] = field(default_factory=list)
    error: str | None = None
    warnings: list[str] = field(default_factory=list)
    files: list[str] = field(default_factory=list)


@dataclass
class RunReport:
    config_hash: str
    seed: int
    versions: dict[str, str]
    outcomes: list[TaskOutcome]

    @property
    def ok(self) -> bool:
        return all(o.ok for o in self.outcomes)

    def text(self) -> str:
        lines = [
            "zonedid run report",
            f"config_sha256: {self.config_hash}",
            f"seed: {self.seed}",
            "versions: " + ", ".join(f"{k}={v}" for k, v in self.versions.items()),
            "",
        ]
        for o in self.outcomes:
            lines.append(f"[{o.name}] {'ok' if o.ok else 'FAILED'}")
            if o.error:
                lines.append(f"  error: {o.error}")
            lines.extend(f"  {s}" for s in o.summary)
            lines.extend(f"  warning: {w}" for w in o.warnings)
            lines.extend(f"  wrote: {f}" for f in o.files)
            lines.append("")
        return "\n".join(lines)


class _Collect(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record):
        self.messages.append(record.getMessage())


@contextmanager
def _capture_warnings():
    h = _Collect()
    root = logging.getLogger("zonedid")
    root.addHandler(h)
    try:
        yield h.messages
    finally:
        root.removeHandler(h)


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------
# Each task returns (table, summary lines, extra tables {suffix: frame}).


def _task_classify(cfg: RunConfig, opts: dict):
    points = ingest_points(cfg.path(opts.get("points", cfg.raw.get("points"))))
    rows = []
    summary = [f"{len(points)} points"]
    for zone in cfg.zone_list(opts.get("zones")):
        assigned = classify([p.point for p in points], cfg.infrastructure(zone, opts), zone)
        for rec, a in zip(points, assigned):
            rows.append((rec.id, zone.name, a.distance, a.status.value))
        counts = pd.Series([a.status.value for a in assigned]).value_counts()
        summary.append(
            f"zone {zone.name}: "
            + ", ".join(f"{s}={int(counts.get(s, 0))}" for s in ("treated", "control", "excluded"))
        )
    return pd.DataFrame(rows, columns=["id", "zone", "distance", "status"]), summary, {}


def _task_compare(cfg: RunConfig, opts: dict):
    pts_a = ingest_points(cfg.path(opts.get("points", cfg.raw.get("points"))))
    alt = opts.get("points_alt")
    pts_b = ingest_points(cfg.path(alt)) if alt else pts_a
    by_id = {r.id: r for r in pts_b}
    missing = [r.id for r in pts_a if r.id not in by_id]
    if missing:
        raise ValueError(f"{len(missing)} ids absent from alternative points, e.g. {missing[:3]}")
    pts_b = [by_id[r.id] for r in pts_a]
    za, zb = cfg.zone(opts.get("zone_a")), cfg.zone(opts.get("zone_b", opts.get("zone_a")))
    a = classify([r.point for r in pts_a], cfg.infrastructure(za, opts), za)
    b = classify([r.point for r in pts_b], cfg.infrastructure(zb, opts), zb)
    rep = compare_classifications(a, b)
    table = pd.DataFrame(rep.as_rows())
    return table, [f"zones {za.name} vs {zb.name}", f"n = {rep.n}", f"agreement rate = {rep.rate!r}"], {}


def _task_fidelity(cfg: RunConfig, opts: dict):
    recs = ingest_points(cfg.path(opts.get("coverage", cfg.raw.get("coverage", cfg.raw.get("points")))))
    bad = [r.id for r in recs if r.covered is None or r.locality is None]
    if bad:
        raise ValueError(f"coverage file needs covered and locality for every row (e.g. id {bad[0]!r})")
    obs = [CoverageObservation(r.point, r.covered, r.locality) for r in recs]
    rows, summary = [], []
    for zone in cfg.zone_list(opts.get("zones")):
        res = fidelity_test(obs, classify([o.point for o in obs], cfg.infrastructure(zone, opts), zone))
        rows.append(
            (zone.name, res.treated_rate, res.control_rate, res.treated_n, res.control_n, res.coef, res.se, res.t_stat)
        )
        summary.append(
            f"zone {zone.name}: treated {res.treated_rate:.3f} (N {res.treated_n}), "
            f"control {res.control_rate:.3f} (N {res.control_n}), t = {res.t_stat:.2f}"
        )
    cols = ["zone", "treated_rate", "control_rate", "treated_n", "control_n", "coef", "se", "t"]
    return pd.DataFrame(rows, columns=cols), summary, {}


def _interacted(frame: pd.DataFrame, name: str) -> str:
    """Materialise ``a*b`` style fixed-effect names as a joined label column."""
    if "*" not in name:
        return name
    parts = [p.strip() for p in name.split("*")]
    missing = [p for p in parts if p not in frame.columns]
    if missing:
        raise KeyError(f"fixed-effect component(s) {missing} not in panel")
    label = frame[parts[0]].astype(str)
    for p in parts[1:]:
        label = label + "|" + frame[p].astype(str)
    frame[name] = label
    return name


def prepare_panel(cfg: RunConfig, opts: dict) -> pd.DataFrame:
    """Load a panel CSV and optionally derive ``treated``, ``post``, ``treated_post``, ``cell``.

    With ``zone`` set, rows are classified from ``lon``/``lat`` and excluded
    rows dropped. With ``events`` (country -> connection year or years),
    ``post = 1{year >= first connection}``.
    """
    frame = pd.read_csv(cfg.path(opts.get("panel", cfg.raw.get("points"))))
    if opts.get("zone") is not None:
        zone = cfg.zone(opts["zone"])
        d = infra_distances(frame["lon"], frame["lat"], cfg.infrastructure(zone, opts), zone.metric)
        codes = status_codes(d, zone)
        frame = frame.assign(distance=d, treated=(codes == 0).astype(int)).loc[codes < 2].copy()
        frame["cell"] = [
            cell_label(grid_cell(GeoPoint(x, y), cfg.grid)) for x, y in zip(frame["lon"], frame["lat"])
        ]
    events = opts.get("events")
    if events:
        first = {str(k): (min(v) if isinstance(v, (list, tuple)) else v) for k, v in events.items()}
        unknown = sorted(set(frame["country"].astype(str)) - set(first))
        if unknown:
            raise ValueError(f"no connection event for countries {unknown}")
        conn = frame["country"].astype(str).map(first)
        frame["post"] = (frame["year"] >= conn).astype(int)
        if "treated" in frame.columns:
            frame["treated_post"] = frame["treated"] * frame["post"]
    return frame


def _spec(frame: pd.DataFrame, opts: dict, regressors=None) -> RegressionSpec:
    fe = [_interacted(frame, f) for f in opts.get("fe", [])]
    cluster = opts.get("cluster")
    if cluster is not None:
        cluster = _interacted(frame, cluster)
    return RegressionSpec(
        outcome=opts["outcome"],
        regressors=regressors if regressors is not None else opts.get("regressors", ["treated_post"]),
        fe=fe,
        cluster=cluster,
        tol=float(opts.get("tol", 1e-8)),
        max_iter=int(opts.get("max_iter", 10_000)),
    )


def _task_did(cfg: RunConfig, opts: dict):
    frame = prepare_panel(cfg, opts)
    spec = _spec(frame, opts)
    res = fit(frame, spec)
    summary = [
        f"N = {res.n_obs} (singletons dropped {res.n_singletons}, incomplete rows {res.n_missing})",
        f"clusters = {res.n_clusters}, K = {res.dof_k}, demeaning passes = {res.iterations}",
    ]
    summary += [
        f"{k}: {res.coef[k]:.4f} ({res.se[k]:.4f})" if not res.collinear[k] else f"{k}: collinear"
        for k in res.coef
    ]
    return res.to_frame(), summary, {}


def _task_event(cfg: RunConfig, opts: dict):
    frame = prepare_panel(cfg, opts)
    for key in ("time", "reference"):
        if key not in opts:
            raise ConfigError(f"event task needs {key!r}")
    spec = _spec(frame, opts, regressors=[opts.get("treated", "treated")])
    table = event_time_effects(
        frame,
        spec,
        time_dim=opts["time"],
        reference_time=opts["reference"],
        treated=opts.get("treated", "treated"),
        controls=opts.get("controls", []),
    )
    summary = [f"reference {opts['reference']}"] + [
        f"{t}: {c:.4f} ({s:.4f})" for t, c, s in zip(table["time"], table["coef"], table["se"])
    ]
    return table, summary, {}


def _task_meta(cfg: RunConfig, opts: dict):
    raw = opts.get("studies") or []
    try:
        studies = [StudyEstimate(str(s["label"]), float(s["estimate"]), float(s["se"])) for s in raw]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"meta studies need label, estimate, se: {exc}") from None
    res = dersimonian_laird(studies)
    rows = [(s.label, s.estimate, s.se, w) for s, w in zip(studies, res.weights)]
    rows.append(("pooled", res.pooled, res.pooled_se, sum(res.weights)))
    table = pd.DataFrame(rows, columns=["label", "estimate", "se", "weight"])
    summary = [
        f"pooled = {res.pooled:.4f} (se {res.pooled_se:.4f})",
        f"tau^2 = {res.tau_sq!r}, Q = {res.q!r}, I^2 = {res.i_sq:.3f}",
        f"fixed-effect = {res.fixed:.4f} (se {res.fixed_se:.4f})",
    ]
    return table, summary, {}


def _country_mask(cfg: RunConfig, opts: dict, shape):
    if "country_mask" in opts:
        g = read_ascii_grid(cfg.path(opts["country_mask"]))
        if g.values.shape != shape:
            raise ValueError(f"country mask shape {g.values.shape} != light grid shape {shape}")
        mask = np.empty(shape, dtype=object)
        for idx, v in np.ndenumerate(g.values):
            mask[idx] = None if (g.nodata is not None and v == g.nodata) or v == 0 else str(v)
        return mask
    if "country" in opts:
        return np.full(shape, str(opts["country"]), dtype=object)
    raise ConfigError("lights panel needs country or country_mask")


def _task_lights(cfg: RunConfig, opts: dict):
    specs = opts.get("grids") or []
    if not specs:
        raise ConfigError("lights task needs at least one grid")
    factor = int(opts.get("downsample", 1))
    grids = []
    rows_has_ones = {}
    for s in specs:
        g = read_ascii_grid(cfg.path(s["path"]), year=int(s["year"]), satellite=str(s.get("satellite", "")))
        v = validate_grid(g, recode_zero=bool(opts.get("recode_zero", False)))
        rows_has_ones[g.year] = v.has_ones
        grids.append(downsample(v.grid, factor))
    grids.sort(key=lambda g: g.year)

    summary = [f"{len(grids)} grids, downsample factor {factor}"]
    extra = {}
    rows = []
    ref_year = opts.get("reference_year")
    if ref_year is not None:
        ref = [g for g in grids if g.year == int(ref_year)]
        if not ref:
            raise ValueError(f"reference year {ref_year} not among grids")
        ref = ref[0]
        region = region_mask(ref, opts["region"]) if "region" in opts else np.ones(ref.values.shape, bool)
        calibrated = []
        out = cfg.out_dir / "lights"
        out.mkdir(parents=True, exist_ok=True)
        for g in grids:
            fitres, cal = intercalibrate(g, ref, region)
            calibrated.append(cal)
            write_ascii_grid(cal, out / f"calibrated_{g.year}.asc")
            rows.append((g.year, g.satellite, rows_has_ones[g.year], fitres.c0, fitres.c1, fitres.c2, fitres.rmse, fitres.n_cells))
        summary.append(f"calibrated against {ref.year} over {int(region.sum())} cells")
        if opts.get("use_calibrated", True):
            grids = calibrated
    else:
        rows = [(g.year, g.satellite, rows_has_ones[g.year], np.nan, np.nan, np.nan, np.nan, 0) for g in grids]
    table = pd.DataFrame(rows, columns=["year", "satellite", "has_ones", "c0", "c1", "c2", "rmse", "n_cells"])

    popts = opts.get("panel")
    if popts:
        zone = cfg.zone(popts.get("zone"))
        events = {str(k): v for k, v in (popts.get("events") or {}).items()}
        panel = build_light_panel(
            grids,
            cfg.infrastructure(zone, popts),
            zone,
            cfg.grid,
            _country_mask(cfg, popts, grids[0].values.shape),
            events,
        )
        spec = RegressionSpec("y", ["treated_post"], ["fe_country_year", "fe_cell_treated"], "cluster")
        res = fit(panel, spec)
        extra["panel_fit"] = res.to_frame()
        summary.append(f"panel rows {len(panel)}; treated_post = {res.coef['treated_post']:.4f} ({res.se['treated_post']:.4f})")
        if "event_reference" in popts:
            extra["event"] = event_time_effects(panel, spec, "year", int(popts["event_reference"]))
    return table, summary, extra


def _task_mesim(cfg: RunConfig, opts: dict):
    radii = opts.get("radii", [0.4, 0.2, 0.1, 0.05])
    mc = MeSimConfig(
        r=float(radii[0]),
        n=int(opts.get("n", 1_000_000)),
        seed=cfg.seed,
        d_star=Dist(opts.get("d_star_dist", "normal"), float(opts.get("d_star_scale", 2.0))),
        lam=Dist(opts.get("lam_dist", "normal"), float(opts.get("lam_scale", 2.0))),
        f=GaussianBump(float(opts.get("f_amplitude", 0.1)), float(opts.get("f_width", 1.0))),
        nu=Dist("normal", float(opts.get("nu_scale", 0.5))),
        endogeneity=float(opts.get("endogeneity", 0.3)),
        channel=bump_channel(float(opts.get("channel_width", 0.5))),
    )
    sweep = scaling_sweep(mc, radii)
    summary = [f"n = {mc.n}, endogeneity = {mc.endogeneity}"] + [
        f"log-log slope {k}: {v:.3f}" for k, v in sweep.slopes.items()
    ]
    return sweep.table, summary, {}


TASK_FUNCS: dict[str, Callable[[RunConfig, dict], Any]] = {
    "classify": _task_classify,
    "compare": _task_compare,
    "fidelity": _task_fidelity,
    "did": _task_did,
    "event": _task_event,
    "meta": _task_meta,
    "lights": _task_lights,
    "mesim": _task_mesim,
}


def versions() -> dict[str, str]:
    return {
        "zonedid": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
    }


def run(cfg: RunConfig, tasks: list[str] | None = None) -> RunReport:
    """Run ``tasks`` (default: every task in the config) and write outputs."""
    names = list(tasks) if tasks is not None else [t for t in TASKS if t in cfg.tasks]
    if not names:
        raise ConfigError("no tasks requested")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    outcomes = []
    for name in names:
        opts = cfg.tasks.get(name, {})
        outcome = TaskOutcome(name=name, ok=True)
        with _capture_warnings() as warned:
            try:
                table, summary, extra = TASK_FUNCS[name](cfg, opts)
            except Exception as exc:  # recorded; other tasks continue
                log.debug("task %s failed", name, exc_info=True)
                outcome.ok = False
                outcome.error = f"{type(exc).__name__}: {exc}"
            else:
                outcome.table = table
                outcome.summary = summary
                write_csv(table, cfg.out_dir / f"{name}.csv")
                outcome.files.append(f"{name}.csv")
                for suffix, frame in extra.items():
                    write_csv(frame, cfg.out_dir / f"{name}_{suffix}.csv")
                    outcome.files.append(f"{name}_{suffix}.csv")
        outcome.warnings = list(warned)
        summary_path = cfg.out_dir / f"{name}_summary.txt"
        summary_path.write_text(
            "\n".join([f"task: {name}", f"status: {'ok' if outcome.ok else 'failed'}"]
                      + ([f"error: {outcome.error}"] if outcome.error else [])
                      + outcome.summary
                      + [f"warning: {w}" for w in outcome.warnings])
            + "\n"
        )
        outcomes.append(outcome)
    report = RunReport(config_hash=cfg.config_hash, seed=cfg.seed, versions=versions(), outcomes=outcomes)
    (cfg.out_dir / "report.txt").write_text(report.text())
    return report
