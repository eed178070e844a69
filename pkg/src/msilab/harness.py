"""MSI search over the certificate engines, reports, configuration and figure reproduction."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import tomli

from . import io_approach, setmem, switched
from .core import Controller, DataRecord, InputError, LinearPlant, build_data_matrices, benchmark_plant, BENCHMARK_GAIN
from .multipliers import KINDS, MultiplierClass
from .sdp import SolveOptions
from .sim import NoiseSpec, falsify_msi, generate_data

log = logging.getLogger(__name__)

SCHEMA = 1
STRATEGIES = ("exponential", "linear")
METHODS = ("io", "switched", "setmem", "io-model", "switched-model")
MODES = ("analyze", "design")


# configuration -------------------------------------------------------------------

def default_config() -> dict:
    text = resources.files("msilab").joinpath("default_config.toml").read_text()
    return tomli.loads(text)


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        where = f"{path}{key}"
        if key not in base:
            raise InputError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise InputError(f"config key {where!r} must be a table")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: Optional[dict] = None) -> dict:
    """Defaults merged with a TOML file and then with ``overrides`` (nested dicts)."""
    cfg = default_config()
    if path is not None:
        try:
            user = tomli.loads(Path(path).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        except tomli.TOMLDecodeError as exc:
            raise InputError(f"malformed config {path}: {exc}") from None
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    if cfg["solver"]["backend"] not in ("clarabel", "scs"):
        raise InputError(f"unknown solver.backend {cfg['solver']['backend']!r}")
    if cfg["search"]["strategy"] not in STRATEGIES:
        raise InputError(f"search.strategy must be one of {STRATEGIES}")
    if cfg["multiplier"]["kind"] not in KINDS:
        raise InputError(f"multiplier.kind must be one of {KINDS}")
    return cfg


def solve_options(cfg: dict) -> SolveOptions:
    s = cfg["solver"]
    return SolveOptions(backend=s["backend"], post_tol=float(s["post_tol"]), infeas_tol=float(s["infeas_tol"]))


def _canon(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_hash(cfg: dict, inputs: dict) -> str:
    blob = json.dumps(_canon({"config": cfg, "inputs": inputs}), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# engines -------------------------------------------------------------------------

@dataclass
class Verdict:
    h_bar: int
    certified: bool
    status: str  # certified | infeasible | numerical_failure | error
    solve_time: float = 0.0
    n_vars: Optional[int] = None
    n_constraints: Optional[int] = None
    K: Optional[list] = None
    error: Optional[str] = None

    def to_json(self, timing: bool = True) -> dict:
        out = {"h_bar": self.h_bar, "certified": self.certified, "status": self.status,
               "n_vars": self.n_vars, "n_constraints": self.n_constraints}
        if timing:
            out["solve_time"] = self.solve_time
        if self.K is not None:
            out["K"] = self.K
        if self.error is not None:
            out["error"] = self.error
        return out


class Engine:
    """Callable h_bar -> Verdict; subclasses implement ``_run``."""

    method = ""
    mode = "analyze"
    h_limit: Optional[int] = None

    def __init__(self, opts: Optional[SolveOptions] = None):
        self.opts = opts or SolveOptions()

    def inputs(self) -> dict:
        return {}

    def _run(self, h: int, opts: SolveOptions):
        raise NotImplementedError

    def __call__(self, h: int) -> Verdict:
        trace: list = []
        opts = replace(self.opts, trace=trace)
        t0 = time.perf_counter()
        try:
            ok, K = self._run(h, opts)
            err = None
        except (InputError, switched.LiftError) as exc:
            ok, K, err = False, None, str(exc)
        elapsed = time.perf_counter() - t0
        last = trace[-1] if trace else {}
        if ok:
            status = "certified"
        elif err is not None:
            status = "error"
        else:
            status = "numerical_failure" if last.get("status") == "numerical_failure" else "infeasible"
        return Verdict(h, bool(ok), status, elapsed, last.get("n_vars"), last.get("n_constraints"),
                       None if K is None else np.asarray(K).tolist(), err)


class ModelIoEngine(Engine):
    method = "io-model"

    def __init__(self, plant: LinearPlant, ctrl: Controller, opts=None):
        super().__init__(opts)
        ctrl.check(plant)
        self.plant, self.ctrl = plant, ctrl

    def inputs(self):
        return {"plant": self.plant.to_json(), "K": self.ctrl.K}

    def _run(self, h, opts):
        return io_approach.model_based_analyze(self.plant, self.ctrl, h, opts).feasible, None


class ModelSwitchedEngine(ModelIoEngine):
    method = "switched-model"

    def _run(self, h, opts):
        return switched.model_based_analyze(self.plant, self.ctrl, h, opts).feasible, None


class _DataEngine(Engine):
    def __init__(self, rec: DataRecord, Bd, d_bar: float, ctrl: Optional[Controller] = None,
                 mult_kind: str = "diagonal", opts=None):
        super().__init__(opts)
        Bd = np.atleast_2d(np.asarray(Bd, float))
        if Bd.shape[0] != rec.n:
            raise InputError(f"Bd has {Bd.shape[0]} rows, data have n={rec.n}")
        if d_bar < 0:
            raise InputError("d_bar must be nonnegative")
        if mult_kind not in KINDS:
            raise InputError(f"multiplier kind must be one of {KINDS}")
        if ctrl is not None and ctrl.K.shape != (rec.m, rec.n):
            raise InputError(f"gain has shape {ctrl.K.shape}, expected {(rec.m, rec.n)}")
        self.rec, self.Bd, self.d_bar, self.ctrl, self.kind = rec, Bd, float(d_bar), ctrl, mult_kind
        self.mode = "analyze" if ctrl is not None else "design"

    def inputs(self):
        return {"data": switched.data_fingerprint(self.rec), "N": self.rec.N, "Bd": self.Bd,
                "d_bar": self.d_bar, "K": None if self.ctrl is None else self.ctrl.K, "multiplier": self.kind}


class DataSwitchedEngine(_DataEngine):
    method = "switched"

    def __init__(self, *args, lift_path=None, **kw):
        super().__init__(*args, **kw)
        self.h_limit = self.rec.N
        self.lift_path = Path(lift_path) if lift_path else None
        self.lift = None
        if self.lift_path is not None and self.lift_path.exists():
            self.lift = switched.LiftedParametrization.load(self.lift_path)
            if not self.lift.compatible(self.rec, self.Bd, self.d_bar, self.kind):
                log.warning("lift state %s does not match these inputs; starting over", self.lift_path)
                self.lift = None

    def _lift(self, h, opts):
        before = 0 if self.lift is None else self.lift.h_max
        self.lift = switched.run_algorithm1(self.rec, self.Bd, self.d_bar, h, self.kind, self.lift, opts)
        if self.lift_path is not None and self.lift.h_max > before:
            self.lift.save(self.lift_path)
        return self.lift

    def _run(self, h, opts):
        if self.lift is None or self.lift.h_max < h:
            self._lift(h, opts)
        if self.ctrl is not None:
            cert = switched.analyze(self.rec, self.Bd, self.d_bar, self.ctrl, h, self.kind, self.lift, opts)
            return cert is not None, None
        res = switched.design(self.rec, self.Bd, self.d_bar, h, self.kind, self.lift, opts)
        return (False, None) if res is None else (True, res[0].K)


class DataIoEngine(_DataEngine):
    """h_bar = 1 is the periodic case, which the input/output conditions exclude; it is
    decided by the switched conditions at h_bar = 1."""

    method = "io"

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.dm = build_data_matrices(self.rec)
        nd = self.Bd.shape[1]
        self.mult = MultiplierClass(self.kind, self.d_bar, self.rec.N, nd)
        self._periodic = DataSwitchedEngine(self.rec, self.Bd, self.d_bar, self.ctrl, self.kind, opts=self.opts)

    def _run(self, h, opts):
        if h == 1:
            return self._periodic._run(1, opts)
        if self.ctrl is not None:
            return io_approach.analyze(self.dm, self.mult, self.Bd, self.ctrl, h, opts) is not None, None
        res = io_approach.design(self.dm, self.mult, self.Bd, h, opts)
        return (False, None) if res is None else (True, res[0].K)


class SetmemEngine(_DataEngine):
    method = "setmem"

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        if self.ctrl is None:
            raise InputError("the set-membership baseline only supports analysis (a gain is required)")
        self.box = None

    def _run(self, h, opts):
        if self.box is None:
            self.box = setmem.identify_box(self.rec, self.Bd, self.d_bar)
        return setmem.analyze_box(self.box, self.ctrl, h, opts), None


def make_engine(method: str, mode: str = "analyze", *, rec: Optional[DataRecord] = None,
                plant: Optional[LinearPlant] = None, Bd=None, d_bar: float = 0.0,
                ctrl: Optional[Controller] = None, mult_kind: str = "diagonal",
                opts: Optional[SolveOptions] = None, lift_path=None) -> Engine:
    if method not in METHODS:
        raise InputError(f"method must be one of {METHODS}")
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    if mode == "analyze" and ctrl is None:
        raise InputError("analysis needs a gain")
    if method in ("io-model", "switched-model"):
        if plant is None:
            raise InputError(f"{method} needs a plant")
        if mode != "analyze":
            raise InputError("model-based engines only analyze")
        cls = ModelIoEngine if method == "io-model" else ModelSwitchedEngine
        return cls(plant, ctrl, opts)
    if rec is None or Bd is None:
        raise InputError(f"{method} needs data and Bd")
    K = ctrl if mode == "analyze" else None
    if method == "io":
        return DataIoEngine(rec, Bd, d_bar, K, mult_kind, opts=opts)
    if method == "switched":
        return DataSwitchedEngine(rec, Bd, d_bar, K, mult_kind, opts=opts, lift_path=lift_path)
    if mode == "design":
        raise InputError("the set-membership baseline only analyzes")
    return SetmemEngine(rec, Bd, d_bar, K, mult_kind, opts=opts)


# search --------------------------------------------------------------------------

@dataclass
class MsiReport:
    method: str
    mode: str
    strategy: str
    h_cap: int
    h_msi: int
    verdicts: list
    K: Optional[list] = None
    falsifier: Optional[dict] = None
    config_hash: str = ""
    seed: Optional[int] = None
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def status(self) -> str:
        if self.h_msi > 0:
            return "certified"
        if any(v.status == "numerical_failure" for v in self.verdicts):
            return "solver failure"
        return "no certificate"

    @property
    def exit_code(self) -> int:
        return {"certified": 0, "no certificate": 2, "solver failure": 4}[self.status]

    def verdict(self, h: int) -> Optional[Verdict]:
        for v in self.verdicts:
            if v.h_bar == h:
                return v
        return None

    def to_json(self, timing: bool = True) -> dict:
        out = {
            "schema": SCHEMA, "method": self.method, "mode": self.mode, "strategy": self.strategy,
            "h_cap": self.h_cap, "h_msi": self.h_msi, "status": self.status,
            "verdicts": [v.to_json(timing) for v in sorted(self.verdicts, key=lambda v: v.h_bar)],
            "K": self.K, "falsifier": self.falsifier, "config_hash": self.config_hash, "seed": self.seed,
            "config": self.config, "inputs": _canon(self.inputs), "notes": self.notes,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out

    def dumps(self, timing: bool = True) -> str:
        return json.dumps(_canon(self.to_json(timing)), indent=2, sort_keys=True)

    def save(self, path, timing: bool = True) -> None:
        Path(path).write_text(self.dumps(timing) + "\n")


def _exponential(ok: Callable[[int], bool], cap: int) -> int:
    lo, h = 0, 1
    while True:
        if not ok(h):
            hi = h
            break
        lo = h
        if h == cap:
            return cap
        h = min(2 * h, cap)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def search_msi(engine: Callable[[int], Verdict], h_cap: int, strategy: str = "exponential") -> MsiReport:
    """Largest certified h_bar in [1, h_cap].

    ``linear`` evaluates every h_bar; ``exponential`` doubles until the first
    failure and bisects. Both agree when verdicts are monotone; otherwise the
    linear scan is authoritative and the exponential search warns.
    """
    if strategy not in STRATEGIES:
        raise InputError(f"strategy must be one of {STRATEGIES}")
    if h_cap < 1:
        raise InputError("h_cap must be at least 1")
    limit = getattr(engine, "h_limit", None)
    if limit is not None and h_cap > limit:
        raise InputError(f"h_cap={h_cap} exceeds the data length N={limit}")
    t0 = time.perf_counter()
    seen: dict[int, Verdict] = {}

    def ok(h):
        if h not in seen:
            seen[h] = engine(h)
            log.info("h_bar=%d: %s", h, seen[h].status)
        return seen[h].certified

    notes = []
    if strategy == "linear":
        for h in range(1, h_cap + 1):
            ok(h)
        certified = [h for h, v in seen.items() if v.certified]
        h_msi = max(certified, default=0)
    else:
        h_msi = _exponential(ok, h_cap)
    gaps = [h for h, v in seen.items() if h < h_msi and not v.certified]
    if gaps:
        msg = f"non-monotone verdicts: h_bar {sorted(gaps)} not certified below h_msi={h_msi}"
        if strategy == "exponential":
            log.warning(msg + "; a linear scan is authoritative")
        notes.append(msg)
    verdicts = sorted(seen.values(), key=lambda v: v.h_bar)
    best = seen.get(h_msi)
    return MsiReport(
        method=getattr(engine, "method", ""), mode=getattr(engine, "mode", "analyze"), strategy=strategy,
        h_cap=h_cap, h_msi=h_msi, verdicts=verdicts, K=None if best is None else best.K, notes=notes,
        wall_time=time.perf_counter() - t0,
    )


def attach_falsifier(report: MsiReport, plant: LinearPlant, ctrl: Controller, h_max: int,
                     depth: int = 6, eig_tol: float = 1e-9) -> dict:
    """Smallest h_bar > h_msi with a destabilizing sequence gives the upper bound h_bar - 1.

    The search starts at h_msi itself so that a witness contradicting the
    certificate is reported rather than skipped.
    """
    start = max(1, report.h_msi)
    info = {"depth": depth, "searched_up_to": h_max, "upper_bound": None, "witness": None,
            "contradiction": False}
    for h in range(start, h_max + 1):
        w = falsify_msi(plant, ctrl, h, depth, eig_tol)
        if w is not None:
            info["upper_bound"] = h - 1
            info["witness"] = w.to_json()
            if h <= report.h_msi:
                info["contradiction"] = True
                log.error("falsifier found a witness at h_bar=%d although h_msi=%d", h, report.h_msi)
            break
    report.falsifier = info
    return info


def run_msi(engine: Engine, cfg: dict, h_cap: Optional[int] = None, strategy: Optional[str] = None,
            plant: Optional[LinearPlant] = None, seed: Optional[int] = None) -> MsiReport:
    """search_msi with provenance: config, inputs, hash and optional falsifier bound."""
    h_cap = int(h_cap if h_cap is not None else cfg["search"]["h_cap"])
    strategy = strategy or cfg["search"]["strategy"]
    report = search_msi(engine, h_cap, strategy)
    report.config = cfg
    report.inputs = _canon(engine.inputs())
    report.inputs.update(method=report.method, mode=report.mode, h_cap=h_cap, strategy=strategy)
    report.seed = seed
    report.config_hash = config_hash(cfg, report.inputs)
    if report.method == "setmem":
        report.notes.append("common (Q, X) across all box vertices")
    if plant is not None:
        K = report.K if report.mode == "design" else getattr(engine, "ctrl", None)
        if K is not None:
            ctrl = K if isinstance(K, Controller) else Controller(np.array(K))
            fcfg = cfg["falsifier"]
            attach_falsifier(report, plant, ctrl, max(report.h_msi + 1, 2 * report.h_msi),
                             int(fcfg["depth"]), float(fcfg["eig_tol"]))
    return report


# reproduction --------------------------------------------------------------------

def _write_curve(path: Path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d_bar", "N", "method", "h_msi"])
        for r in rows:
            w.writerow([repr(float(r["d_bar"])), r["N"], r["method"], r["h_msi"]])


def _curve(method, mode, N, d_bars, cap0, cfg, opts, plant, ctrl):
    seed = int(cfg["reproduce"]["seed"])
    kind = cfg["multiplier"]["kind"]
    strategy = cfg["search"]["strategy"]
    rows, cap = [], cap0
    for d in d_bars:
        if cap < 1:
            rows.append({"d_bar": d, "N": N, "method": method, "h_msi": 0, "K": None, "skipped": True})
            continue
        rec = generate_data(plant, NoiseSpec(d, seed=seed), N)
        eng = make_engine(method, mode, rec=rec, Bd=plant.Bd, d_bar=d, ctrl=ctrl, mult_kind=kind, opts=opts)
        rep = search_msi(eng, min(cap, getattr(eng, "h_limit", None) or cap), strategy)
        log.info("%s %s N=%d d_bar=%g -> %d", method, mode, N, d, rep.h_msi)
        rows.append({"d_bar": d, "N": N, "method": method, "h_msi": rep.h_msi, "K": rep.K, "skipped": False})
        if cfg["reproduce"]["monotone_caps"]:
            cap = rep.h_msi
    return rows


def table1_counts(N: int, h_bar: int, kind: str = "quadratic", opts: Optional[SolveOptions] = None) -> list:
    """Decision-variable and constraint counts of every problem class, next to their closed forms.

    With a diagonal multiplier the lifted level h has N - h + 1 samples, so the
    closed forms use c_d of each level's sample count.
    """
    plant = benchmark_plant()
    n, m = plant.n, plant.m
    rec = generate_data(plant, NoiseSpec(0.001, seed=0), N)
    cd = (lambda k: 1) if kind == "quadratic" else (lambda k: k)
    cds = [cd(N - h + 1) for h in range(1, h_bar + 1)]
    K = BENCHMARK_GAIN
    mult = MultiplierClass(kind, 0.001, N, plant.n_d)
    lift = switched.run_algorithm1(rec, plant.Bd, 0.001, h_bar, kind, opts=opts)
    box = setmem.identify_box(rec, plant.Bd, 0.001)
    sv = [switched.build_singular_value_lmi(rec, plant.Bd, lift.multiplier(h), h) for h in range(1, h_bar + 1)]
    problems = [
        ("io-model", io_approach.build_model_based_lmi(plant, K, h_bar), (2 * n * n, 3)),
        ("io-data", io_approach.build_analysis_lmi(build_data_matrices(rec), mult, plant.Bd, K, h_bar),
         (2 * n * n + cd(N), 3 + cd(N))),
        ("switched-model", switched.build_model_based_lmi(plant, K, h_bar),
         (2 * h_bar * n * n, 2 * h_bar + h_bar ** 2)),
        ("lift-bounds", sv, (sum(1 + c for c in cds), sum(2 + c for c in cds))),
        ("switched-data", switched.build_grid_lmi(rec, plant.Bd, lift, h_bar, K.K),
         (2 * h_bar * n * n + h_bar * sum(cds), 2 * h_bar + h_bar ** 2 + h_bar * sum(cds))),
        ("setmem", setmem.build_box_lmi(box, K, h_bar), (2 * n * n, setmem.box_constraint_count(n, m))),
    ]
    rows = []
    for name, p, closed in problems:
        ps = p if isinstance(p, list) else [p]
        counts = [q.table_counts() for q in ps]
        nv, nc = sum(c[0] for c in counts), sum(c[1] for c in counts)
        rows.append({
            "problem": name, "multiplier": kind, "N": N, "h_bar": h_bar,
            "table_vars": nv, "table_constraints": nc,
            "closed_form_vars": closed[0], "closed_form_constraints": closed[1],
            "exact_vars": sum(q.n_scalar_variables for q in ps),
            "exact_constraints": sum(q.n_constraints for q in ps),
            "match": nv == closed[0] and nc == closed[1],
        })
    return rows


def reproduce(figure: str, out_dir, cfg: Optional[dict] = None) -> list[Path]:
    """Write plot-ready CSV per curve plus a summary JSON; returns the written paths."""
    cfg = cfg or load_config()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    opts = solve_options(cfg)
    plant, ctrl = benchmark_plant(), BENCHMARK_GAIN
    written = []
    t0 = time.perf_counter()
    if figure in ("fig2", "fig3"):
        fc = cfg["reproduce"][figure]
        mode = "analyze" if figure == "fig2" else "design"
        Ns = fc["N"] if isinstance(fc["N"], list) else [fc["N"]]
        curves = []
        for method in fc["methods"]:
            if method not in ("io", "switched", "setmem"):
                raise InputError(f"unknown method {method!r} in reproduce.{figure}.methods")
            for N in Ns:
                rows = _curve(method, mode, int(N), [float(d) for d in fc["d_bars"]],
                              int(fc[f"h_cap_{method}"]), cfg, opts, plant, ctrl if mode == "analyze" else None)
                path = out / f"{figure}_{method}_N{N}.csv"
                _write_curve(path, rows)
                written.append(path)
                curves.append({"method": method, "mode": mode, "N": int(N), "points": rows})
        summary = {"schema": SCHEMA, "figure": figure, "curves": curves}
    elif figure == "table1":
        tc = cfg["reproduce"]["table1"]
        rows = []
        for kind in ("quadratic", "diagonal"):
            rows += table1_counts(int(tc["N"]), int(tc["h_bar"]), kind, opts)
        path = out / "table1.csv"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        written.append(path)
        summary = {"schema": SCHEMA, "figure": figure, "rows": rows}
    else:
        raise InputError(f"figure must be one of fig2, fig3, table1; got {figure!r}")
    summary["config_hash"] = config_hash(cfg, {"figure": figure})
    summary["config"] = cfg
    summary["timing"] = {"wall_time": time.perf_counter() - t0}
    spath = out / f"{figure}_summary.json"
    spath.write_text(json.dumps(_canon(summary), indent=2, sort_keys=True) + "\n")
    written.append(spath)
    return written
