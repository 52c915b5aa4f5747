"""Experiment orchestration: specs, runs, CSV outputs and manifests.

Every run writes into a staging directory that is renamed into place only
after all data files are complete, so a failed run leaves no partial
outputs behind. Data files are deterministic; timings live only in the
manifest.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.stats import linregress

from . import __version__
from .errors import NoFiniteBetaError
from .evolve import KrylovPropagator, PropagatorConfig, evolve_trajectory, spectral_evolve, time_grid
from .hilbert import HermitianOperator, IsingParams, RegisterLayout, SqaParams, build_ising, build_sqa
from .observables import (
    SubsystemPartition,
    TimeAverageWindow,
    detect_first_cusp,
    local_observable_deviation,
    partial_trace,
    rdm_distance,
    register_average,
    time_average,
    tripartite_mutual_information,
)
from .spectra import SpectrumCache, density_of_states, full_spectrum, gibbs_state, thermal_rdm, thermal_rdms
from .states import (
    BlochDirection,
    InitialStateSpec,
    branch_pair,
    energy_density,
    inverse_temperature,
    system_product_state,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = 1
KINDS = ("spectrum", "tmi-dynamics", "epsilon-sweep", "thermalization", "cusp-study", "validate")

MODEL_DEFAULTS = {
    "ising": {"J": 1.0, "g": 1.05, "h": -0.5},
    "sqa": {"lam": 1.0, "omega": 1.0},
}


# ---------------------------------------------------------------- spec


@dataclass(frozen=True)
class StateEntry:
    """One initial state; angles in units of pi."""

    family: str
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if self.family not in ("isotropic", "neel"):
            raise ValueError(f"unknown state family {self.family!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1] (units of pi), got {self.theta}")
        if not 0.0 <= self.phi < 2.0:
            raise ValueError(f"phi must lie in [0, 2) (units of pi), got {self.phi}")
        object.__setattr__(self, "theta", float(self.theta))
        # the poles do not depend on phi; pin it so grids collapse duplicates
        object.__setattr__(self, "phi", 0.0 if self.theta in (0.0, 1.0) else float(self.phi))

    def spec(self, with_ancilla: bool = True) -> InitialStateSpec:
        return InitialStateSpec(self.family, BlochDirection.from_pi_units(self.theta, self.phi), with_ancilla)

    @property
    def label(self) -> str:
        return f"{self.family}_theta{self.theta:.4f}_phi{self.phi:.4f}"


def _axis_values(v) -> list[float]:
    """A list of values, a scalar, or ``{start, stop, step}`` (inclusive, in units of pi)."""
    if isinstance(v, dict):
        start, stop, step = float(v["start"]), float(v["stop"]), float(v["step"])
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 10) for k in range(count)]
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(v)]


def expand_grid(block: dict) -> list[StateEntry]:
    """States of one sweep block ``{family, theta, phi}`` (Cartesian product)."""
    family = block.get("family", "isotropic")
    return [
        StateEntry(family, th, ph)
        for th in _axis_values(block["theta"])
        for ph in _axis_values(block.get("phi", 0.0))
    ]


DEFAULT_SWEEP = ({"family": "isotropic", "theta": {"start": 0, "stop": 0.5, "step": 0.05}, "phi": {"start": 0, "stop": 0.5, "step": 0.05}},)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines the data files of a run.

    Defaults are the downscaled CI settings; :meth:`full_scale` switches to
    the production sizes. Angles are in units of pi.
    """

    model: str = "ising"
    params: dict = field(default_factory=dict)
    n: int = 10
    states: tuple = ()
    sweep: tuple = DEFAULT_SWEEP
    t_end: float = 200.0
    dt: float = 0.5
    window: tuple = (50.0, 200.0)
    subset: tuple = (5, 6, 7)
    late_time: float = 50.0
    dos_bins: int = 100
    krylov_dim: int = 45
    tol: float = 1e-10
    log_base: float = 2.0
    n_list: tuple = (8, 10, 12, 14)
    cusp_t_end: float = 20.0
    cusp_dt: float = 0.05
    cusp_t_relax: float = 3.0
    cusp_prominence: float = 3.0
    cusp_smooth: int = 5
    seed: int = 0
    gnuplot: bool = True
    out: str = "results"
    workers: int = 1

    def __post_init__(self):
        if self.model not in MODEL_DEFAULTS:
            raise ValueError(f"model must be one of {sorted(MODEL_DEFAULTS)}, got {self.model!r}")
        params = dict(MODEL_DEFAULTS[self.model])
        unknown = set(self.params) - set(params)
        if unknown:
            raise ValueError(f"unknown parameters for {self.model}: {sorted(unknown)}")
        params.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", params)
        states = tuple(s if isinstance(s, StateEntry) else StateEntry(**s) for s in self.states)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "sweep", tuple(dict(b) for b in self.sweep))
        object.__setattr__(self, "window", tuple(float(x) for x in self.window))
        object.__setattr__(self, "subset", tuple(int(q) for q in self.subset))
        object.__setattr__(self, "n_list", tuple(int(q) for q in self.n_list))
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("t_end and dt must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.log_base <= 1:
            raise ValueError("log_base must exceed 1")
        TimeAverageWindow(self.window[0], self.window[1], self.dt)
        if self.window[1] > self.t_end + 1e-9:
            raise ValueError(f"averaging window ends at {self.window[1]} beyond t_end={self.t_end}")
        if not self.subset or len(set(self.subset)) != len(self.subset):
            raise ValueError(f"subset must be non-empty without repeats, got {self.subset}")
        needs_even = any(s.family == "neel" for s in self.all_states())
        if needs_even and self.n % 2:
            raise ValueError(f"Neel-type states need an even n, got {self.n}")

    # construction ----------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ExperimentSpec":
        changes = {k: v for k, v in changes.items() if v is not None}
        if "model" in changes and changes["model"] != self.model:
            changes.setdefault("params", {})
        return dataclasses.replace(self, **changes)

    def full_scale(self) -> "ExperimentSpec":
        return self.replace(n=14, t_end=1000.0, window=(100.0, 1000.0))

    # derived ---------------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["states"] = [dataclasses.asdict(s) for s in self.states]
        d["sweep"] = [dict(b) for b in self.sweep]
        for k in ("window", "subset", "n_list"):
            d[k] = list(d[k])
        return d

    @property
    def fingerprint(self) -> str:
        """Hash of every field that can change the data (not ``out`` or ``workers``)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")
        d["version"] = __version__
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def all_states(self) -> list[StateEntry]:
        """Explicit states followed by the sweep grid, duplicates removed in order."""
        seen, out = set(), []
        for s in list(self.states) + [e for b in self.sweep for e in expand_grid(b)]:
            if s not in seen:
                seen.add(s)
                out.append(s)
        return out

    def run_states(self) -> list[StateEntry]:
        """Explicit states if given, else the sweep grid."""
        return list(self.states) if self.states else self.all_states()

    def averaging_window(self) -> TimeAverageWindow:
        return TimeAverageWindow(self.window[0], self.window[1], self.dt)

    def propagator(self) -> PropagatorConfig:
        return PropagatorConfig(krylov_dim=self.krylov_dim, tol=self.tol)

    def hamiltonian(self, n: int | None = None) -> HermitianOperator:
        n = self.n if n is None else n
        if self.model == "ising":
            return build_ising(IsingParams(n, **self.params))
        return build_sqa(SqaParams(n, **self.params))


def load_spec(path: str | os.PathLike) -> ExperimentSpec:
    """Read a YAML configuration file."""
    import yaml

    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return ExperimentSpec.from_dict(data)


# ---------------------------------------------------------------- tables


@dataclass
class Table:
    columns: tuple
    rows: list
    comments: tuple = ()

    def __post_init__(self):
        self.columns = tuple(self.columns)
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError(f"row {r!r} does not match columns {self.columns}")

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        values = [r[k] for r in self.rows]
        try:
            return np.array(values, dtype=float)
        except (TypeError, ValueError):
            return np.array(values, dtype=object)

    def __len__(self):
        return len(self.rows)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else "%.12g" % v
    return str(v)


def write_csv(path: Path, table: Table) -> None:
    with open(path, "w", newline="") as f:
        for c in table.comments:
            f.write(f"# {c}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(table.columns)
        for r in table.rows:
            w.writerow([_fmt(v) for v in r])


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_csv(path: Path) -> Table:
    comments, lines = [], []
    with open(path, newline="") as f:
        for line in f:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            else:
                lines.append(line)
    reader = csv.reader(lines)
    columns = next(reader)
    return Table(columns, [tuple(_parse(v) for v in r) for r in reader], tuple(comments))


# ---------------------------------------------------------------- manifest


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def emit_manifest(
    directory: Path,
    spec: ExperimentSpec,
    files: Iterable[str] = (),
    timings: dict | None = None,
    kind: str = "",
    summary: dict | None = None,
) -> Path:
    """Write ``manifest.json`` listing ``files`` (relative to ``directory``) with checksums."""
    directory = Path(directory)
    entries = []
    for name in sorted(files):
        p = directory / name
        entries.append({"path": name, "sha256": sha256_file(p), "bytes": p.stat().st_size})
    manifest = {
        "format": MANIFEST_FORMAT,
        "kind": kind,
        "software_version": __version__,
        "spec_fingerprint": spec.fingerprint,
        "spec": spec.to_dict(),
        "files": entries,
        "timings_seconds": dict(timings or {}),
        "summary": _jsonable(summary or {}),
    }
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return None if not math.isfinite(float(x)) else float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def verify_manifest(path: str | os.PathLike) -> list[str]:
    """Problems found when re-checking a manifest; empty when everything matches."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return [f"cannot read manifest: {exc}"]
    problems = []
    for key in ("format", "software_version", "spec_fingerprint", "files", "timings_seconds"):
        if key not in manifest:
            problems.append(f"missing key {key!r}")
    for entry in manifest.get("files", []):
        p = path.parent / entry["path"]
        if not p.exists():
            problems.append(f"{entry['path']}: missing")
        elif sha256_file(p) != entry["sha256"]:
            problems.append(f"{entry['path']}: checksum mismatch")
    return problems


# ---------------------------------------------------------------- runs


@dataclass
class RunResult:
    kind: str
    directory: Path
    tables: dict
    summary: dict
    manifest: dict


def _ensure_writable(directory: Path) -> None:
    """Raise OSError unless files can be created in ``directory``."""
    directory.mkdir(parents=True, exist_ok=True)
    if not os.access(directory, os.W_OK | os.X_OK):
        raise PermissionError(f"output directory {directory} is not writable")
    fd, probe = tempfile.mkstemp(dir=directory, prefix=".probe-")
    os.close(fd)
    os.unlink(probe)


def _header(spec: ExperimentSpec, kind: str, extra: Sequence[str] = ()) -> tuple:
    params = ", ".join(f"{k}={v:g}" for k, v in sorted(spec.params.items()))
    return (
        f"scrambling {__version__} {kind}",
        f"model {spec.model} ({params}), open chain",
        f"spec sha256 {spec.fingerprint}",
        "time in units of the inverse coupling; entropies in base %g" % spec.log_base,
        *extra,
    )


def _load_existing(directory: Path, spec: ExperimentSpec, kind: str) -> RunResult | None:
    path = directory / MANIFEST_NAME
    if not path.exists():
        return None
    manifest = json.loads(path.read_text())
    if manifest.get("spec_fingerprint") != spec.fingerprint or manifest.get("kind") != kind:
        return None
    if verify_manifest(path):
        return None
    tables = {e["path"]: read_csv(directory / e["path"]) for e in manifest["files"] if e["path"].endswith(".csv")}
    log.info("reusing results in %s", directory)
    return RunResult(kind, directory, tables, manifest.get("summary", {}), manifest)


def _execute(kind: str, spec: ExperimentSpec, compute: Callable, reuse: bool) -> RunResult:
    """Run ``compute(spec) -> (tables, summary, extras)`` with staging and a manifest."""
    directory = Path(spec.out) / kind
    _ensure_writable(directory.parent)
    if reuse:
        hit = _load_existing(directory, spec, kind)
        if hit is not None:
            return hit
    _ensure_writable(directory)
    staging = Path(tempfile.mkdtemp(dir=directory.parent, prefix=f".{kind}-staging-"))
    try:
        started = time.perf_counter()
        tables, summary, extras = compute(spec)
        elapsed = time.perf_counter() - started
        names = []
        for name, table in tables.items():
            write_csv(staging / name, table)
            names.append(name)
        for name, text in extras.items():
            (staging / name).write_text(text)
            names.append(name)
        emit_manifest(staging, spec, names, {"compute": round(elapsed, 3)}, kind, summary)
        # swap the completed staging directory into place
        if directory.exists():
            shutil.rmtree(directory)
        os.replace(staging, directory)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    # return what is on disk so fresh and reused runs look the same
    return _load_existing(directory, spec, kind)


def _map(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _spectrum(spec: ExperimentSpec, n: int | None = None):
    """Hamiltonian and its eigenvalues, through the shared cache."""
    H = spec.hamiltonian(n)
    return H, full_spectrum(H, cache=SpectrumCache())


def _characterize(state: StateEntry, H: HermitianOperator, spectrum) -> tuple[float, float, str]:
    """Energy density and matched inverse temperature of the chain product state."""
    n = H.layout.n_system
    psi = system_product_state(state.spec(False), n)
    eps = energy_density(psi, H, spectrum.extremes)
    try:
        return eps, inverse_temperature(psi, spectrum.eigenvalues, H), "ok"
    except NoFiniteBetaError:
        return eps, float("nan"), "no-finite-beta"


# tmi dynamics ------------------------------------------------------


def _tmi_worker(spec: ExperimentSpec, state: StateEntry) -> np.ndarray:
    H = spec.hamiltonian()
    part = SubsystemPartition.protocol(spec.n)
    pair = branch_pair(state.spec(True), spec.n)
    base = spec.log_base
    traj = evolve_trajectory(
        H,
        pair,
        time_grid(spec.t_end, spec.dt),
        {"I3": lambda s, t: tripartite_mutual_information(s, part, base=base)},
        spec.propagator(),
    )
    return traj["I3"]


def _tmi_series(spec: ExperimentSpec, states: list[StateEntry]) -> list[np.ndarray]:
    return _map(partial(_tmi_worker, spec), states, spec.workers)


def _gnuplot(title: str, data: str, using: str, xlabel: str, ylabel: str) -> str:
    return (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        f"set title '{title}'\nset xlabel '{xlabel}'\nset ylabel '{ylabel}'\n"
        f"plot '{data}' using {using} with lines\n"
    )


def run_tmi_dynamics(spec: ExperimentSpec, reuse: bool = False) -> RunResult:
    """I_3(t) for every initial state, one CSV per state plus a summary."""

    def compute(spec):
        states = spec.run_states()
        times = time_grid(spec.t_end, spec.dt)
        series = _tmi_series(spec, states)
        w = spec.averaging_window()
        tables, extras, rows = {}, {}, []
        for s, y in zip(states, series):
            name = f"tmi_{s.label}.csv"
            tables[name] = Table(
                ("time", "I3"), list(zip(times, y)), _header(spec, "tmi-dynamics", [f"state {s.label}"])
            )
            rows.append((s.family, s.theta, s.phi, time_average(times, y, w), y[-1]))
            if spec.gnuplot:
                extras[f"tmi_{s.label}.gp"] = _gnuplot(s.label, name, "1:2", "t", "I3")
        tables["summary.csv"] = Table(
            ("family", "theta_pi", "phi_pi", "I3_bar", "I3_final"),
            rows,
            _header(spec, "tmi-dynamics", [f"I3_bar: trapezoidal mean over [{w.t_i:g}, {w.t_f:g}]"]),
        )
        return tables, {"n_states": len(states)}, extras

    return _execute("tmi-dynamics", spec, compute, reuse)


# spectrum ------------------------------------------------------------


def _dos_table(spec, spectrum) -> Table:
    dos = density_of_states(spectrum, spec.dos_bins)
    return Table(
        ("eps_center", "count"),
        list(zip(dos.centers, dos.counts.tolist())),
        _header(spec, "dos", [f"n={spectrum.layout.n_system}, {spec.dos_bins} bins over eps in [0, 1]"]),
    ), dos


def run_spectrum(spec: ExperimentSpec, reuse: bool = False) -> RunResult:
    """Eigenvalues and density of states."""

    def compute(spec):
        _, s = _spectrum(spec)
        dos_table, dos = _dos_table(spec, s)
        tables = {
            "eigenvalues.csv": Table(
                ("index", "energy"), list(enumerate(s.eigenvalues.tolist())), _header(spec, "spectrum")
            ),
            "dos.csv": dos_table,
        }
        summary = {"e_min": s.e_min, "e_max": s.e_max, "dos_argmax_eps": dos.argmax_center}
        extras = {"dos.gp": _gnuplot("density of states", "dos.csv", "1:2", "eps", "count")} if spec.gnuplot else {}
        return tables, summary, extras

    return _execute("spectrum", spec, compute, reuse)


# epsilon sweep -------------------------------------------------------


def run_epsilon_sweep(spec: ExperimentSpec, reuse: bool = False) -> RunResult:
    """Time-averaged I_3 against energy density over the state grid, plus the DoS."""

    def compute(spec):
        states = spec.all_states()
        if not states:
            raise ValueError("the sweep grid is empty")
        H, s = _spectrum(spec)
        characterized = [_characterize(st, H, s) for st in states]
        series = _tmi_series(spec, states)
        times = time_grid(spec.t_end, spec.dt)
        w = spec.averaging_window()
        rows = []
        for st, (eps, beta, status), y in zip(states, characterized, series):
            rows.append((st.family, st.theta, st.phi, eps, beta, status, time_average(times, y, w)))
        sweep = Table(
            ("family", "theta_pi", "phi_pi", "eps", "beta", "beta_status", "I3_bar"),
            rows,
            _header(spec, "epsilon-sweep", [f"I3_bar over [{w.t_i:g}, {w.t_f:g}]; eps, beta of the chain product state"]),
        )
        dos_table, dos = _dos_table(spec, s)
        i3 = sweep.column("I3_bar")
        eps = sweep.column("eps")
        k = int(np.argmin(i3))
        summary = {
            "eps_at_min_I3": float(eps[k]),
            "min_I3": float(i3[k]),
            "I3_range": float(i3.max() - i3.min()),
            "dos_argmax_eps": dos.argmax_center,
            "min_eps": float(eps.min()),
        }
        extras = {}
        if spec.gnuplot:
            extras["sweep.gp"] = _gnuplot("time-averaged TMI", "sweep.csv", "4:7", "eps", "I3_bar").replace(
                "with lines", "with points"
            )
        return {"sweep.csv": sweep, "dos.csv": dos_table}, summary, extras

    return _execute("epsilon-sweep", spec, compute, reuse)


# thermalization ------------------------------------------------------


def _thermal_worker(spec: ExperimentSpec, job) -> np.ndarray:
    state, rho_th = job
    H = spec.hamiltonian()
    layout = RegisterLayout(spec.n)
    psi = system_product_state(state.spec(False), spec.n)
    times = time_grid(spec.t_end, spec.dt)
    out = np.empty((times.size, 4))
    prop = KrylovPropagator(H, spec.propagator())
    for k, v in enumerate(prop.evolve_grid(psi, times)):
        rho = partial_trace(v, spec.subset, layout)
        out[k, :3] = [local_observable_deviation(rho, rho_th, a) for a in "xyz"]
        out[k, 3] = rdm_distance(rho, rho_th)
    return out


def run_thermalization_diagnostics(spec: ExperimentSpec, reuse: bool = False) -> RunResult:
    """Local-observable deviations and RDM distance from the energy-matched Gibbs state."""
    if any(q < 1 or q > spec.n for q in spec.subset):
        raise ValueError(f"subset {spec.subset} outside 1..{spec.n}")

    def compute(spec):
        states = spec.run_states()
        H, s = _spectrum(spec)
        rows = []
        for st in states:
            eps, beta, status = _characterize(st, H, s)
            if status != "ok":
                raise NoFiniteBetaError(f"state {st.label} has no finite inverse temperature", "E_min")
            rows.append((st, eps, beta))
        # sector by sector, so n=14 never needs the full eigenvector matrix
        rdms = thermal_rdms(H, [beta for _, _, beta in rows], spec.subset, energies=s.eigenvalues)
        jobs = [(st, rho) for (st, _, _), rho in zip(rows, rdms)]
        results = _map(partial(_thermal_worker, spec), jobs, spec.workers)
        times = time_grid(spec.t_end, spec.dt)
        late = times > spec.late_time
        tables, extras, summary_rows = {}, {}, []
        for (st, eps, beta), arr in zip(rows, results):
            name = f"thermalization_{st.label}.csv"
            tables[name] = Table(
                ("time", "dev_x", "dev_y", "dev_z", "d"),
                [(t, *a) for t, a in zip(times, arr)],
                _header(spec, "thermalization", [f"state {st.label}; subset {list(spec.subset)}; beta={beta:.12g}"]),
            )
            if late.sum() > 1:
                std, late_d = arr[late].std(axis=0), float(arr[late, 3].max())
            else:
                std, late_d = np.full(4, np.nan), float("nan")
            summary_rows.append((st.family, st.theta, st.phi, eps, beta, *std, late_d))
            if spec.gnuplot:
                extras[f"thermalization_{st.label}.gp"] = _gnuplot(
                    st.label, name, "1:2", "t", "deviation"
                ).replace("with lines", "with lines, '' using 1:3 with lines, '' using 1:4 with lines, '' using 1:5 with lines")
        tables["summary.csv"] = Table(
            ("family", "theta_pi", "phi_pi", "eps", "beta", "std_dev_x", "std_dev_y", "std_dev_z", "std_d", "max_late_d"),
            summary_rows,
            _header(spec, "thermalization", [f"standard deviations over t > {spec.late_time:g}"]),
        )
        return tables, {"n_states": len(states)}, extras

    return _execute("thermalization", spec, compute, reuse)


# cusp study ------------------------------------------------------------


Signal = Callable[[int], tuple]


def _sigma_x_worker(spec: ExperimentSpec, n: int):
    H = spec.hamiltonian(n)
    layout = RegisterLayout(n)
    psi = system_product_state(StateEntry("isotropic", 0.5, 0.0).spec(False), n)
    times = time_grid(spec.cusp_t_end, spec.cusp_dt)
    traj = evolve_trajectory(H, psi, times, {"sx": lambda v, t: register_average(v, "x", layout)}, spec.propagator())
    return times, traj["sx"]


def linear_fit(x: np.ndarray, y: np.ndarray) -> dict:
    """Least-squares line with its coefficient of determination."""
    if len(x) < 2:
        return {"slope": float("nan"), "intercept": float("nan"), "r2": float("nan")}
    if np.ptp(y) == 0:
        return {"slope": 0.0, "intercept": float(y[0]), "r2": 1.0}
    fit = linregress(x, y)
    return {"slope": float(fit.slope), "intercept": float(fit.intercept), "r2": float(fit.rvalue**2)}


def run_cusp_study(spec: ExperimentSpec, reuse: bool = False, signal: Signal | None = None) -> RunResult:
    """First-cusp time of the register-averaged sigma^x after the |X+> quench, per chain length.

    ``signal(n) -> (times, values)`` replaces the physics, e.g. to check the
    pipeline on injected cusps; injected runs are never reused.
    """

    def compute(spec):
        ns = list(spec.n_list)
        if signal is None:
            series = _map(partial(_sigma_x_worker, spec), ns, spec.workers)
        else:
            series = [signal(n) for n in ns]
        tables, extras, rows = {}, {}, []
        for n, (times, values) in zip(ns, series):
            tables[f"sigma_x_n{n}.csv"] = Table(
                ("time", "sigma_x"), list(zip(times, values)), _header(spec, "cusp-study", [f"n={n}, initial |X+>"])
            )
            t_cusp = detect_first_cusp(
                times, values, spec.cusp_t_relax, spec.cusp_smooth, spec.cusp_prominence
            )
            rows.append((n, float("nan") if t_cusp is None else t_cusp))
        found = [(n, t) for n, t in rows if not math.isnan(t)]
        fit = linear_fit(np.array([n for n, _ in found], float), np.array([t for _, t in found]))
        ts = [t for _, t in found]
        summary = dict(fit)
        summary["n_found"] = len(found)
        summary["strictly_increasing"] = len(found) == len(rows) and all(b > a for a, b in zip(ts, ts[1:]))
        tables["cusp.csv"] = Table(
            ("n", "t_cusp"),
            rows,
            _header(
                spec,
                "cusp-study",
                [
                    f"detector: smooth={spec.cusp_smooth}, prominence={spec.cusp_prominence:g}, t_relax={spec.cusp_t_relax:g}",
                    f"fit t_cusp = {fit['slope']:.6g} n + {fit['intercept']:.6g}, R^2 = {fit['r2']:.6g}",
                    "missing cusps are written as nan",
                ],
            ),
        )
        if spec.gnuplot:
            extras["cusp.gp"] = _gnuplot("first cusp", "cusp.csv", "1:2", "n", "t_cusp").replace(
                "with lines", "with linespoints"
            )
        return tables, summary, extras

    return _execute("cusp-study", spec, compute, reuse and signal is None)


# validation ------------------------------------------------------------


def _einsum_partial_trace(rho: np.ndarray, n: int, keep_bits: list[int]) -> np.ndarray:
    """Reduced matrix of a dense density matrix, by explicit index summation."""
    t = rho.reshape((2,) * (2 * n))
    axes = [n - 1 - b for b in sorted(keep_bits, reverse=True)]
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for a in range(n):
        if a not in axes:
            col[a] = row[a]
    out = "".join(row[a] for a in axes) + "".join(col[a] for a in axes)
    d = 1 << len(axes)
    return np.einsum("".join(row) + "".join(col) + "->" + out, t).reshape(d, d)


def validate(spec: ExperimentSpec, reuse: bool = False) -> RunResult:
    """Small-n oracle suite: each row is one check with its measured error and tolerance."""

    def compute(spec):
        rng = np.random.default_rng(spec.seed)
        checks = []

        def random_state(dim):
            v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
            return v / np.linalg.norm(v)

        # Krylov against the eigenbasis
        H = build_ising(IsingParams(8))
        s = full_spectrum(H, want_vectors=True)
        psi = random_state(H.dim)
        prop = KrylovPropagator(H, spec.propagator())
        outs = list(prop.evolve_grid(psi, [1.0, 100.0, 1000.0]))
        err = max(1 - abs(np.vdot(o, spectral_evolve(s, psi, t))) ** 2 for o, t in zip(outs, (1.0, 100.0, 1000.0)))
        checks.append(("krylov_vs_spectral_n8_t1000", err, 1e-8))
        e0 = H.expectation(psi)
        checks.append(("energy_drift_n8", max(abs(H.expectation(o) - e0) for o in outs), 1e-8))
        checks.append(("norm_drift_n8", max(abs(np.linalg.norm(o) - 1) for o in outs), 1e-8))

        # Krylov against a dense exponential
        H6 = build_sqa(SqaParams(6))
        psi6 = random_state(H6.dim)
        ref = sla.expm(-2.5j * H6.toarray()) @ psi6
        checks.append(("krylov_vs_expm_n6", float(np.abs(KrylovPropagator(H6).step(psi6, 2.5) - ref).max()), 1e-9))

        # branch decomposition against full-register evolution
        n = 6
        part = SubsystemPartition.protocol(n)
        pair = branch_pair(StateEntry("isotropic", 0.3, 0.7).spec(True), n)
        times = time_grid(4.0, 1.0)
        Hn = build_ising(IsingParams(n))
        a = evolve_trajectory(Hn, pair, times, {"I3": lambda x, t: tripartite_mutual_information(x, part)})
        lay = RegisterLayout(n, True)
        b = evolve_trajectory(
            Hn.extend_with_ancilla(), pair.full_state(), times,
            {"I3": lambda x, t: tripartite_mutual_information(x, part, lay)},
        )
        checks.append(("branch_equivalence_n6", float(np.abs(a["I3"] - b["I3"]).max()), 1e-8))
        checks.append(("I3_initial_zero", abs(float(a["I3"][0])), 1e-10))

        # partial trace and TMI against dense index summation
        psi = random_state(64)
        lay6 = RegisterLayout(6)
        worst = 0.0
        for keep in ([1], [2, 5], [1, 3, 6]):
            got = partial_trace(psi, keep, lay6)
            worst = max(worst, float(np.abs(got - _einsum_partial_trace(np.outer(psi, psi.conj()), 6, [q - 1 for q in keep])).max()))
        checks.append(("partial_trace_n6", worst, 1e-10))

        def S(bits):
            p = np.linalg.eigvalsh(_einsum_partial_trace(np.outer(psi, psi.conj()), 6, bits))
            p = p[p > 1e-14]
            return float(-(p * np.log2(p)).sum())

        conventional = S([0]) + S([1]) + S([2, 3]) - S([0, 1]) - S([0, 2, 3]) - S([1, 2, 3]) + S([0, 1, 2, 3])
        tmi = tripartite_mutual_information(psi, SubsystemPartition({1}, {2}, {3, 4}, {5, 6}), lay6)
        checks.append(("tmi_vs_conventional_n6", abs(tmi - conventional), 1e-10))

        # Gibbs state against a dense exponential
        s6 = full_spectrum(H6, want_vectors=True)
        g = sla.expm(-0.6 * H6.toarray())
        g /= np.trace(g)
        checks.append(("gibbs_vs_expm_n6", float(np.abs(gibbs_state(s6, 0.6) - g).max()), 1e-10))
        rdm = thermal_rdm(s6, 0.6, [2, 3])
        ref = _einsum_partial_trace(g, 6, [1, 2])
        checks.append(("thermal_rdm_n6", float(np.abs(rdm - ref).max()), 1e-10))

        # exact identity of the driven array
        worst = 0.0
        for m in range(2, 11):
            Hm = build_sqa(SqaParams(m))
            z = np.zeros(Hm.dim, dtype=complex)
            z[0] = 1
            worst = max(worst, abs(Hm.expectation(z)))
        checks.append(("sqa_z_plus_energy", worst, 1e-12))

        rows = [(name, float(value), tol, bool(value <= tol)) for name, value, tol in checks]
        table = Table(("check", "value", "tolerance", "passed"), rows, _header(spec, "validate", [f"seed {spec.seed}"]))
        return {"validation.csv": table}, {"all_passed": all(r[3] for r in rows)}, {}

    return _execute("validate", spec, compute, reuse)


RUNNERS = {
    "spectrum": run_spectrum,
    "tmi-dynamics": run_tmi_dynamics,
    "epsilon-sweep": run_epsilon_sweep,
    "thermalization": run_thermalization_diagnostics,
    "cusp-study": run_cusp_study,
    "validate": validate,
}
