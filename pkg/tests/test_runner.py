import json
import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scrambling.runner import (
    MANIFEST_NAME,
    ExperimentSpec,
    StateEntry,
    Table,
    emit_manifest,
    expand_grid,
    linear_fit,
    load_spec,
    read_csv,
    run_cusp_study,
    run_epsilon_sweep,
    run_spectrum,
    run_thermalization_diagnostics,
    run_tmi_dynamics,
    validate,
    verify_manifest,
    write_csv,
)


def small(tmp_path, **kw):
    base = dict(
        out=str(tmp_path / "out"),
        n=6,
        subset=(3, 4),
        t_end=20.0,
        window=(5.0, 20.0),
        late_time=5.0,
        sweep=({"family": "isotropic", "theta": [0.25, 0.5], "phi": [0.0, 0.5]},),
        gnuplot=False,
    )
    base.update(kw)
    return ExperimentSpec(**base)


def data_bytes(result):
    return {p.name: p.read_bytes() for p in sorted(result.directory.iterdir()) if p.name != MANIFEST_NAME}


@pytest.fixture(autouse=True)
def _isolated_cache(cache):
    yield


class TestSpec:
    def test_grid_expansion_inclusive(self):
        states = expand_grid({"theta": {"start": 0, "stop": 0.5, "step": 0.05}, "phi": 0.5})
        assert [s.theta for s in states] == pytest.approx(np.arange(11) * 0.05)

    def test_default_sweep_size(self):
        # 11 x 11 grid with the 11 theta=0 entries collapsed to one
        assert len(ExperimentSpec().all_states()) == 111

    def test_pole_ignores_phi(self):
        assert StateEntry("isotropic", 0.0, 0.7) == StateEntry("isotropic", 0.0, 0.0)

    @pytest.mark.parametrize(
        "bad",
        [
            {"theta": 1.2},
            {"theta": -0.1},
            {"theta": 0.5, "phi": 2.0},
            {"family": "ferro", "theta": 0.5},
        ],
    )
    def test_bad_states_rejected(self, bad):
        with pytest.raises(ValueError):
            StateEntry(**{"family": "isotropic", **bad})

    @pytest.mark.parametrize(
        "bad",
        [
            {"model": "heisenberg"},
            {"params": {"J": 1.0}, "model": "sqa"},
            {"n": 5, "states": [{"family": "neel", "theta": 0.2}]},
            {"window": (50.0, 300.0)},
            {"window": (20.0, 10.0)},
            {"workers": 0},
            {"log_base": 1.0},
        ],
    )
    def test_bad_specs_rejected(self, bad):
        with pytest.raises(ValueError):
            ExperimentSpec(**bad)

    def test_fingerprint_ignores_out_and_workers(self):
        a = ExperimentSpec()
        assert a.fingerprint == a.replace(out="elsewhere", workers=3).fingerprint
        assert a.fingerprint != a.replace(n=12).fingerprint
        assert a.fingerprint != a.replace(params={"h": 0.0}).fingerprint

    def test_full_scale(self):
        s = ExperimentSpec().full_scale()
        assert (s.n, s.t_end, s.window) == (14, 1000.0, (100.0, 1000.0))

    def test_yaml_round_trip(self, tmp_path):
        import yaml

        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump({"model": "sqa", "n": 8, "states": [{"family": "neel", "theta": 0.181}]}))
        s = load_spec(path)
        assert s.model == "sqa" and s.n == 8 and s.params == {"lam": 1.0, "omega": 1.0}
        assert s.run_states() == [StateEntry("neel", 0.181)]
        path.write_text("bogus: 1\n")
        with pytest.raises(ValueError):
            load_spec(path)


class TestCsv:
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
    def test_round_trip_to_12_digits(self, values):
        import tempfile

        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "x.csv")
            write_csv(path, Table(("i", "v"), list(enumerate(values)), ("hello",)))
            back = read_csv(path)
        assert back.comments == ("hello",)
        np.testing.assert_allclose(back.column("v"), values, rtol=1e-11, atol=0)

    def test_row_shape_checked(self):
        with pytest.raises(ValueError):
            Table(("a", "b"), [(1,)])


class TestManifest:
    def test_empty_run_is_valid(self, tmp_path):
        path = emit_manifest(tmp_path, ExperimentSpec(), [])
        assert verify_manifest(path) == []
        m = json.loads(path.read_text())
        assert m["files"] == [] and m["spec_fingerprint"] == ExperimentSpec().fingerprint

    def test_corruption_detected(self, tmp_path):
        r = run_spectrum(small(tmp_path))
        assert verify_manifest(r.directory) == []
        with open(r.directory / "dos.csv", "a") as f:
            f.write("0.5,1\n")
        assert verify_manifest(r.directory) == ["dos.csv: checksum mismatch"]
        (r.directory / "eigenvalues.csv").unlink()
        assert "eigenvalues.csv: missing" in verify_manifest(r.directory)

    def test_unreadable_manifest(self, tmp_path):
        assert verify_manifest(tmp_path)[0].startswith("cannot read manifest")


class TestRuns:
    def test_spectrum(self, tmp_path):
        r = run_spectrum(small(tmp_path))
        ev = r.tables["eigenvalues.csv"].column("energy")
        assert ev.size == 64 and np.all(np.diff(ev) >= 0)
        assert r.tables["dos.csv"].column("count").sum() == 64
        assert r.summary["e_min"] == pytest.approx(ev[0])

    def test_tmi_first_row_is_zero(self, tmp_path):
        spec = small(tmp_path, states=({"family": "neel", "theta": 0.181},))
        r = run_tmi_dynamics(spec)
        t = r.tables["tmi_neel_theta0.1810_phi0.0000.csv"]
        assert t.rows[0][0] == 0.0 and abs(t.rows[0][1]) <= 1e-10
        assert len(t) == 41
        assert r.tables["summary.csv"].rows[0][3] < 0

    def test_rerun_is_byte_identical(self, tmp_path):
        spec = small(tmp_path)
        first = data_bytes(run_epsilon_sweep(spec))
        second = data_bytes(run_epsilon_sweep(spec))
        assert first == second

    def test_workers_match_serial(self, tmp_path):
        serial = run_epsilon_sweep(small(tmp_path / "a"))
        parallel = run_epsilon_sweep(small(tmp_path / "b", workers=2))
        assert data_bytes(serial) == data_bytes(parallel)

    def test_reuse_skips_compute(self, tmp_path):
        spec = small(tmp_path)
        first = run_spectrum(spec)
        again = run_spectrum(spec, reuse=True)
        assert again.manifest == first.manifest
        assert again.tables["dos.csv"].rows == first.tables["dos.csv"].rows

    def test_sweep_columns_and_beta(self, tmp_path):
        r = run_epsilon_sweep(small(tmp_path))
        t = r.tables["sweep.csv"]
        assert t.columns == ("family", "theta_pi", "phi_pi", "eps", "beta", "beta_status", "I3_bar")
        assert len(t) == 4
        eps, beta = t.column("eps"), t.column("beta")
        # beta decreases with energy density
        order = np.argsort(eps)
        assert np.all(np.diff(beta[order]) < 1e-12)
        assert r.summary["min_I3"] == pytest.approx(t.column("I3_bar").min())

    def test_ground_state_row_has_no_beta(self, tmp_path):
        # without the transverse field |Z+> is the exact ground state
        spec = small(tmp_path, params={"g": 0.0}, sweep=({"theta": [0.0, 0.5]},))
        t = run_epsilon_sweep(spec).tables["sweep.csv"]
        assert len(t) == 2
        assert list(t.column("beta_status")) == ["no-finite-beta", "ok"]
        assert math.isnan(t.column("beta")[0]) and t.column("eps")[0] == pytest.approx(0.0, abs=1e-12)

    def test_thermalization(self, tmp_path):
        spec = small(tmp_path, model="sqa", states=({"family": "isotropic", "theta": 0.5, "phi": 1.369},))
        r = run_thermalization_diagnostics(spec)
        (name,) = [k for k in r.tables if k.startswith("thermalization_")]
        t = r.tables[name]
        assert t.columns == ("time", "dev_x", "dev_y", "dev_z", "d")
        d = t.column("d")
        assert np.all(d >= -1e-12) and np.all(np.abs(t.column("dev_x")) <= 2)
        # starts far from equilibrium, relaxes towards it
        assert d[0] > d[-10:].mean()

    def test_thermalization_subset_checked(self, tmp_path):
        with pytest.raises(ValueError):
            run_thermalization_diagnostics(small(tmp_path, subset=(5, 6, 7), n=4))

    def test_validate_passes(self, tmp_path):
        r = validate(small(tmp_path))
        failed = [row for row in r.tables["validation.csv"].rows if row[3] != "true" and row[3] is not True]
        assert r.summary["all_passed"], failed


class TestFailureHandling:
    def test_unwritable_directory_fails_before_compute(self, tmp_path, monkeypatch):
        import scrambling.runner as runner

        calls = []
        monkeypatch.setattr(runner, "_spectrum", lambda *a, **k: calls.append(1))
        blocker = tmp_path / "file"
        blocker.write_text("not a directory")
        with pytest.raises(OSError):
            run_spectrum(small(tmp_path, out=str(blocker / "sub")))
        assert calls == []

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
    def test_read_only_directory(self, tmp_path):
        ro = tmp_path / "ro"
        ro.mkdir()
        ro.chmod(0o500)
        try:
            with pytest.raises(OSError):
                run_spectrum(small(tmp_path, out=str(ro)))
        finally:
            ro.chmod(0o700)

    def test_failed_run_leaves_no_partial_outputs(self, tmp_path, monkeypatch):
        import scrambling.runner as runner

        def boom(*a, **k):
            raise RuntimeError("interrupted")

        monkeypatch.setattr(runner, "_tmi_series", boom)
        spec = small(tmp_path)
        with pytest.raises(RuntimeError):
            run_tmi_dynamics(spec)
        out = tmp_path / "out"
        leftovers = [p for p in out.rglob("*") if p.is_file()]
        assert leftovers == []
        assert not [p for p in out.iterdir() if p.name.startswith(".")]


class TestCusp:
    @staticmethod
    def kink(n):
        # single kink inside [t_relax, 20] at 0.5 n
        t = np.arange(0, 20, 0.05)
        return t, np.abs(np.sin((t - 0.5 * n) / 2))

    def test_injected_cusps_recovered(self, tmp_path):
        signal = self.kink

        spec = small(tmp_path, n_list=(8, 10, 12, 14), cusp_prominence=10.0, cusp_t_relax=2.0)
        r = run_cusp_study(spec, signal=signal)
        found = r.tables["cusp.csv"].column("t_cusp")
        np.testing.assert_allclose(found, [4, 5, 6, 7], atol=0.051)
        assert r.summary["slope"] == pytest.approx(0.5, abs=0.02)
        assert r.summary["r2"] > 0.999 and r.summary["strictly_increasing"]

    def test_missing_cusp_recorded(self, tmp_path):
        def signal(n):
            t = np.arange(0, 20, 0.05)
            return (t, np.sin(t / 4)) if n == 10 else self.kink(n)

        spec = small(tmp_path, n_list=(8, 10, 12), cusp_prominence=10.0, cusp_t_relax=2.0)
        r = run_cusp_study(spec, signal=signal)
        t = r.tables["cusp.csv"]
        assert len(t) == 3 and math.isnan(t.column("t_cusp")[1])
        assert r.summary["n_found"] == 2 and not r.summary["strictly_increasing"]

    def test_physical_small_chains(self, tmp_path):
        r = run_cusp_study(small(tmp_path, n_list=(6, 8)))
        t = r.tables["cusp.csv"].column("t_cusp")
        assert np.all(np.isfinite(t)) and t[1] > t[0]
        sx = r.tables["sigma_x_n8.csv"].column("sigma_x")
        assert sx[0] == pytest.approx(1.0)

    def test_linear_fit(self):
        fit = linear_fit(np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.0, 6.0]))
        assert fit["slope"] == pytest.approx(2.0) and fit["r2"] == pytest.approx(1.0)
        assert math.isnan(linear_fit(np.array([1.0]), np.array([1.0]))["slope"])


def test_sqa_downscaled_plateaus(tmp_path):
    """Near-infinite temperature scrambles more than the low-energy state."""
    spec = ExperimentSpec(
        out=str(tmp_path),
        model="sqa",
        n=10,
        t_end=100.0,
        window=(50.0, 100.0),
        states=(
            {"family": "isotropic", "theta": 0.5, "phi": 0.369},
            {"family": "isotropic", "theta": 0.5, "phi": 1.369},
        ),
        gnuplot=False,
    )
    rows = run_tmi_dynamics(spec).tables["summary.csv"]
    cold, hot = rows.column("I3_bar")
    assert hot < cold < 0
