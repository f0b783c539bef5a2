"""``polyodmr`` command line: simulate, fit, sensitivity, thermometry, calibrate, invert.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or usage,
3 a fit or inversion did not converge (best-so-far report is still written).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config
from .dynamics import cw_sweep, fid_signal
from .ensemble import build_ensemble
from .errors import FitConvergenceError, InvalidInputError, NoConfidentEstimateError
from .inversion import CalibrationTable, GridSpec, SimOptions, band_peaks, build_calibration, invert_field
from .io import manifest, read_features, read_spectrum_csv, write_json, write_spectrum_csv
from .metrics import LatticeTable, SensitivityInputs, ThermometryParams, sensitivity, zfs_shift
from .spectrum import Spectrum, fft_spectrum, fit_peaks

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_UNCONVERGED = 0, 1, 2, 3
FREQ_DIGITS = 6
FIELD_DIGITS = 4


class _Run:
    """Tracks written files so a failed command leaves nothing behind."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.written: dict[str, Path] = {}

    def path(self, name: str) -> Path:
        return self.out / name

    def record(self, key: str, path: Path) -> Path:
        self.written[key] = path
        return path

    def rollback(self):
        for p in self.written.values():
            p.unlink(missing_ok=True)


def _load_config(args) -> RunConfig:
    cfg = parse_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _peaks_report(peaks, converged: bool, extra: dict | None = None) -> dict:
    rep = {"converged": converged, "peaks": [pk.as_dict() for pk in peaks]}
    if len(peaks) == 2:
        rep["splitting_mhz"] = abs(peaks[1].center_mhz - peaks[0].center_mhz)
    rep.update(extra or {})
    return rep


def _fit(s: Spectrum, n_peaks: int, shape: str, center_mhz: float | None, band_mhz: float | None):
    if n_peaks == 2 and center_mhz is not None:
        return band_peaks(s, center_mhz, band_mhz or float(np.ptp(s.freqs_mhz)), shape)
    if s.kind == "odmr-contrast":
        s = Spectrum(s.freqs_mhz, np.abs(s.values), s.kind, s.metadata)
    return fit_peaks(s, n_peaks, shape)


def simulated_spectrum(cfg: RunConfig) -> Spectrum:
    ens = build_ensemble(cfg.ensemble)
    sim, drive = cfg.simulation, cfg.drive
    if sim.mode == "fid":
        traj = fid_signal(ens, cfg.spin, cfg.field.vector, sim.t_max_us, sim.dt_us, drive.axis)
        s = fft_spectrum(traj, sim.window, sim.zero_pad)
        return s.crop(*drive.window)
    return cw_sweep(ens, cfg.spin, cfg.field.vector, drive.b_mw_mt, drive.omega_grid(), sim.settle_time_us,
                    sim.avg_window_us, sim.dt_us, sim.beta_pl, drive.axis)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    run = _Run(args.out)
    code = EXIT_OK
    try:
        s = simulated_spectrum(cfg)
        run.record("spectrum", write_spectrum_csv(run.path(cfg.outputs.spectrum), s))
        sim = cfg.simulation
        try:
            peaks = _fit(s, sim.n_peaks, sim.fit_shape, cfg.spin.d_mhz, None)
            rep = _peaks_report(peaks, True)
        except FitConvergenceError as exc:
            rep = _peaks_report(exc.best or [], False, {"error": str(exc)})
            code = EXIT_UNCONVERGED
        rep["spectrum_kind"] = s.kind
        rep["resolution_mhz"] = s.resolution_mhz
        run.record("peaks", write_json(run.path(cfg.outputs.peaks), rep, FREQ_DIGITS))
        write_json(run.path(cfg.outputs.manifest),
                   manifest("simulate", cfg.to_dict(), run.written, seed=cfg.ensemble.seed))
    except BaseException:
        run.rollback()
        raise
    _print_peaks(rep)
    return code


def _print_peaks(rep):
    for pk in rep["peaks"]:
        print(f"peak {pk['center_mhz']:.6f} MHz  fwhm {pk['fwhm_mhz']:.6f} MHz")
    if "splitting_mhz" in rep:
        print(f"splitting {rep['splitting_mhz']:.6f} MHz")
    if not rep["converged"]:
        print("fit did not converge", file=sys.stderr)


def cmd_fit(args) -> int:
    s = read_spectrum_csv(args.spectrum)
    run = _Run(args.out)
    code = EXIT_OK
    try:
        try:
            peaks = _fit(s, args.n_peaks, args.shape, args.center, args.band)
            rep = _peaks_report(peaks, True)
        except FitConvergenceError as exc:
            rep = _peaks_report(exc.best or [], False, {"error": str(exc)})
            code = EXIT_UNCONVERGED
        run.record("peaks", write_json(run.path(args.output), rep, FREQ_DIGITS))
        opts = {"n_peaks": args.n_peaks, "shape": args.shape, "center": args.center, "band": args.band}
        write_json(run.path("manifest.json"), manifest("fit", opts, run.written, {"spectrum": args.spectrum}))
    except BaseException:
        run.rollback()
        raise
    _print_peaks(rep)
    return code


def cmd_sensitivity(args) -> int:
    inp = SensitivityInputs(args.p_f, args.linewidth, args.contrast, args.rate)
    eta = sensitivity(inp, args.g)
    print(f"{eta:.6f} uT/sqrt(Hz)")
    if args.out:
        run = _Run(args.out)
        rep = {"inputs": {"p_f": args.p_f, "linewidth_mhz": args.linewidth, "contrast": args.contrast,
                          "count_rate_hz": args.rate, "g_factor": args.g},
               "sensitivity_ut_per_sqrt_hz": eta}
        try:
            run.record("report", write_json(run.path("sensitivity.json"), rep, FREQ_DIGITS))
            write_json(run.path("manifest.json"), manifest("sensitivity", rep["inputs"], run.written))
        except BaseException:
            run.rollback()
            raise
    return EXIT_OK


def cmd_thermometry(args) -> int:
    table = LatticeTable.from_csv(args.lattice)
    m = {"theta_a_ghz": args.theta_a, "d300_mhz": args.d300}
    m["theta_b_ghz" if args.theta_b is not None else "theta_c_ghz"] = (
        args.theta_b if args.theta_b is not None else args.theta_c)
    params = ThermometryParams.from_mapping(m)
    temps = args.temperature
    rows = []
    for t in temps:
        shift, d_t = zfs_shift(params, table, t)
        eta_a, eta_c = table.strains(t)
        rows.append({"temperature_k": t, "eta_a": eta_a, "eta_c": eta_c, "delta_d_mhz": shift, "d_mhz": d_t})
        print(f"T={t:g} K  dD={shift:.6f} MHz  D={d_t:.6f} MHz")
    run = _Run(args.out)
    try:
        opts = {"theta_a_ghz": params.theta_a_ghz, "theta_c_ghz": params.theta_c_ghz,
                "d300_mhz": params.d300_mhz, "temperatures_k": list(temps)}
        run.record("report", write_json(run.path("thermometry.json"),
                                        {"params": opts, "uncertainties_ghz": params.uncertainties_ghz,
                                         "results": rows}, FREQ_DIGITS))
        write_json(run.path("manifest.json"), manifest("thermometry", opts, run.written, {"lattice": args.lattice}))
    except BaseException:
        run.rollback()
        raise
    return EXIT_OK


def _sim_options(cfg: RunConfig) -> SimOptions:
    sim = cfg.simulation
    return SimOptions(mode=sim.mode, excitation=cfg.calibration.excitation, t_max_us=sim.t_max_us,
                      dt_us=sim.dt_us, window=sim.window, zero_pad=sim.zero_pad, band_mhz=cfg.calibration.band_mhz,
                      drive_amplitude_mt=cfg.drive.b_mw_mt, omega_step_mhz=cfg.drive.omega_step_mhz,
                      settle_time_us=sim.settle_time_us, avg_window_us=sim.avg_window_us, beta=sim.beta_pl)


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    c = cfg.calibration
    grid = GridSpec.regular(c.b_max_mt, c.b_step_mt, c.theta_step_deg, c.phi_step_deg)
    ens = build_ensemble(cfg.ensemble)

    def progress(i, n):
        if args.progress and (i == n or i % 50 == 0):
            print(f"cell {i}/{n}", file=sys.stderr)

    extra = {"seed": cfg.ensemble.seed, "n_random": cfg.ensemble.n_random, "n_aligned": cfg.ensemble.n_aligned,
             "aligned_azimuth": cfg.ensemble.aligned_azimuth}
    table = build_calibration(ens, cfg.spin, grid, _sim_options(cfg), extra, progress)
    run = _Run(args.out)
    try:
        p = run.path(cfg.outputs.table)
        p.parent.mkdir(parents=True, exist_ok=True)
        from .io import atomic_write_text
        run.record("table", atomic_write_text(p, table.to_json()))
        write_json(run.path(cfg.outputs.manifest),
                   manifest("calibrate", cfg.to_dict(), run.written, seed=cfg.ensemble.seed))
    except BaseException:
        run.rollback()
        raise
    print(f"calibration table: {grid.shape} cells, {table.filled_fraction:.1%} filled")
    return EXIT_OK


def cmd_invert(args) -> int:
    cfg = _load_config(args)
    table = CalibrationTable.from_json(Path(args.table))
    obs = read_features(args.features)
    code = EXIT_OK
    try:
        est = invert_field(obs, table, max_residual_mhz=cfg.inversion.max_residual_mhz,
                           azimuth_tol_mhz=cfg.inversion.azimuth_tol_mhz)
        rep = {"confident": True, **est.as_dict()}
    except NoConfidentEstimateError as exc:
        rep = {"confident": False, "error": str(exc), **exc.best.as_dict()}
        code = EXIT_UNCONVERGED
    rep["observed_features_mhz"] = [round(float(x), FREQ_DIGITS) for x in obs]
    run = _Run(args.out)
    try:
        run.record("report", write_json(run.path(cfg.outputs.report), rep))
        inputs = {"table": args.table}
        if Path(args.features).is_file():
            inputs["features"] = args.features
        write_json(run.path(cfg.outputs.manifest), manifest("invert", cfg.to_dict(), run.written, inputs))
    except BaseException:
        run.rollback()
        raise
    b = rep["b_lab_mt"]
    print(f"B = ({b[0]:.4f}, {b[1]:.4f}, {b[2]:.4f}) mT  |B| = {rep['magnitude_mt']:.4f} mT  "
          f"residual {rep['residual_mhz']:.3g} MHz")
    deg = rep["degeneracy"]
    if deg["direction_indeterminate"]:
        print("direction indeterminate (|B| below grid resolution)")
    elif deg["azimuth_indeterminate"]:
        print("azimuth indeterminate; sign of B indeterminate")
    else:
        print("sign of B indeterminate")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polyodmr", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON or TOML run config (default: $POLYODMR_CONFIG)")
        p.add_argument("--seed", type=int, help="override ensemble.seed")
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("simulate", help="simulate an ensemble spectrum and fit its peaks")
    with_config(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit peaks in a spectrum CSV")
    p.add_argument("spectrum")
    p.add_argument("--n-peaks", type=int, default=2)
    p.add_argument("--shape", choices=("lorentzian", "gaussian"), default="lorentzian")
    p.add_argument("--center", type=float, help="fit one peak either side of this frequency (n-peaks 2)")
    p.add_argument("--band", type=float, help="half-width of the band around --center, MHz")
    p.add_argument("--out", default=".")
    p.add_argument("--output", default="fit.json", help="report file name inside --out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sensitivity", help="shot-noise-limited magnetic sensitivity")
    p.add_argument("--p-f", type=float, default=0.7)
    p.add_argument("--linewidth", type=float, default=110.0, help="MHz")
    p.add_argument("--contrast", type=float, default=0.019)
    p.add_argument("--rate", type=float, default=516000.0, help="photon count rate, 1/s")
    p.add_argument("--g", type=float, default=2.0)
    p.add_argument("--out", help="write sensitivity.json + manifest here")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("thermometry", help="ZFS shift from lattice thermal strain")
    p.add_argument("lattice", help="CSV temperature_k,a_angstrom,c_angstrom")
    p.add_argument("--temperature", type=float, nargs="+", required=True, help="K")
    p.add_argument("--theta-a", type=float, default=-81.0, help="GHz")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--theta-c", type=float, default=-24.5, help="GHz")
    g.add_argument("--theta-b", type=float, help="alias of --theta-c")
    p.add_argument("--d300", type=float, default=3480.0, help="MHz")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_thermometry)

    p = sub.add_parser("calibrate", help="tabulate peak features over field magnitude and direction")
    with_config(p)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("invert", help="estimate the field vector from peak centres")
    p.add_argument("features", help="comma-separated MHz values, peak JSON or one-column CSV")
    p.add_argument("table", help="calibration table JSON")
    with_config(p)
    p.set_defaults(func=cmd_invert)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
