"""Command-line front end.

Every subcommand writes plot-ready CSV files plus a JSON report into the
output directory. The JSON embeds the fully resolved configuration, so a run
can be repeated with ``--config <report>.json``. Configuration files may also
be TOML: top-level keys are global options, a table per subcommand holds its
options (flag names with dashes replaced by underscores).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analytic, cce, crystal, eseem, fitkit, relaxsim
from .hamiltonian import FieldConfig, GTensor, NuclearSpecies

log = logging.getLogger("erspin")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2
TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
GLOBAL_KEYS = ("seed", "out", "threads", "log_level")


class UserError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{self.prog}: {message}")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


# --------------------------------------------------------------------------
# small I/O helpers


def write_csv(path: Path, header, columns) -> None:
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.10e", encoding="utf-8")


def read_csv_columns(path, names=None, min_rows: int = 1):
    """Numeric columns of a headed CSV; errors name the offending row."""
    path = Path(path)
    if not path.is_file():
        raise UserError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise UserError(f"{path}: file is empty")
    header = [h.strip().lstrip("#").strip() for h in rows[0]]
    if names is None:
        names = header[:2]
    idx = []
    for n in names:
        if n not in header:
            raise UserError(f"{path}: column {n!r} not found in header {header}")
        idx.append(header.index(n))
    out = [[] for _ in names]
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) < len(header):
            raise UserError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        for k, i in enumerate(idx):
            try:
                out[k].append(float(row[i]))
            except ValueError:
                raise UserError(f"{path}: row {lineno}, column {names[k]!r}: cannot parse {row[i]!r}") from None
    if len(out[0]) < min_rows:
        raise UserError(f"{path}: needs at least {min_rows} data rows, found {len(out[0])}")
    return [np.array(c) for c in out]


def parse_time(text: str) -> float:
    text = text.strip()
    for unit in sorted(TIME_UNITS, key=len, reverse=True):
        if text.endswith(unit):
            number = text[: -len(unit)]
            try:
                return float(number) * TIME_UNITS[unit]
            except ValueError:
                break
    try:
        return float(text)
    except ValueError:
        raise UserError(f"cannot parse time {text!r} (units: s, ms, us, ns)") from None


def parse_freeze(text: str):
    """'T2n=27.2ms,xn=2.74' -> (0.0272, 2.74)."""
    fields = {}
    for part in text.split(","):
        if "=" not in part:
            raise UserError(f"--freeze entry {part!r} must look like key=value")
        k, v = part.split("=", 1)
        fields[k.strip().lower()] = v.strip()
    t_key = next((k for k in fields if k.startswith("t2")), None)
    x_key = next((k for k in fields if k.startswith("x")), None)
    if t_key is None or x_key is None or len(fields) != 2:
        raise UserError(f"--freeze {text!r} needs exactly one T2 and one x entry")
    t2 = parse_time(fields[t_key])
    try:
        x = float(fields[x_key])
    except ValueError:
        raise UserError(f"--freeze: cannot parse exponent {fields[x_key]!r}") from None
    if t2 <= 0 or x <= 0:
        raise UserError("--freeze: T2 and x must be positive")
    return t2, x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def emit(args, results: dict, files: list) -> dict:
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "config": resolved_config(args),
        "results": results,
        "files": sorted(str(f) for f in files),
    }
    text = json.dumps(_jsonable(report), sort_keys=True, indent=1, ensure_ascii=False)
    path = Path(args.out) / f"{args.command}.json"
    path.write_text(text + "\n", encoding="utf-8")
    print(text)
    return report


def resolved_config(args) -> dict:
    opts = {k: v for k, v in vars(args).items() if k not in GLOBAL_KEYS and k not in ("command", "config", "func")}
    return {
        **{k: getattr(args, k) for k in GLOBAL_KEYS},
        args.command: opts,
    }


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UserError(f"config file {path} not found")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".json":
            data = json.loads(text)
            data = data.get("config", data)
        else:
            data = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise UserError(f"{path}: {exc}") from None
    return data


# --------------------------------------------------------------------------
# shared builders


def _field(args) -> FieldConfig:
    return FieldConfig(B0=args.b0_mT * 1e-3, phi=args.phi_deg)


def _g(args) -> GTensor:
    return GTensor(g_perp=args.g_perp, g_par=args.g_par)


def _species(args) -> NuclearSpecies:
    return NuclearSpecies(gamma_mhz_per_t=args.gamma_MHz_per_T)


def _lattice(args) -> crystal.LatticeSpec:
    return crystal.LatticeSpec(a=args.a_nm, c=args.c_nm)


def _resonator(args) -> analytic.ResonatorParams:
    f0, qc, qi = analytic.RESONATORS[args.resonator]
    f0 = args.f0_GHz * 1e9 if args.f0_GHz is not None else f0
    qc = args.qc if args.qc is not None else qc
    qi = args.qi if args.qi is not None else qi
    return analytic.ResonatorParams.from_quality(f0, qc, qi)


def _add_spin_args(p, b0_mT: float = 67.0, phi: float = 46.5):
    p.add_argument("--b0-mT", type=float, default=b0_mT, help="static field magnitude (mT)")
    p.add_argument("--phi-deg", "--phi", type=float, default=phi, help="in-plane field angle from the a axis (deg)")
    p.add_argument("--g-perp", type=float, default=GTensor().g_perp, help="in-plane g factor")
    p.add_argument("--g-par", type=float, default=GTensor().g_par, help="g factor along c")


def _add_bath_args(p):
    p.add_argument("--mode", choices=("lattice", "amorphous"), default="lattice", help="bath geometry")
    p.add_argument("--radius-nm", type=float, default=11.0, help="bath radius (nm)")
    p.add_argument("--abundance", type=float, default=0.145, help="183W site occupation probability")
    p.add_argument("--a-nm", type=float, default=crystal.LatticeSpec().a, help="lattice constant a (nm)")
    p.add_argument("--c-nm", type=float, default=crystal.LatticeSpec().c, help="lattice constant c (nm)")
    p.add_argument("--gamma-MHz-per-T", type=float, default=NuclearSpecies().gamma_mhz_per_t,
                   help="nuclear gyromagnetic ratio (MHz/T)")


def _add_resonator_args(p, default: int = 3):
    p.add_argument("--resonator", type=int, choices=sorted(analytic.RESONATORS), default=default,
                   help="measured resonator to use (1: 7.025 GHz, 2: 7.508 GHz, 3: 7.881 GHz)")
    p.add_argument("--f0-GHz", type=float, default=None, help="override resonance frequency (GHz)")
    p.add_argument("--qc", type=float, default=None, help="override coupling quality factor")
    p.add_argument("--qi", type=float, default=None, help="override internal quality factor")


# --------------------------------------------------------------------------
# commands


def cmd_cce(args):
    settings = cce.CceSettings(
        order=args.order,
        pair_cutoff=args.cutoff_nm,
        tau_grid=tuple(cce.default_tau_grid(args.two_tau_max_ms * 1e-3, args.n_tau)),
        n_configurations=args.configs,
        seed=args.seed,
        workers=args.threads,
    )
    bath = crystal.BathSpec(abundance=args.abundance, radius=args.radius_nm, mode=args.mode, seed=args.seed)
    curve = cce.simulate(_lattice(args), bath, _g(args), _field(args), _species(args), settings)
    out = Path(args.out)
    files = [out / "coherence.csv"]
    curve.to_csv(files[0], per_config=args.per_config)
    results = {"metadata": curve.metadata, "fit": None}
    if np.min(curve.L) < 1.0 / math.e:
        try:
            fit = fitkit.fit_stretched(curve.two_tau, curve.L, seed=args.seed)
            results["fit"] = {"T2_s": fit.T2, "x": fit.x, "errors": fit.errors}
        except fitkit.FitError as exc:
            results["fit_error"] = str(exc)
    else:
        results["fit_note"] = "coherence stays above 1/e on the delay grid; no decay fit"
    return results, files


def cmd_bathgen(args):
    bath = crystal.BathSpec(abundance=args.abundance, radius=args.radius_nm, mode=args.mode, seed=args.seed)
    config = crystal.build_bath(_lattice(args), bath)
    path = Path(args.out) / "bath.json"
    config.save(path)
    return {"n_spins": len(config), "digest": config.digest(), "metadata": config.metadata}, [path]


def cmd_fit(args):
    names = [args.x_col, args.y_col] if args.x_col else None
    x, y = read_csv_columns(args.input_csv, names, min_rows=8)
    frozen = [parse_freeze(f) for f in args.freeze]
    fixed = None
    if args.fixed_x:
        fixed = []
        for item in args.fixed_x.split(","):
            item = item.strip().lower()
            try:
                fixed.append(None if item in ("", "none", "free") else float(item))
            except ValueError:
                raise UserError(f"--fixed-x: cannot parse {item!r}") from None
        if len(fixed) != args.components:
            raise UserError("--fixed-x needs one entry per free component")
    averaging = fitkit.AveragingModel(mode=args.averaging)
    fit = fitkit.fit_stretched(x, y, n_components=args.components, averaging=averaging,
                               frozen=frozen, fixed_x=fixed, seed=args.seed, n_starts=args.starts)
    path = Path(args.out) / "fit_curve.csv"
    write_csv(path, ["two_tau_s", "data", "model"], [x, y, fit.curve(x)])
    return fit.to_dict(), [path]


def cmd_eseem(args):
    species = _species(args)
    nuclei = eseem.default_nuclei(_lattice(args), args.radius_nm)
    kappa = args.kappa_kHz * 1e3
    pulse_bw = analytic.pulse_bandwidth(args.pulse_us * 1e-6) / analytic.TWO_PI
    params = eseem.EseemParams(
        nuclei=nuclei, field=_field(args), g=_g(args), species=species,
        filter_cutoff=eseem.filter_cutoff(kappa, pulse_bw), abundance=args.abundance,
    )
    dt = args.step_ns * 1e-9
    tau = eseem.default_tau(dt, args.span_us * 1e-6)
    raw = eseem.eseem_trace(params, tau)
    filt = eseem.apply_bandwidth_filter(raw, dt, kappa, pulse_bw)
    freq, amp_raw = eseem.spectrum(raw, dt)
    _, amp_filt = eseem.spectrum(filt, dt)
    out = Path(args.out)
    files = [out / "eseem_trace.csv", out / "eseem_spectrum.csv"]
    write_csv(files[0], ["tau_us", "V", "V_filtered"], [tau * 1e6, raw, filt])
    write_csv(files[1], ["freq_kHz", "amplitude", "amplitude_filtered"], [freq * 1e-3, amp_raw, amp_filt])
    wa, wb = eseem.nuclear_frequencies(params)
    return {
        "filter_cutoff_Hz": params.filter_cutoff,
        "n_nuclei": len(nuclei),
        "larmor_Hz": species.larmor(params.field) / analytic.TWO_PI,
        "nuclear_frequencies_Hz": [[a / analytic.TWO_PI, b / analytic.TWO_PI] for a, b in zip(wa, wb)],
    }, files


def cmd_stark(args):
    field = FieldConfig(B0=args.b0_mT * 1e-3, phi=0.0)
    g = _g(args)
    if args.fit:
        phi, gamma = read_csv_columns(args.fit, ["phi_deg", "gamma_Hz"], min_rows=4)
        model = analytic.fit_delta_Ec(phi, gamma, field, g, alpha=args.alpha_per_V_cm)
    else:
        model = analytic.StarkModel(alpha=args.alpha_per_V_cm, phi0=args.phi0_deg,
                                    gamma_min=args.gamma_min_MHz * 1e6, delta_Ec=args.delta_Ec_kV_cm * 1e3)
    phi = np.asarray(args.phi_deg, dtype=float)
    gamma = np.atleast_1d(analytic.stark_linewidth(model, field, g, phi))
    path = Path(args.out) / "stark.csv"
    write_csv(path, ["phi_deg", "gamma_Hz"], [phi, gamma])
    return {
        "model": {"alpha_per_V_cm": model.alpha, "phi0_deg": model.phi0,
                  "gamma_min_Hz": model.gamma_min, "delta_Ec_V_per_cm": model.delta_Ec},
        "linewidth_Hz": dict(zip([f"{p:g}" for p in phi], gamma.tolist())),
    }, [path]


def cmd_id(args):
    if args.bw_kHz is not None:
        bw = analytic.TWO_PI * args.bw_kHz * 1e3
    else:
        bw = analytic.excitation_bandwidth(analytic.TWO_PI * args.kappa_kHz * 1e3, args.pulse_us * 1e-6)
    rho = analytic.zero_spin_density(args.er_total_cm3, args.zero_spin_fraction)
    line = analytic.SpinLine(Gamma=analytic.TWO_PI * args.gamma_MHz * 1e6, rho=rho)
    from .hamiltonian import effective_g

    g_eff = effective_g(_g(args), _field(args))
    t2 = analytic.instantaneous_diffusion_T2(line, bw, g_eff, math.radians(args.theta2_deg))
    return {"T2_ID_s": t2, "bandwidth_Hz": bw / analytic.TWO_PI, "rho_m3": rho, "g_eff": g_eff}, []


def cmd_reflect(args):
    res = _resonator(args)
    line = analytic.SpinLine(omega_s=res.omega0 + analytic.TWO_PI * args.spin_detuning_MHz * 1e6,
                             Gamma=analytic.TWO_PI * args.gamma_MHz * 1e6)
    g_ens = analytic.TWO_PI * args.g_ens_kHz * 1e3
    span = analytic.TWO_PI * args.span_MHz * 1e6
    omega = res.omega0 + np.linspace(-span / 2, span / 2, args.points)
    r = analytic.reflection_coefficient(res, line, g_ens, omega)
    k_int = analytic.broadened_internal_loss(res, line, g_ens, omega)
    path = Path(args.out) / "reflection.csv"
    write_csv(path, ["freq_Hz", "re_r", "im_r", "abs_r", "kappa_int_eff_Hz"],
              [omega / analytic.TWO_PI, r.real, r.imag, np.abs(r), k_int / analytic.TWO_PI])
    return {"min_abs_r": float(np.min(np.abs(r))), "kappa_Hz": res.kappa / analytic.TWO_PI}, [path]


def cmd_gens(args):
    res = _resonator(args)
    if args.b1map:
        try:
            b1 = analytic.read_b1map(args.b1map, length_um=args.length_um)
        except (OSError, ValueError) as exc:
            raise UserError(f"{args.b1map}: {exc}") from None
    else:
        b1 = analytic.wire_b1map(res.omega0, width_um=args.width_um, z0=args.z0_ohm, length_um=args.length_um)
    g = _g(args)
    results = {"coupling_integral": analytic.coupling_integral(b1, g, args.delta_phi_deg)}
    if args.rho_cm3 is not None:
        g_ens = analytic.ensemble_coupling(b1, args.rho_cm3 * 1e6, g, args.delta_phi_deg)
        results["g_ens_Hz"] = g_ens / analytic.TWO_PI
    else:
        rho = analytic.concentration_from_coupling(b1, analytic.TWO_PI * args.g_ens_kHz * 1e3, g, args.delta_phi_deg)
        results["rho_cm3"] = rho * 1e-6
    return results, []


def cmd_t1sim(args):
    grid = relaxsim.paper_grid(args.wire, t1_sl=args.t1sl_s)
    dist = relaxsim.wire_distribution(grid, delta_phi=args.delta_phi_deg)
    dt = args.dt_us * 1e-6
    default = relaxsim.default_betas(grid, dt, args.n_beta)
    lo = args.beta_min if args.beta_min is not None else default[0]
    hi = args.beta_max if args.beta_max is not None else default[-1]
    if not 0 < lo < hi:
        raise UserError("need 0 < beta-min < beta-max")
    betas = np.geomspace(lo, hi, args.n_beta)
    beta, t1, flags = relaxsim.t1_vs_beta(grid, dist, betas, dt=dt, attenuation_db=args.atten_dB)
    out = Path(args.out)
    files = [out / "t1_vs_beta.csv", out / "coupling_hist.csv"]
    write_csv(files[0], ["beta_sqrt_photons_per_s", "T1_s"], [beta, t1])
    dist.to_csv(files[1])
    if len(flags) == len(beta):
        raise NumericalError("every T1 fit failed")
    return {"failed_fits": flags, "outside_g0_grid": relaxsim.outside_grid(grid, beta, dt, args.atten_dB),
            "kappa_Hz": grid.kappa / analytic.TWO_PI, "T1_max_s": float(np.nanmax(t1))}, files


def cmd_t1temp(args):
    omega0 = analytic.TWO_PI * args.f0_GHz * 1e9
    results = {}
    t1_0k = args.t1_0k_s
    if args.fit:
        temp, t1 = read_csv_columns(args.fit, ["T_K", "T1_s"], min_rows=2)
        t1_0k, err = analytic.fit_direct_phonon(temp, t1, omega0)
        results.update(T1_0K_s=t1_0k, T1_0K_err_s=err)
    temp = np.asarray(args.T_mK, dtype=float) * 1e-3
    t1 = np.atleast_1d(analytic.direct_phonon_T1(t1_0k, omega0, temp))
    path = Path(args.out) / "t1_temperature.csv"
    write_csv(path, ["T_K", "T1_s"], [temp, t1])
    results["T1_s"] = t1.tolist()
    return results, [path]


def cmd_anisotropy(args):
    if args.fit:
        phi, t1 = read_csv_columns(args.fit, ["phi_deg", "T1_s"], min_rows=4)
        a, b, phi1 = analytic.fit_t1_anisotropy(phi, t1)
    else:
        if args.A_per_s is None or args.B_per_s is None:
            raise UserError("anisotropy needs --A-per-s and --B-per-s, or --fit CSV")
        a, b, phi1 = args.A_per_s, args.B_per_s, args.phi1_deg
    phi = np.arange(0.0, 180.0 + 0.5, 1.0)
    t1 = analytic.t1_anisotropy(a, b, phi1, phi)
    path = Path(args.out) / "t1_anisotropy.csv"
    write_csv(path, ["phi_deg", "T1_s"], [phi, t1])
    return {"A_per_s": a, "B_per_s": b, "phi1_deg": phi1}, [path]


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="erspin", description=__doc__, formatter_class=_Formatter)
    p.add_argument("--config", default=None, help="TOML config or a previous JSON report")
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for cluster evaluation")
    p.add_argument("--log-level", default="WARNING", help="logging level")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_, **kw):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=_Formatter, **kw)
        sp.set_defaults(func=func)
        return sp

    sp = add("cce", cmd_cce, "Hahn-echo coherence from the cluster-correlation expansion")
    _add_spin_args(sp)
    _add_bath_args(sp)
    sp.add_argument("--order", type=int, choices=(1, 2, 3), default=2, help="CCE truncation order")
    sp.add_argument("--cutoff-nm", type=float, default=1.2, help="pair distance cutoff (nm)")
    sp.add_argument("--configs", type=int, default=1, help="number of random bath configurations")
    sp.add_argument("--two-tau-max-ms", type=float, default=50.0, help="largest echo delay 2 tau (ms)")
    sp.add_argument("--n-tau", type=int, default=60, help="number of delay points")
    sp.add_argument("--per-config", action="store_true", help="also write one column per configuration")

    sp = add("bathgen", cmd_bathgen, "Generate and save one bath configuration")
    _add_bath_args(sp)

    sp = add("fit", cmd_fit, "Stretched-exponential fit of an echo-decay CSV")
    sp.add_argument("input_csv", help="CSV with a header row")
    sp.add_argument("--x-col", default=None, help="delay column 2 tau in s (default: first column)")
    sp.add_argument("--y-col", default="L_mean", help="amplitude column (used with --x-col)")
    sp.add_argument("--averaging", choices=("phase_sensitive", "magnitude"), default="phase_sensitive",
                    help="how the echo amplitudes were averaged")
    sp.add_argument("--components", type=int, default=1, help="number of free decay components")
    sp.add_argument("--freeze", action="append", default=[],
                    help="frozen component, e.g. T2n=27.2ms,xn=2.74 (repeatable)")
    sp.add_argument("--fixed-x", default=None, help="comma list of fixed exponents per free component (none=free)")
    sp.add_argument("--starts", type=int, default=5, help="number of multi-start initial guesses")

    sp = add("eseem", cmd_eseem, "Echo envelope modulation from nearby 183W nuclei")
    _add_spin_args(sp)
    sp.add_argument("--radius-nm", type=float, default=1.0, help="include W sites within this radius (nm)")
    sp.add_argument("--abundance", type=float, default=0.145, help="183W site occupation for the ensemble average")
    sp.add_argument("--a-nm", type=float, default=crystal.LatticeSpec().a, help="lattice constant a (nm)")
    sp.add_argument("--c-nm", type=float, default=crystal.LatticeSpec().c, help="lattice constant c (nm)")
    sp.add_argument("--gamma-MHz-per-T", type=float, default=NuclearSpecies().gamma_mhz_per_t,
                    help="nuclear gyromagnetic ratio (MHz/T)")
    sp.add_argument("--kappa-kHz", type=float, default=270.0, help="resonator linewidth kappa/2pi (kHz)")
    sp.add_argument("--pulse-us", type=float, default=4.0, help="square pulse duration (us)")
    sp.add_argument("--step-ns", type=float, default=100.0, help="tau step (ns)")
    sp.add_argument("--span-us", type=float, default=300.0, help="largest tau (us)")

    sp = add("stark", cmd_stark, "Stark-broadened linewidth versus field angle")
    sp.add_argument("--phi-deg", "--phi", type=float, nargs="+", default=[31.0], help="field angles (deg)")
    sp.add_argument("--b0-mT", type=float, default=67.2, help="static field magnitude (mT)")
    sp.add_argument("--g-perp", type=float, default=GTensor().g_perp, help="in-plane g factor")
    sp.add_argument("--g-par", type=float, default=GTensor().g_par, help="g factor along c")
    sp.add_argument("--alpha-per-V-cm", type=float, default=analytic.StarkModel().alpha,
                    help="Stark coefficient ((V/cm)^-1)")
    sp.add_argument("--phi0-deg", type=float, default=analytic.StarkModel().phi0, help="Stark-free angle (deg)")
    sp.add_argument("--gamma-min-MHz", type=float, default=analytic.StarkModel().gamma_min / 1e6,
                    help="residual linewidth (MHz)")
    sp.add_argument("--delta-Ec-kV-cm", type=float, default=analytic.StarkModel().delta_Ec / 1e3,
                    help="electric-field spread (kV/cm)")
    sp.add_argument("--fit", default=None, help="CSV with phi_deg,gamma_Hz columns to fit instead")

    sp = add("id", cmd_id, "Instantaneous-diffusion T2")
    _add_spin_args(sp)
    sp.add_argument("--gamma-MHz", type=float, default=10.0, help="inhomogeneous linewidth FWHM (MHz)")
    sp.add_argument("--bw-kHz", type=float, default=None,
                    help="excitation bandwidth (kHz); default min(kappa, pulse bandwidth)")
    sp.add_argument("--kappa-kHz", type=float, default=350.0, help="resonator linewidth (kHz)")
    sp.add_argument("--pulse-us", type=float, default=4.0, help="pulse duration (us)")
    sp.add_argument("--er-total-cm3", type=float, default=0.7e13 / 0.77, help="total Er3+ density (cm^-3)")
    sp.add_argument("--zero-spin-fraction", type=float, default=0.77, help="fraction of zero-nuclear-spin Er isotopes")
    sp.add_argument("--theta2-deg", type=float, default=180.0, help="refocusing rotation angle (deg)")

    sp = add("reflect", cmd_reflect, "Resonator reflection with a coupled spin ensemble")
    _add_resonator_args(sp)
    sp.add_argument("--g-ens-kHz", type=float, default=140.0, help="ensemble coupling g_ens/2pi (kHz)")
    sp.add_argument("--gamma-MHz", type=float, default=10.0, help="spin linewidth FWHM (MHz)")
    sp.add_argument("--spin-detuning-MHz", type=float, default=0.0, help="spin line centre minus resonator (MHz)")
    sp.add_argument("--span-MHz", type=float, default=4.0, help="frequency span (MHz)")
    sp.add_argument("--points", type=int, default=801, help="number of frequency points")

    sp = add("gens", cmd_gens, "Ensemble coupling from Er density, or density from g_ens")
    _add_resonator_args(sp)
    sp.add_argument("--g-perp", type=float, default=GTensor().g_perp, help="in-plane g factor")
    sp.add_argument("--g-par", type=float, default=GTensor().g_par, help="g factor along c")
    sp.add_argument("--width-um", type=float, default=5.0, help="inductance wire width (um)")
    sp.add_argument("--length-um", type=float, default=630.0, help="inductance wire length (um)")
    sp.add_argument("--z0-ohm", type=float, default=40.0, help="resonator impedance (ohm)")
    sp.add_argument("--delta-phi-deg", type=float, default=21.0, help="field angle from the wire axis (deg)")
    sp.add_argument("--g-ens-kHz", type=float, default=140.0, help="measured g_ens/2pi (kHz)")
    sp.add_argument("--rho-cm3", type=float, default=None, help="Er density (cm^-3); computes g_ens instead")
    sp.add_argument("--b1map", default=None, help="CSV field map (y_um,z_um,B1x,B1y,B1z) instead of the wire model")

    sp = add("t1sim", cmd_t1sim, "Simulated T1 versus drive amplitude", aliases=["t1"])
    sp.add_argument("--beta-sweep", action="store_true", help="sweep beta (the only mode; accepted for clarity)")
    sp.add_argument("--wire", choices=sorted(relaxsim.WIRES), default="2um", help="inductance wire")
    sp.add_argument("--t1sl-s", type=float, default=4.8, help="spin-lattice T1 (s)")
    sp.add_argument("--dt-us", type=float, default=1.0, help="pulse duration (us)")
    sp.add_argument("--atten-dB", type=float, default=0.0, help="input line attenuation (dB)")
    sp.add_argument("--delta-phi-deg", type=float, default=21.0, help="field angle from the wire axis (deg)")
    sp.add_argument("--beta-min", type=float, default=None, help="smallest beta ((photons/s)^1/2); default selects g0 = 2x grid maximum")
    sp.add_argument("--beta-max", type=float, default=None, help="largest beta ((photons/s)^1/2); default selects g0 = 5x grid minimum")
    sp.add_argument("--n-beta", type=int, default=25, help="number of beta values")

    sp = add("t1temp", cmd_t1temp, "Direct-phonon T1 versus temperature")
    sp.add_argument("--t1-0k-s", type=float, default=4.8, help="zero-temperature T1 (s)")
    sp.add_argument("--f0-GHz", type=float, default=7.881, help="spin frequency (GHz)")
    sp.add_argument("--T-mK", type=float, nargs="+", default=[10.0, 50.0, 100.0, 200.0, 300.0, 400.0, 500.0],
                    help="temperatures (mK)")
    sp.add_argument("--fit", default=None, help="CSV with T_K,T1_s columns to fit T1_0K")

    sp = add("anisotropy", cmd_anisotropy, "T1 versus field angle, 1/T1 = A + B sin(4 phi + phi1)")
    sp.add_argument("--A-per-s", type=float, default=None, help="isotropic rate A (1/s)")
    sp.add_argument("--B-per-s", type=float, default=None, help="anisotropic rate B (1/s)")
    sp.add_argument("--phi1-deg", type=float, default=92.0, help="phase phi1 (deg)")
    sp.add_argument("--fit", default=None, help="CSV with phi_deg,T1_s columns to fit")
    return p


def _subparser(parser, command, all_choices: bool = False):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices if all_choices else action.choices.get(command)
    return None


def _apply_config(parser, argv, data: dict):
    """Install config-file values as defaults so explicit flags still win."""
    valid_global = {a.dest for a in parser._actions}
    for key, value in data.items():
        if isinstance(value, dict):
            sp = _subparser(parser, key)
            if sp is None:
                raise UserError(f"config: unknown section [{key}]")
            valid = {a.dest for a in sp._actions}
            for k in value:
                if k not in valid:
                    raise UserError(f"config: unknown field {key}.{k}")
            sp.set_defaults(**value)
        elif key in valid_global and key != "config":
            parser.set_defaults(**{key: value})
        else:
            raise UserError(f"config: unknown field {key}")


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config", default=None)
        known, _ = pre.parse_known_args(argv)
        if known.config:
            data = load_config(known.config)
            _apply_config(parser, argv, data)
            sections = [k for k, v in data.items() if isinstance(v, dict)]
            choices = _subparser(parser, None, all_choices=True)
            if len(sections) == 1 and not any(a in choices for a in argv):
                # a report or single-section config names its own command
                argv.append(sections[0])
        args = parser.parse_args(argv)
        if args.command == "t1":
            args.command = "t1sim"
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads < 1:
            raise UserError("--threads must be >= 1")
        Path(args.out).mkdir(parents=True, exist_ok=True)
        results, files = args.func(args)
        emit(args, results, files)
        return EXIT_OK
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (NumericalError, fitkit.FitError, analytic.IllConditionedFitError,
            np.linalg.LinAlgError, FloatingPointError, cce.StructureError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
