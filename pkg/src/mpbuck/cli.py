"""Batch front door: scenario files in, traces and summaries out.

Subcommands:
    simulate   run one scenario, write trace.csv + metrics.json
    tune       optimize controller gains by PSO, write convergence.csv,
               best_gains.json and a validation trace of the winner
    stability  evaluate the reduced-model screen, write stability.json
    sweep      re-run tuned gains at scaled disturbances, write per-variant
               metrics plus a summary table

Scenario and PSO configuration are JSON with unit-suffixed keys (times in
microseconds); everything is converted to SI on load. Unknown keys are
rejected. Every output is written to a temp file and renamed into place, and
each run drops a run.json recording input hashes, seed and version for
reproducibility.

Exit codes: 0 success, 2 configuration error, 3 simulation divergence
(simulate only), 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .control import ControllerGains, gains_from_vector, gains_to_vector
from .converter import ConverterParams, LoadProfile, PlantState, load_resistance
from .errors import ConfigError, ParseError, ValidationError
from .optim import PsoConfig, Scenario, objective, pso_minimize, robustness_sweep
from .simulation import SimConfig, kernel_backend, simulate, write_trace_csv
from .stability import build_reduced_model, routh_hurwitz

__all__ = ["RunManifest", "load_scenario", "load_gains", "load_pso_config",
           "scenario_to_dict", "run", "main"]

_US = 1e-6
_DEFAULT_SWEEP_FACTORS = (1.0, 0.5, 0.1)


@dataclass(frozen=True)
class RunManifest:
    """One resolved CLI invocation."""

    command: str
    scenario_path: Path
    output_dir: Path
    pso_path: Path | None = None
    gains_path: Path | None = None
    seed_override: int | None = None
    sweep_factors: tuple[float, ...] = _DEFAULT_SWEEP_FACTORS
    quiet: bool = False


# ---------------------------------------------------------------------------
# JSON schema helpers

def _require_dict(obj, where):
    if not isinstance(obj, dict):
        raise ParseError(f"{where} must be a JSON object")
    return obj


def _check_keys(obj, allowed, where):
    for key in obj:
        if key not in allowed:
            raise ParseError(f"unknown key '{key}' in {where}")


def _number(obj, key, where, default=None, required=False):
    if key not in obj:
        if required:
            raise ParseError(f"missing key '{key}' in {where}")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"key '{key}' in {where} must be a number")
    return float(value)


def _integer(obj, key, where, default=None, required=False):
    if key not in obj:
        if required:
            raise ParseError(f"missing key '{key}' in {where}")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"key '{key}' in {where} must be an integer")
    return value


def _string(obj, key, where, default=None):
    if key not in obj:
        return default
    value = obj[key]
    if not isinstance(value, str):
        raise ParseError(f"key '{key}' in {where} must be a string")
    return value


def _load_json(path: Path):
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ParseError(f"file not found: {path}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") \
            from None


# ---------------------------------------------------------------------------
# Scenario / gains / PSO parsing

_GAINS_KEYS = ("k_p", "k_i", "k_d", "k_dd", "t_d", "t_dd", "u_ref")


def _parse_gains_obj(obj, where, u_ref):
    _require_dict(obj, where)
    _check_keys(obj, _GAINS_KEYS, where)
    fields = {k: _number(obj, k, where, required=True)
              for k in ("k_p", "k_i", "k_d", "k_dd", "t_d", "t_dd")}
    file_u_ref = _number(obj, "u_ref", where)
    if u_ref is None:
        if file_u_ref is None:
            raise ParseError(f"missing key 'u_ref' in {where}")
        u_ref = file_u_ref
    elif file_u_ref is not None and file_u_ref != u_ref:
        raise ParseError(f"'u_ref' in {where} conflicts with the scenario's "
                         "u_ref_V")
    return ControllerGains(u_ref=u_ref, **fields)


def _parse_scenario(data, where) -> tuple[Scenario, ControllerGains | None]:
    _require_dict(data, where)
    _check_keys(data, ("converter", "load", "sim", "limits", "u_ref_V", "gains"),
                where)

    conv = _require_dict(data.get("converter"), f"{where}.converter")
    _check_keys(conv, ("n_phases", "inductance_uH", "capacitance_uF",
                       "r_winding_ohm", "r_esr_ohm", "u_source_V",
                       "pwm_period_us"), f"{where}.converter")
    params = ConverterParams(
        n_phases=_integer(conv, "n_phases", f"{where}.converter", required=True),
        inductance=_number(conv, "inductance_uH", f"{where}.converter",
                           required=True) * _US,
        capacitance=_number(conv, "capacitance_uF", f"{where}.converter",
                            required=True) * _US,
        r_winding=_number(conv, "r_winding_ohm", f"{where}.converter",
                          required=True),
        r_esr=_number(conv, "r_esr_ohm", f"{where}.converter", required=True),
        u_source=_number(conv, "u_source_V", f"{where}.converter", required=True),
        pwm_period=_number(conv, "pwm_period_us", f"{where}.converter",
                           required=True) * _US,
    )

    load = _require_dict(data.get("load"), f"{where}.load")
    _check_keys(load, ("r_min_ohm", "segments"), f"{where}.load")
    raw_segments = load.get("segments")
    if not isinstance(raw_segments, list) or not raw_segments:
        raise ParseError(f"{where}.load.segments must be a non-empty list")
    segments = []
    for idx, seg in enumerate(raw_segments):
        seg_where = f"{where}.load.segments[{idx}]"
        _require_dict(seg, seg_where)
        _check_keys(seg, ("start_us", "resistance_ohm", "ramp_ohm_per_us"),
                    seg_where)
        segments.append((
            _number(seg, "start_us", seg_where, required=True) * _US,
            _number(seg, "resistance_ohm", seg_where, required=True),
            _number(seg, "ramp_ohm_per_us", seg_where, default=0.0) / _US,
        ))
    profile = LoadProfile(
        segments=tuple(segments),
        r_min=_number(load, "r_min_ohm", f"{where}.load", required=True),
    )

    u_ref = _number(data, "u_ref_V", where, required=True)

    sim_obj = _require_dict(data.get("sim"), f"{where}.sim")
    _check_keys(sim_obj, ("t_end_us", "steps_per_pwm_period", "record_decimation",
                          "initial_state", "second_derivative_source",
                          "balancing", "balancer_beta"), f"{where}.sim")
    init = sim_obj.get("initial_state", "zero")
    if isinstance(init, dict):
        init_where = f"{where}.sim.initial_state"
        _check_keys(init, ("phase_currents_A", "capacitor_voltage_V"), init_where)
        currents = init.get("phase_currents_A")
        if not isinstance(currents, list):
            raise ParseError(f"{init_where}.phase_currents_A must be a list")
        init = PlantState(
            phase_currents=np.asarray(currents, dtype=float),
            capacitor_voltage=_number(init, "capacitor_voltage_V", init_where,
                                      required=True),
        )
    elif not isinstance(init, str):
        raise ParseError(f"{where}.sim.initial_state must be a string or object")
    sim = SimConfig(
        t_end=_number(sim_obj, "t_end_us", f"{where}.sim", required=True) * _US,
        steps_per_pwm_period=_integer(sim_obj, "steps_per_pwm_period",
                                      f"{where}.sim", default=64),
        record_decimation=_integer(sim_obj, "record_decimation", f"{where}.sim",
                                   default=1),
        initial_state=init,
        second_derivative_source=_string(sim_obj, "second_derivative_source",
                                         f"{where}.sim", default="model_based"),
        balancing=_string(sim_obj, "balancing", f"{where}.sim",
                          default="arithmetic"),
        balancer_beta=_number(sim_obj, "balancer_beta", f"{where}.sim",
                              default=0.1),
    )

    limits = data.get("limits")
    if limits is None:
        u_min_limit, u_max_limit, epsilon = 0.95 * u_ref, 1.05 * u_ref, 1e-6
    else:
        _require_dict(limits, f"{where}.limits")
        _check_keys(limits, ("u_min_V", "u_max_V", "epsilon_V"), f"{where}.limits")
        u_min_limit = _number(limits, "u_min_V", f"{where}.limits", required=True)
        u_max_limit = _number(limits, "u_max_V", f"{where}.limits", required=True)
        epsilon = _number(limits, "epsilon_V", f"{where}.limits", default=1e-6)

    scenario = Scenario(params=params, profile=profile, sim=sim, u_ref=u_ref,
                        u_min_limit=u_min_limit, u_max_limit=u_max_limit,
                        epsilon=epsilon)
    gains = None
    if "gains" in data:
        gains = _parse_gains_obj(data["gains"], f"{where}.gains", u_ref)
    return scenario, gains


def load_scenario(path) -> Scenario:
    """Parse a scenario file, convert to SI and validate every invariant."""
    path = Path(path)
    scenario, _ = _parse_scenario(_load_json(path), path.name)
    return scenario


def load_scenario_with_gains(path) -> tuple[Scenario, ControllerGains | None]:
    """Like load_scenario but also return the embedded gains, if any."""
    path = Path(path)
    return _parse_scenario(_load_json(path), path.name)


def load_gains(path, u_ref: float | None = None) -> ControllerGains:
    """Parse a standalone gains file (the best_gains.json format)."""
    path = Path(path)
    return _parse_gains_obj(_load_json(path), path.name, u_ref)


def load_pso_config(path, seed_override: int | None = None) -> PsoConfig:
    """Parse a PSO configuration file."""
    path = Path(path)
    data = _require_dict(_load_json(path), path.name)
    where = path.name
    _check_keys(data, ("swarm_size", "max_iterations", "inertia", "cognitive",
                       "social", "velocity_clamp_fraction", "seed",
                       "x_min", "x_max", "freeze_t_d"), where)
    for key in ("x_min", "x_max"):
        if not isinstance(data.get(key), list) or len(data[key]) != 6:
            raise ParseError(f"key '{key}' in {where} must be a list of 6 numbers")
    freeze = data.get("freeze_t_d")
    if freeze is not None and (isinstance(freeze, bool)
                               or not isinstance(freeze, (int, float))):
        raise ParseError(f"key 'freeze_t_d' in {where} must be a number or null")
    seed = _integer(data, "seed", where, default=0)
    if seed_override is not None:
        seed = seed_override
    return PsoConfig(
        x_min=np.asarray(data["x_min"], dtype=float),
        x_max=np.asarray(data["x_max"], dtype=float),
        swarm_size=_integer(data, "swarm_size", where, default=16),
        max_iterations=_integer(data, "max_iterations", where, default=40),
        inertia=_number(data, "inertia", where, default=0.729),
        cognitive=_number(data, "cognitive", where, default=1.49445),
        social=_number(data, "social", where, default=1.49445),
        velocity_clamp_fraction=_number(data, "velocity_clamp_fraction", where,
                                        default=0.5),
        seed=seed,
        freeze_t_d=None if freeze is None else float(freeze),
    )


def scenario_to_dict(scenario: Scenario,
                     gains: ControllerGains | None = None) -> dict:
    """Serialize a Scenario back to the documented JSON schema."""
    init = scenario.sim.initial_state
    if isinstance(init, PlantState):
        init = {"phase_currents_A": [float(v) for v in init.phase_currents],
                "capacitor_voltage_V": init.capacitor_voltage}
    data = {
        "converter": {
            "n_phases": scenario.params.n_phases,
            "inductance_uH": scenario.params.inductance / _US,
            "capacitance_uF": scenario.params.capacitance / _US,
            "r_winding_ohm": scenario.params.r_winding,
            "r_esr_ohm": scenario.params.r_esr,
            "u_source_V": scenario.params.u_source,
            "pwm_period_us": scenario.params.pwm_period / _US,
        },
        "load": {
            "r_min_ohm": scenario.profile.r_min,
            "segments": [
                {"start_us": t / _US, "resistance_ohm": r,
                 "ramp_ohm_per_us": rate * _US}
                for t, r, rate in scenario.profile.segments
            ],
        },
        "sim": {
            "t_end_us": scenario.sim.t_end / _US,
            "steps_per_pwm_period": scenario.sim.steps_per_pwm_period,
            "record_decimation": scenario.sim.record_decimation,
            "initial_state": init,
            "second_derivative_source": scenario.sim.second_derivative_source,
            "balancing": scenario.sim.balancing,
            "balancer_beta": scenario.sim.balancer_beta,
        },
        "limits": {
            "u_min_V": scenario.u_min_limit,
            "u_max_V": scenario.u_max_limit,
            "epsilon_V": scenario.epsilon,
        },
        "u_ref_V": scenario.u_ref,
    }
    if gains is not None:
        data["gains"] = gains_to_json_dict(gains)
    return data


def gains_to_json_dict(gains: ControllerGains) -> dict:
    return {k: getattr(gains, k) for k in _GAINS_KEYS}


# ---------------------------------------------------------------------------
# Output helpers

def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_trace(path: Path, trace):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    os.close(fd)
    try:
        write_trace_csv(trace, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_run_record(manifest: RunManifest, seed):
    record = {
        "command": manifest.command,
        "scenario": str(manifest.scenario_path),
        "scenario_sha256": _sha256(manifest.scenario_path),
        "seed": seed,
        "version": __version__,
        "kernel": kernel_backend(),
    }
    if manifest.pso_path is not None:
        record["pso_sha256"] = _sha256(manifest.pso_path)
    if manifest.gains_path is not None:
        record["gains_sha256"] = _sha256(manifest.gains_path)
    _write_json(manifest.output_dir / "run.json", record)


def _say(manifest, message):
    if not manifest.quiet:
        print(message)


# ---------------------------------------------------------------------------
# Subcommands

def _resolve_gains(manifest, scenario, embedded) -> ControllerGains:
    if manifest.gains_path is not None:
        return load_gains(manifest.gains_path, scenario.u_ref)
    if embedded is not None:
        return embedded
    raise ConfigError("no controller gains: embed a 'gains' object in the "
                      "scenario or pass --gains")


def _cmd_simulate(manifest: RunManifest) -> int:
    scenario, embedded = load_scenario_with_gains(manifest.scenario_path)
    gains = _resolve_gains(manifest, scenario, embedded)
    trace, metrics = simulate(
        scenario.params, gains, scenario.profile, scenario.sim,
        u_min_limit=scenario.u_min_limit, u_max_limit=scenario.u_max_limit,
        epsilon=scenario.epsilon,
    )
    _write_trace(manifest.output_dir / "trace.csv", trace)
    _write_json(manifest.output_dir / "metrics.json", metrics.to_dict())
    _write_run_record(manifest, manifest.seed_override)
    _say(manifest, f"simulate: {len(trace)} samples, outage "
                   f"{metrics.outage:.6g} V, sigma(e) {metrics.error_stddev:.6g} V")
    if metrics.diverged:
        _say(manifest, "simulate: run diverged")
        return 3
    return 0


def _cmd_tune(manifest: RunManifest) -> int:
    scenario, _ = load_scenario_with_gains(manifest.scenario_path)
    if manifest.pso_path is None:
        raise ConfigError("tune requires --pso")
    pso = load_pso_config(manifest.pso_path, manifest.seed_override)

    def fn(vec, _scenario=scenario):
        return objective(vec, _scenario)

    best_x, best_value, history = pso_minimize(fn, pso)
    if not manifest.quiet:
        for it in range(len(history)):
            print(f"iteration {it:3d}  best {history[it, 0]:.6f}")

    lines = ["iteration,best_value,k_p,k_d,k_dd,k_i,t_d,t_dd"]
    for it in range(len(history)):
        lines.append(",".join([str(it)] + [repr(float(v))
                                           for v in history[it]]))
    _atomic_write(manifest.output_dir / "convergence.csv",
                  "\n".join(lines) + "\n")

    gains = gains_from_vector(best_x, scenario.u_ref)
    _write_json(manifest.output_dir / "best_gains.json",
                gains_to_json_dict(gains))

    trace, metrics = simulate(
        scenario.params, gains, scenario.profile, scenario.sim,
        u_min_limit=scenario.u_min_limit, u_max_limit=scenario.u_max_limit,
        epsilon=scenario.epsilon,
    )
    _write_trace(manifest.output_dir / "trace.csv", trace)
    _write_json(manifest.output_dir / "metrics.json", metrics.to_dict())
    _write_run_record(manifest, pso.seed)
    _say(manifest, f"tune: best objective {best_value:.6f}, outage "
                   f"{metrics.outage:.6g} V")
    return 0


def _cmd_stability(manifest: RunManifest) -> int:
    scenario, _ = load_scenario_with_gains(manifest.scenario_path)
    r0 = load_resistance(scenario.profile, 0.0)
    report = routh_hurwitz(build_reduced_model(scenario.params, r0))
    _write_json(manifest.output_dir / "stability.json", report.to_dict())
    _write_run_record(manifest, manifest.seed_override)
    verdict = "stable" if report.routh_hurwitz_stable else "unstable"
    _say(manifest, f"stability: {verdict} at r_load={r0:.6g} ohm "
                   f"(agreement={report.agreement})")
    return 0


def _cmd_sweep(manifest: RunManifest) -> int:
    scenario, embedded = load_scenario_with_gains(manifest.scenario_path)
    gains = _resolve_gains(manifest, scenario, embedded)
    results = robustness_sweep(gains_to_vector(gains), scenario,
                               manifest.sweep_factors)
    rows = ["kind,factor,u_min_V,u_max_V,error_stddev_V,outage_V,settled,"
            "phase_current_spread_final_A,diverged"]
    for res in results:
        m = res.metrics
        _write_json(manifest.output_dir / f"sweep_{res.kind}_{res.factor:g}.json",
                    m.to_dict())
        rows.append(",".join([res.kind, repr(res.factor), repr(m.u_min),
                              repr(m.u_max), repr(m.error_stddev),
                              repr(m.outage), str(m.settled).lower(),
                              repr(m.phase_current_spread_final),
                              str(m.diverged).lower()]))
    _atomic_write(manifest.output_dir / "sweep_summary.csv",
                  "\n".join(rows) + "\n")
    _write_run_record(manifest, manifest.seed_override)
    worst = max(res.metrics.outage for res in results)
    _say(manifest, f"sweep: {len(results)} variants, worst outage {worst:.6g} V")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "tune": _cmd_tune,
    "stability": _cmd_stability,
    "sweep": _cmd_sweep,
}


def run(manifest: RunManifest) -> int:
    """Execute one manifest; returns the process exit status."""
    try:
        manifest.output_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[manifest.command](manifest)
    except (ParseError, ValidationError, ConfigError) as exc:
        _emit_error(2, exc)
        return 2
    except OSError as exc:
        _emit_error(4, exc)
        return 4


def _emit_error(code: int, exc: Exception):
    print(json.dumps({"error": {"code": code, "type": type(exc).__name__,
                                "message": str(exc)}}))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpbuck",
        description="Multiphase buck converter simulation and tuning toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "run one closed-loop scenario"),
        ("tune", "optimize controller gains with PSO"),
        ("stability", "reduced-model stability screen"),
        ("sweep", "robustness sweep at scaled disturbances"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured RNG seed")
        p.add_argument("--quiet", action="store_true",
                       help="suppress progress output")
        if name == "tune":
            p.add_argument("--pso", required=True, help="PSO config JSON file")
        if name in ("simulate", "sweep"):
            p.add_argument("--gains", default=None,
                           help="gains JSON file (overrides scenario gains)")
        if name == "sweep":
            p.add_argument("--factors", default="1,0.5,0.1",
                           help="comma-separated disturbance scale factors")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    factors = _DEFAULT_SWEEP_FACTORS
    if getattr(args, "factors", None):
        try:
            factors = tuple(float(f) for f in args.factors.split(","))
        except ValueError:
            _emit_error(2, ConfigError(f"bad --factors value: {args.factors}"))
            return 2
    manifest = RunManifest(
        command=args.command,
        scenario_path=Path(args.scenario),
        output_dir=Path(args.out),
        pso_path=Path(args.pso) if getattr(args, "pso", None) else None,
        gains_path=Path(args.gains) if getattr(args, "gains", None) else None,
        seed_override=args.seed,
        sweep_factors=factors,
        quiet=args.quiet,
    )
    return run(manifest)


if __name__ == "__main__":
    sys.exit(main())
