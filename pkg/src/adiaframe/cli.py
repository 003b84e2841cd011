"""Command line front end: JSON config in, CSV series and a JSON report out.

Scenario kinds:

* ``stern_gerlach``   beam splitting (branching, sampled, or mean-force)
* ``custom_family``   matrix-polynomial family, self-consistent or driven
* ``thermo_curve``    counting function, entropy, temperature, force identities
* ``kubo``            canonical friction tensor of the diabatic forces
* ``entropy_audit``   driven run with a projective event, entropy bookkeeping

Every run writes ``report.json`` (sorted keys, config digest, pass/fail
checks) plus scenario CSV files into --out.  Exit status: 0 when all checks
pass, 1 when any check fails, 2 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from .dynamics import (ApparatusState, DynamicsScenario, FrictionSpec,
                       QuantumState, run_branching, run_driven, run_mean_force,
                       time_averaged_diabatic_force, uniform_drive)
from .entropy import (ProjectorFamily, entropy_delta, entropy_series, project,
                      projected_diabatic_force, random_density_matrix,
                      von_neumann_entropy)
from .errors import AdiaframeError, ConfigError
from .families import MatrixPolynomialFamily
from .frames import build_frame
from .stern_gerlach import SternGerlachConfig, sg_run
from .thermo import entropy_temperature, kubo_friction, maxwell_check
from .tolerances import active_profile

_KINDS = ("stern_gerlach", "custom_family", "thermo_curve", "kubo", "entropy_audit")
_MODES = ("branching", "sampled", "mean_force")


# ---------------------------------------------------------------------------
# config parsing


def _err(message, field=None, line=None, column=None):
    raise ConfigError(message, field=field, line=line, column=column)


def _get(cfg: dict, field: str, types, *, default=None, required=False, where=""):
    path = f"{where}.{field}" if where else field
    if field not in cfg:
        if required:
            _err("missing required field", field=path)
        if default is not None:
            cfg[field] = default      # materialize defaults: parse is idempotent
        return default
    val = cfg[field]
    if types is not None and not isinstance(val, types):
        _err(f"expected {getattr(types, '__name__', types)}, got {type(val).__name__}",
             field=path)
    return val


def _number(cfg, field, *, where="", required=False, default=None, positive=False):
    val = _get(cfg, field, (int, float), required=required, default=default, where=where)
    if val is None:
        return None
    if isinstance(val, bool):
        _err("expected a number, got a boolean", field=f"{where}.{field}" if where else field)
    val = float(val)
    if positive and val <= 0.0:
        _err("must be positive", field=f"{where}.{field}" if where else field)
    return val


def _int(cfg, field, *, where="", required=False, default=None, minimum=None):
    val = _get(cfg, field, int, required=required, default=default, where=where)
    if val is None:
        return None
    if isinstance(val, bool):
        _err("expected an integer, got a boolean", field=f"{where}.{field}" if where else field)
    if minimum is not None and val < minimum:
        _err(f"must be >= {minimum}", field=f"{where}.{field}" if where else field)
    return int(val)


def _vector(cfg, field, *, where="", required=False, default=None, length=None):
    val = _get(cfg, field, list, required=required, default=default, where=where)
    if val is None:
        return None
    path = f"{where}.{field}" if where else field
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        _err("expected an array of numbers", field=path)
    if arr.ndim != 1:
        _err("expected a flat array", field=path)
    if length is not None and arr.shape[0] != length:
        _err(f"expected length {length}, got {arr.shape[0]}", field=path)
    return arr


def _complex_matrix(raw, path):
    """[[ [re, im], ... ], ...] -> complex ndarray."""
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        _err("matrix entries must be [re, im] pairs", field=path)
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        _err("expected a square matrix of [re, im] pairs", field=path)
    return arr[..., 0] + 1j * arr[..., 1]


def _check_keys(cfg: dict, allowed, where: str, strict: bool):
    unknown = sorted(set(cfg) - set(allowed))
    if not unknown:
        return
    label = where or "top level"
    if strict:
        _err(f"unknown field(s) {unknown} in {label}", field=unknown[0] if not where
             else f"{where}.{unknown[0]}")
    warnings.warn(f"ignoring unknown config field(s) {unknown} in {label}", stacklevel=3)


def parse_config(source, *, strict: bool = True) -> dict:
    """Validate a scenario config given as JSON text or a dict.

    Unknown fields raise in strict mode and warn otherwise; structural and
    type errors always raise :class:`ConfigError` naming the field (and the
    line/column for JSON syntax problems).
    """
    if isinstance(source, (bytes, str)):
        try:
            cfg = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno,
                              column=exc.colno) from None
    elif isinstance(source, dict):
        cfg = json.loads(json.dumps(source))
    else:
        _err(f"config must be a JSON object, got {type(source).__name__}")
    if not isinstance(cfg, dict):
        _err("config must be a JSON object")

    kind = _get(cfg, "kind", str, required=True)
    if kind not in _KINDS:
        _err(f"unknown kind {kind!r}; expected one of {list(_KINDS)}", field="kind")
    _int(cfg, "seed", minimum=0, default=0)

    top_allowed = {"kind", "seed"}
    if kind == "stern_gerlach":
        top_allowed |= {"mode", "stern_gerlach"}
        _validate_mode(cfg)
        _validate_sg(_get(cfg, "stern_gerlach", dict, default={}), strict)
    elif kind == "custom_family":
        top_allowed |= {"mode", "family", "apparatus", "state", "friction", "run",
                        "drive", "velocity_scales", "n_samples"}
        _validate_mode(cfg)
        _int(cfg, "n_samples", minimum=1)
        fam_cfg = _get(cfg, "family", dict, required=True)
        coords, dim = _validate_family(fam_cfg, strict)
        if "drive" in cfg:
            _validate_drive(_get(cfg, "drive", dict, required=True), coords, strict)
            _validate_scales(cfg)
        else:
            _validate_apparatus(_get(cfg, "apparatus", dict, required=True), coords, strict)
            _validate_run(_get(cfg, "run", dict, required=True), strict)
            if "velocity_scales" in cfg:
                _err("velocity_scales requires a drive block", field="velocity_scales")
        _validate_state(_get(cfg, "state", dict, required=True), dim, strict)
        if "friction" in cfg:
            _validate_friction(_get(cfg, "friction", dict, required=True), coords, strict)
    elif kind == "thermo_curve":
        top_allowed |= {"family", "thermo"}
        fam_cfg = _get(cfg, "family", dict, required=True)
        coords, _ = _validate_family(fam_cfg, strict)
        _validate_thermo(_get(cfg, "thermo", dict, required=True), coords, strict)
    elif kind == "kubo":
        top_allowed |= {"family", "kubo"}
        fam_cfg = _get(cfg, "family", dict, required=True)
        coords, _ = _validate_family(fam_cfg, strict)
        _validate_kubo(_get(cfg, "kubo", dict, required=True), coords, strict)
    else:  # entropy_audit
        top_allowed |= {"family", "state", "drive", "event", "n_samples"}
        _int(cfg, "n_samples", minimum=1)
        fam_cfg = _get(cfg, "family", dict, required=True)
        coords, dim = _validate_family(fam_cfg, strict)
        _validate_state(_get(cfg, "state", dict, required=True), dim, strict)
        drive = _get(cfg, "drive", dict, required=True)
        _validate_drive(drive, coords, strict)
        _validate_event(_get(cfg, "event", dict, required=True), dim,
                        int(drive["steps"]), strict)

    _check_keys(cfg, top_allowed, "", strict)
    return cfg


def _validate_mode(cfg):
    mode = _get(cfg, "mode", str, default="branching")
    if mode not in _MODES:
        _err(f"unknown mode {mode!r}; expected one of {list(_MODES)}", field="mode")


def _validate_sg(sg: dict, strict):
    where = "stern_gerlach"
    _number(sg, "gamma", where=where, positive=True, default=1.0)
    _number(sg, "field_strength", where=where, default=1.0)
    _number(sg, "field_gradient", where=where, default=0.5)
    _number(sg, "mass", where=where, positive=True, default=1.0)
    _vector(sg, "r0", where=where, length=3)
    _vector(sg, "v0", where=where, length=3)
    _number(sg, "duration", where=where, positive=True, default=1.0)
    _int(sg, "steps", where=where, minimum=1, default=400)
    _int(sg, "record_every", where=where, minimum=1, default=1)
    _int(sg, "n_samples", where=where, minimum=1)
    if "amplitudes" in sg:
        amps = _get(sg, "amplitudes", list, where=where, required=True)
        if len(amps) != 2:
            _err("expected 2 amplitude pairs", field=f"{where}.amplitudes")
        _parse_amplitudes(amps, f"{where}.amplitudes")
    _check_keys(sg, {"gamma", "field_strength", "field_gradient", "mass", "r0", "v0",
                     "duration", "steps", "record_every", "n_samples", "amplitudes"},
                where, strict)


def _validate_family(fam: dict, strict):
    where = "family"
    coords = _int(fam, "coords", where=where, required=True, minimum=1)
    dim = _int(fam, "dim", where=where, required=True, minimum=1)
    terms = _get(fam, "terms", list, where=where, required=True)
    if not terms:
        _err("family needs at least one term", field=f"{where}.terms")
    for i, term in enumerate(terms):
        tw = f"{where}.terms[{i}]"
        if not isinstance(term, dict):
            _err("each term must be an object", field=tw)
        exps = _get(term, "exponents", list, where=tw, required=True)
        if len(exps) != coords or not all(isinstance(p, int) and not isinstance(p, bool)
                                          and p >= 0 for p in exps):
            _err(f"exponents must be {coords} nonnegative integers", field=f"{tw}.exponents")
        raw = _get(term, "matrix", list, where=tw, required=True)
        mat = _complex_matrix(raw, f"{tw}.matrix")
        if mat.shape != (dim, dim):
            _err(f"matrix must be {dim} x {dim}", field=f"{tw}.matrix")
        if np.abs(mat - mat.conj().T).max() > 1e-12 * max(1.0, np.abs(mat).max()):
            _err("matrix must be Hermitian", field=f"{tw}.matrix")
        _check_keys(term, {"exponents", "matrix"}, tw, strict)
    _check_keys(fam, {"coords", "dim", "terms"}, where, strict)
    return coords, dim


def _parse_amplitudes(raw, path):
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        _err("amplitudes must be [re, im] pairs", field=path)
    if arr.ndim != 2 or arr.shape[1] != 2:
        _err("amplitudes must be [re, im] pairs", field=path)
    c = arr[:, 0] + 1j * arr[:, 1]
    norm = float(np.vdot(c, c).real)
    if abs(norm - 1.0) > 1e-8:
        _err(f"amplitudes have norm {norm!r}, expected 1", field=path)
    return c


def _validate_state(state: dict, dim: int, strict):
    where = "state"
    given = [k for k in ("amplitudes", "populations", "random") if k in state]
    if len(given) != 1:
        _err("state needs exactly one of amplitudes, populations, random", field=where)
    if "amplitudes" in state:
        amps = _get(state, "amplitudes", list, where=where, required=True)
        if len(amps) != dim:
            _err(f"expected {dim} amplitude pairs", field=f"{where}.amplitudes")
        _parse_amplitudes(amps, f"{where}.amplitudes")
    elif "populations" in state:
        pops = _vector(state, "populations", where=where, required=True, length=dim)
        if np.any(pops < 0.0) or abs(pops.sum() - 1.0) > 1e-8:
            _err("populations must be nonnegative and sum to 1", field=f"{where}.populations")
    else:
        if state["random"] is not True:
            _err("random must be true when present", field=f"{where}.random")
    _check_keys(state, {"amplitudes", "populations", "random"}, where, strict)


def _validate_apparatus(app: dict, coords: int, strict):
    where = "apparatus"
    _vector(app, "x0", where=where, required=True, length=coords)
    _vector(app, "v0", where=where, required=True, length=coords)
    mass = app.get("mass", 1.0)
    if isinstance(mass, (int, float)) and not isinstance(mass, bool):
        if float(mass) <= 0.0:
            _err("must be positive", field=f"{where}.mass")
    elif isinstance(mass, list):
        arr = np.asarray(mass, dtype=float) if _is_numeric_nested(mass) else None
        if arr is None or arr.shape != (coords, coords):
            _err(f"mass matrix must be {coords} x {coords}", field=f"{where}.mass")
    else:
        _err("mass must be a number or a matrix", field=f"{where}.mass")
    _check_keys(app, {"x0", "v0", "mass"}, where, strict)


def _is_numeric_nested(obj):
    try:
        np.asarray(obj, dtype=float)
        return True
    except (TypeError, ValueError):
        return False


def _validate_friction(fr: dict, coords: int, strict):
    where = "friction"
    raw = _get(fr, "constant", list, where=where, required=True)
    if not _is_numeric_nested(raw):
        _err("friction matrix must be numeric", field=f"{where}.constant")
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (coords, coords):
        _err(f"friction matrix must be {coords} x {coords}", field=f"{where}.constant")
    _check_keys(fr, {"constant"}, where, strict)


def _validate_run(run: dict, strict):
    where = "run"
    _number(run, "duration", where=where, required=True, positive=True)
    _int(run, "steps", where=where, required=True, minimum=1)
    _int(run, "record_every", where=where, minimum=1, default=1)
    _check_keys(run, {"duration", "steps", "record_every"}, where, strict)


def _validate_drive(drive: dict, coords: int, strict):
    where = "drive"
    _vector(drive, "x0", where=where, required=True, length=coords)
    _vector(drive, "velocity", where=where, required=True, length=coords)
    _number(drive, "duration", where=where, required=True, positive=True)
    _int(drive, "steps", where=where, required=True, minimum=1)
    _int(drive, "record_every", where=where, minimum=1, default=1)
    _check_keys(drive, {"x0", "velocity", "duration", "steps", "record_every"},
                where, strict)


def _validate_scales(cfg):
    if "velocity_scales" not in cfg:
        return
    scales = _get(cfg, "velocity_scales", list, required=True)
    if len(scales) < 2:
        _err("need at least two velocity scales", field="velocity_scales")
    for i, s in enumerate(scales):
        if not isinstance(s, (int, float)) or isinstance(s, bool) or s <= 0.0:
            _err("scales must be positive numbers", field=f"velocity_scales[{i}]")


def _validate_thermo(th: dict, coords: int, strict):
    where = "thermo"
    _vector(th, "x", where=where, required=True, length=coords)
    _number(th, "sigma", where=where, required=True, positive=True)
    e_min = _number(th, "e_min", where=where, required=True)
    e_max = _number(th, "e_max", where=where, required=True)
    if e_max <= e_min:
        _err("e_max must exceed e_min", field=f"{where}.e_max")
    _int(th, "n_grid", where=where, minimum=3, default=401)
    _number(th, "check_energy", where=where)
    _number(th, "dx", where=where, positive=True, default=1e-4)
    _check_keys(th, {"x", "sigma", "e_min", "e_max", "n_grid", "check_energy", "dx"},
                where, strict)


def _validate_kubo(kb: dict, coords: int, strict):
    where = "kubo"
    _vector(kb, "x", where=where, required=True, length=coords)
    _number(kb, "beta", where=where, required=True)
    _number(kb, "eta", where=where, positive=True)
    _check_keys(kb, {"x", "beta", "eta"}, where, strict)


def _validate_event(ev: dict, dim: int, n_steps: int, strict):
    where = "event"
    step = _int(ev, "step", where=where, required=True, minimum=1)
    if step > n_steps:
        _err(f"event step {step} exceeds drive steps {n_steps}", field=f"{where}.step")
    blocks = _get(ev, "blocks", list, where=where)
    if blocks is not None:
        try:
            ProjectorFamily(dim=dim, blocks=tuple(tuple(b) for b in blocks))
        except (AdiaframeError, TypeError) as exc:
            _err(f"invalid blocks: {exc}", field=f"{where}.blocks")
    _check_keys(ev, {"step", "blocks"}, where, strict)


# ---------------------------------------------------------------------------
# builders


def _build_family(cfg) -> MatrixPolynomialFamily:
    fam = cfg["family"]
    terms = [(tuple(t["exponents"]), _complex_matrix(t["matrix"], "family.terms.matrix"))
             for t in fam["terms"]]
    return MatrixPolynomialFamily(terms)


def _build_state(cfg, dim: int, seed: int) -> QuantumState:
    state = cfg["state"]
    if "amplitudes" in state:
        return QuantumState.from_amplitudes(_parse_amplitudes(state["amplitudes"],
                                                              "state.amplitudes"))
    if "populations" in state:
        pops = np.asarray(state["populations"], dtype=float)
        return QuantumState(rho=np.diag(pops.astype(complex)))
    return QuantumState.from_rho(random_density_matrix(dim, np.random.default_rng(seed)))


def _build_friction(cfg) -> FrictionSpec | None:
    if "friction" not in cfg:
        return None
    return FrictionSpec.constant(np.asarray(cfg["friction"]["constant"], dtype=float))


# ---------------------------------------------------------------------------
# output helpers


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _trajectory_rows(traj):
    n = traj.x.shape[1]
    m = traj.rho.shape[1]
    header = (["t"] + [f"x_{i}" for i in range(n)] + [f"v_{i}" for i in range(n)]
              + [f"pop_{i}" for i in range(m)]
              + ["e_mean", "q_cum", "w_cum", "s_info"])
    pops = traj.populations
    s_info = entropy_series(traj.rho)
    rows = [
        [traj.t[i], *traj.x[i], *traj.v[i], *pops[i],
         traj.e_mean[i], traj.q_cum[i], traj.w_cum[i], s_info[i]]
        for i in range(traj.n_samples)
    ]
    return header, rows


def _check(name: str, passed: bool, value: float, tolerance: float) -> dict:
    return {"name": name, "passed": bool(passed), "value": float(value),
            "tolerance": float(tolerance)}


def _closure_check(name, ledger, prof) -> dict:
    res = abs(ledger.residual)
    tol = prof.ledger_closure * ledger.closure_scale(prof.ledger_floor)
    return _check(name, res <= tol, res, tol)


# ---------------------------------------------------------------------------
# scenario runners


def _run_stern_gerlach(cfg, seed, out_dir, prof):
    sg = cfg.get("stern_gerlach", {})
    config = SternGerlachConfig(
        gamma=sg.get("gamma", 1.0), field_strength=sg.get("field_strength", 1.0),
        field_gradient=sg.get("field_gradient", 0.5), mass=sg.get("mass", 1.0))
    state = None
    if "amplitudes" in sg:
        state = QuantumState.from_amplitudes(_parse_amplitudes(sg["amplitudes"],
                                                               "stern_gerlach.amplitudes"))
    mode = cfg.get("mode", "branching")
    kwargs = dict(state=state, duration=sg.get("duration", 1.0),
                  n_steps=sg.get("steps", 400), mode=mode,
                  record_every=sg.get("record_every", 1))
    if "r0" in sg:
        kwargs["r0"] = np.asarray(sg["r0"], dtype=float)
    if "v0" in sg:
        kwargs["v0"] = np.asarray(sg["v0"], dtype=float)
    if mode == "sampled":
        kwargs["n_samples"] = sg.get("n_samples", 1000)
        kwargs["seed"] = seed
    result = sg_run(config, **kwargs)

    checks, outputs, summary = [], [], {"mode": mode}
    if mode == "mean_force":
        traj = result.trajectories[0]
        header, rows = _trajectory_rows(traj)
        path = os.path.join(out_dir, "series.csv")
        _write_csv(path, header, rows)
        outputs.append("series.csv")
        checks.append(_closure_check("ledger_closure", traj.ledger, prof))
        summary["final_position"] = [float(c) for c in traj.x[-1]]
    else:
        for label, traj in zip(result.labels, result.trajectories):
            tag = "plus" if label == "+" else "minus"
            header, rows = _trajectory_rows(traj)
            name = f"series_branch_{tag}.csv"
            _write_csv(os.path.join(out_dir, name), header, rows)
            outputs.append(name)
            res = result.closure_residuals[label]
            tol = prof.branch_energy * max(1.0, abs(traj.extras["apparatus_energy"][0]))
            checks.append(_check(f"branch_energy_closure_{tag}", res <= tol, res, tol))
        wsum = float(np.sum([t.weight for t in result.trajectories]))
        checks.append(_check("weights_normalized", abs(wsum - 1.0) <= prof.amplitude_norm,
                             abs(wsum - 1.0), prof.amplitude_norm))
        summary["separation"] = result.separation
        summary["labels"] = list(result.labels)
        summary["weights"] = [float(w) for w in result.weights]
        if result.counts is not None:
            summary["counts"] = [int(c) for c in result.counts]
    return checks, outputs, summary


def _run_custom_family(cfg, seed, out_dir, prof):
    fam = _build_family(cfg)
    state = _build_state(cfg, fam.dim, seed)
    checks, outputs, summary = [], [], {}

    if "drive" in cfg:
        drive = cfg["drive"]
        path_fn = uniform_drive(np.asarray(drive["x0"], float),
                                np.asarray(drive["velocity"], float))
        traj = run_driven(fam, path_fn, state, drive["duration"], drive["steps"],
                          record_every=drive.get("record_every", 1))
        header, rows = _trajectory_rows(traj)
        _write_csv(os.path.join(out_dir, "series.csv"), header, rows)
        outputs.append("series.csv")
        checks.append(_closure_check("ledger_closure", traj.ledger, prof))
        tr_final = float(traj.populations[-1].sum())
        checks.append(_check("trace_preserved", abs(tr_final - 1.0) <= prof.trace,
                             abs(tr_final - 1.0), prof.trace))
        summary["mode"] = "driven"
        summary["final_populations"] = [float(p) for p in traj.populations[-1]]

        if "velocity_scales" in cfg:
            scales = sorted(float(s) for s in cfg["velocity_scales"])[::-1]
            averages = [time_averaged_diabatic_force(fam, path_fn, drive["duration"],
                                                     drive["steps"], state, scale=s)
                        for s in scales]
            _write_csv(os.path.join(out_dir, "oscillation_averaging.csv"),
                       ["scale"] + [f"mean_abs_f_{k}" for k in range(fam.n_coords)],
                       [[s, *a] for s, a in zip(scales, averages)])
            outputs.append("oscillation_averaging.csv")
            ratios = []
            for prev, nxt in zip(averages, averages[1:]):
                with np.errstate(divide="ignore", invalid="ignore"):
                    r = np.where(prev > 0.0, nxt / prev, 0.0)
                ratios.append(float(np.max(r)))
            worst = max(ratios)
            checks.append(_check("diabatic_average_decreasing", worst < 1.0, worst, 1.0))
            summary["velocity_scales"] = scales
            summary["averaged_diabatic_force"] = [[float(v) for v in a] for a in averages]
        return checks, outputs, summary

    app_cfg = cfg["apparatus"]
    mass = app_cfg.get("mass", 1.0)
    metric = float(mass) if isinstance(mass, (int, float)) else np.asarray(mass, float)
    app = ApparatusState(x=np.asarray(app_cfg["x0"], float),
                         v=np.asarray(app_cfg["v0"], float), metric=metric)
    run_cfg = cfg["run"]
    scenario = DynamicsScenario(family=fam, apparatus=app, state=state,
                                dt=run_cfg["duration"] / run_cfg["steps"],
                                n_steps=run_cfg["steps"],
                                friction=_build_friction(cfg),
                                record_every=run_cfg.get("record_every", 1))
    mode = cfg.get("mode", "branching")
    summary["mode"] = mode
    if mode == "mean_force":
        traj = run_mean_force(scenario)
        header, rows = _trajectory_rows(traj)
        _write_csv(os.path.join(out_dir, "series.csv"), header, rows)
        outputs.append("series.csv")
        checks.append(_closure_check("ledger_closure", traj.ledger, prof))
        summary["final_position"] = [float(c) for c in traj.x[-1]]
    else:
        trajs = run_branching(scenario)
        for traj in trajs:
            name = f"series_branch_{traj.branch_label}.csv"
            header, rows = _trajectory_rows(traj)
            _write_csv(os.path.join(out_dir, name), header, rows)
            outputs.append(name)
            e_app = traj.extras["apparatus_energy"]
            res = float(np.abs(e_app - e_app[0]).max())
            if scenario.friction is not None:
                res = float(np.abs((e_app + traj.extras["friction_heat"]) - e_app[0]).max())
            tol = prof.branch_energy * max(1.0, abs(float(e_app[0])))
            checks.append(_check(f"branch_energy_closure_{traj.branch_label}",
                                 res <= tol, res, tol))
        summary["weights"] = [float(t.weight) for t in trajs]
        if mode == "sampled":
            from .dynamics import sample_branch_counts
            counts = sample_branch_counts(state, cfg.get("n_samples", 1000), seed)
            summary["counts"] = [int(counts[t.branch_label]) for t in trajs]
    return checks, outputs, summary


def _run_thermo_curve(cfg, seed, out_dir, prof):
    fam = _build_family(cfg)
    th = cfg["thermo"]
    x = np.asarray(th["x"], dtype=float)
    frame = build_frame(fam, x)
    e_grid = np.linspace(th["e_min"], th["e_max"], th.get("n_grid", 401))
    curve = entropy_temperature(frame.eigenvalues, e_grid, th["sigma"])
    _write_csv(os.path.join(out_dir, "curve.csv"),
               ["e", "omega", "dos", "entropy", "temperature"],
               [[curve.e[i], curve.omega[i], curve.dos[i], curve.entropy[i],
                 curve.temperature[i]] for i in range(len(curve.e))
                if np.isfinite(curve.entropy[i]) and np.isfinite(curve.temperature[i])])
    outputs = ["curve.csv"]

    checks = []
    resid = float(curve.counting_identity_residual().max())
    checks.append(_check("counting_identity", resid <= prof.counting_identity,
                         resid, prof.counting_identity))
    summary = {"levels": [float(v) for v in frame.eigenvalues],
               "counting_identity_residual": resid}

    if th.get("check_energy") is not None:
        report = maxwell_check(fam, x, th["check_energy"], th["sigma"],
                               dx=th.get("dx", 1e-4))
        r1 = float(report.residual_entropy_form.max())
        r2 = float(report.residual_isentropic_form.max())
        checks.append(_check("force_entropy_identity", r1 <= prof.maxwell_identity,
                             r1, prof.maxwell_identity))
        checks.append(_check("force_isentropic_identity", r2 <= prof.maxwell_identity,
                             r2, prof.maxwell_identity))
        summary["shell_force"] = [float(v) for v in report.force]
    return checks, outputs, summary


def _run_kubo(cfg, seed, out_dir, prof):
    fam = _build_family(cfg)
    kb = cfg["kubo"]
    tensor = kubo_friction(fam, np.asarray(kb["x"], float), kb["beta"],
                           eta=kb.get("eta"))
    n = tensor.n_coords
    _write_csv(os.path.join(out_dir, "gamma.csv"),
               [f"g_{j}" for j in range(n)],
               [list(tensor.gamma[i]) for i in range(n)])
    scale = max(float(np.abs(tensor.gamma).max()), prof.friction_diagonal_floor)
    asym = float(np.abs(tensor.gamma - tensor.gamma.T).max()) / scale
    diag_min = float(tensor.gamma.diagonal().min())
    checks = [
        _check("friction_symmetric", asym <= prof.friction_symmetry, asym,
               prof.friction_symmetry),
        _check("friction_diagonal_nonnegative",
               diag_min >= -prof.friction_diagonal_floor * scale, diag_min,
               prof.friction_diagonal_floor * scale),
    ]
    summary = {"beta": tensor.beta, "eta": tensor.eta,
               "gamma": [[float(v) for v in row] for row in tensor.gamma]}
    return checks, ["gamma.csv"], summary


def _run_entropy_audit(cfg, seed, out_dir, prof):
    fam = _build_family(cfg)
    state = _build_state(cfg, fam.dim, seed)
    drive = cfg["drive"]
    ev = cfg["event"]
    blocks = ev.get("blocks")
    family_proj = (ProjectorFamily(dim=fam.dim, blocks=tuple(tuple(b) for b in blocks))
                   if blocks is not None
                   else ProjectorFamily.complete_dephasing(fam.dim))
    step = int(ev["step"])

    path_fn = uniform_drive(np.asarray(drive["x0"], float),
                            np.asarray(drive["velocity"], float))
    traj = run_driven(fam, path_fn, state, drive["duration"], drive["steps"],
                      record_every=drive.get("record_every", 1),
                      events={step: lambda st: project(st, family_proj)})

    s_series = entropy_series(traj.rho)
    _write_csv(os.path.join(out_dir, "entropy.csv"), ["t", "entropy"],
               [[traj.t[i], s_series[i]] for i in range(traj.n_samples)])

    event = traj.extras["events"][0]
    s_before = von_neumann_entropy(event["rho_before"])
    s_after = von_neumann_entropy(event["rho_after"])
    dt = drive["duration"] / drive["steps"]
    t_split = traj.t[0] + (step - 0.5) * dt
    pre = s_series[traj.t < t_split]
    drift_pre = float(np.abs(np.append(pre, s_before) - s_series[0]).max())
    post = s_series[traj.t > t_split]
    drift_post = float(np.abs(post - s_after).max()) if post.size else 0.0
    drift = max(drift_pre, drift_post)
    jump = s_after - s_before

    x_event = np.asarray(drive["x0"], float) + np.asarray(drive["velocity"], float) * (step * dt)
    frame_event = build_frame(fam, x_event)
    fproj = projected_diabatic_force(frame_event, event["rho_after"])
    fmax = float(np.abs(fproj).max())

    n_suite = cfg.get("n_samples", 1000)
    rng = np.random.default_rng(seed)
    worst = np.inf
    passes = 0
    for _ in range(n_suite):
        rho = random_density_matrix(fam.dim, rng=rng)
        _, _, ds = entropy_delta(rho)
        worst = min(worst, ds)
        passes += ds >= -prof.pinching_monotonicity

    checks = [
        _check("unitary_entropy_drift", drift <= prof.entropy_drift, drift,
               prof.entropy_drift),
        _check("projection_entropy_gain", jump >= -prof.pinching_monotonicity,
               jump, prof.pinching_monotonicity),
        _check("projected_force_zero", fmax <= prof.projected_force, fmax,
               prof.projected_force),
        _check("monotonicity_suite", passes == n_suite, worst,
               prof.pinching_monotonicity),
    ]
    summary = {"entropy_before": float(s_before), "entropy_after": float(s_after),
               "entropy_jump": float(jump), "event_step": step,
               "monotonicity_passes": int(passes),
               "monotonicity_samples": int(n_suite)}
    return checks, ["entropy.csv"], summary


_RUNNERS = {
    "stern_gerlach": _run_stern_gerlach,
    "custom_family": _run_custom_family,
    "thermo_curve": _run_thermo_curve,
    "kubo": _run_kubo,
    "entropy_audit": _run_entropy_audit,
}


# ---------------------------------------------------------------------------
# entry point


def _config_digest(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def run_scenario(cfg: dict, out_dir: str, seed: int | None = None) -> dict:
    """Execute a parsed config and write its outputs; returns the report."""
    prof = active_profile()
    kind = cfg["kind"]
    used_seed = int(cfg.get("seed", 0)) if seed is None else int(seed)
    os.makedirs(out_dir, exist_ok=True)
    checks, outputs, summary = _RUNNERS[kind](cfg, used_seed, out_dir, prof)
    report = {
        "version": __version__,
        "kind": kind,
        "seed": used_seed,
        "config_sha256": _config_digest(cfg),
        "tolerance_profile": prof.name,
        "checks": checks,
        "outputs": outputs,
        "summary": summary,
        "all_passed": all(c["passed"] for c in checks),
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="adiaframe",
        description="Measurement-dynamics scenarios: branching, mean force, "
                    "spectral thermodynamics, friction, entropy audits.")
    parser.add_argument("--config", required=True, help="path to a JSON scenario config")
    parser.add_argument("--out", default=".", help="output directory (default: cwd)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--strict", action="store_true",
                        help="reject unknown config fields instead of warning")
    parser.add_argument("--quiet", action="store_true", help="suppress the text summary")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            text = fh.read()
        cfg = parse_config(text, strict=args.strict)
        report = run_scenario(cfg, args.out, seed=args.seed)
    except (AdiaframeError, OSError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload, sort_keys=True))
        return 2

    if not args.quiet:
        print(f"adiaframe {__version__} :: {report['kind']} "
              f"(seed {report['seed']}, profile {report['tolerance_profile']})")
        for check in report["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            print(f"  [{status}] {check['name']}: value {check['value']:.3e} "
                  f"(tolerance {check['tolerance']:.3e})")
        print(f"  report: {os.path.join(args.out, 'report.json')}")
    return 0 if report["all_passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
