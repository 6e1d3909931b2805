"""Structured text configuration: load, save, and content hashing.

The file format is JSON with matrices as row-major nested arrays.  Floats
round-trip losslessly (shortest-repr serialization).  The schema is
documented in the README; `refgov validate` checks a file end to end.
"""

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .ftc import FtcConfig
from .models import ConstraintSpec, ModeGraph, build_closed_loop
from .polytopes import Polytope
from .simkit import ScenarioConfig


@dataclass(frozen=True)
class ToolkitConfig:
    """Everything a run needs: plant modes, constraints, timing, scenarios."""
    name: str
    graph: ModeGraph
    spec_map: dict
    ftc: FtcConfig
    governor_T: int
    k_cap: int
    scenarios: dict


def _mat(x):
    return np.asarray(x, dtype=float)


def _poly_from(data):
    return Polytope(_mat(data["normals"]), _mat(data["offsets"]))


def _poly_to(P):
    return {"normals": P.normals.tolist(), "offsets": P.offsets.tolist()}


def _spec_from(block, beta, T_e):
    try:
        return ConstraintSpec(
            L_x=_mat(block["L_x"]), L_v=_mat(block["L_v"]),
            Z1=_poly_from(block["Z1"]),
            F_x=_mat(block["F_x"]), F_v=_mat(block["F_v"]),
            Z2=Polytope.upper_bounds(_mat(block["Z2_upper_bounds"])),
            H_zeta=_mat(block["H_zeta"]),
            H_varsigma=_mat(block["H_varsigma"]),
            beta=beta,
            Z1_plus=_poly_from(block["Z1_plus"]),
            Z2_plus=Polytope.upper_bounds(
                _mat(block["Z2_plus_upper_bounds"])),
            T_e=T_e)
    except KeyError as exc:
        raise ConfigError(f"constraints block missing {exc}") from exc


def _spec_to(spec):
    return {
        "L_x": spec.L_x.tolist(), "L_v": spec.L_v.tolist(),
        "Z1": _poly_to(spec.Z1), "Z1_plus": _poly_to(spec.Z1_plus),
        "F_x": spec.F_x.tolist(), "F_v": spec.F_v.tolist(),
        "Z2_upper_bounds": spec.Z2.offsets.tolist(),
        "Z2_plus_upper_bounds": spec.Z2_plus.offsets.tolist(),
        "H_zeta": spec.H_zeta.tolist(),
        "H_varsigma": spec.H_varsigma.tolist(),
    }


def _scenario_from(name, block):
    try:
        return ScenarioConfig(
            name=name,
            controller=block["controller"],
            horizon=int(block["horizon"]),
            x0=_mat(block["x0"]),
            v_init=_mat(block["v_init"]),
            r_schedule=tuple((int(t), tuple(r))
                             for t, r in block["r_schedule"]),
            fault_schedule=tuple((int(t), int(mid))
                                 for t, mid in block.get("fault_schedule",
                                                         [])),
            seed=int(block["seed"]),
            runs=int(block["runs"]),
            T=int(block.get("T", 5)),
            x0_jitter=(tuple(block["x0_jitter"])
                       if isinstance(block.get("x0_jitter", 0.0), list)
                       else float(block.get("x0_jitter", 0.0))),
            initial_mode=int(block.get("initial_mode", 1)),
            paper_literal_timing=bool(block.get("paper_literal_timing",
                                                False)),
            convergence_tol=float(block.get("convergence_tol", 1e-3)),
            z1_scale=float(block.get("z1_scale", 1.0)),
            omega=(None if block.get("omega") is None
                   else float(block["omega"])))
    except KeyError as exc:
        raise ConfigError(f"scenario {name} missing {exc}") from exc


def _scenario_to(sc):
    jitter = sc.x0_jitter
    if isinstance(jitter, tuple):
        jitter = list(jitter)
    return {
        "controller": sc.controller,
        "horizon": sc.horizon,
        "x0": np.asarray(sc.x0).tolist(),
        "v_init": np.asarray(sc.v_init).tolist(),
        "r_schedule": [[t, list(r)] for t, r in sc.r_schedule],
        "fault_schedule": [[t, mid] for t, mid in sc.fault_schedule],
        "seed": sc.seed,
        "runs": sc.runs,
        "T": sc.T,
        "x0_jitter": jitter,
        "initial_mode": sc.initial_mode,
        "paper_literal_timing": sc.paper_literal_timing,
        "convergence_tol": sc.convergence_tol,
        "z1_scale": sc.z1_scale,
        "omega": sc.omega,
    }


def config_to_dict(cfg):
    modes_out = []
    for mode in cfg.graph.modes:
        modes_out.append({
            "mode_id": mode.mode_id,
            "A_o": mode.A_o.tolist(), "B_o": mode.B_o.tolist(),
            "C": mode.C.tolist(), "K": mode.K.tolist(),
            "G": mode.G.tolist(),
            "H_omega": mode.H_omega.tolist(),
            "H_xi": mode.H_xi.tolist(),
            "constraints": _spec_to(cfg.spec_map[mode.mode_id]),
        })
    first_spec = next(iter(cfg.spec_map.values()))
    return {
        "name": cfg.name,
        "modes": modes_out,
        "graph": {
            "successors": {str(k): sorted(v)
                           for k, v in cfg.graph.successors.items()},
            "priors": cfg.graph.priors.tolist(),
        },
        "chance": {"beta": first_spec.beta, "T_e": first_spec.T_e},
        "governor": {"T": cfg.governor_T, "k_cap": cfg.k_cap},
        "ftc": {
            "omega": cfg.ftc.omega, "vartheta": cfg.ftc.vartheta,
            "T_d": cfg.ftc.T_d, "T_r": cfg.ftc.T_r, "T_e": cfg.ftc.T_e,
            "R": cfg.ftc.R.tolist(),
            "confirm_intervals": cfg.ftc.confirm_intervals,
            "multistart": cfg.ftc.multistart,
            "opt_tol": cfg.ftc.opt_tol,
        },
        "scenarios": {name: _scenario_to(sc)
                      for name, sc in sorted(cfg.scenarios.items())},
    }


def config_from_dict(data):
    try:
        beta = float(data["chance"]["beta"])
        T_e = int(data["chance"]["T_e"])
        modes = []
        spec_map = {}
        for block in data["modes"]:
            mode = build_closed_loop(
                block["mode_id"], _mat(block["A_o"]), _mat(block["B_o"]),
                _mat(block["C"]), _mat(block["K"]), _mat(block["G"]),
                _mat(block["H_omega"]), _mat(block["H_xi"]))
            modes.append(mode)
            spec_map[mode.mode_id] = _spec_from(block["constraints"], beta,
                                                T_e)
        graph = ModeGraph(
            modes=tuple(modes),
            successors={int(k): set(v)
                        for k, v in data["graph"]["successors"].items()},
            priors=_mat(data["graph"]["priors"]))
        ftc_block = data["ftc"]
        ftc = FtcConfig(
            omega=float(ftc_block["omega"]),
            vartheta=float(ftc_block["vartheta"]),
            T_d=int(ftc_block["T_d"]), T_r=int(ftc_block["T_r"]),
            T_e=int(ftc_block["T_e"]), R=_mat(ftc_block["R"]),
            confirm_intervals=int(ftc_block.get("confirm_intervals", 2)),
            multistart=int(ftc_block.get("multistart", 8)),
            opt_tol=float(ftc_block.get("opt_tol", 1e-6)))
        scenarios = {name: _scenario_from(name, block)
                     for name, block in data["scenarios"].items()}
        return ToolkitConfig(
            name=str(data.get("name", "unnamed")),
            graph=graph, spec_map=spec_map, ftc=ftc,
            governor_T=int(data["governor"]["T"]),
            k_cap=int(data["governor"].get("k_cap", 500)),
            scenarios=scenarios)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad configuration: {exc}") from exc


def save_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def config_hash(cfg):
    """Content hash used to key cached sets and stamp artifacts."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def apply_overrides(cfg, seed=None, runs=None, omega=None, beta=None,
                    paper_literal_timing=False):
    """CLI/env overrides; returns a new config."""
    scenarios = dict(cfg.scenarios)
    if seed is not None or runs is not None or paper_literal_timing:
        scenarios = {
            name: replace(
                sc,
                seed=sc.seed if seed is None else int(seed),
                runs=sc.runs if runs is None else int(runs),
                paper_literal_timing=(sc.paper_literal_timing
                                      or paper_literal_timing))
            for name, sc in scenarios.items()}
    ftc = cfg.ftc if omega is None else replace(cfg.ftc, omega=float(omega))
    spec_map = cfg.spec_map
    if beta is not None:
        spec_map = {mid: replace(spec, beta=float(beta))
                    for mid, spec in cfg.spec_map.items()}
    return ToolkitConfig(name=cfg.name, graph=cfg.graph, spec_map=spec_map,
                         ftc=ftc, governor_T=cfg.governor_T, k_cap=cfg.k_cap,
                         scenarios=scenarios)
