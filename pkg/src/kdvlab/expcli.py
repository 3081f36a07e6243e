"""Declarative experiment runner and command-line interface.

One JSON config file fully determines one experiment; the config is
validated against a strict schema (unknown keys are rejected at every
level, cross-field constraints checked) and embedded verbatim in every
artifact, so results can be re-run from their own headers.  Numeric
output is CSV with a JSON sidecar; floats are printed with
shortest-round-trip formatting, so identical config plus seed yields
byte-identical bodies.  Wall-clock metadata is quarantined to a separate
runinfo.json.

Exit codes: 0 success (all hard checks attached to the experiment pass),
2 config validation failure (machine-readable error list on stderr),
3 runtime abort (partial artifacts plus an abort marker).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from kdvlab import acceptance, averaging, birkhoff, hill, kdvflow, stochastic
from kdvlab.errors import ConfigError, KdvLabError
from kdvlab.grid import FourierField, sobolev_norm

EXPERIMENT_KINDS = ("spectrum", "actions", "evolve", "perturb", "ensemble",
                    "resonance", "scaling", "measure")

OUT_ROOT_ENV = "KDVLAB_OUT"

_TOP_KEYS = {
    "kind", "n_modes", "grid_size", "n_max", "initial", "seed", "out_dir",
    "tolerances", "T", "dt", "z", "eps", "T_slow", "n_tau", "realizations",
    "perturbation", "noise", "measure", "resonance", "lambdas", "sobolev_k",
    "n_samples", "p_norms", "T_win", "samples",
}
_INITIAL_KEYS = {"type", "entries", "s0", "zeta0p", "p", "scale_norm1",
                 "path", "seed"}
_PERT_KEYS = {"kind", "eps", "kernel_decay", "nonlinearity", "force"}
_NOISE_KEYS = {"b0", "q"}
_MEASURE_KEYS = {"s0", "zeta0p", "p", "samples"}
_RESONANCE_KEYS = {"deltas", "m", "k_radius"}


def _reject_unknown(section: dict, allowed: set, where: str, errors: list):
    for key in section:
        if key not in allowed:
            errors.append(f"{where}: unknown key {key!r}")


def validate_config(cfg: dict) -> list:
    """Return a machine-readable list of violations (empty when valid)."""
    errors = []
    if not isinstance(cfg, dict):
        return ["config must be a JSON object"]
    _reject_unknown(cfg, _TOP_KEYS, "top level", errors)
    kind = cfg.get("kind")
    if kind not in EXPERIMENT_KINDS:
        errors.append(f"kind must be one of {EXPERIMENT_KINDS}, got {kind!r}")
    K = cfg.get("n_modes", 64)
    N = cfg.get("grid_size", 256)
    if not (isinstance(K, int) and K >= 1):
        errors.append("n_modes must be a positive integer")
    if not (isinstance(N, int) and N % 2 == 0):
        errors.append("grid_size must be an even integer")
    elif isinstance(K, int) and N < 3 * K:
        errors.append(f"grid_size {N} violates the dealiasing rule >= 3*n_modes"
                      f" = {3 * K}")
    if "initial" in cfg:
        ini = cfg["initial"]
        _reject_unknown(ini, _INITIAL_KEYS, "initial", errors)
        if ini.get("type") not in ("coeffs", "gaussian", "file"):
            errors.append("initial.type must be coeffs|gaussian|file")
    if "perturbation" in cfg:
        p = cfg["perturbation"]
        _reject_unknown(p, _PERT_KEYS, "perturbation", errors)
        if p.get("kind") not in kdvflow.PERTURBATION_KINDS:
            errors.append(f"perturbation.kind must be one of "
                          f"{kdvflow.PERTURBATION_KINDS}")
        if p.get("kind") == "smoothing_map":
            if not p.get("kernel_decay", 0) > 0:
                errors.append("smoothing_map needs kernel_decay > 0 "
                              "(order <= -2 smoothing)")
            if p.get("nonlinearity", "identity") not in \
                    kdvflow.SMOOTHING_NONLINEARITIES:
                errors.append("unknown smoothing nonlinearity")
        if p.get("eps", 0.0) < 0:
            errors.append("perturbation.eps must be >= 0")
    if "noise" in cfg:
        n = cfg["noise"]
        _reject_unknown(n, _NOISE_KEYS, "noise", errors)
        if not n.get("q", 3.0) > 1.5:
            errors.append("noise decay q must exceed 3/2")
        if not n.get("b0", 1.0) > 0:
            errors.append("noise b0 must be positive")
    if "measure" in cfg:
        m = cfg["measure"]
        _reject_unknown(m, _MEASURE_KEYS, "measure", errors)
        if not m.get("zeta0p", -2.0) < -1.0:
            errors.append("measure.zeta0p must be < -1 (admissibility)")
    if "resonance" in cfg:
        r = cfg["resonance"]
        _reject_unknown(r, _RESONANCE_KEYS, "resonance", errors)
    dt = cfg.get("dt")
    if dt is not None and isinstance(K, int) and K >= 1:
        # stability budget for the explicit advection stage
        amp_guess = 1.0
        cap = 1.2 * 2.8 / (6.0 * amp_guess * 2.0 * np.pi * K)
        if dt > cap:
            errors.append(f"dt {dt} exceeds the stability budget {cap:.3e} "
                          f"at n_modes {K}")
        if dt <= 0:
            errors.append("dt must be positive")
    if kind == "ensemble" and cfg.get("realizations", 2) < 2:
        errors.append("ensemble needs realizations >= 2")
    if kind in ("ensemble",) and not cfg.get("eps", 0.0) > 0:
        errors.append("ensemble needs eps > 0")
    return errors


def build_initial(cfg: dict) -> FourierField:
    K = cfg.get("n_modes", 64)
    N = cfg.get("grid_size", 256)
    ini = cfg.get("initial", {"type": "coeffs", "entries": [[1, 0.1, 0.0]]})
    if ini["type"] == "coeffs":
        c = np.zeros((K, 2))
        for k, a, b in ini["entries"]:
            c[int(k) - 1] = (float(a), float(b))
        return FourierField(c, N)
    if ini["type"] == "gaussian":
        spec = averaging.power_law_measure(K, N, float(ini.get("s0", 1.0)),
                                           float(ini.get("zeta0p", -12.0)),
                                           float(ini.get("p", 1.0)))
        seed = int(ini.get("seed", cfg.get("seed", 0)))
        u = averaging.sample_gaussian(
            spec, np.random.Generator(np.random.Philox(seed)))
        target = ini.get("scale_norm1")
        if target is not None:
            u = u * (float(target) / sobolev_norm(u, 1.0))
        return u
    with open(ini["path"], "r", encoding="utf-8") as fh:
        return FourierField.from_json(fh.read())


def build_perturbation(cfg: dict) -> kdvflow.PerturbationSpec:
    p = cfg.get("perturbation")
    if p is None:
        return kdvflow.NO_PERTURBATION
    force = None
    if p.get("force") is not None:
        sub = dict(cfg)
        sub["initial"] = p["force"]
        force = build_initial(sub)
    return kdvflow.PerturbationSpec(
        kind=p.get("kind", "none"), eps=float(p.get("eps", 0.0)),
        force=force, kernel_decay=p.get("kernel_decay"),
        nonlinearity=p.get("nonlinearity", "identity"))


def _write(out: Path, name: str, body: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(body, encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _sidecar(out: Path, cfg: dict, payload: dict) -> None:
    doc = {"config": cfg, "results": _jsonable(payload)}
    _write(out, "result.json", json.dumps(doc, indent=2, sort_keys=True))


def _runinfo(out: Path, t0: float) -> None:
    _write(out, "runinfo.json", json.dumps(
        {"started_unix": t0, "finished_unix": time.time()}))


def _csv_rows(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating))
                    else x for x in r])
    return buf.getvalue()


def run(cfg: dict, out_dir: str | None = None) -> int:
    """Execute one experiment; returns the process exit status."""
    t0 = time.time()
    errors = validate_config(cfg)
    if errors:
        sys.stderr.write(json.dumps({"errors": errors}) + "\n")
        return 2
    out = Path(out_dir or cfg.get("out_dir")
               or os.environ.get(OUT_ROOT_ENV, "kdvlab-out")) / cfg["kind"]
    kind = cfg["kind"]
    tol = cfg.get("tolerances", {})
    try:
        u0 = build_initial(cfg)
        if kind == "spectrum":
            sp = hill.compute_spectrum(u0, cfg.get("n_max", 10),
                                       z=float(cfg.get("z", 0.0)))
            _write(out, "result.csv", sp.to_csv())
            _sidecar(out, cfg, {"spectrum": json.loads(sp.to_json())})
            status = 0
        elif kind == "actions":
            n_max = cfg.get("n_max", 10)
            acts = birkhoff.actions(u0, n_max)
            residual = birkhoff.percival_residual(u0, n_max, acts)
            _write(out, "result.csv", acts.to_csv())
            _sidecar(out, cfg, {"percival_residual": residual,
                                "tail": acts.tail})
            status = 0 if residual < tol.get("percival", 1e-4) else 3
        elif kind in ("evolve", "perturb"):
            pert = build_perturbation(cfg) if kind == "perturb" \
                else kdvflow.NO_PERTURBATION
            rec = kdvflow.evolve(
                u0, float(cfg.get("T", 1.0)), dt=cfg.get("dt"), pert=pert,
                n_samples=cfg.get("n_samples", 33),
                p_norms=tuple(cfg.get("p_norms", [1.0])),
                n_act=cfg.get("n_max", 0))
            _write(out, "result.csv", rec.to_csv())
            checks = {"aborted": rec.aborted}
            if pert.kind == "dissipative" and pert.eps > 0:
                bound = rec.norm0[0] * np.exp(-pert.eps * rec.times)
                checks["decay_ok"] = bool(
                    np.all(rec.norm0 <= bound * (1 + 1e-10)))
            _sidecar(out, cfg, {"checks": checks,
                                "final_norm0": float(rec.norm0[-1])})
            hard_ok = (not rec.aborted) and all(
                v for k, v in checks.items() if k != "aborted")
            status = 0 if hard_ok else 3
        elif kind == "ensemble":
            noise = cfg.get("noise", {"b0": 0.25, "q": 3.0})
            spec = stochastic.power_law_noise(
                u0.n_modes, float(noise.get("b0", 0.25)),
                float(noise.get("q", 3.0)), int(cfg.get("seed", 0)))
            res = stochastic.ensemble(
                u0, float(cfg["eps"]), float(cfg.get("T_slow", 0.5)),
                float(cfg.get("dt") or 1.2e-3), spec,
                int(cfg.get("realizations", 10)),
                n_tau=int(cfg.get("n_tau", 101)))
            _write(out, "result.csv", res.to_csv())
            _sidecar(out, cfg, json.loads(res.summary_json()))
            status = 0 if res.valid else 3
        elif kind == "resonance":
            noise = cfg.get("noise", {"b0": 0.25, "q": 3.0})
            spec = stochastic.power_law_noise(
                u0.n_modes, float(noise.get("b0", 0.25)),
                float(noise.get("q", 3.0)), int(cfg.get("seed", 0)))
            res = stochastic.ensemble(
                u0, float(cfg.get("eps", 4e-3)),
                float(cfg.get("T_slow", 0.5)),
                float(cfg.get("dt") or 1.2e-3), spec,
                int(cfg.get("realizations", 10)),
                n_tau=int(cfg.get("n_tau", 101)), n_proxy_actions=4)
            rq = cfg.get("resonance", {})
            deltas = rq.get("deltas", [1.0, 0.3, 0.1])
            m = int(rq.get("m", 2))
            k_rad = int(rq.get("k_radius", 3))
            fractions = []
            rows = []
            for delta in deltas:
                q = averaging.ResonanceQuery(delta=float(delta), m=m,
                                             k_radius=k_rad)
                vals = []
                for r in range(res.n_realizations):
                    if res.aborted_at[r] >= 0:
                        continue
                    vals.append(averaging.occupation_fraction(
                        (res.tau, res.proxy_actions[r]), q))
                fractions.append(float(np.mean(vals)))
            # per-sample indicator table for the first realization
            q0 = averaging.ResonanceQuery(delta=float(deltas[0]), m=m,
                                          k_radius=k_rad)
            for i, tau in enumerate(res.tau):
                W = averaging.frequency_vector(res.proxy_actions[0, i], m)
                resonant, kmin, val = averaging.resonance_indicator(W, q0)
                rows.append([tau, int(resonant), str(kmin), val])
            _write(out, "result.csv",
                   _csv_rows(["tau", "in_resonance", "min_k", "min_value"],
                             rows))
            mono = all(fractions[i] >= fractions[i + 1]
                       for i in range(len(fractions) - 1))
            _sidecar(out, cfg, {"deltas": deltas,
                                "mean_occupation": fractions,
                                "monotone": mono})
            status = 0 if mono else 3
        elif kind == "scaling":
            rows = kdvflow.scaling_experiment(
                u0, cfg.get("lambdas", [1.0, 2.0, 4.0]),
                k=int(cfg.get("sobolev_k", 4)), T_win=cfg.get("T_win"),
                dt=cfg.get("dt"))
            hdr = ["lam", "sup_norm_k", "inf_norm_k", "lower_bound",
                   "lower_bound_ok", "certified", "tail_fraction"]
            _write(out, "result.csv", _csv_rows(
                hdr, [[r.get(k, "") for k in hdr] for r in rows]))
            _sidecar(out, cfg, {"rows": rows})
            status = 0 if all(r.get("lower_bound_ok", False) for r in rows
                              if r.get("certified")) else 3
        elif kind == "measure":
            m = cfg.get("measure", {"s0": 1.0, "zeta0p": -4.0, "p": 1.0})
            spec = averaging.power_law_measure(
                u0.n_modes, u0.grid_size, float(m.get("s0", 1.0)),
                float(m.get("zeta0p", -4.0)), float(m.get("p", 1.0)))
            rng = np.random.Generator(
                np.random.Philox(int(cfg.get("seed", 0))))
            n_draw = int(m.get("samples", 200))
            draws = np.stack([averaging.sample_gaussian(spec, rng).coeffs
                              for _ in range(n_draw)])
            j = np.arange(1, u0.n_modes + 1)
            pred = spec.sigma / (2 * np.pi * j) ** (2 * spec.p)
            emp = draws.var(axis=0, ddof=1).mean(axis=1)
            se = pred * np.sqrt(2.0 / n_draw)
            z = np.abs(emp - pred) / se
            rows = [[int(jj), pred[jj - 1], emp[jj - 1], z[jj - 1]]
                    for jj in j]
            _write(out, "result.csv",
                   _csv_rows(["j", "var_pred", "var_emp", "z"], rows))
            ok = bool(np.all(z < 5.0))
            _sidecar(out, cfg, {"max_z": float(np.max(z)),
                                "admissibility_constant":
                                    spec.admissibility_constant(),
                                "sigma_tail": spec.sigma_tail(),
                                "moments_ok": ok})
            status = 0 if ok else 3
        else:  # pragma: no cover
            raise AssertionError(kind)
    except KdvLabError as exc:
        _write(out, "abort.json", json.dumps({"error": str(exc)}))
        _runinfo(out, t0)
        sys.stderr.write(f"aborted: {exc}\n")
        return 3
    _runinfo(out, t0)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kdvlab",
        description="experiment runner for the periodic-KdV laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="output directory root")
    v = sub.add_parser("verify", help="run the acceptance battery")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    if args.command == "verify":
        results = acceptance.verify_suite(args.level)
        lines = [r.line() for r in results]
        print("\n".join(lines))
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "verify.json").write_text(json.dumps(
                [{"id": r.cid, "passed": r.passed, "runtime": r.runtime,
                  "details": _jsonable(r.details)} for r in results],
                indent=2))
        return 0 if all(r.passed for r in results) else 1

    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if cfg.get("kind", args.command) != args.command:
        sys.stderr.write(json.dumps(
            {"errors": [f"config kind {cfg.get('kind')!r} does not match "
                        f"subcommand {args.command!r}"]}) + "\n")
        return 2
    cfg["kind"] = args.command
    if args.seed is not None:
        cfg["seed"] = args.seed
    return run(cfg, out_dir=args.out)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
