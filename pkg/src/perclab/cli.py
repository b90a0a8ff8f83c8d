"""Command-line entry point: ``perclab <subcommand> --config PATH [--seed U64] [--threads N] [--out DIR]``.

Each run writes its data files plus ``manifest.json`` (parsed config, seed,
library versions, wall time, output digests, ``partial`` flag) into the
output directory.  Data files depend only on the config and the seed.
Passing a ``manifest.json`` as ``--config`` reruns that experiment.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .clusters import (
    ESTIMATORS,
    ModelConfig,
    components,
    replica_seeds,
    sample_graph,
    sublinear_indicators,
    summarize_sublinear,
    summarize_theta,
    summarize_truncation,
    theta_indicators,
    truncation_indicators,
    write_estimates_csv,
)
from .config import dump_config, parse_config
from .errors import NotWeakDecayError, NumericError, ParameterError, ResourceError
from .graph_builder import write_edges_csv
from .kernels import estimate_delta_eff, geometric_grid, kernel_from_mapping
from .network import from_edges, hop_distances, random_walk_stats, transience_probe, write_curve_csv
from .parallel import resolve_threads
from .point_process import cube, write_cloud_csv
from .regularity import DEFAULT_C, mc_check_connection, mc_check_regularity
from .renorm import (
    RenormParams,
    TransienceParams,
    derive_params,
    sigma_sequence,
    survey,
    transience_params,
    validate_params,
)

__all__ = ["main", "validate_config", "COMMANDS"]

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_INTERRUPTED = 0, 2, 3, 130
BATCH = 32

MODEL_KEYS = {"process", "intensity", "boundary", "builder", "cell_side", "k_reach"}
RUN_KEYS = {"seed", "threads"}
SECTION_KEYS = {
    "generate": {"n", "palm"},
    "build": {"n", "palm"},
    "theta_sweep": {"p", "n", "estimator", "k_reach", "replicas"},
    "sublinear": {"lam", "n", "palm", "replicas"},
    "truncate_sweep": {"ell", "n", "p", "estimator", "k_reach", "replicas"},
    "delta_eff": {"mu", "r_min", "r_max", "points"},
    "renorm_survey": {"kind", "n", "max_stage", "theta", "lam", "ell", "k", "mu", "rho", "sigma", "nu",
                      "omega", "mu_star", "delta_eff_star", "rho_c", "n1", "alpha", "palm"},
    "transience": {"n", "source", "ns", "walk_steps", "walkers"},
    "lemma_check": {"lemma", "n", "v", "mu", "D", "C", "trials"},
}
COMMANDS = tuple(s.replace("_", "-") for s in SECTION_KEYS) + ("validate",)


class _Invalid(Exception):
    def __init__(self, violations):
        super().__init__("; ".join(f"{v['name']}: {v['message']}" for v in violations))
        self.violations = violations


def _violation(name, message, section=None):
    out = {"name": name, "message": str(message)}
    if section is not None:
        out["section"] = section
    return out


# ---------------------------------------------------------------- planning

def _model(cfg):
    if "kernel" not in cfg:
        raise ParameterError("config needs a 'kernel' section")
    kernel = kernel_from_mapping(cfg["kernel"])
    m = dict(cfg.get("model", {}))
    return ModelConfig(kernel, **m)


def _floats(x, name, positive=True):
    vals = [float(v) for v in np.atleast_1d(x)]
    if not vals:
        raise ParameterError(f"{name} must be non-empty")
    if positive and any(not v > 0 for v in vals):
        raise ParameterError(f"{name} must be positive")
    return vals


def _increasing(vals, name):
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ParameterError(f"{name} must be strictly increasing")
    return vals


def _replicas(sec):
    r = int(sec.get("replicas", 100))
    if r < 1:
        raise ParameterError("replicas must be at least 1")
    return r


def _estimator(sec):
    e = sec.get("estimator", "origin_to_boundary")
    if e not in ESTIMATORS:
        raise ParameterError(f"estimator must be one of {ESTIMATORS}")
    return e


def _renorm_params(model, sec):
    """Aliveness or goodness parameters; returns ``(params, violations)``."""
    d = model.d
    kind = sec.get("kind", "alive")
    lam = float(sec.get("lam", 0.8))
    max_stage = int(sec.get("max_stage", 1))
    if kind == "good":
        if "mu" in sec:
            tp = TransienceParams(d, int(sec.get("n1", 1)), lam, float(sec["mu"]), sec.get("nu"),
                                  sec.get("alpha"), sec.get("sigma"))
        else:
            base = derive_params(model.kernel, d, float(sec.get("theta", 0.5)), 0.8, int(sec.get("ell", 2)),
                                 float(sec.get("k", 1.0)), max_stage)
            tp = transience_params(base, sec.get("lam"), int(sec.get("n1", 1)))
        return tp, []
    if kind != "alive":
        raise ParameterError("kind must be 'alive' or 'good'")
    theta, ell, k = float(sec.get("theta", 0.5)), sec.get("ell", 2), float(sec.get("k", 1.0))
    custom = {"mu", "rho", "sigma", "nu", "omega", "mu_star", "delta_eff_star", "rho_c"} & set(sec)
    if not custom:
        p = derive_params(model.kernel, d, theta, lam, ell, k, max_stage)
        return p, []
    # start from the derivation when it exists and override what the config sets
    try:
        base = derive_params(model.kernel, d, theta, lam, ell, k, max_stage).__dict__.copy()
    except NotWeakDecayError:
        base = {"d": d, "ell": float(ell), "k": k, "theta": theta, "lam": lam, "mu_star": None,
                "delta_eff_star": None, "nu": None, "omega": None, "rho_c": None, "sigma_window_from": None}
    for key in custom:
        base[key] = sec[key]
    N = max(len(base.get("rho") or ()), len(base.get("sigma") or ()), max_stage)
    if "rho" not in sec:
        if base.get("rho_c") is None:
            raise ParameterError("custom parameters need 'rho' or 'rho_c'")
        base["rho"] = tuple(base["rho_c"] / (n + 2) ** 2 for n in range(1, N + 1))
    if "sigma" not in sec:
        if base.get("omega") is None:
            raise ParameterError("custom parameters need 'sigma' or 'omega'")
        base["sigma"], base["sigma_window_from"] = sigma_sequence(float(base["omega"]), d, N)
    elif "omega" not in sec:
        base["omega"], base["sigma_window_from"] = None, None
    if "mu" not in base or base.get("mu") is None:
        raise ParameterError("custom parameters need 'mu'")
    p = RenormParams(**base)
    return p, [_violation(n, m, "renorm_survey") for n, m in validate_params(p)]


def _plan(cfg, command):
    """Check one experiment section and return its normalized parameters."""
    section = command.replace("-", "_")
    sec = dict(cfg.get(section, {}))
    model = _model(cfg)
    plan = {"section": section, "model": model}
    if section in ("generate", "build"):
        plan["n"] = _floats(sec.get("n", 32), "n")[0]
        plan["palm"] = bool(sec.get("palm", False))
    elif section == "theta_sweep":
        plan["p"] = _increasing(_floats(sec.get("p", [0.2, 0.4, 0.6, 0.8, 1.0]), "p"), "p")
        if plan["p"][-1] > 1:
            raise ParameterError("p must lie in [0, 1]")
        plan["n"] = _floats(sec.get("n", [20]), "n")
        plan["estimator"] = _estimator(sec)
        plan["k_reach"] = sec.get("k_reach")
        plan["replicas"] = _replicas(sec)
    elif section == "sublinear":
        plan["lam"] = float(sec.get("lam", 0.8))
        if not 0 < plan["lam"] < 1:
            raise ParameterError("lam must lie in (0, 1)")
        plan["n"] = _floats(sec.get("n", [20, 40, 80]), "n")
        plan["palm"] = bool(sec.get("palm", False))
        plan["replicas"] = _replicas(sec)
    elif section == "truncate_sweep":
        plan["ell"] = _increasing(_floats(sec.get("ell", [1, 2, 4, 8, math.inf]), "ell"), "ell")
        plan["n"] = _floats(sec.get("n", 40), "n")[0]
        plan["p"] = float(sec.get("p", 1.0))
        if not 0 <= plan["p"] <= 1:
            raise ParameterError("p must lie in [0, 1]")
        plan["estimator"] = _estimator(sec)
        plan["k_reach"] = sec.get("k_reach")
        plan["replicas"] = _replicas(sec)
    elif section == "delta_eff":
        plan["mu"] = _floats(sec.get("mu", 0.0), "mu", positive=False)
        if any(not 0 <= m < 0.5 for m in plan["mu"]):
            raise ParameterError("mu must lie in [0, 1/2)")
        plan["r_grid"] = geometric_grid(sec.get("r_min", 1e2), sec.get("r_max", 1e2 * 4.0 ** 6), sec.get("points", 7))
    elif section == "renorm_survey":
        params, bad = _renorm_params(model, sec)
        if bad:
            raise _Invalid(bad)
        plan["params"] = params
        plan["max_stage"] = int(sec.get("max_stage", 1))
        first = params.n1 if isinstance(params, TransienceParams) else 0
        if plan["max_stage"] < first:
            raise ParameterError(f"max_stage must be at least {first}")
        side = params.side(plan["max_stage"]) if first else params.m(plan["max_stage"])
        if not np.isfinite(side) or side > 1e5:
            raise ParameterError(f"stage {plan['max_stage']} cubes have side {side}, too large to sample")
        plan["n"] = float(sec.get("n", side))
        if plan["n"] < side:
            raise ParameterError(f"box side {plan['n']} is smaller than the stage cube side {side}")
        plan["palm"] = bool(sec.get("palm", False))
    elif section == "transience":
        plan["n"] = _floats(sec.get("n", 256), "n")[0]
        plan["source"] = sec.get("source", "largest_cluster")
        if plan["source"] not in ("largest_cluster", "origin"):
            raise ParameterError("source must be 'largest_cluster' or 'origin'")
        ns = sec.get("ns", "auto")
        if ns != "auto":
            ns = [int(x) for x in _increasing(_floats(ns, "ns"), "ns")]
        plan["ns"] = ns
        plan["walk_steps"] = int(sec.get("walk_steps", 0))
        plan["walkers"] = int(sec.get("walkers", 0))
        if plan["walk_steps"] < 0 or plan["walkers"] < 0:
            raise ParameterError("walk_steps and walkers must be non-negative")
    elif section == "lemma_check":
        lemma = sec.get("lemma", "regularity")
        plan["lemma"] = lemma
        plan["mu"] = float(sec.get("mu", 0.4))
        if not 0 < plan["mu"] < 0.5:
            raise ParameterError("mu must lie in (0, 1/2)")
        plan["trials"] = int(sec.get("trials", 1000))
        if lemma == "regularity":
            plan["n"] = int(sec.get("n", 10 ** 6))
            if plan["trials"] < 100:
                raise ParameterError("at least 100 trials required")
        elif lemma == "connection":
            plan["v"] = int(sec.get("v", 200))
            plan["D"] = float(sec.get("D", 10.0))
            plan["C"] = float(sec.get("C", DEFAULT_C))
        else:
            raise ParameterError("lemma must be 'regularity' or 'connection'")
    return plan


def validate_config(cfg, commands=None):
    """Dry-run validation; returns a list of violation dicts (empty when valid).

    ``commands`` defaults to every experiment section present in ``cfg``.
    """
    out = []
    known = {"kernel", "model", "run"} | set(SECTION_KEYS)
    for name in cfg:
        if name not in known:
            out.append(_violation("unknown_section", f"unknown section {name!r}", name))
    allowed = {"model": MODEL_KEYS, "run": RUN_KEYS, **SECTION_KEYS}
    for name, keys in allowed.items():
        for key in set(cfg.get(name, {})) - keys:
            out.append(_violation("unknown_key", f"unknown key {key!r}", name))
    if out:
        return out
    try:
        _model(cfg)
    except (ParameterError, TypeError, ValueError) as exc:
        return [_violation("model", exc, "kernel")]
    if commands is None:
        commands = [s for s in SECTION_KEYS if s in cfg]
    for c in commands:
        try:
            _plan(cfg, c)
        except _Invalid as exc:
            out += exc.violations
        except NotWeakDecayError as exc:
            out.append(_violation("weak_decay", exc, c.replace("-", "_")))
        except (ParameterError, TypeError, ValueError) as exc:
            out.append(_violation("parameter", exc, c.replace("-", "_")))
    return out


# ---------------------------------------------------------------- output

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def _dumps(obj):
    return json.dumps(_jsonable(obj), sort_keys=True)


class _Run:
    """Output directory bookkeeping and the manifest."""

    def __init__(self, out, command, cfg, seed, threads):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command, self.cfg, self.seed, self.threads = command, cfg, seed, threads
        self.files = {}
        self.t0 = time.perf_counter()
        self.info = {}

    def write(self, name, text):
        path = self.out / name
        path.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def manifest(self, partial):
        import numba
        import scipy

        m = {
            "command": self.command,
            "config": _jsonable(self.cfg),
            "config_text": dump_config(self.cfg),
            "seed": self.seed,
            "threads": self.threads,
            "version": __version__,
            "libraries": {"python": platform.python_version(), "numpy": np.__version__,
                          "scipy": scipy.__version__, "numba": numba.__version__},
            "wall_time": time.perf_counter() - self.t0,
            "partial": bool(partial),
            "outputs": dict(sorted(self.files.items())),
            **self.info,
        }
        (self.out / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


def _batched(run, name, compute, summarize, replicas, write):
    """Run replicas in batches, rewriting the summary after each batch."""
    parts = []
    done = 0
    while done < replicas:
        b = min(BATCH, replicas - done)
        parts.append(compute(b, done))
        done += b
        write(run, name, summarize(np.concatenate(parts, axis=0)))
        run.info["replicas_done"] = done
    return np.concatenate(parts, axis=0)


def _estimates(run, name, est):
    run.write(name, write_estimates_csv(est))


def _sublinear_csv(run, name, freqs):
    lines = ["lam,n,value,ci,replicas,hits,seed"]
    for f in freqs:
        lines.append(",".join([repr(f.extra["lam"]), repr(f.extra["n"]), repr(f.value), repr(f.ci),
                               str(f.replicas), str(f.hits), str(run.seed)]))
    run.write(name, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- runners

def _cluster_source(graph, source):
    """Network on the chosen cluster and the index of the source vertex in it."""
    part = components(graph)
    if source == "origin":
        if graph.cloud.palm_index is None:
            raise ParameterError("source 'origin' needs a Palm-conditioned graph")
        lab = part.labels[graph.cloud.palm_index]
    else:
        lab = int(np.argmax(part.sizes))
    mem = part.members(lab)
    remap = -np.ones(graph.n, dtype=np.int64)
    remap[mem] = np.arange(mem.size)
    keep = remap[graph.edges[:, 0]] >= 0
    net = from_edges(mem.size, remap[graph.edges[keep]])
    v = int(np.argmin(np.abs(graph.cloud.locations[mem]).max(axis=1)))
    return net, v, mem


def auto_radii(ecc, points=12):
    """Hop radii ``1..ceil(ecc/2)``, geometrically spaced.

    Beyond half the eccentricity the shorted set shrinks to a few far
    vertices of a finite box and the curve reflects the box, not the graph.
    """
    top = max(2, int(math.ceil(ecc / 2)))
    return [int(x) for x in np.unique(np.round(np.geomspace(1, top, points)).astype(int))]


def _run(run, plan):
    sec, model, seed, threads = plan["section"], plan["model"], run.seed, run.threads
    if sec in ("generate", "build"):
        g = sample_graph(model, plan["n"], replica_seeds(seed, 0), palm=plan["palm"])
        run.write("cloud.csv", write_cloud_csv(g.cloud))
        if sec == "build":
            run.write("edges.csv", write_edges_csv(g))
        run.info["counts"] = {"vertices": g.n, "edges": g.m}
    elif sec == "theta_sweep":
        _batched(run, "theta.csv",
                 lambda b, s: theta_indicators(model, plan["p"], plan["n"], b, seed, plan["estimator"],
                                               plan["k_reach"], threads, start=s),
                 lambda ind: summarize_theta(ind, plan["p"], plan["n"], seed, plan["estimator"]),
                 plan["replicas"], _estimates)
    elif sec == "sublinear":
        _batched(run, "sublinear.csv",
                 lambda b, s: sublinear_indicators(model, plan["lam"], plan["n"], b, seed, plan["palm"],
                                                   threads, start=s),
                 lambda ind: summarize_sublinear(ind, plan["lam"], plan["n"]),
                 plan["replicas"], _sublinear_csv)
    elif sec == "truncate_sweep":
        _batched(run, "truncation.csv",
                 lambda b, s: truncation_indicators(model, plan["ell"], plan["n"], b, seed, plan["p"],
                                                    plan["estimator"], plan["k_reach"], threads, start=s),
                 lambda ind: summarize_truncation(ind, plan["ell"], plan["n"], seed, plan["p"], plan["estimator"]),
                 plan["replicas"], _estimates)
    elif sec == "delta_eff":
        lines = []
        for mu in plan["mu"]:
            est = estimate_delta_eff(model.kernel, mu, plan["r_grid"])
            lines.append(_dumps({"kernel": model.kernel.as_dict(), **est.as_dict()}))
            run.write("delta_eff.jsonl", "\n".join(lines) + "\n")
    elif sec == "renorm_survey":
        g = sample_graph(model, plan["n"], replica_seeds(seed, 0), palm=plan["palm"])
        rep = survey(g, plan["params"], plan["max_stage"])
        run.write("renorm.jsonl", rep.to_jsonl())
    elif sec == "transience":
        g = sample_graph(model, plan["n"], replica_seeds(seed, 0), palm=plan["source"] == "origin")
        net, v, mem = _cluster_source(g, plan["source"])
        dist = hop_distances(net, v)
        ecc = int(dist[np.isfinite(dist)].max())
        ns = auto_radii(ecc) if plan["ns"] == "auto" else plan["ns"]
        curve = transience_probe(net, v, ns, threads)
        run.write("conductance.csv", write_curve_csv(curve))
        summary = {"flag": curve.flag, "monotone": curve.monotone, "cluster_size": int(mem.size),
                   "source_vertex": int(mem[v]), "eccentricity": ecc, "ns": list(curve.ns),
                   "rtol": curve.rtol, "maxiter": curve.maxiter}
        if plan["walk_steps"] and plan["walkers"]:
            summary["walk"] = random_walk_stats(net, v, plan["walk_steps"], plan["walkers"],
                                                replica_seeds(seed, 0)["bonds"])
        run.write("transience.jsonl", _dumps(summary) + "\n")
    elif sec == "lemma_check":
        if plan["lemma"] == "regularity":
            rep = mc_check_regularity(plan["n"], plan["mu"], plan["trials"], seed, threads)
        else:
            rep = mc_check_connection(model.kernel, plan["v"], plan["mu"], plan["D"], plan["trials"], seed,
                                      plan["C"], threads=threads)
        run.write("lemma.jsonl", _dumps(rep.as_dict()) + "\n")


# ---------------------------------------------------------------- entry

def _load(path):
    """Config text or a previous run's manifest; returns ``(cfg, manifest or None)``."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            man = json.loads(text)
        except json.JSONDecodeError:
            man = None
        if isinstance(man, dict) and "config_text" in man:
            return parse_config(man["config_text"]), man
    return parse_config(text), None


def _parser():
    ap = argparse.ArgumentParser(prog="perclab", description="Percolation experiments on marked spatial random graphs.")
    ap.add_argument("--version", action="version", version=f"perclab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        p = sub.add_parser(c)
        p.add_argument("--config", required=True, help="config file or a manifest.json to rerun")
        p.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, default=None, help="thread cap (default: PERCLAB_THREADS or 1)")
        p.add_argument("--out", default=".", help="output directory")
    return ap


def _fail(kind, message, violations=None, code=EXIT_INVALID):
    err = {"error": kind, "message": str(message)}
    if violations is not None:
        err["violations"] = violations
    print(json.dumps(_jsonable(err), sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg, man = _load(args.config)
    except (OSError, ParameterError) as exc:
        return _fail("config", exc)
    if args.command == "validate":
        bad = validate_config(cfg)
        report = {"valid": not bad, "violations": bad}
        text = json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "validation.json").write_text(text)
        sys.stdout.write(text)
        return EXIT_OK
    if man is not None and man.get("command") != args.command:
        return _fail("config", f"manifest was written by {man.get('command')!r}, not {args.command!r}")
    run_sec = cfg.get("run", {})
    seed = args.seed if args.seed is not None else (man["seed"] if man else int(run_sec.get("seed", 0)))
    if not 0 <= int(seed) < 2 ** 64:
        return _fail("parameter", "seed must be an unsigned 64-bit integer")
    try:
        threads = resolve_threads(args.threads if args.threads is not None else run_sec.get("threads"))
    except ValueError as exc:
        return _fail("parameter", exc)
    bad = validate_config(cfg, [args.command])
    if bad:
        return _fail("validation", "config failed validation", bad)
    plan = _plan(cfg, args.command)
    run = _Run(args.out, args.command, cfg, int(seed), threads)
    try:
        _run(run, plan)
    except KeyboardInterrupt:
        run.manifest(partial=True)
        return EXIT_INTERRUPTED
    except (NumericError, ResourceError, ParameterError) as exc:
        run.manifest(partial=True)
        extra = {"residual": exc.residual} if isinstance(exc, NumericError) else {}
        print(json.dumps(_jsonable({"error": type(exc).__name__, "message": str(exc), **extra}), sort_keys=True),
              file=sys.stderr)
        return EXIT_RUNTIME
    run.manifest(partial=False)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
