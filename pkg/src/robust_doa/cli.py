"""Command-line front end.

Each stage command reads one YAML config, writes its artifacts under the
configured output directory together with a ``manifest.json`` (config,
config hash, seeds, library versions, artifact digests), and can be
replayed from that manifest. ``pipeline`` chains every stage.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
import sys
from functools import cached_property
from pathlib import Path

import click
import numba
import numpy as np
import scipy
import yaml

from . import __version__, config, controller, doa, ndd, optimizer, simulator
from .config import ConfigError, RunConfig
from .grid import CellMask, load_mask, save_mask, volume
from .lyapunov import LyapunovSOS, basis

log = logging.getLogger("robust_doa")

EXIT_VALIDATION = 2
EXIT_ASSERTION = 3
EXIT_IO = 4
SIG_DIGITS = 10
MANIFEST_VERSION = 1


class MissingArtifactError(OSError):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing artifact {path}; run `robust-doa {producer}` first")
        self.producer = producer


class PipelineError(RuntimeError):
    """A run finished but a mandatory check failed."""


# Serialization


def _clean(obj):
    """JSON-ready copy with floats rounded to ``SIG_DIGITS`` significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return str(v)
        return float(f"{v:.{SIG_DIGITS}g}")
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def read_json(path: Path, producer: str) -> dict:
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return json.loads(path.read_text())


def _fmt(v: float) -> str:
    return f"{v:.{SIG_DIGITS}g}"


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    return {"robust_doa": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _intervals(mask: CellMask) -> list | None:
    return [list(iv) for iv in mask.intervals()] if mask.grid.dim == 1 else None


# Run context


class Run:
    """Config plus lazily built, shared intermediates for one output directory."""

    def __init__(self, cfg: RunConfig, out: Path | None = None):
        self.cfg = cfg
        self.out = Path(out if out is not None else cfg.output)

    def stage(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    @cached_property
    def plant(self):
        return self.cfg.build_plant()

    @cached_property
    def state_grid(self):
        return self.cfg.state_grid()

    @cached_property
    def problem(self) -> ndd.NddProblem:
        log.info("drawing %d state-control samples", self.cfg.sampling.n_xu)
        return ndd.prepare(self.plant, self.state_grid, self.cfg.control_grid(),
                           self.cfg.sample_config())

    @cached_property
    def samples(self) -> doa.StateSamples:
        return config.state_samples(self.cfg)

    def search_settings(self) -> optimizer.SearchSettings:
        s, a = self.cfg.sampling, self.cfg.alpha
        return optimizer.SearchSettings(
            self.problem, self.samples, d=self.cfg.lyapunov.d, eps_init=a.eps_init,
            accuracy=a.accuracy, alpha_max=a.alpha_max, margin=s.margin,
            min_samples_per_cell=s.min_samples_per_cell, origin_layers=s.origin_layers,
            stay_in_region=a.stay_in_region)

    def lyapunov(self):
        """The configured candidate and a JSON description of it."""
        lc = self.cfg.lyapunov
        n = self.plant.n
        if lc.kind == "fixed":
            return self.cfg.fixed_lyapunov(lc.expression), {"kind": "fixed",
                                                             "expression": lc.expression}
        if lc.kind == "sos":
            Q = np.asarray(lc.Q, dtype=float)
        else:
            result = read_json(self.out / "optimize" / "result.json", "optimize")
            Q = np.asarray(result["Q_best"], dtype=float)
        L = LyapunovSOS(basis(n, lc.d), Q)
        coeffs = {"*".join(f"x{k + 1}^{p}" for k, p in enumerate(e) if p) or "1": c
                  for e, c in L.coefficients().items()}
        return L, {"kind": lc.kind, "d": lc.d, "Q": Q, "coefficients": coeffs}

    def manifest(self, command: str, directory: Path) -> Path:
        """Write ``manifest.json`` covering every other file under ``directory``."""
        files = sorted(p for p in directory.rglob("*") if p.is_file() and p.name != "manifest.json")
        cfg = self.cfg
        data = {
            "manifest_version": MANIFEST_VERSION,
            "command": command,
            "config": cfg.to_dict() | {"output": str(self.out)},
            "config_hash": cfg.hash(),
            "seeds": {"sampling": cfg.sampling.seed, "pso": cfg.lyapunov.pso.seed,
                      "controller": cfg.controller.seed, "simulation": cfg.simulation.seed},
            "versions": _versions(),
            "artifacts": {str(p.relative_to(self.out)): _digest(p) for p in files},
        }
        path = directory / "manifest.json"
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return path


# Stages


def cmd_optimize(run: Run) -> optimizer.OptimizationResult:
    if run.cfg.lyapunov.kind != "optimize":
        raise ConfigError("lyapunov.kind", "the optimize command needs kind: optimize")
    res = optimizer.pso_maximize(run.search_settings(), run.cfg.pso_config())
    d = run.stage("optimize")
    write_json(d / "result.json", res.to_dict())
    with open(d / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "m_best"])
        for i, v in enumerate(res.history):
            w.writerow([i, _fmt(v)])
    run.manifest("optimize", d)
    return res


def _ndd_record(run: Run, est: ndd.NddEstimate, ldesc: dict) -> dict:
    s = run.cfg.sampling
    return {
        "plant": run.plant.to_dict() | {"name": run.plant.name},
        "plant_fingerprint": run.plant.fingerprint(),
        "lyapunov": ldesc,
        "sampling": {"seed": s.seed, "n_xu": s.n_xu, "n_succ": s.n_succ, "margin": s.margin,
                     "min_samples_per_cell": s.min_samples_per_cell},
        "origin_layers": est.origin_layers,
        "w_cells": est.w_mask.count, "w_total": est.w_mask.grid.n_cells,
        "x_cells": est.x_mask.count, "x_projected_cells": est.x_projected.count,
        "x_total": est.x_mask.grid.n_cells, "x_volume": volume(est.x_mask),
        "x_intervals": _intervals(est.x_mask),
    }


def _save_ndd(d: Path, est: ndd.NddEstimate, meta: dict) -> None:
    save_mask(est.w_mask, d / "w_mask.bin", {"fingerprint": meta["plant_fingerprint"]})
    save_mask(est.x_mask, d / "x_mask.bin", {"origin_layers": est.origin_layers})
    save_mask(est.x_projected, d / "x_projected.bin")
    write_json(d / "ndd.json", meta)


def load_ndd(run: Run, stage: str = "ndd") -> ndd.NddEstimate:
    d = run.out / stage
    masks = []
    for name in ("w_mask.bin", "x_mask.bin", "x_projected.bin"):
        if not (d / name).exists():
            raise MissingArtifactError(d / name, "ndd")
        masks.append(load_mask(d / name))
    (w, _), (x, xmeta), (proj, _) = masks
    return ndd.NddEstimate(w, x, proj, np.empty(0), np.empty(0), xmeta["origin_layers"])


def _estimate(run: Run, L) -> ndd.NddEstimate:
    s = run.cfg.sampling
    return ndd.estimate_ndd(run.problem, L, s.margin, s.min_samples_per_cell, s.origin_layers)


def cmd_ndd(run: Run) -> ndd.NddEstimate:
    L, ldesc = run.lyapunov()
    est = _estimate(run, L)
    d = run.stage("ndd")
    _save_ndd(d, est, _ndd_record(run, est, ldesc))
    run.manifest("ndd", d)
    return est


def _search(run: Run, L, est: ndd.NddEstimate):
    a = run.cfg.alpha
    return doa.search_alpha(L, est.x_mask, run.samples, a.eps_init, a.accuracy,
                            a.alpha_max, a.stay_in_region)


def _alpha_record(trace: doa.AlphaSearchTrace, ls: doa.LevelSetEstimate) -> dict:
    return {"alpha_star": trace.alpha_star, "n_checks": trace.n_checks,
            "capped": trace.capped, "epsilons": trace.epsilons, "accuracy": trace.accuracy,
            "cells": ls.mask.count, "volume": volume(ls.mask), "intervals": _intervals(ls.mask)}


def _write_trace(d: Path, trace: doa.AlphaSearchTrace) -> None:
    with open(d / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "alpha", "contained"])
        for i, (alpha, ok) in enumerate(trace.checks):
            w.writerow([i + 1, _fmt(alpha), int(ok)])
    with open(d / "trace.jsonl", "w") as fh:
        for i, (alpha, ok) in enumerate(trace.checks):
            fh.write(json.dumps(_clean({"check": i + 1, "alpha": alpha, "contained": ok}),
                                sort_keys=True) + "\n")
        fh.write(json.dumps(_clean({"alpha_star": trace.alpha_star, "n_checks": trace.n_checks,
                                    "capped": trace.capped}), sort_keys=True) + "\n")


def cmd_alpha(run: Run, est: ndd.NddEstimate | None = None):
    est = est or load_ndd(run)
    L, _ = run.lyapunov()
    trace, ls = _search(run, L, est)
    d = run.stage("alpha")
    save_mask(ls.mask, d / "level_set.bin", {"alpha": _fmt(trace.alpha_star)})
    write_json(d / "alpha.json", _alpha_record(trace, ls))
    _write_trace(d, trace)
    run.manifest("alpha", d)
    return trace, ls


def cmd_baseline(run: Run) -> dict:
    """NDD and level set of the reference candidate, for the enlargement factor."""
    expr = run.cfg.baseline.expression
    L = run.cfg.fixed_lyapunov(expr)
    est = _estimate(run, L)
    trace, ls = _search(run, L, est)
    d = run.stage("baseline")
    _save_ndd(d, est, _ndd_record(run, est, {"kind": "fixed", "expression": expr}))
    save_mask(ls.mask, d / "level_set.bin", {"alpha": _fmt(trace.alpha_star)})
    record = _alpha_record(trace, ls)
    write_json(d / "alpha.json", record)
    _write_trace(d, trace)
    run.manifest("baseline", d)
    return record | {"estimate": est, "level_set": ls}


def cmd_controller(run: Run, est: ndd.NddEstimate | None = None) -> controller.Controller:
    est = est or load_ndd(run)
    c = run.cfg.controller
    ts = controller.select_training(est, c.stride)
    params = controller.KernelParams.for_grid(est.x_mask.grid, c.length_scale_cells,
                                              c.signal_variance, c.jitter)
    try:
        ctrl = controller.fit(ts, params)
    except controller.ControllerFitError as err:
        raise PipelineError(str(err)) from None
    d = run.stage("controller")
    ctrl.save(d)
    report = controller.verify_membership(ctrl, est, c.probe_count, c.seed)
    write_json(d / "membership.json", report.to_dict())
    run.manifest("controller", d)
    if not report.passed:
        raise PipelineError(f"controller leaves the negative-definite domain at "
                            f"{report.violations} of {report.probes} probe states; "
                            f"see {d / 'membership.json'}")
    return ctrl


def _load_controller(run: Run) -> controller.Controller:
    d = run.out / "controller"
    for name in ("training.csv", "hyper.json"):
        if not (d / name).exists():
            raise MissingArtifactError(d / name, "controller")
    return controller.Controller.load(d)


def _load_doa(run: Run) -> CellMask:
    path = run.out / "alpha" / "level_set.bin"
    if not path.exists():
        raise MissingArtifactError(path, "alpha")
    return load_mask(path)[0]


def cmd_simulate(run: Run, ctrl: controller.Controller | None = None,
                 doa_mask: CellMask | None = None) -> dict:
    ctrl = ctrl or _load_controller(run)
    doa_mask = doa_mask if doa_mask is not None else _load_doa(run)
    if doa_mask.count == 0:
        raise PipelineError("the DOA estimate is empty; nothing to simulate")
    s = run.cfg.simulation
    sim_cfg = simulator.SimConfig(s.trajectories, s.max_steps, s.radius, s.seed, s.noise)
    batch = simulator.simulate(run.plant, ctrl, doa_mask, sim_cfg)
    d = run.stage("simulate")
    simulator.export_csv(batch, d / "trajectories.csv", d / "noise.csv")
    summary = simulator.summarize(batch)
    write_json(d / "simulation.json", summary)
    run.manifest("simulate", d)
    return summary


def _write_plots(run: Run, L, est, ls, ctrl, base: dict | None) -> None:
    """Per-figure CSVs: NDD cells with the controller, and level sets per candidate."""
    d = run.stage("plots")
    sgrid = est.x_mask.grid
    n = sgrid.dim
    wgrid = est.w_mask.grid
    xnames = [f"x{k + 1}" for k in range(n)]
    unames = [f"u{k + 1}" for k in range(wgrid.dim - n)]
    wc = wgrid.cell_centers()[est.w_mask.indices()]
    with open(d / "ndd_cells.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(xnames + unames)
        for row in wc:
            w.writerow([_fmt(v) for v in row])
    centers = sgrid.cell_centers()
    mu = ctrl(centers)
    with open(d / "controller.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(xnames + [f"mu{k + 1}" for k in range(mu.shape[1])])
        for x, u in zip(centers, mu):
            w.writerow([_fmt(v) for v in (*x, *u)])
    cols = {"L": L(centers), "in_ndd": est.x_mask.bits, "in_level_set": ls.mask.bits}
    if base is not None:
        cols |= {"L_baseline": run.cfg.fixed_lyapunov(run.cfg.baseline.expression)(centers),
                 "in_ndd_baseline": base["estimate"].x_mask.bits,
                 "in_level_set_baseline": base["level_set"].mask.bits}
    with open(d / "level_sets.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(xnames + list(cols))
        for i, x in enumerate(centers):
            vals = [int(v[i]) if v.dtype == bool else _fmt(v[i]) for v in cols.values()]
            w.writerow([_fmt(v) for v in x] + vals)


def summary_text(s: dict) -> str:
    lines = [f"plant: {s['plant']}", f"lyapunov: {s['lyapunov']}",
             f"X_F estimate: {s['x_cells']}/{s['x_total']} cells, volume {s['x_volume']:.6g}",
             f"alpha*: {s['alpha_star']:.6g}",
             f"DOA estimate: volume {s['doa_volume']:.6g}"
             + (f", intervals {s['doa_intervals']}" if s["doa_intervals"] else "")]
    if s.get("baseline"):
        b = s["baseline"]
        lines.append(f"baseline {b['expression']}: alpha* {b['alpha_star']:.6g}, "
                     f"DOA volume {b['volume']:.6g}"
                     + (f", intervals {b['intervals']}" if b["intervals"] else ""))
        ef = s["enlargement_factor"]
        lines.append("enlargement factor: " + (f"{ef:.6g}" if ef is not None else "undefined"))
    m = s["membership"]
    lines.append(f"controller membership: {m['violations']} violations in {m['probes']} probes")
    sim = s["simulation"]
    lines.append(f"simulation: {sim['converged']}/{sim['trajectories']} trajectories converged")
    return "\n".join(lines) + "\n"


def cmd_pipeline(run: Run) -> dict:
    cfg = run.cfg
    if cfg.lyapunov.kind == "optimize":
        cmd_optimize(run)
    L, ldesc = run.lyapunov()
    est = cmd_ndd(run)
    trace, ls = cmd_alpha(run, est)
    base = cmd_baseline(run) if cfg.baseline.expression else None
    ctrl = cmd_controller(run, est)
    membership = json.loads((run.out / "controller" / "membership.json").read_text())
    sim = cmd_simulate(run, ctrl, ls.mask)
    _write_plots(run, L, est, ls, ctrl, base)
    summary = {
        "plant": run.plant.name, "lyapunov": ldesc.get("expression") or ldesc["coefficients"],
        "x_cells": est.x_mask.count, "x_total": est.x_mask.grid.n_cells,
        "x_volume": volume(est.x_mask), "alpha_star": trace.alpha_star,
        "doa_volume": volume(ls.mask), "doa_intervals": _intervals(ls.mask),
        "membership": {k: membership[k] for k in ("probes", "violations", "passed")},
        "simulation": sim,
    }
    if base is not None:
        bv = base["volume"]
        summary["baseline"] = {"expression": cfg.baseline.expression,
                               "alpha_star": base["alpha_star"], "volume": bv,
                               "intervals": base["intervals"]}
        summary["enlargement_factor"] = volume(ls.mask) / bv if bv > 0 else None
    write_json(run.out / "summary.json", summary)
    (run.out / "summary.txt").write_text(summary_text(_clean(summary)))
    run.manifest("pipeline", run.out)
    return summary


COMMANDS = {"optimize": cmd_optimize, "ndd": cmd_ndd, "alpha": cmd_alpha,
            "controller": cmd_controller, "simulate": cmd_simulate, "pipeline": cmd_pipeline}


# Click front end


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.extend(_flatten(v, key + "."))
        else:
            out.append((key, v))
    return out


_DEFAULTS_HELP = "\b\nConfig keys and defaults:\n" + "\n".join(
    f"  {k} = {json.dumps(v)}" for k, v in _flatten(RunConfig().to_dict()))


class _Group(click.Group):
    """Maps failures to the documented exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ConfigError as err:
            click.echo(f"config error: {err}", err=True)
            ctx.exit(EXIT_VALIDATION)
        except PipelineError as err:
            click.echo(f"pipeline check failed: {err}", err=True)
            ctx.exit(EXIT_ASSERTION)
        except OSError as err:
            click.echo(f"i/o error: {err}", err=True)
            ctx.exit(EXIT_IO)


@click.group(cls=_Group, epilog=_DEFAULTS_HELP)
@click.option("--workers", type=click.IntRange(min=1), default=None,
              help="Upper bound on worker threads (default: all available). "
                   "Results do not depend on it.")
@click.option("-v", "--verbose", count=True, help="Log progress (-vv for debug output).")
def main(workers: int | None, verbose: int) -> None:
    """Robust domain-of-attraction estimation and controller synthesis."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if workers is not None:
        limit = numba.config.NUMBA_NUM_THREADS
        if workers > limit:
            log.warning("--workers %d exceeds the %d available threads; using %d",
                        workers, limit, limit)
        numba.set_num_threads(min(workers, limit))


def _load_run(config_path: str, output: str | None) -> Run:
    try:
        cfg = config.load(config_path)
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {config_path}") from None
    return Run(cfg, Path(output) if output else None)


_config_opt = click.option("-c", "--config", "config_path", required=True,
                           type=click.Path(dir_okay=False),
                           help="YAML run config, or a manifest.json to replay.")
_output_opt = click.option("-o", "--output", default=None,
                           help="Output directory (default: the config's output).")


def _stage(name: str, doc: str):
    @main.command(name=name, help=doc)
    @_config_opt
    @_output_opt
    def command(config_path: str, output: str | None) -> None:
        run = _load_run(config_path, output)
        result = COMMANDS[name](run)
        if name == "pipeline":
            click.echo(summary_text(_clean(result)), nl=False)
        else:
            click.echo(f"{name}: wrote {run.out / name}")
    return command


_stage("optimize", "Search the sum-of-squares family for the largest DOA estimate.")
_stage("ndd", "Estimate the negative-definite domains of the configured candidate.")
_stage("alpha", "Find the largest admissible level set (needs ndd).")
_stage("controller", "Fit and verify the state-feedback controller (needs ndd).")
_stage("simulate", "Simulate the noisy closed loop (needs controller and alpha).")
_stage("pipeline", "Run every stage and print a summary.")


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", default=None,
              help="Where to rerun (default: the recorded output directory). Stage "
                   "commands other than optimize, ndd and pipeline need their inputs there.")
def replay(manifest: str, output: str | None) -> None:
    """Rerun the command recorded in MANIFEST and compare artifact digests."""
    data = json.loads(Path(manifest).read_text())
    cfg = config.from_dict(data)
    out = Path(output or cfg.output)
    run = Run(cfg, out)
    COMMANDS[data["command"]](run)
    mismatched = []
    for rel, digest in data["artifacts"].items():
        path = out / rel
        if not path.exists() or _digest(path) != digest:
            mismatched.append(rel)
    if mismatched:
        raise PipelineError(f"replay differs in {len(mismatched)} artifacts: {mismatched[:5]}")
    click.echo(f"replay of {data['command']}: {len(data['artifacts'])} artifacts identical")


@main.command(name="config")
@click.argument("preset", type=click.Choice(config.PRESETS), required=False)
def show_config(preset: str | None) -> None:
    """Print a bundled preset, or the full default config."""
    if preset:
        click.echo(config.preset_text(preset), nl=False)
    else:
        click.echo(yaml.safe_dump(RunConfig().to_dict(), sort_keys=False), nl=False)


if __name__ == "__main__":
    sys.exit(main())
