"""Batch experiment driver.

Subcommands: simulate, couple, mixing, check, galerkin-steer, network.
All numeric outputs are CSVs (fixed column order, 17 significant digits)
plus a JSON summary; report figures are rendered alongside unless
--no-plots.  Replicas are sharded into fixed-size batches keyed by global
replica index, so outputs are byte-identical for any --threads value.

Exit codes: 0 success, 1 configuration error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from multiprocessing import get_context

import numpy as np

from . import coupling as cpl
from . import diagnostics as dg
from . import galerkin as gal
from . import network as net
from .config import ConfigError, expand_grid, load_config
from .controllability import hormander_tower, kalman_rank, solid_cert
from .dynamics import FlowError, check_dissipativity, controlled_flow, jacobian
from .gallery import build_preset
from .noise import Streams, stream
from .pdmp import ensemble_embedded, ensemble_states_at, simulate

__all__ = ["main"]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path


def _shards(replicas: int, batch: int):
    return [(lo, min(lo + batch, replicas)) for lo in range(0, replicas, batch)]


def _pool_map(fn, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with get_context("fork").Pool(min(threads, len(tasks))) as pool:
        return pool.map(fn, tasks)


def _fitted_beta(spec, alpha, seed, n=500, radius=10.0):
    """Smallest usable beta from dissipativity probes on a ball."""
    g = stream(seed, 0, "beta-probe")
    pts = g.normal(size=(n, spec.dim))
    pts *= (radius * g.random(n) ** (1.0 / spec.dim)
            / np.linalg.norm(pts, axis=1))[:, None]
    probe = check_dissipativity(spec.f, alpha, 0.0, pts)
    return max(0.0, probe.worst_margin) * 1.05 + 1e-9


def _coupling_policy(cfg, preset):
    cc = cfg["coupling"]
    x_hat = np.asarray(cc["x_hat"], dtype=float) if cc["x_hat"] is not None \
        else preset.x_hat
    R = cc["R"]
    if R is None and preset.alpha is not None:
        beta = preset.beta if preset.beta is not None else \
            _fitted_beta(preset.spec, preset.alpha, cfg["seed"])
        R = cpl.lyapunov_radius(preset.alpha, beta, preset.spec.rate)
    return cpl.CouplingPolicy(x_hat=x_hat, r=cc["r"], m=cc["m"],
                              hit_mode=cc["hit_mode"], R=R,
                              shoot_iters=cc["shoot_iters"],
                              shoot_tol=cc["shoot_tol"])


def _couple_starts(cfg, preset):
    cc = cfg["coupling"]
    d = preset.spec.dim
    e1 = np.zeros(d)
    e1[0] = 1.0
    x0 = np.asarray(cc["x0"], dtype=float) if "x0" in cc else preset.x_hat + 2.0 * e1
    x0p = np.asarray(cc["x0_prime"], dtype=float) if "x0_prime" in cc \
        else preset.x_hat - 2.0 * e1
    return x0, x0p


# ---------------------------------------------------------------------------
# Pool workers (module-level for picklability; systems are rebuilt per task)


def _w_moment_shard(task):
    cfg, lo, hi = task
    preset = build_preset(cfg["system"]["preset"], cfg["system"]["params"])
    x0 = np.asarray(cfg.get("x0", np.zeros(preset.spec.dim)), dtype=float)
    k_max = cfg["moments"]["k_max"]
    t_grid = np.asarray(expand_grid(cfg["moments"]["t_grid"]))
    streams = Streams(cfg["seed"])
    states, _ = ensemble_embedded(preset.spec, x0, k_max, hi - lo, streams,
                                  batch_size=cfg["batch_size"], replica_offset=lo)
    emb_sq = np.sum(states ** 2, axis=2)
    grid_states = ensemble_states_at(preset.spec, x0, t_grid, hi - lo, streams,
                                     batch_size=cfg["batch_size"], replica_offset=lo)
    grid_sq = np.sum(grid_states ** 2, axis=2)
    return emb_sq, grid_sq


def _w_couple_shard(task):
    cfg, lo, hi, t_grid, keep_blocks = task
    preset = build_preset(cfg["system"]["preset"], cfg["system"]["params"])
    policy = _coupling_policy(cfg, preset)
    x0, x0p = _couple_starts(cfg, preset)
    return cpl.couple_ensemble(
        preset.spec, policy, x0, x0p, cfg["horizon"], hi - lo, Streams(cfg["seed"]),
        t_grid=t_grid, keep_blocks=keep_blocks,
        batch_size=cfg["batch_size"], replica_offset=lo)


def _w_traj_shard(task):
    cfg, lo, hi = task
    preset = build_preset(cfg["system"]["preset"], cfg["system"]["params"])
    x0 = np.asarray(cfg.get("x0", np.zeros(preset.spec.dim)), dtype=float)
    rows = []
    for i in range(lo, hi):
        traj = simulate(preset.spec, x0, cfg["horizon"], stream(cfg["seed"], i, "sim"))
        rows.append((np.concatenate([[0.0], traj.path.jump_times]),
                     traj.post_jump_states))
    return rows


# ---------------------------------------------------------------------------
# Subcommands


def _run_moments(cfg, threads):
    shards = _shards(cfg["replicas"], cfg["batch_size"])
    parts = _pool_map(_w_moment_shard, [(cfg, lo, hi) for lo, hi in shards], threads)
    emb_sq = np.concatenate([p[0] for p in parts], axis=0)
    grid_sq = np.concatenate([p[1] for p in parts], axis=0)
    n = emb_sq.shape[0]
    return {
        "k": np.arange(emb_sq.shape[1]),
        "embedded": emb_sq.mean(axis=0),
        "embedded_stderr": emb_sq.std(axis=0, ddof=1) / math.sqrt(n),
        "t": np.asarray(expand_grid(cfg["moments"]["t_grid"])),
        "continuous": grid_sq.mean(axis=0),
        "continuous_stderr": grid_sq.std(axis=0, ddof=1) / math.sqrt(n),
    }


def cmd_simulate(cfg, out, threads, plots):
    preset = build_preset(cfg["system"]["preset"], cfg["system"]["params"])
    d = preset.spec.dim
    n_traj = min(cfg["trajectories"], cfg["replicas"])
    rows = []
    if n_traj:
        shards = _shards(n_traj, max(1, cfg["batch_size"] // 8))
        parts = _pool_map(_w_traj_shard, [(cfg, lo, hi) for lo, hi in shards], threads)
        rep = 0
        for part in parts:
            for times, states in part:
                for k in range(times.size):
                    rows.append((rep, k, times[k], *states[k]))
                rep += 1
    write_csv(os.path.join(out, "trajectories.csv"),
              ["replica", "k", "tau_k"] + [f"x_{j + 1}" for j in range(d)], rows)

    mom = _run_moments(cfg, threads)
    write_csv(os.path.join(out, "moments_embedded.csv"), ["k_or_t", "estimate", "stderr"],
              zip(mom["k"], mom["embedded"], mom["embedded_stderr"]))
    write_csv(os.path.join(out, "moments_continuous.csv"), ["k_or_t", "estimate", "stderr"],
              zip(mom["t"], mom["continuous"], mom["continuous_stderr"]))
    if plots:
        from . import plots as viz
        from .pdmp import MomentReport
        report = MomentReport(mom["k"], mom["embedded"], mom["embedded_stderr"],
                              mom["t"], mom["continuous"], mom["continuous_stderr"],
                              cfg["replicas"])
        viz.save_figure(viz.plot_moments(report), os.path.join(out, "moments.png"))
        if n_traj:
            trajs = [simulate(preset.spec,
                              np.asarray(cfg.get("x0", np.zeros(d)), dtype=float),
                              cfg["horizon"], stream(cfg["seed"], i, "sim"))
                     for i in range(min(n_traj, 5))]
            viz.save_figure(viz.plot_trajectories(trajs),
                            os.path.join(out, "trajectories.png"))
    return 0


def _run_couple(cfg, threads, t_grid=None, keep_blocks=()):
    shards = _shards(cfg["replicas"], cfg["batch_size"])
    tasks = [(cfg, lo, hi, t_grid, tuple(keep_blocks)) for lo, hi in shards]
    parts = _pool_map(_w_couple_shard, tasks, threads)
    res = parts[0]
    for p in parts[1:]:
        res = cpl.merge_results(res, p)
    return res


def _records_rows(res):
    for i in range(res.replicas):
        yield (i, res.I[i], res.J[i], res.K[i], res.tau_K[i], res.T[i],
               not np.isfinite(res.I[i]), not np.isfinite(res.J[i]),
               not np.isfinite(res.K[i]))


def _tail(res, cfg):
    t_grid = np.asarray(expand_grid(cfg["mixing"]["t_grid"]))
    surv, se, frac = dg.survival_curve(res.T, t_grid)
    fit = None
    try:
        cut = dg.tail_fit_window(res.T)
        use = (t_grid <= cut) & (surv > 0)
        if use.sum() >= 4:
            fit = dg.mixing_fit(t_grid[use], surv[use], se[use], censoring_fraction=frac)
    except ValueError:
        pass
    return t_grid, surv, se, frac, fit


def cmd_couple(cfg, out, threads, plots):
    res = _run_couple(cfg, threads)
    write_csv(os.path.join(out, "coupling_records.csv"),
              ["replica", "I", "J", "K", "tau_K", "T",
               "censored_I", "censored_J", "censored_K"], _records_rows(res))
    t_grid, surv, se, frac, fit = _tail(res, cfg)
    write_csv(os.path.join(out, "tail_curve.csv"), ["t", "survival", "stderr"],
              zip(t_grid, surv, se))
    summary = {
        "replicas": int(res.replicas),
        "coalesced_fraction": float(np.isfinite(res.K).mean()),
        "censoring_fraction": frac,
        "tail_fit": None if fit is None else
            {"C": fit.C, "c": fit.c, "r_squared": fit.r_squared},
    }
    write_json(os.path.join(out, "couple_summary.json"), summary)
    if plots:
        from . import plots as viz
        viz.save_figure(viz.plot_tail_curve(t_grid, surv, se, fit),
                        os.path.join(out, "tail_curve.png"))
    return 0


def cmd_mixing(cfg, out, threads, plots):
    t_grid = np.asarray(expand_grid(cfg["mixing"]["t_grid"]))
    res = _run_couple(cfg, threads, t_grid=t_grid,
                      keep_blocks=cfg["mixing"]["keep_blocks"])
    write_csv(os.path.join(out, "coupling_records.csv"),
              ["replica", "I", "J", "K", "tau_K", "T",
               "censored_I", "censored_J", "censored_K"], _records_rows(res))
    _, surv, se, frac, tail_fit = _tail(res, cfg)
    write_csv(os.path.join(out, "tail_curve.csv"), ["t", "survival", "stderr"],
              zip(t_grid, surv, se))
    bins = cfg["mixing"]["bins"]
    boot = stream(cfg["seed"], 0, "bootstrap-tv")
    tv = np.empty(t_grid.size)
    tv_se = np.empty(t_grid.size)
    for j in range(t_grid.size):
        tv[j], tv_se[j] = dg.histogram_tv(res.grid_states[:, j], res.grid_states_p[:, j],
                                          bins=bins, paired=True, rng=boot)
    write_csv(os.path.join(out, "tv_curve.csv"), ["t", "tv", "stderr"],
              zip(t_grid, tv, tv_se))
    fit = None
    use = tv > 0
    try:
        use &= t_grid <= dg.tail_fit_window(res.T)
    except ValueError:
        pass
    if use.sum() >= 4:
        fit = dg.mixing_fit(t_grid[use], tv[use], tv_se[use], censoring_fraction=frac)
        write_json(os.path.join(out, "mixing_report.json"), fit.to_dict())
    else:
        write_json(os.path.join(out, "mixing_report.json"),
                   {"error": "too few positive TV estimates to fit"})
    sandwich = bool(np.all(tv <= surv + 2 * (tv_se + se) + 1e-12))
    write_json(os.path.join(out, "mixing_summary.json"), {
        "coupling_inequality_holds": sandwich,
        "tail_fit": None if tail_fit is None else
            {"C": tail_fit.C, "c": tail_fit.c, "r_squared": tail_fit.r_squared},
        "tv_fit": None if fit is None else
            {"C": fit.C, "c": fit.c, "r_squared": fit.r_squared},
    })
    if plots:
        from . import plots as viz
        viz.save_figure(viz.plot_tv_curve(t_grid, tv, tv_se, surv, se, fit),
                        os.path.join(out, "mixing.png"))
    return 0


def cmd_check(cfg, out, threads, plots):
    preset = build_preset(cfg["system"]["preset"], cfg["system"]["params"])
    spec = preset.spec
    ck = cfg["check"]
    d, n = spec.dim, spec.noise_dim
    report = {}
    g = stream(cfg["seed"], 0, "check")

    alpha = ck["alpha"] if ck["alpha"] is not None else preset.alpha
    beta = ck["beta"] if ck["beta"] is not None else preset.beta
    if alpha is not None:
        samples = g.normal(size=(ck["n_samples"], d))
        samples *= (ck["sample_radius"] * g.random(ck["n_samples"]) ** (1.0 / d)
                    / np.linalg.norm(samples, axis=1))[:, None]
        fitted_beta = beta
        if fitted_beta is None:
            probe = check_dissipativity(spec.f, alpha, 0.0, samples)
            fitted_beta = max(0.0, probe.worst_margin) * 1.05 + 1e-9
        diss = check_dissipativity(spec.f, alpha, fitted_beta, samples)
        rep = diss.to_dict()
        rep["beta_fitted"] = beta is None
        report["dissipativity"] = rep
    else:
        report["dissipativity"] = {"skipped": "no dissipativity constants available"}

    A_lin = preset.linear_A if preset.linear_A is not None else jacobian(spec.f, preset.x_hat)
    kal = kalman_rank(A_lin, spec.B)
    report["kalman"] = kal.to_dict()

    tower = hormander_tower(spec.f, spec.B, preset.x_hat, max_gen=ck["max_gen"],
                            tol=ck["rank_tol"])
    report["hormander"] = tower.to_dict()

    m = ck["solid_m"] if ck["solid_m"] is not None else max(1, math.ceil(d / n))
    s_hat = np.full(m, 1.0 / spec.rate)
    solid = solid_cert(spec, preset.x_hat, m, s_hat, ck["solid_probes"],
                       stream(cfg["seed"], 0, "solid"), tol=ck["rank_tol"])
    report["solid"] = solid.to_dict()
    report["solid"]["m"] = m
    report["solid"]["s_hat"] = s_hat.tolist()

    gsys = preset.galerkin_system
    if gsys is not None and gsys.g.name != "zero":
        # Degenerate nonlinearity: scan probe norms for the smallest with a
        # full tower (no claim this matches any theoretical radius).
        scan = []
        first_pass = None
        gp = stream(cfg["seed"], 0, "tower-probes")
        for nrm in ck["probe_norms"]:
            point = np.zeros(d) if nrm == 0 else None
            if point is None:
                v = gp.normal(size=d)
                point = nrm * v / np.linalg.norm(v)
            c = hormander_tower(spec.f, spec.B, point, max_gen=ck["max_gen"],
                                tol=ck["rank_tol"])
            scan.append({"norm": float(nrm), "verdict": c.verdict,
                         "dimension_reached": c.dimension_reached})
            if c.passed and first_pass is None:
                first_pass = float(nrm)
        report["tower_probe_scan"] = {"probes": scan,
                                      "smallest_passing_norm": first_pass}

    write_json(os.path.join(out, "certificates.json"), report)
    if plots:
        from . import plots as viz
        viz.save_figure(viz.plot_singular_values({"kalman": kal, "hormander": tower,
                                                  "solid": solid}),
                        os.path.join(out, "certificates.png"))
    return 0


def cmd_galerkin_steer(cfg, out, threads, plots):
    preset = build_preset(cfg["system"]["preset"], cfg["system"]["params"])
    gsys = preset.galerkin_system
    if gsys is None:
        raise ConfigError("galerkin-steer needs a galerkin preset")
    st = cfg["steering"]
    d = gsys.dim
    u0 = np.asarray(cfg.get("x0", np.zeros(d)), dtype=float)
    B = gal.embedding_matrix(gsys)
    field = gal.build_field(gsys)
    rows = []
    worst = 0.0
    first_control = None
    for i in range(st["targets"]):
        g = stream(cfg["seed"], i, "steer-target")
        tgt = g.normal(size=d)
        nrm = np.linalg.norm(tgt)
        if nrm > st["target_norm"]:
            tgt *= st["target_norm"] / nrm
        res = gal.synthesize_steering(gsys, u0, tgt, st["epsilon"], st["time_budget"])
        verified = float(np.linalg.norm(
            controlled_flow(field, B, u0, res.control, res.control.horizon) - tgt))
        worst = max(worst, verified)
        rows.append((i, res.achieved_error, verified, res.control.horizon,
                     max(res.control.breakpoints.size - 1, 0), res.passes))
        if first_control is None:
            first_control = res.control
    write_csv(os.path.join(out, "steering_results.csv"),
              ["target", "achieved_error", "verified_error", "horizon",
               "segments", "passes"], rows)
    if first_control is not None and first_control.values.size:
        write_csv(os.path.join(out, "control_0.csv"),
                  ["t"] + [f"zeta_{j + 1}" for j in range(first_control.values.shape[1])],
                  [(t, *v) for t, v in zip(first_control.breakpoints[:-1],
                                           first_control.values)])
    write_json(os.path.join(out, "steering_summary.json"), {
        "targets": st["targets"],
        "epsilon": st["epsilon"],
        "worst_verified_error": worst,
        "all_within_epsilon": bool(worst < st["epsilon"]),
    })
    if plots and first_control is not None:
        from . import plots as viz
        viz.save_figure(viz.plot_control(first_control),
                        os.path.join(out, "control_0.png"))
    return 0


def cmd_network(cfg, out, threads, plots):
    preset = build_preset(cfg["system"]["preset"], cfg["system"]["params"])
    nw = preset.network_spec
    if nw is None:
        raise ConfigError("network needs a chain_langevin or chain_semimarkov preset")
    nc = cfg["network"]
    ray = [k * nc["ray_scale"] * np.ones(nw.size) for k in range(1, nc["ray_points"] + 1)]
    conditions = net.check_conditions(nw, ray)
    A_l, B_l = net.langevin_matrices(nw)
    report = {
        "conditions": conditions.to_dict(),
        "omega_condition_number": nw.condition_number,
        "langevin": {
            "kalman": kalman_rank(A_l, B_l).to_dict(),
            "eigenvalues_real": sorted(np.linalg.eigvals(A_l).real.tolist()),
        },
    }
    eigs = {"langevin": np.linalg.eigvals(A_l)}
    if nw.lambdas is not None:
        try:
            A_s, B_s, _ = net.semimarkov_matrices(nw)
            report["semimarkov"] = {
                "kalman": kalman_rank(A_s, B_s).to_dict(),
                "eigenvalues_real": sorted(np.linalg.eigvals(A_s).real.tolist()),
            }
            eigs["semimarkov"] = np.linalg.eigvals(A_s)
        except ValueError as exc:
            report["semimarkov"] = {"error": str(exc)}
    write_json(os.path.join(out, "network_report.json"), report)
    if plots:
        from . import plots as viz
        viz.save_figure(viz.plot_eigenvalues(eigs), os.path.join(out, "eigenvalues.png"))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "mixing": cmd_mixing,
    "check": cmd_check,
    "galerkin-steer": cmd_galerkin_steer,
    "network": cmd_network,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jumpmix",
        description="Simulation and certification toolkit for jump-driven SDEs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--replicas", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes (default: JUMPMIX_THREADS or 1)")
        p.add_argument("--no-plots", action="store_true",
                       help="skip figure rendering")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config,
                          overrides={"seed": args.seed, "replicas": args.replicas})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        build_preset(cfg["system"]["preset"], cfg["system"]["params"])
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    threads = args.threads if args.threads is not None else cfg["threads"]
    if threads is None:
        threads = int(os.environ.get("JUMPMIX_THREADS", "1"))
    os.makedirs(args.out, exist_ok=True)
    try:
        code = COMMANDS[args.command](cfg, args.out, threads, not args.no_plots)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (FlowError, cpl.CouplingBudgetError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    resolved = dict(cfg)
    resolved["threads"] = None     # thread count must never matter to outputs
    write_json(os.path.join(args.out, "resolved_config.json"), resolved)
    return code


if __name__ == "__main__":
    sys.exit(main())
