"""Command-line interface: gen, rasterize, train, eval, simulate, report.

Every command is a pure function of its inputs and the resolved config; all
outputs are written with a fixed float format so reruns are byte-identical.
Failures print one JSON object ``{"error": ..., "message": ...}`` on stderr
and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, baselines, bev, config, data, metrics, net, sim

log = logging.getLogger("polytraj")

SCENARIO_SUFFIX = ".scn.jsonl"
PARAMS_SIDECAR = ".json"
EVAL_FORMAT = "polytraj-eval/1"
SIM_FORMAT = "polytraj-sim/1"
EVAL_BASELINES = ("constant_velocity", "physics_oracle")
SIM_BASELINES = {
    "oracle": sim.OraclePredictor,
    "constant_velocity": sim.ConstantVelocityPredictor,
    "zero_speed": sim.ZeroSpeedPredictor,
}
AGENT_GROUPS = ("1", "2", "3", "4", "5", "6+")
CDF_THRESHOLDS = [round(0.25 * i, 2) for i in range(41)]  # 0 .. 10 m


class CliError(Exception):
    """Expected failure with a machine-readable kind."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError("missing_file", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CliError("bad_file", f"{path} is not valid JSON: {exc}") from exc


def _scenario_files(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise CliError("missing_file", f"scenario directory {directory} does not exist")
    files = sorted(d.glob("*" + SCENARIO_SUFFIX))
    if not files:
        raise CliError("missing_file", f"no *{SCENARIO_SUFFIX} files in {directory}")
    return files


def _load_logs(directory, cfg: dict) -> list:
    logs = [data.parse_scenario(f) for f in _scenario_files(directory)]
    sigma = float(cfg["data"]["jitter"])
    if sigma > 0:
        seed = int(cfg["data"]["jitter_seed"])
        logs = [data.jitter(lg, sigma, seed + i) for i, lg in enumerate(logs)]
    return sorted(logs, key=lambda lg: lg.id)


def _cut(logs, cfg: dict, horizon: int, arch: net.ArchConfig | None = None) -> list:
    kw = {}
    if arch is not None:
        kw = {"ego_past": arch.ego_past, "neighbor_past": arch.neighbor_past, "max_neighbors": arch.max_neighbors}
    out = []
    for lg in logs:
        out.extend(data.cut_samples(lg, stride=int(cfg["data"]["stride"]), horizon=horizon, **kw))
    return out


def _load_model(path) -> tuple:
    side = _read_json(str(path) + PARAMS_SIDECAR)
    try:
        arch_d = dict(side["arch"])
    except (KeyError, TypeError) as exc:
        raise CliError("bad_file", f"{path}{PARAMS_SIDECAR} lacks an arch section") from exc
    arch = net.ArchConfig(**arch_d)
    return net.load_params(path, arch), side


# --- gen / rasterize ---------------------------------------------------------


def cmd_gen(args, cfg) -> int:
    params = dict(config.parse_override("gen." + p)[1:] for p in args.param)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seed in range(args.seed, args.seed + args.count):
        lg = data.gen_synthetic(args.kind, seed, params)
        path = out / f"{lg.id}{SCENARIO_SUFFIX}"
        data.write_scenario(lg, path)
        print(path)
    return 0


def cmd_rasterize(args, cfg) -> int:
    lg = data.parse_scenario(args.scenario)
    if not 0 <= args.frame < len(lg.frames):
        raise CliError("bad_argument", f"frame {args.frame} outside 0..{len(lg.frames) - 1}")
    start = max(0, args.frame - bev.N_FRAMES + 1)
    history, padded = bev.pad_history([f.snapshot() for f in lg.frames[start : args.frame + 1]])
    if padded:
        log.warning("history padded to %d frames", bev.N_FRAMES)
    bev.dump(bev.accumulate(history, lg.frames[args.frame].ego), args.out)
    return 0


# --- train -------------------------------------------------------------------


def cmd_train(args, cfg) -> int:
    for ablation in args.ablate or []:
        if ablation == "bev":
            cfg = config.with_values(cfg, "arch", use_bev=False)
        else:  # multimodal
            cfg = config.with_values(cfg, "arch", K=1)
    arch = config.build(cfg, "arch")
    tcfg = config.build(cfg, "train")
    samples = _cut(_load_logs(args.data_dir, cfg), cfg, arch.T, arch)
    if not samples:
        raise CliError("no_data", "no training samples could be cut from the scenarios")
    feats = [net.encode_sample(s, arch) for s in samples]
    log.info("training on %d samples, %d parameters", len(feats), net.ModelParams(arch).size)
    params, history = net.train(
        feats, arch, tcfg, on_epoch=lambda e, loss: log.info("epoch %d loss %.4f", e + 1, loss)
    )
    net.save_params(params, args.out)
    _dump_json(
        {
            "format": "polytraj-params/1",
            "arch": asdict(arch),
            "config": cfg,
            "config_hash": config.config_hash(cfg),
            "n_samples": len(feats),
            "ablate": sorted(args.ablate or []),
        },
        str(args.out) + PARAMS_SIDECAR,
    )
    loss_csv = args.loss_csv or str(args.out) + ".loss.csv"
    with open(loss_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(history, start=1):
            w.writerow([i, repr(loss)])
    return 0


# --- eval --------------------------------------------------------------------


def _baseline_predict(name: str, sample: data.SceneSample, T: int, dt: float) -> tuple:
    if name == "constant_velocity":
        ego = baselines.constant_velocity(sample.ego_past, T, dt)
        nbs = [baselines.constant_velocity(p, T, dt) for p in sample.neighbor_pasts]
        return ego, nbs

    def oracle(track, gt):
        if len(gt) < T:  # excluded from the metrics anyway
            return baselines.constant_velocity(track, T, dt)
        return baselines.physics_oracle(track, gt, T, dt)

    ego = oracle(sample.ego_past, sample.ego_future.positions)
    nbs = [oracle(p, off) for p, off in zip(sample.neighbor_pasts, sample.neighbor_offsets)]
    return ego, nbs


def _group(n_agents: int) -> str:
    return str(n_agents) if n_agents < 6 else "6+"


def _metric_block(mixtures, gts, cfg) -> dict | None:
    p = metrics.PredictionSet(list(mixtures), list(gts))
    if len(p) == 0:
        return None
    ks = tuple(cfg["eval"]["top_k"])
    return metrics.evaluate(p, ks, float(cfg["eval"]["miss_radius"])).to_flat()


def _fde_lists(mixtures, gts) -> dict:
    p = metrics.PredictionSet(list(mixtures), list(gts))
    if len(p) == 0:
        return {"min": [], "conf": [], "weight": []}
    return metrics.fde_table(p)


def evaluate_dir(data_dir, cfg: dict, params: net.ModelParams | None = None, baseline: str | None = None) -> dict:
    if params is not None:
        T, dt, arch = params.arch.T, params.arch.dt, params.arch
    else:
        T, dt, arch = int(cfg["data"]["horizon"]), data.DT, None
    logs = _load_logs(data_dir, cfg)
    samples = _cut(logs, cfg, T, arch)
    if not samples:
        raise CliError("no_data", "no evaluation samples could be cut from the scenarios")
    ego_m, ego_g, nb_m, nb_g = [], [], [], []
    groups: dict = {g: ([], []) for g in AGENT_GROUPS}
    for s in samples:
        if params is not None:
            pred = net.forward(params, s)
            ego, nbs = pred.for_command(s.command), pred.neighbors
        else:
            ego, nbs = _baseline_predict(baseline, s, T, dt)
        offsets = s.neighbor_offsets
        ego_m.append(ego)
        ego_g.append(s.ego_future.positions)
        nb_m.extend(nbs)
        nb_g.extend(offsets)
        gm, gg = groups[_group(1 + len(nbs))]
        gm.extend([ego, *nbs])
        gg.extend([s.ego_future.positions, *offsets])
    overall = _metric_block(ego_m + nb_m, ego_g + nb_g, cfg)
    if overall is None:
        raise CliError("no_data", "no agent has a ground-truth future covering the horizon")
    return {
        "format": EVAL_FORMAT,
        "K": ego_m[0].K,
        "T": T,
        "n_samples": len(samples),
        "scenarios": [lg.id for lg in logs],
        "overall": overall,
        "ego": _metric_block(ego_m, ego_g, cfg),
        "neighbors": _metric_block(nb_m, nb_g, cfg),
        "by_agents": {g: _metric_block(m, gt, cfg) for g, (m, gt) in groups.items()},
        "fde": {"ego": _fde_lists(ego_m, ego_g), "neighbors": _fde_lists(nb_m, nb_g)},
    }


def cmd_eval(args, cfg) -> int:
    if args.top_k:
        cfg = config.with_values(cfg, "eval", top_k=sorted(set(args.top_k)))
    if args.params:
        params, side = _load_model(args.params)
        report = evaluate_dir(args.data_dir, cfg, params=params)
        report["source"] = "params:" + Path(args.params).name
        report["model_config_hash"] = side.get("config_hash")
        label = args.label or Path(args.params).stem
    else:
        report = evaluate_dir(args.data_dir, cfg, baseline=args.baseline)
        report["source"] = "baseline:" + args.baseline
        label = args.label or args.baseline
    report["label"] = label
    report["config_hash"] = config.config_hash(cfg)
    _dump_json(report, args.out)
    return 0


# --- simulate ----------------------------------------------------------------


def cmd_simulate(args, cfg) -> int:
    scfg = config.build(cfg, "sim")
    if args.params:
        params, side = _load_model(args.params)
        predictor = sim.ModelPredictor(params)
        label = args.label or Path(args.params).stem
    else:
        predictor = SIM_BASELINES[args.baseline](scfg.horizon)
        label = args.label or args.baseline
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for lg in sorted((data.parse_scenario(f) for f in _scenario_files(args.scenario_dir)), key=lambda g: g.id):
        trace: list = []
        rep = sim.run_closed_loop(lg, predictor, scfg, trace)
        _dump_json(rep.to_dict(), out / f"{lg.id}.sim.json")
        sim.write_trace_csv(trace, out / f"{lg.id}.trace.csv")
        rows.append(
            {
                "id": lg.id,
                "kind": lg.meta.get("kind", "unknown"),
                "counts": rep.counts,
                "distance": rep.distance,
                "valid": rep.valid,
                "error": rep.error,
            }
        )
        log.info("%s: %s", lg.id, rep.counts)
    totals = {k: sum(r["counts"][k] for r in rows) for k in sim.ERROR_KINDS}
    _dump_json(
        {
            "format": SIM_FORMAT,
            "label": label,
            "predictor": predictor.name,
            "config_hash": config.config_hash(cfg),
            "scenarios": rows,
            "totals": totals,
            "all_valid": all(r["valid"] for r in rows),
        },
        out / "summary.json",
    )
    return 0 if all(r["valid"] for r in rows) else 1


# --- report ------------------------------------------------------------------


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.3f}"


def _md_table(header: list, rows: list) -> list:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return lines


def render_tables(evals: list, sims: list) -> str:
    out = []
    if evals:
        for metric in ("minMSD", "minADE"):
            out += [f"## {metric} by number of agents", ""]
            rows = []
            for r in evals:
                cells = [_fmt(None if r["by_agents"].get(g) is None else r["by_agents"][g][metric]) for g in AGENT_GROUPS]
                rows.append([r["label"], *cells])
            out += _md_table(["Number of agents", *AGENT_GROUPS], rows) + [""]
        out += ["## Number of mixture components", ""]
        rows = []
        for r in sorted(evals, key=lambda r: (-r["K"], r["label"])):
            cells = []
            for part in ("ego", "neighbors"):
                block = r.get(part)
                cells += [_fmt(block and block["minMSD"]), _fmt(block and block["minADE"])]
            rows.append([f"K={r['K']} ({r['label']})", *cells])
        header = ["", "Ego minMSD", "Ego minADE", "Neighbor minMSD", "Neighbor minADE"]
        out += _md_table(header, rows) + [""]
    if sims:
        kinds = sorted({row["kind"] for s in sims for row in s["scenarios"]})
        out += ["## Closed-loop failures", ""]
        header = ["Failures"] + [f"{k} {e}" for k in kinds for e in ("lat", "high", "low")]
        rows = []
        for s in sims:
            cells = []
            for k in kinds:
                sel = [row for row in s["scenarios"] if row["kind"] == k]
                for e in ("lateral", "high", "low"):
                    cells.append(str(sum(row["counts"][e] for row in sel)) if sel else "-")
            rows.append([s["label"], *cells])
        out += _md_table(header, rows) + [""]
    return "\n".join(out)


def write_cdf_csv(evals: list, path) -> None:
    cols, series = ["threshold_m"], []
    for r in evals:
        for part in ("ego", "neighbors"):
            for kind in ("conf", "weight", "min"):
                cols.append(f"{r['label']}:{part}:{kind}FDE")
                series.append(metrics.cumulative_curve(r["fde"][part][kind], CDF_THRESHOLDS))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, th in enumerate(CDF_THRESHOLDS):
            w.writerow([f"{th:.2f}", *(f"{s[i]:.4f}" for s in series)])


def cmd_report(args, cfg) -> int:
    evals = [_read_json(p) for p in args.eval or []]
    sims = [_read_json(p) for p in args.sim or []]
    for r in evals:
        if r.get("format") != EVAL_FORMAT:
            raise CliError("bad_file", f"{r.get('label', '?')}: not an eval report")
    for s in sims:
        if s.get("format") != SIM_FORMAT:
            raise CliError("bad_file", f"{s.get('label', '?')}: not a simulation summary")
    if not evals and not sims:
        raise CliError("bad_argument", "report needs at least one --eval or --sim input")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tables.md").write_text(render_tables(evals, sims))
    if evals:
        write_cdf_csv(evals, out / "cumulative_fde.csv")
    return 0


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="config override")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="polytraj", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate synthetic scenarios")
    g.add_argument("--kind", required=True, choices=data.KINDS)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--param", action="append", default=[], metavar="KEY=VALUE", help="generator parameter")

    r = sub.add_parser("rasterize", parents=[common], help="dump the BEV tensor at one frame")
    r.add_argument("--scenario", required=True)
    r.add_argument("--frame", type=int, required=True)
    r.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[common], help="train the predictor")
    t.add_argument("--data-dir", required=True)
    t.add_argument("--out", required=True, help="parameter file to write")
    t.add_argument("--ablate", action="append", choices=("bev", "multimodal"))
    t.add_argument("--loss-csv")

    e = sub.add_parser("eval", parents=[common], help="offline metrics")
    e.add_argument("--data-dir", required=True)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--params")
    src.add_argument("--baseline", choices=EVAL_BASELINES)
    e.add_argument("--top-k", type=int, action="append")
    e.add_argument("--label")
    e.add_argument("--out", required=True)

    s = sub.add_parser("simulate", parents=[common], help="closed-loop replay")
    s.add_argument("--scenario-dir", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--params")
    src.add_argument("--baseline", choices=sorted(SIM_BASELINES))
    s.add_argument("--label")
    s.add_argument("--out-dir", required=True)

    rp = sub.add_parser("report", parents=[common], help="markdown tables and cumulative FDE curve")
    rp.add_argument("--eval", action="append", metavar="EVAL_JSON")
    rp.add_argument("--sim", action="append", metavar="SIM_SUMMARY_JSON")
    rp.add_argument("--out-dir", required=True)
    return p


COMMANDS = {
    "gen": cmd_gen,
    "rasterize": cmd_rasterize,
    "train": cmd_train,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = config.load(args.config, args.set)
        return COMMANDS[args.command](args, cfg)
    except config.ConfigError as exc:
        return _fail("config", str(exc), 2)
    except CliError as exc:
        return _fail(exc.kind, str(exc), 1)
    except data.ScenarioFormatError as exc:
        return _fail("scenario_format", str(exc), 1)
    except net.ParamFileError as exc:
        return _fail("param_file", str(exc), 1)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail("missing_file", f"{exc.filename}: {exc.strerror}", 1)
    except (ValueError, IndexError, FloatingPointError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
