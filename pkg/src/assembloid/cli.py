"""Command-line entry point: ``assembloid {gen,train-denoiser,assemble,baseline,evaluate,plot}``.

Logs go to stderr; stdout carries one JSON summary per invocation.
Exit codes: 0 success, 1 every unit of work failed, 2 some failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .assembler import assemble
from .baselines import SimpleConfig, simple_optimize
from .config import ConfigError, ExperimentConfig, from_dict, load_config
from .datagen import LEVELS, ShapeSpec, generate_scene, perturb
from .diffusion import GaussianMixtureDenoiser, MemorizedShapeDenoiser, linear_schedule, sample
from .io import load_scene, save_scene, snapshot_ply, write_json
from .metrics import TABLE_COLUMNS, MetricsReport, evaluate, mean_row, table_csv
from .svgplot import line_chart
from .tiny import TinyDenoiser, TrainingError, train_tiny_denoiser

log = logging.getLogger("assembloid")

METRIC_KEYS = ("scd", "pa", "fpa", "rmse_trans", "rmse_rot")


def task_rng(seed: int, scene_id: str, trial: int, n: int = 2) -> list[np.random.Generator]:
    """Generators owned by one (scene, trial); independent of worker count and order."""
    ss = np.random.SeedSequence([seed, zlib.crc32(scene_id.encode()), trial])
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def make_denoiser(cfg: ExperimentConfig, gt):
    spec = cfg.denoiser
    if spec.kind == "memorized":
        return MemorizedShapeDenoiser(gt.render(), mode=cfg.assembly.denoise_mode, blend=spec.blend)
    if spec.kind == "gmm":
        return GaussianMixtureDenoiser.from_shape(gt.render(), spec.variance)
    return TinyDenoiser.load(spec.checkpoint)


def _compact(rep: MetricsReport) -> dict:
    return {k: getattr(rep, k) for k in METRIC_KEYS}


def _scene_ids(dataset) -> list[str]:
    return json.loads((Path(dataset) / "manifest.json").read_text())["scenes"]


def _pool_map(fn, tasks, workers):
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


# ---------------------------------------------------------------------------
# gen


def cmd_gen(cfg: ExperimentConfig, out: Path) -> dict:
    g = cfg.gen
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot write dataset to {out}: {e}") from e
    ids = []
    for k in range(g.count):
        sid = f"scene_{k:04d}"
        seed = int(np.random.SeedSequence([cfg.seed, k]).generate_state(1)[0])
        spec = ShapeSpec(g.family, g.points_per_part, seed, g.legs, g.arms)
        scene, meta = generate_scene(spec)
        save_scene(out / sid, scene, sid, seed, extra={"family": g.family})
        ids.append(sid)
    write_json(out / "manifest.json", {
        "family": g.family, "count": g.count, "seed": cfg.seed,
        "points_per_part": g.points_per_part, "legs": g.legs, "arms": g.arms, "scenes": ids,
    })
    return {"command": "gen", "dataset": str(out), "scenes": len(ids)}


# ---------------------------------------------------------------------------
# train-denoiser


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    scenes = [load_scene(Path(cfg.dataset) / sid)[0] for sid in _scene_ids(cfg.dataset)]
    schedule = linear_schedule(cfg.schedule.Z, cfg.schedule.sigma_max)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model = train_tiny_denoiser(scenes, schedule, cfg.train, np.random.default_rng(cfg.seed),
                                    cfg.schedule.sigma_max, log=log.info)
    except TrainingError as e:
        if e.last_stable is not None:
            e.last_stable.save(out / "denoiser.last_stable.ckpt")
        raise
    model.save(out / "denoiser.ckpt")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train", "eval"])
    for row in model.losses:
        w.writerow([row["epoch"], repr(row["train"]), repr(row["eval"])])
    (out / "loss_curve.csv").write_text(buf.getvalue())
    first, last = model.losses[0]["eval"], model.losses[-1]["eval"]
    return {"command": "train-denoiser", "checkpoint": str(out / "denoiser.ckpt"),
            "initial_loss": first, "final_loss": last, "ratio": last / first}


# ---------------------------------------------------------------------------
# assemble


def _assemble_task(task):
    cfg_dict, scene_id, trial, out_dir = task
    cfg = from_dict(ExperimentConfig, cfg_dict)
    run_dir = Path(out_dir) / scene_id / f"t{trial}"
    try:
        gt, _ = load_scene(Path(cfg.dataset) / scene_id)
        rng_perturb, rng_run = task_rng(cfg.seed, scene_id, trial)
        start = perturb(gt, LEVELS[cfg.level], rng_perturb)
        den = make_denoiser(cfg, gt)
        schedule = linear_schedule(cfg.schedule.Z, cfg.schedule.sigma_max)
        snap = cfg.snapshot_every
        if snap:
            (run_dir / "snapshots").mkdir(parents=True, exist_ok=True)
        run_dir.mkdir(parents=True, exist_ok=True)
        initial = {}

        def on_step(t, scene, record):
            m = _compact(evaluate(scene, gt, cfg.thre, cfg.rot_mode))
            if record is None:
                initial.update(m)
            else:
                record.metrics = m
            if snap and t % snap == 0:
                snapshot_ply(run_dir / "snapshots" / f"iter_{t:04d}.ply", scene)

        final, trace = assemble(start, den, schedule, cfg.assembly, rng_run, on_step=on_step)
        trace.initial_metrics = initial
        (run_dir / "trace.jsonl").write_text(trace.to_jsonl())
        save_scene(run_dir / "final", final, scene_id, extra={"trial": trial, "level": cfg.level})
        report = evaluate(final, gt, cfg.thre, cfg.rot_mode)
        write_json(run_dir / "report.json", {
            "scene_id": scene_id, "trial": trial, "level": cfg.level,
            "denoiser": cfg.denoiser.kind, "assembly": cfg.to_json()["assembly"],
            "metrics": report.to_json(),
        })
        return {"scene_id": scene_id, "trial": trial, "report": report.to_json()}
    except Exception as e:  # recorded per scene; the run continues
        log.error("scene %s trial %d failed: %s", scene_id, trial, e)
        return {"scene_id": scene_id, "trial": trial, "error": f"{type(e).__name__}: {e}"}


def _collect(results, out: Path, command: str, cfg: ExperimentConfig) -> tuple[dict, int]:
    ok = [r for r in results if "report" in r]
    failed = [{"scene_id": r["scene_id"], "trial": r["trial"], "error": r["error"]} for r in results if "error" in r]
    reports = [(f"{r['scene_id']}/t{r['trial']}", _report_from_json(r["report"])) for r in ok]
    (out / "aggregate.csv").write_text(table_csv(reports))
    mean = dict(zip(TABLE_COLUMNS, mean_row([rep for _, rep in reports]))) if reports else {}
    summary = {"command": command, "output": str(out), "level": cfg.level, "denoiser": cfg.denoiser.kind,
               "runs": len(results), "succeeded": len(ok), "failed": failed, "mean": mean}
    write_json(out / "summary.json", summary)
    code = 0 if not failed else (1 if not ok else 2)
    return summary, code


def _report_from_json(d: dict) -> MetricsReport:
    return MetricsReport(d["scd"], d["pa"], d["fpa"], d["rmse_trans"], d["rmse_rot"],
                         d["rot_mode"], d["thre"], d["per_part"])


def cmd_assemble(cfg: ExperimentConfig, out: Path) -> tuple[dict, int]:
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = cfg.to_json()
    tasks = [(cfg_dict, sid, k, str(out)) for sid in _scene_ids(cfg.dataset) for k in range(cfg.trials)]
    results = _pool_map(_assemble_task, tasks, cfg.workers)
    return _collect(results, out, "assemble", cfg)


# ---------------------------------------------------------------------------
# baseline


def _baseline_task(task):
    cfg_dict, scene_id, trial, out_dir = task
    cfg = from_dict(ExperimentConfig, cfg_dict)
    run_dir = Path(out_dir) / scene_id / f"t{trial}"
    try:
        gt, _ = load_scene(Path(cfg.dataset) / scene_id)
        rng_perturb, _ = task_rng(cfg.seed, scene_id, trial)
        start = perturb(gt, LEVELS[cfg.level], rng_perturb)
        den = make_denoiser(cfg, gt)
        # the reference depends on (seed, scene) only, so every trial shares it
        (rng_ref,) = task_rng(cfg.seed, scene_id + "#reference", 0, n=1)
        sched = linear_schedule(cfg.simple.sample_Z, cfg.schedule.sigma_max)
        ref = sample(den, sched, gt.label, len(gt.render()), rng_ref, mode=cfg.assembly.denoise_mode)
        scfg = SimpleConfig(ref, cfg.simple.learning_rate, cfg.simple.iterations, cfg.simple.momentum)
        final, res = simple_optimize(start, scfg)
        run_dir.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "best"])
        for k, (a, b) in enumerate(zip(res.losses, res.best_losses)):
            w.writerow([k, repr(a), repr(b)])
        (run_dir / "loss_curve.csv").write_text(buf.getvalue())
        save_scene(run_dir / "final", final, scene_id, extra={"trial": trial, "level": cfg.level})
        snapshot_ply(run_dir / "final.ply", final)
        report = evaluate(final, gt, cfg.thre, cfg.rot_mode)
        write_json(run_dir / "report.json", {
            "scene_id": scene_id, "trial": trial, "level": cfg.level, "method": "simple",
            "simple": cfg.to_json()["simple"], "diverged": res.diverged, "metrics": report.to_json(),
        })
        return {"scene_id": scene_id, "trial": trial, "report": report.to_json()}
    except Exception as e:
        log.error("scene %s trial %d failed: %s", scene_id, trial, e)
        return {"scene_id": scene_id, "trial": trial, "error": f"{type(e).__name__}: {e}"}


def cmd_baseline(cfg: ExperimentConfig, out: Path) -> tuple[dict, int]:
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = cfg.to_json()
    tasks = [(cfg_dict, sid, k, str(out)) for sid in _scene_ids(cfg.dataset) for k in range(cfg.trials)]
    results = _pool_map(_baseline_task, tasks, cfg.workers)
    return _collect(results, out, "baseline", cfg)


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(cfg: ExperimentConfig, pred_dir: Path, gt_dir: Path, out: Path) -> tuple[dict, int]:
    out.mkdir(parents=True, exist_ok=True)
    rows, missing, entries = [], [], {}
    for path in sorted(Path(pred_dir).rglob("scene.json")):
        pred, manifest = load_scene(path.parent)
        sid = manifest["scene_id"]
        key = str(path.parent.relative_to(pred_dir)) if path.parent != Path(pred_dir) else sid
        gt_path = Path(gt_dir) / sid
        if not (gt_path / "scene.json").is_file():
            missing.append(key)
            continue
        rep = evaluate(pred, load_scene(gt_path)[0], cfg.thre, cfg.rot_mode)
        entries[key] = {"scene_id": sid, "metrics": rep.to_json()}
        rows.append((key, rep))
    (out / "evaluation.csv").write_text(table_csv(rows))
    mean = dict(zip(TABLE_COLUMNS, mean_row([r for _, r in rows]))) if rows else {}
    write_json(out / "evaluation.json", {"scenes": entries, "missing": missing, "mean": mean})
    summary = {"command": "evaluate", "evaluated": len(rows), "missing": missing, "mean": mean,
               "output": str(out / "evaluation.json")}
    code = 0 if not missing else (1 if not rows else 2)
    return summary, code


# ---------------------------------------------------------------------------
# plot


def read_traces(results: Path) -> list[tuple[str, list[dict]]]:
    """``[(run name, [metrics at t=0..T])]`` for every trace under ``results``."""
    out = []
    for path in sorted(Path(results).rglob("trace.jsonl")):
        rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        metrics = [r.get("metrics") for r in rows]
        if not rows or any(m is None for m in metrics):
            log.warning("skipping %s: empty trace or no metrics", path)
            continue
        out.append((str(path.parent.relative_to(results)), metrics))
    return out


def cmd_plot(results_dirs: list[Path], out: Path | None = None) -> dict:
    written = []
    for res in results_dirs:
        traces = read_traces(res)
        if not traces:
            log.warning("no usable traces under %s", res)
            continue
        pdir = Path(res) / "plots"
        pdir.mkdir(parents=True, exist_ok=True)
        for key in METRIC_KEYS:
            series = [(name, list(range(len(ms))), [m[key] for m in ms]) for name, ms in traces]
            svg = line_chart(series, f"{key} vs iteration", "iteration", key)
            (pdir / f"{key}.svg").write_text(svg)
            written.append(str(pdir / f"{key}.svg"))
    summaries = []
    for res in results_dirs:
        p = Path(res) / "summary.json"
        if p.is_file():
            s = json.loads(p.read_text())
            if s.get("mean") and s.get("level") in LEVELS:
                summaries.append(s)
    if len(summaries) >= 2:
        order = list(LEVELS)
        summaries.sort(key=lambda s: order.index(s["level"]))
        pdir = Path(out or results_dirs[0]) / "plots"
        pdir.mkdir(parents=True, exist_ok=True)
        xs = [order.index(s["level"]) for s in summaries]
        for col in TABLE_COLUMNS:
            name = col.split("(")[0].lower()
            svg = line_chart([(col, xs, [s["mean"][col] for s in summaries])],
                             f"{col} vs noise level (0=slight .. 3=excessive)", "level", col)
            (pdir / f"levels_{name}.svg").write_text(svg)
            written.append(str(pdir / f"levels_{name}.svg"))
    return {"command": "plot", "files": written}


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="assembloid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", type=Path, help="output directory (default: config 'output')")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    def run_opts(sp):
        sp.add_argument("--dataset", type=Path)
        sp.add_argument("--level", choices=list(LEVELS))
        sp.add_argument("--trials", type=int)
        sp.add_argument("--denoiser", choices=["memorized", "gmm", "tiny"])
        sp.add_argument("--checkpoint", type=Path)
        sp.add_argument("--denoise-mode", choices=["literal", "ddpm"])
        return sp

    g = common(sub.add_parser("gen", help="generate a synthetic dataset"))
    g.add_argument("--count", type=int)
    g.add_argument("--family", choices=["chair", "table", "airplane"])
    g.add_argument("--points-per-part", type=int)
    g.add_argument("--legs", type=int, choices=[2, 4])

    t = common(sub.add_parser("train-denoiser", help="train the tiny noise predictor"))
    t.add_argument("--dataset", type=Path)
    t.add_argument("--epochs", type=int)

    a = run_opts(common(sub.add_parser("assemble", help="run the iterative assembler")))
    a.add_argument("--snapshot-every", type=int)
    a.add_argument("--align-mode", choices=["kabsch", "icp"])
    a.add_argument("--push-trigger", choices=["above", "below"])
    a.add_argument("--collisions", action="store_true", help="enable push-away")
    a.add_argument("--T", type=int, dest="T")
    a.add_argument("--z", type=int)

    b = run_opts(common(sub.add_parser("baseline", help="run the Simple pose optimizer")))
    b.add_argument("--iterations", type=int)

    e = common(sub.add_parser("evaluate", help="score predicted scenes against ground truth"))
    e.add_argument("--pred", type=Path, required=True)
    e.add_argument("--gt", type=Path, required=True)

    pl = common(sub.add_parser("plot", help="render SVG curves from assembly traces"))
    pl.add_argument("results", type=Path, nargs="+")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    simple = {
        "seed": ("seed",), "workers": ("workers",), "dataset": ("dataset",), "level": ("level",),
        "trials": ("trials",), "snapshot_every": ("snapshot_every",),
        "count": ("gen", "count"), "family": ("gen", "family"), "points_per_part": ("gen", "points_per_part"),
        "legs": ("gen", "legs"), "epochs": ("train", "epochs"),
        "denoiser": ("denoiser", "kind"), "checkpoint": ("denoiser", "checkpoint"),
        "denoise_mode": ("assembly", "denoise_mode"), "align_mode": ("assembly", "align_mode"),
        "push_trigger": ("assembly", "collision", "trigger"), "T": ("assembly", "T"), "z": ("assembly", "z"),
        "iterations": ("simple", "iterations"),
    }
    for arg, path in simple.items():
        value = getattr(args, arg, None)
        if value is None:
            continue
        target = cfg
        for attr in path[:-1]:
            target = getattr(target, attr)
        setattr(target, path[-1], str(value) if isinstance(value, Path) else value)
    if getattr(args, "collisions", False):
        cfg.assembly.collision.enabled = True
    if os.environ.get("ASSEMBLOID_OUT"):
        cfg.output = os.environ["ASSEMBLOID_OUT"]
    # re-run validation of nested dataclasses after overrides
    return from_dict(ExperimentConfig, cfg.to_json())


def _check_denoise_mode(cfg: ExperimentConfig) -> None:
    if cfg.denoiser.kind != "memorized" and cfg.assembly.denoise_mode == "literal":
        log.warning("%s predicts unit-variance noise; literal denoising will overshoot, "
                    "consider --denoise-mode ddpm", cfg.denoiser.kind)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        root = Path(cfg.output)
        code = 0
        if args.command == "gen":
            summary = cmd_gen(cfg, args.out or root / "dataset")
        elif args.command == "train-denoiser":
            cfg.validate(need_dataset=False)
            if not cfg.dataset or not (Path(cfg.dataset) / "manifest.json").is_file():
                raise ConfigError(f"dataset {cfg.dataset!r} has no manifest.json")
            summary = cmd_train(cfg, args.out or root / "denoiser")
        elif args.command == "assemble":
            cfg.validate(need_dataset=True)
            _check_denoise_mode(cfg)
            summary, code = cmd_assemble(cfg, args.out or root / "assemble")
        elif args.command == "baseline":
            cfg.validate(need_dataset=True)
            _check_denoise_mode(cfg)
            summary, code = cmd_baseline(cfg, args.out or root / "baseline")
        elif args.command == "evaluate":
            cfg.validate()
            summary, code = cmd_evaluate(cfg, args.pred, args.gt, args.out or root / "evaluation")
        else:
            summary = cmd_plot(args.results, args.out)
            code = 0 if summary["files"] else 1
    except (ConfigError, OSError, TrainingError) as e:
        log.error("%s", e)
        print(json.dumps({"command": args.command, "error": str(e)}, sort_keys=True))
        return 1
    print(json.dumps(summary, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
