"""``eventvel`` command line.

Every subcommand is a pure function of its inputs, the effective run
configuration and the seed. Outputs go to ``--out`` (or the per-command
``--output`` file) and the effective configuration is echoed next to them
as ``run_config.json``.

Exit codes: 0 success, 1 numerical or internal failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plotting
from .calibration import (
    SCORE_LABEL,
    CalibrationResult,
    apply_calibration,
    fit_scale_factors,
    normalize_trajectory,
    pearson,
    score_trajectory,
)
from .dataio import (
    Split,
    align_by_time,
    atomic_write,
    read_sequence,
    read_submission,
    read_truth,
    summarize,
    write_submission,
    write_sequence,
    write_truth,
)
from .egomotion import estimate_sequence
from .errors import (
    ConfigurationError,
    EventVelError,
    InputValidationError,
    MissingFileError,
    MissingInputError,
    NumericalError,
    UndefinedCorrelationError,
)
from .events import accumulate
from .homography import Homography, estimate_frames, warp_frame
from .runconfig import EULER_CONVENTIONS, RunConfig, resolve
from .simulator import SimulationConfig, generate_sequence, random_descent

logger = logging.getLogger("eventvel")

DEFAULT_OUT = "out"
AXES = ("x", "y", "z")


# pipeline helpers (top level so worker processes can pickle them) -------


def _truth_velocities(seq_dir: Path, seq) -> tuple[np.ndarray, np.ndarray] | None:
    """Ground-truth (times, velocities) for a sequence, or None if unknown."""
    if seq.split is Split.TRAIN:
        return seq.state_times(), seq.velocities()
    truth = read_truth(seq_dir)
    if truth is None:
        return None
    return np.array([s.t for s in truth]), np.array([s.vel for s in truth])


def _interp_truth(truth, t) -> np.ndarray:
    tt, vv = truth
    return np.column_stack([np.interp(t, tt, vv[:, a]) for a in range(3)])


def _run_sequence(seq_dir: str, cfg: RunConfig, need_truth: bool) -> dict:
    """Estimate one sequence. Errors come back as data so they survive pickling."""
    try:
        d = Path(seq_dir)
        seq = read_sequence(d)
        ego = cfg.egomotion(seq.stream.sensor_width, seq.stream.sensor_height)
        samples = estimate_sequence(seq.stream, seq.range_series(), seq.attitude_series(), ego, seq.t_stop_us)
        t = np.array([s.t_s for s in samples])
        v = np.array([s.v for s in samples]).reshape(-1, 3)
        out = {"id": seq.id, "t": t, "v": v, "state_t": seq.state_times(), "truth": None}
        out["gap_filled"] = int(sum(s.gap_filled for s in samples))
        if need_truth:
            truth = _truth_velocities(d, seq)
            if truth is None:
                raise MissingInputError(f"sequence {seq.id!r} has no ground truth", path=d)
            out["truth"] = _interp_truth(truth, t)
        return out
    except InputValidationError as exc:
        return {"error": "input", "message": f"{seq_dir}: {exc}"}
    except NumericalError as exc:
        return {"error": "numerical", "message": f"{seq_dir}: {exc}"}


def _run_all(dirs, cfg: RunConfig, need_truth: bool) -> list[dict]:
    if cfg.jobs > 1 and len(dirs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(dirs))) as pool:
            results = list(pool.map(_run_sequence, dirs, [cfg] * len(dirs), [need_truth] * len(dirs)))
    else:
        results = [_run_sequence(d, cfg, need_truth) for d in dirs]
    for r in results:
        if "error" in r:
            cls = InputValidationError if r["error"] == "input" else NumericalError
            raise cls(r["message"])
        if r.get("gap_filled"):
            logger.warning("%s: %d pair(s) gap-filled", r["id"], r["gap_filled"])
    return results


def _out_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir or DEFAULT_OUT)


def _echo_config(cfg: RunConfig, directory: Path) -> None:
    atomic_write(directory / "run_config.json", cfg.to_json())


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_calibration(cfg: RunConfig, required: bool) -> CalibrationResult | None:
    if cfg.calibration_path is None:
        if required:
            raise MissingInputError("a calibration file is required (--calibration PATH); run 'calibrate' first")
        return None
    return CalibrationResult.load(cfg.calibration_path)


# commands ----------------------------------------------------------------


def cmd_summarize(args, cfg: RunConfig) -> int:
    seq = read_sequence(args.seq_dir)
    text = _dump_json(summarize(seq, cfg.windowing))
    sys.stdout.write(text)
    if cfg.output_dir is not None:
        out = Path(cfg.output_dir)
        atomic_write(out / "summary.json", text)
        _echo_config(cfg, out)
    return 0


def cmd_view_events(args, cfg: RunConfig) -> int:
    seq = read_sequence(args.seq_dir)
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    frames = accumulate(seq.stream, cfg.windowing)
    for k, fr in enumerate(frames):
        plotting.save_frame(fr, out / f"frame_{k:06d}.png")
    _echo_config(replace(cfg, output_dir=str(out)), out)
    print(f"wrote {len(frames)} frame(s) to {out}")
    return 0


def cmd_viz_warp(args, cfg: RunConfig) -> int:
    seq = read_sequence(args.seq_dir)
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    frames = [f for f in accumulate(seq.stream, cfg.windowing, seq.t_stop_us) if not f.partial]
    init = cfg.ecc.init
    pairs = []
    for k, (fa, fb) in enumerate(zip(frames[:-1], frames[1:])):
        entry = {"index": k, "t_start_us": fa.t_start, "t_end_us": fb.t_end, "error": None}
        if fa.event_count == 0 and fb.event_count == 0:
            h = Homography.identity()
            entry.update(ecc_value=None, iterations=0, converged=True)
        else:
            try:
                res = estimate_frames(fa, fb, replace(cfg.ecc, init=init))
                h = res.homography
                entry.update(ecc_value=res.ecc_value, iterations=res.iterations, converged=res.converged)
                init = h
            except NumericalError as exc:
                h = init
                entry.update(ecc_value=None, iterations=None, converged=False, error=str(exc))
                logger.warning("pair %d: %s", k, exc)
        warped, _ = warp_frame(fa.merged(), h)
        img, mad = plotting.triptych(fa.merged(), warped, fb.merged())
        name = f"pair_{k:06d}_mad{mad:.6f}.png"
        plotting.save_triptych(img, out / name)
        entry.update(mean_abs_diff=mad, homography=h.h.tolist(), file=name)
        pairs.append(entry)
    failed = [p["index"] for p in pairs if p["error"] is not None]
    report = {"sequence_id": seq.id, "pair_count": len(pairs), "failed_pairs": failed, "pairs": pairs}
    atomic_write(out / "report.json", _dump_json(report))
    _echo_config(replace(cfg, output_dir=str(out)), out)
    print(f"wrote {len(pairs)} triptych(s) to {out}; {len(failed)} failed pair(s)")
    return 0


def _safe_pearson(a, b):
    try:
        return pearson(a, b)
    except UndefinedCorrelationError:
        return None


def cmd_compare_vel(args, cfg: RunConfig) -> int:
    d = Path(args.seq_dir)
    seq = read_sequence(d)
    calib = _load_calibration(cfg, required=False)
    ego = cfg.egomotion(seq.stream.sensor_width, seq.stream.sensor_height)
    samples = estimate_sequence(seq.stream, seq.range_series(), seq.attitude_series(), ego, seq.t_stop_us)
    t = np.array([s.t_s for s in samples])
    est = np.array([s.v for s in samples]).reshape(-1, 3)
    if calib is not None:
        est = apply_calibration(est, calib.f)
    truth_src = _truth_velocities(d, seq)
    truth = None
    if truth_src is None:
        logger.warning("%s: no ground truth available; truth columns omitted", seq.id)
    else:
        truth = _interp_truth(truth_src, t)

    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    est_n, est_const = normalize_trajectory(est) if len(t) > 1 else (np.zeros_like(est), np.ones(3, bool))
    cols = [t[:, None], est]
    header = ["t"] + [f"est_v{a}" for a in AXES]
    corr = {a: None for a in AXES}
    truth_n = None
    if truth is not None:
        truth_n, _ = normalize_trajectory(truth) if len(t) > 1 else (np.zeros_like(truth), None)
        cols.append(truth)
        header += [f"truth_v{a}" for a in AXES]
        corr = {a: _safe_pearson(est[:, i], truth[:, i]) for i, a in enumerate(AXES)}
    cols.append(est_n)
    header += [f"est_norm_v{a}" for a in AXES]
    if truth_n is not None:
        cols.append(truth_n)
        header += [f"truth_norm_v{a}" for a in AXES]
    table = np.hstack(cols)
    lines = [",".join(header)] + [",".join(format(float(v), ".17g") for v in row) for row in table]
    atomic_write(out / "compare.csv", "\n".join(lines) + "\n")

    undefined = [a for a in AXES if truth is not None and corr[a] is None]
    atomic_write(
        out / "correlations.json",
        _dump_json({
            "sequence_id": seq.id,
            "truth_available": truth is not None,
            "calibrated": calib is not None,
            "pearson": corr,
            "undefined": undefined,
        }),
    )
    r = [corr[a] for a in AXES]
    plotting.plot_velocity_comparison(t, est, truth, out / "compare_raw.png", title=f"{seq.id} velocity", correlations=r)
    plotting.plot_velocity_comparison(
        t, est_n, truth_n, out / "compare_normalized.png", title=f"{seq.id} normalized velocity", normalized=True, correlations=r
    )
    _echo_config(replace(cfg, output_dir=str(out)), out)
    for a in AXES:
        shown = "n/a" if truth is None else ("undefined" if corr[a] is None else f"{corr[a]:.4f}")
        print(f"pearson v{a}: {shown}")
    return 0


def cmd_calibrate(args, cfg: RunConfig) -> int:
    results = _run_all(args.train_dirs, cfg, need_truth=True)
    res = fit_scale_factors([r["v"] for r in results], [r["truth"] for r in results])
    path = Path(args.output) if args.output else _out_dir(cfg) / "calibration.json"
    atomic_write(path, res.to_json())
    _echo_config(replace(cfg, output_dir=str(path.parent)), path.parent)
    f = ", ".join(f"{v:.6f}" for v in res.f)
    print(f"f = ({f}); residual RMS {res.residual_rms:.6f} m/s over {res.n_samples} samples")
    return 0


def cmd_estimate(args, cfg: RunConfig) -> int:
    calib = _load_calibration(cfg, required=True)
    results = _run_all(args.test_dirs, cfg, need_truth=False)
    ids = [r["id"] for r in results]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"duplicate sequence ids: {sorted(ids)}")
    estimates = {r["id"]: (r["t"], apply_calibration(r["v"], calib.f)) for r in results}
    targets = {r["id"]: r["state_t"] for r in results}
    path = Path(args.output) if args.output else _out_dir(cfg) / "submission.csv"
    write_submission(estimates, targets, path, cfg.max_extrapolation_s())
    _echo_config(replace(cfg, output_dir=str(path.parent)), path.parent)
    print(f"wrote {sum(len(v) for v in targets.values())} rows for {len(ids)} sequence(s) to {path}")
    return 0


def _truth_tables(paths) -> dict:
    truth = {}
    for p in map(Path, paths):
        if p.is_dir():
            seq = read_sequence(p)
            tv = _truth_velocities(p, seq)
            if tv is None:
                raise MissingInputError(f"sequence {seq.id!r} has no ground truth", path=p)
            items = {seq.id: tv}
        elif p.is_file():
            items = read_submission(p)
        else:
            raise MissingFileError("truth source not found", path=p)
        for sid, tv in items.items():
            if sid in truth:
                raise ConfigurationError(f"sequence {sid!r} given twice as truth")
            truth[sid] = tv
    return truth


def cmd_score(args, cfg: RunConfig) -> int:
    sub = read_submission(args.submission)
    truth = _truth_tables(args.truth)
    scores = {}
    for sid in sorted(truth):
        if sid not in sub:
            raise MissingInputError(f"submission has no rows for sequence {sid!r}", path=args.submission)
        (st, sv), (tt, tv) = sub[sid], truth[sid]
        align_by_time(st, tt, atol=1e-6)
        scores[sid] = score_trajectory(sv, tv)
    mean = float(np.mean([s.score for s in scores.values()]))
    for sid, s in scores.items():
        rm = ", ".join(f"{v:.6f}" for v in s.rmse_per_axis)
        print(f"{sid}: score {s.score:.6f} (rmse {rm})")
    print(f"mean: {mean:.6f}  [{SCORE_LABEL}]")
    if cfg.output_dir is not None:
        out = Path(cfg.output_dir)
        doc = {"label": SCORE_LABEL, "mean": mean, "sequences": {k: v.to_dict() for k, v in scores.items()}}
        atomic_write(out / "score.json", _dump_json(doc))
        _echo_config(cfg, out)
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    if args.profile is None:
        sim = random_descent(cfg.seed or 0)
    else:
        p = Path(args.profile)
        if not p.is_file():
            raise MissingFileError("profile not found", path=p)
        sim = SimulationConfig.load(p)
        if cfg.seed is not None:
            sim = replace(sim, scene=replace(sim.scene, texture_seed=cfg.seed))
    out = _out_dir(cfg)
    seq, truth = generate_sequence(sim, args.split)
    write_sequence(seq, out)
    if truth is not None:
        write_truth(truth, out)
    atomic_write(out / "profile.json", _dump_json(sim.to_dict()))
    _echo_config(replace(cfg, output_dir=str(out)), out)
    print(f"wrote sequence {seq.id!r} ({len(seq.stream)} events, split {seq.split.value}) to {out}")
    return 0


# argument parsing ----------------------------------------------------------


def _global_flags() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    s = argparse.SUPPRESS
    g.add_argument("--config", default=s, metavar="PATH", help="JSON run configuration")
    g.add_argument("--out", default=s, metavar="DIR", help="output directory")
    g.add_argument("--seed", type=int, default=s, metavar="N")
    g.add_argument("--dt-us", type=int, default=s, metavar="N", help="fixed-time window length in microseconds")
    g.add_argument("--window-count", type=int, default=s, metavar="N", help="fixed-count windows of N events")
    g.add_argument("--polarity-split", action="store_true", default=s, help="separate channels per polarity")
    g.add_argument("--sigma", type=float, default=s, metavar="F", help="ECC smoothing sigma in pixels")
    g.add_argument("--max-iter", type=int, default=s, metavar="N")
    g.add_argument("--eps", type=float, default=s, metavar="F")
    g.add_argument("--euler-convention", choices=EULER_CONVENTIONS, default=s)
    g.add_argument("--jobs", type=int, default=s, metavar="N", help="parallel worker processes")
    g.add_argument("-v", "--verbose", action="store_true", default=s)
    return g


def build_parser() -> argparse.ArgumentParser:
    g = _global_flags()
    parser = argparse.ArgumentParser(prog="eventvel", description="Lander velocity from event-camera data.", parents=[g])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("summarize", parents=[g], help="print sequence statistics as JSON")
    p.add_argument("seq_dir")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("view-events", parents=[g], help="write each accumulated frame as a PNG")
    p.add_argument("seq_dir")
    p.set_defaults(func=cmd_view_events)

    p = sub.add_parser("viz-warp", parents=[g], help="warp/difference triptych per frame pair")
    p.add_argument("seq_dir")
    p.set_defaults(func=cmd_viz_warp)

    p = sub.add_parser("compare-vel", aliases=["view-compare-vel3d"], parents=[g], help="estimated vs true velocity")
    p.add_argument("seq_dir")
    p.add_argument("--calibration", default=argparse.SUPPRESS, metavar="PATH")
    p.set_defaults(func=cmd_compare_vel)

    p = sub.add_parser("calibrate", parents=[g], help="fit per-axis scale factors on training sequences")
    p.add_argument("train_dirs", nargs="+")
    p.add_argument("--output", metavar="PATH", help="calibration JSON (default OUT/calibration.json)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("estimate", parents=[g], help="write a submission CSV for test sequences")
    p.add_argument("test_dirs", nargs="+")
    p.add_argument("--calibration", default=argparse.SUPPRESS, metavar="PATH")
    p.add_argument("--output", metavar="PATH", help="submission CSV (default OUT/submission.csv)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("score", parents=[g], help="score a submission against ground truth")
    p.add_argument("submission")
    p.add_argument("truth", nargs="+", help="truth CSV in submission format, or sequence directories")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("simulate", parents=[g], help="render a synthetic descent into a sequence directory")
    p.add_argument("profile", nargs="?", help="profile JSON (default: seeded random descent)")
    p.add_argument("--split", choices=[s.value for s in Split], default="train")
    p.set_defaults(func=cmd_simulate)
    return parser


def overrides_from_args(args) -> dict:
    """Translate the flags that were actually given into config overrides."""
    a = vars(args)
    o: dict = {}
    if "dt_us" in a and "window_count" in a:
        raise ConfigurationError("--dt-us and --window-count are mutually exclusive")
    win = {}
    if "dt_us" in a:
        win.update(mode="time", dt_us=a["dt_us"])
    if "window_count" in a:
        win.update(mode="count", count=a["window_count"])
    if a.get("polarity_split"):
        win["polarity_split"] = True
    if win:
        o["windowing"] = win
    ecc = {k: a[f] for k, f in (("smooth_sigma", "sigma"), ("max_iterations", "max_iter"), ("eps", "eps")) if f in a}
    if ecc:
        o["ecc"] = ecc
    for key, flag in (("output_dir", "out"), ("seed", "seed"), ("jobs", "jobs"), ("euler_convention", "euler_convention"), ("calibration_path", "calibration")):
        if flag in a:
            o[key] = a[flag]
    return o


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve(getattr(args, "config", None), overrides_from_args(args))
        return args.func(args, cfg)
    except InputValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except EventVelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
