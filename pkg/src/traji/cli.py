"""Command-line entry point: ``traji {generate,train,eval,ablate,ais}``.

Data artifacts go to files in the output directory; progress goes to
stderr. Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
3 training diverged (partial artifacts are kept).
"""
from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import logging
import os
import sys

import numpy as np

from . import ais, config, svg
from .env import TRAIN_STREAM, FamilyEnv, TrackEnv, env_reset, roi_from_points
from .families import FamilySpec, ParameterError, default_spec, family_names, sample_family_trajectory

log = logging.getLogger("traji")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --- helpers -------------------------------------------------------------------

def out_dir(flag: str | None, cfg_value: str | None = None) -> str:
    """``--out`` wins, then ``TRAJI_OUT``, then the config's ``out_dir``."""
    path = flag or os.environ.get("TRAJI_OUT") or cfg_value or "."
    os.makedirs(path, exist_ok=True)
    return path


def family_spec(value) -> FamilySpec:
    try:
        if isinstance(value, str):
            return default_spec(value)
        d = dict(value)
        base = default_spec(d["kind"]).to_dict() if d.get("kind") in family_names() else {}
        return FamilySpec.from_dict({**base, **d})
    except (KeyError, ParameterError) as exc:
        raise UsageError(f"bad family: {exc}") from exc


def family_env(spec: FamilySpec, env_cfg: dict) -> FamilyEnv:
    return FamilyEnv(spec, epsilon=env_cfg["epsilon"], smoothing=env_cfg["smoothing"], margin=env_cfg["margin"])


def write_text(path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def write_losses(path, history) -> None:
    lines = ["step,loss_name,value"] + [f"{s},{n},{float(v)!r}" for s, n, v in history]
    write_text(path, "\n".join(lines) + "\n")


def overlay(path, refs, rollouts, title):
    series = [svg.Series(r.states, "#bbbbbb", 1.0, "reference" if i == 0 else None) for i, r in enumerate(refs)]
    series += [svg.Series(t.states, svg.PALETTE[i % len(svg.PALETTE)], 1.5, "rollout" if i == 0 else None)
               for i, t in enumerate(rollouts)]
    svg.save(path, series, title)


def write_report(out, report, refs, rolls, family: str, agent_kind: str):
    write_text(os.path.join(out, "eval.csv"), report.to_csv())
    n_rep = int(report.representative.sum())
    write_text(os.path.join(out, "report.csv"),
               "family,agent,best_norm_dtw,n_representative,n_rows\n"
               f"{family},{agent_kind},{report.best!r},{n_rep},{report.matrix.size}\n")
    best = int(np.argmin(report.best_per_seed()))
    overlay(os.path.join(out, "eval_overlay.svg"), refs, rolls[best],
            f"{family} / {agent_kind}: best D~ = {report.best:.3f}")
    log.info("%s %s best D~ %.4f (%d/%d representative)", family, agent_kind, report.best, n_rep,
             report.matrix.size)


# --- generate --------------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = family_spec(args.family)
    if args.n < 1:
        raise UsageError("--n must be positive")
    out = out_dir(args.out)
    trajs = []
    for i in range(args.n):
        _, ref = env_reset(spec, args.seed, i, TRAIN_STREAM)
        ref.to_csv(os.path.join(out, f"{spec.kind}_{i:03d}.csv"))
        trajs.append(ref)
    lo, hi = spec.alpha_range
    series = [svg.Series(t.states, "#999999", 1.0) for t in trajs]
    series += [svg.Series(sample_family_trajectory(spec, lo).states, "#1f77b4", 2.0, f"alpha = {lo:g}"),
               svg.Series(sample_family_trajectory(spec, hi).states, "#2ca02c", 2.0, f"alpha = {hi:g}")]
    svg.save(os.path.join(out, f"{spec.kind}.svg"), series, f"{spec.kind} family")
    log.info("wrote %d %s trajectories to %s", args.n, spec.kind, out)
    return EXIT_OK


# --- train / eval / ablate ---------------------------------------------------------

def load_train_config(path, agent_flag: str | None):
    from .agents import AGENTS

    cfg = config.load(path, config.TRAIN_SCHEMA) if path else config.resolve(
        {"version": config.CONFIG_VERSION, "family": "Circles"}, config.TRAIN_SCHEMA)
    if agent_flag and cfg["agent"] and agent_flag != cfg["agent"]:
        raise config.ConfigError(f"--agent {agent_flag} conflicts with config agent {cfg['agent']!r}")
    kind = agent_flag or cfg["agent"] or "dati"
    if kind not in AGENTS:
        raise config.ConfigError(f"unknown agent {kind!r}")
    cfg["agent"] = kind
    spec = family_spec(cfg["family"])
    cfg["family"] = spec.to_dict()
    hyper = config.resolve_hyper(AGENTS[kind][0], cfg["hyper"])
    cfg["hyper"] = dataclasses.asdict(hyper)
    cfg["hyper"]["hidden"] = list(cfg["hyper"]["hidden"])
    return cfg, spec, hyper


def cmd_train(args) -> int:
    from .agents import AGENTS, TrainingDiverged, evaluate, save_checkpoint

    cfg, spec, hyper = load_train_config(args.config, args.agent)
    if args.seeds is not None:
        cfg["seeds"] = list(range(args.seeds))
    out = out_dir(args.out, cfg["out_dir"])
    config.dump(cfg, os.path.join(out, "config.resolved.json"))
    env = family_env(spec, cfg["env"])
    train = AGENTS[cfg["agent"]][2]
    meta = {"family": spec.to_dict(), "env": cfg["env"]}
    every = cfg["checkpoint_every"]
    agents = []
    for seed in cfg["seeds"]:
        def progress(ep, value, seed=seed):
            log.info("seed %d episode %d: %.4f", seed, ep, value)

        def on_episode(ep, agent, seed=seed):
            if every and (ep + 1) % every == 0 and ep + 1 < hyper.episodes:
                save_checkpoint(os.path.join(out, f"seed_{seed}_ep{ep + 1:03d}.npz"), agent, meta)

        kw = {"on_episode": on_episode} if cfg["agent"] != "bc" else {}
        try:
            agent = train(env, hyper, seed, progress=progress, **kw)
        except TrainingDiverged as exc:
            log.error("seed %d: %s", seed, exc)
            if exc.agent is not None:
                write_losses(os.path.join(out, f"losses_seed_{seed}.csv"), exc.agent.history)
                exc.agent.load_state(exc.checkpoint)
                save_checkpoint(os.path.join(out, f"seed_{seed}_diverged.npz"), exc.agent, meta)
            return EXIT_DIVERGED
        write_losses(os.path.join(out, f"losses_seed_{seed}.csv"), agent.history)
        save_checkpoint(os.path.join(out, f"seed_{seed}.npz"), agent, meta)
        agents.append(agent)
    report, refs, rolls = evaluate(agents, env, cfg["eval"]["n_refs"], cfg["eval"]["eval_seed"],
                                   cfg["seeds"], keep_rollouts=True)
    write_report(out, report, refs, rolls, spec.kind, cfg["agent"])
    return EXIT_OK


def checkpoint_files(paths) -> list[str]:
    files = []
    for p in paths:
        if os.path.isdir(p):
            found = sorted(glob.glob(os.path.join(p, "seed_*.npz")))
            files += [f for f in found if "_ep" not in os.path.basename(f) and "diverged" not in f]
        else:
            files.append(p)
    return files


def cmd_eval(args) -> int:
    from .agents import CheckpointError, PerfectAgent, evaluate, load_checkpoint

    env_cfg = dict(config.TRAIN_SCHEMA["env"])
    want = None
    if args.config:
        cfg = config.load(args.config, config.TRAIN_SCHEMA)
        want, env_cfg = family_spec(cfg["family"]), cfg["env"]
    if len(args.checkpoint) == 1 and args.checkpoint[0].startswith("perfect:"):
        spec = family_spec(args.checkpoint[0].split(":", 1)[1])
        env = family_env(spec, env_cfg)
        agents, kind = [PerfectAgent(env)], "perfect"
    else:
        files = checkpoint_files(args.checkpoint)
        if not files:
            raise UsageError("no checkpoints found")
        loaded = []
        for f in files:
            try:
                loaded.append(load_checkpoint(f))
            except (OSError, ValueError, KeyError) as exc:
                raise CheckpointError(f"{f}: {exc}") from exc
        specs = {json.dumps(m["family"], sort_keys=True) for _, m in loaded}
        kinds = {a.kind for a, _ in loaded}
        if len(specs) > 1 or len(kinds) > 1:
            raise CheckpointError("checkpoints disagree on family or agent")
        spec = FamilySpec.from_dict(loaded[0][1]["family"])
        if want is not None and want != spec:
            raise CheckpointError(f"checkpoint family {spec.kind} does not match config family {want.kind}")
        env_cfg = loaded[0][1].get("env", env_cfg) if want is None else env_cfg
        env = family_env(spec, env_cfg)
        agents, kind = [a for a, _ in loaded], kinds.pop()
    seeds = [getattr(a, "seed", i) for i, a in enumerate(agents)]
    if args.seeds is not None:
        if len(agents) == 1:
            agents, seeds = agents * args.seeds, list(range(args.seeds))
        else:
            agents, seeds = agents[: args.seeds], seeds[: args.seeds]
    out = out_dir(args.out)
    report, refs, rolls = evaluate(agents, env, args.refs, args.eval_seed, seeds, keep_rollouts=True)
    write_report(out, report, refs, rolls, spec.kind, kind)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .agents import ablate

    cfg, spec, hyper = load_train_config(args.config, "dati")
    if args.config is None:
        cfg["family"] = default_spec("Circles").to_dict()
        spec = default_spec("Circles")
    seeds = list(range(args.seeds)) if args.seeds is not None else cfg["seeds"]
    cfg["seeds"] = seeds
    out = out_dir(args.out, cfg["out_dir"])
    config.dump(cfg, os.path.join(out, "config.resolved.json"))
    env = family_env(spec, cfg["env"])
    top1, top2, report = ablate(args.variant, env, seeds, hyper, cfg["eval"]["n_refs"], cfg["eval"]["eval_seed"],
                                progress=lambda ep, v: log.info("episode %d: %.4f", ep, v))
    write_text(os.path.join(out, "eval.csv"), report.to_csv())
    write_text(os.path.join(out, "ablation.csv"), f"variant,top1,top2\n{args.variant},{top1!r},{top2!r}\n")
    log.info("%s: top-1 %.4f top-2 %.4f", args.variant, top1, top2)
    return EXIT_OK


# --- ais -----------------------------------------------------------------------

def _region(value):
    return None if value is None else ais.Region(value)


def cmd_ais(args) -> int:
    cfg = config.load(args.config, config.AIS_SCHEMA)
    out = out_dir(args.out, cfg["out_dir"])
    config.dump(cfg, os.path.join(out, f"ais_{args.stage}.resolved.json"))
    tracks_path = os.path.join(out, "tracks.ndjson")
    return AIS_STAGES[args.stage](cfg, out, tracks_path)


def ais_ingest(cfg, out, tracks_path) -> int:
    if not cfg["input"]:
        raise config.ConfigError("missing config key 'input'")
    region = ais.Region(cfg["region"], cfg["exclude"]) if cfg["region"] or cfg["exclude"] else None
    records, stats = ais.ingest_csv(cfg["input"], region, cfg["min_sog"], cfg["columns"])
    seg_stats = {}
    tracks = ais.segment_tracks(records, stats=seg_stats, **cfg["segment"])
    ais.write_tracks(tracks, tracks_path)
    rows = [("rows", stats.rows), ("kept", stats.kept), ("malformed", stats.malformed), ("slow", stats.slow),
            ("outside", stats.outside), ("duplicates", stats.duplicates),
            ("outliers", seg_stats.get("outliers", 0)), ("segments", seg_stats.get("segments", 0)),
            ("short_segments", seg_stats.get("short", 0)), ("tracks", len(tracks))]
    write_text(os.path.join(out, "ingest_stats.csv"), "stat,value\n" + "".join(f"{k},{v}\n" for k, v in rows))
    log.info("ingested %d records into %d tracks", stats.kept, len(tracks))
    return EXIT_OK


def _tracks(tracks_path):
    if not os.path.exists(tracks_path):
        raise UsageError(f"{tracks_path} not found; run 'traji ais ingest' first")
    return ais.read_tracks(tracks_path)


def ais_cluster(cfg, out, tracks_path) -> int:
    tracks = _tracks(tracks_path)
    clusters = ais.cluster_tracks(tracks)
    ais.write_tracks(tracks, tracks_path)
    write_text(os.path.join(out, "clusters.csv"),
               "track_id,label\n" + "".join(f"{t.track_id},{t.label}\n" for t in tracks))
    series = [svg.Series(np.column_stack([t.lon, t.lat]), {"up": "#1f77b4", "down": "#2ca02c"}.get(t.label, "#999999"),
                         0.8) for t in tracks]
    svg.save(os.path.join(out, "clusters.svg"), series, "vessel tracks by cluster")
    log.info("clusters: %s", {k: len(v) for k, v in clusters.items()})
    return EXIT_OK


def _labelled(tracks):
    if any(t.label is None for t in tracks):
        ais.cluster_tracks(tracks)
    return {lab: [t for t in tracks if t.label == lab] for lab in ais.LABELS}


def ais_kinks(cfg, out, tracks_path) -> int:
    clusters = _labelled(_tracks(tracks_path))
    hist_rows, per_rows = [], []
    for lab in ais.LABELS:
        if not clusters[lab]:
            continue
        h = ais.kink_histogram(clusters[lab], cfg["kink_threshold"])
        hist_rows += h.to_rows(lab)
        per_rows += [(tid, lab, k) for tid, k in h.per_track.items()]
    write_text(os.path.join(out, "kinks.csv"), "label,kinks,count,proportion\n" +
               "".join(f"{lab},{k},{c},{p!r}\n" for lab, k, c, p in hist_rows))
    write_text(os.path.join(out, "kinks_per_track.csv"), "track_id,label,kinks\n" +
               "".join(f"{t},{lab},{k}\n" for t, lab, k in per_rows))
    return EXIT_OK


def _track_env(cfg, tracks, all_tracks):
    tc = cfg["train"]
    pts = np.concatenate([np.column_stack([t.lon, t.lat]) for t in all_tracks])
    roi = roi_from_points(pts, tc["margin"])
    return TrackEnv([t.to_trajectory() for t in tracks], roi, tc["epsilon_km"], tc["smoothing"], tc["max_steps"])


def ais_train(cfg, out, tracks_path) -> int:
    from .agents import DatiConfig, TrainingDiverged, dati_train, save_checkpoint

    tracks = _tracks(tracks_path)
    clusters = _labelled(tracks)
    hyper = config.resolve_hyper(DatiConfig, cfg["train"]["hyper"], "train.hyper")
    train_sets = ais.build_train_set(clusters, cfg["per_cluster"], cfg["seed"], tuple(cfg["train"]["labels"]))
    for lab, subset in train_sets.items():
        if not subset:
            log.warning("cluster %s is empty; skipped", lab)
            continue
        env = _track_env(cfg, subset, tracks)
        try:
            agent = dati_train(env, hyper, cfg["seed"],
                               progress=lambda ep, v, lab=lab: log.info("%s episode %d: %.4f km", lab, ep, v))
        except TrainingDiverged as exc:
            log.error("%s: %s", lab, exc)
            return EXIT_DIVERGED
        write_losses(os.path.join(out, f"losses_{lab}.csv"), agent.history)
        write_text(os.path.join(out, f"train_set_{lab}.csv"),
                   "track_id\n" + "".join(f"{t.track_id}\n" for t in subset))
        save_checkpoint(os.path.join(out, f"ais_{lab}.npz"), agent,
                        {"ais": {"label": lab, "max_steps": cfg["train"]["max_steps"],
                                 "epsilon_km": cfg["train"]["epsilon_km"], "smoothing": cfg["train"]["smoothing"]}})
    return EXIT_OK


def ais_detect(cfg, out, tracks_path) -> int:
    from .agents import load_checkpoint

    dc = cfg["detect"]
    tracks = _tracks(tracks_path)
    clusters = _labelled(tracks)
    ckpt = dc["checkpoint"] or os.path.join(out, f"ais_{dc['label']}.npz")
    if not os.path.exists(ckpt):
        raise UsageError(f"{ckpt} not found; run 'traji ais train' first")
    agent, meta = load_checkpoint(ckpt)
    test = ais.select_test_tracks(clusters[dc["test_label"]], _region(dc["start_region"]))
    if not test:
        raise UsageError("no test tracks")
    env = TrackEnv([t.to_trajectory() for t in test], agent.roi, cfg["train"]["epsilon_km"],
                   cfg["train"]["smoothing"], cfg["train"]["max_steps"])
    scores = ais.rollout_scores(agent, env, env.tracks, cfg["seed"])
    report = ais.detect_anomalies([t.track_id for t in test], scores, dc["quantile"])
    write_text(os.path.join(out, "anomalies.csv"), report.to_csv())
    series = [svg.Series(np.column_stack([t.lon, t.lat]), "#d62728" if f else "#999999", 1.5 if f else 0.8)
              for t, f in zip(test, report.flags)]
    svg.save(os.path.join(out, "anomalies.svg"), series, f"flagged {report.n_flagged}/{len(test)}")
    log.info("threshold %.4f, flagged %d of %d", report.threshold, report.n_flagged, len(test))
    return EXIT_OK


def ais_fixture(args) -> int:
    out = out_dir(args.out)
    truth = ais.write_fixture(os.path.join(out, "fixture.csv"), args.seed)
    with open(os.path.join(out, "fixture_truth.json"), "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True, default=str)
    return EXIT_OK


AIS_STAGES = {"ingest": ais_ingest, "cluster": ais_cluster, "kinks": ais_kinks, "train": ais_train,
              "detect": ais_detect}


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .agents import ABLATIONS, AGENTS

    p = argparse.ArgumentParser(prog="traji", description="trajectory imitation toolkit")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample family trajectories")
    g.add_argument("--family", required=True, choices=family_names())
    g.add_argument("--n", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train an agent")
    t.add_argument("--agent", choices=sorted(AGENTS))
    t.add_argument("--config")
    t.add_argument("--seeds", type=int, help="run seeds 0..k-1 instead of the config's list")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate checkpoints against held-out references")
    e.add_argument("--checkpoint", nargs="+", required=True,
                   help="checkpoint files or run directories; 'perfect:<family>' for the analytic expert")
    e.add_argument("--refs", type=int, default=10)
    e.add_argument("--seeds", type=int)
    e.add_argument("--eval-seed", type=int, default=12345)
    e.add_argument("--config")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train DATI with a layer removed")
    a.add_argument("--variant", required=True, choices=sorted(ABLATIONS))
    a.add_argument("--config")
    a.add_argument("--seeds", type=int, default=None)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("ais", help="AIS pipeline stages")
    s.add_argument("stage", choices=[*AIS_STAGES, "fixture"])
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0, help="fixture seed")
    s.add_argument("--out")
    s.set_defaults(func=lambda args: ais_fixture(args) if args.stage == "fixture" else cmd_ais(args))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    if args.command == "ais" and args.stage != "fixture" and not args.config:
        parser.error("ais stages need --config")
    from .agents import CheckpointError

    try:
        return args.func(args)
    except (UsageError, config.ConfigError, CheckpointError, ais.AisFormatError) as exc:
        print(f"traji: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
