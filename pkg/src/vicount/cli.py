"""Command-line driver: simulate, train, eval, ablate, compare.

Every command resolves its configuration (file plus flag overrides), writes a
manifest echoing the resolved values beside its outputs, and can be rerun
from that manifest alone.  ``VIC_THREADS`` caps torch's CPU parallelism.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import torch

from . import experiments
from .dataset import flow_statistics, load_sequence, save_sequence
from .errors import EXIT_IO, EXIT_OK, DivergenceError, LabelingError, VicError
from .evaluate import (
    evaluate_sequences,
    oracle_results,
    predict_sequence,
    predict_sequence_o2o,
    write_pair_records,
)
from .metrics import build_report, write_bucket_svg, write_report_csv, write_report_json
from .model import OmanModel, load_checkpoint, save_checkpoint
from .simulator import SimConfig, generate, sim_config_from_dict, sim_config_to_dict, write_groups_sidecar
from .training import KlConfig, TrainConfig, resolve_model_config, train, write_loss_csv

MANIFEST_VERSION = 1


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if "command" in data and "config" in data:  # a manifest; reuse its config echo
        return data["config"]
    return data


def _write_manifest(out_dir: Path, command: str, config: dict) -> None:
    payload = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": config,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_dataset(data_dir: str) -> list:
    paths = sorted(Path(data_dir).glob("*.jsonl"))
    if not paths:
        raise VicError(f"no .jsonl sequences under {data_dir}")
    return [load_sequence(p) for p in paths]


def cmd_simulate(args) -> int:
    file_cfg = _load_config_file(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    if args.preset or file_cfg.get("preset"):
        n_videos = args.videos or file_cfg.get("videos", experiments.BENCHMARK_VIDEOS)
        sim_configs = experiments.benchmark_preset(seed, n_videos)
    elif "sim_configs" in file_cfg:
        sim_configs = [sim_config_from_dict(d) for d in file_cfg["sim_configs"]]
    else:
        overrides = dict(file_cfg.get("sim", {}))
        n_videos = args.videos or file_cfg.get("videos", 1)
        sim_configs = [
            SimConfig(**{**overrides, "seed": experiments.substream_seed(seed, "video", i)})
            for i in range(n_videos)
        ]
    entries = []
    for i, cfg in enumerate(sim_configs):
        seq = generate(cfg, seq_id=f"video{i:03d}")
        save_sequence(seq, out_dir / f"{seq.id}.jsonl")
        write_groups_sidecar(seq, out_dir / f"{seq.id}.groups.json")
        stats = flow_statistics(seq, args.sigma)
        entries.append(
            {
                "id": seq.id,
                "sim_config": sim_config_to_dict(cfg),
                "gt_total": stats["pairwise_total"],
                "unique_total": stats["unique_total"],
                "sampled_frames": stats["n_sampled_frames"],
            }
        )
    config_echo = {
        "seed": seed,
        "preset": bool(args.preset or file_cfg.get("preset")),
        "videos": len(sim_configs),
        "sigma": args.sigma,
        "sim_configs": [sim_config_to_dict(c) for c in sim_configs],
        "sequences": entries,
    }
    _write_manifest(out_dir, "simulate", config_echo)
    print(f"wrote {len(sim_configs)} sequences to {out_dir}")
    return EXIT_OK


def _train_config_from(args, file_cfg: dict) -> TrainConfig:
    cfg = dict(file_cfg.get("train", {}))
    if "kl" in cfg:
        cfg["kl"] = KlConfig(**cfg["kl"])
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.epochs is not None:
        cfg["epochs"] = args.epochs
    if args.sigma is not None:
        cfg["sigma"] = args.sigma
    if args.lr_heads is not None:
        cfg["lr_heads"] = args.lr_heads
    if args.lr_backbone is not None:
        cfg["lr_backbone"] = args.lr_backbone
    if args.mlp_depth is not None:
        cfg["mlp_depth"] = args.mlp_depth
    if args.no_icg:
        cfg["icg_on"] = False
    if args.no_ompm:
        cfg["ompm_on"] = False
    if args.no_kl:
        cfg["kl_on"] = False
    return TrainConfig(**cfg)


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_dir = args.data or file_cfg.get("data")
    if not data_dir:
        raise VicError("training requires --data or a 'data' config entry")
    sequences = _load_dataset(data_dir)
    cfg = _train_config_from(args, file_cfg)
    try:
        result = train(sequences, cfg)
    except DivergenceError as exc:
        if exc.last_good_state is not None:
            model = OmanModel(resolve_model_config(cfg), seed=cfg.seed)
            model.load_state_dict(exc.last_good_state)
            save_checkpoint(out_dir / "checkpoint.json", model, cfg.seed, -1, cfg.to_dict())
            write_loss_csv(exc.history, out_dir / "loss.csv")
        raise
    save_checkpoint(
        out_dir / "checkpoint.json", result.model, cfg.seed, result.steps, cfg.to_dict()
    )
    write_loss_csv(result.history, out_dir / "loss.csv")
    _write_manifest(out_dir, "train", {"data": str(data_dir), "train": cfg.to_dict()})
    final = result.history[-1]
    print(
        f"trained {result.steps} steps over {result.pair_count} pairs; "
        f"final l_total={final.l_total:.4f}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    file_cfg = _load_config_file(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_dir = args.data or file_cfg.get("data")
    if not data_dir:
        raise VicError("eval requires --data or a 'data' config entry")
    sequences = _load_dataset(data_dir)
    sigma = args.sigma if args.sigma is not None else file_cfg.get("sigma", 3.0)
    tau = args.tau if args.tau is not None else file_cfg.get("tau", 0.5)
    count_mode = args.count_mode or file_cfg.get("count_mode", "dedup")
    config_echo = {
        "data": str(data_dir),
        "sigma": sigma,
        "tau": tau,
        "count_mode": count_mode,
        "oracle": bool(args.oracle),
        "checkpoint": args.checkpoint or file_cfg.get("checkpoint"),
        "baseline_threshold": args.baseline_threshold,
        "squared_mse": bool(args.squared_mse),
    }
    predictions = []
    if args.oracle:
        results = oracle_results(sequences, sigma)
    elif args.baseline_threshold is not None:
        results, predictions = evaluate_sequences(
            sequences, sigma,
            lambda seq: predict_sequence_o2o(seq, sigma, args.baseline_threshold),
        )
    else:
        ckpt = config_echo["checkpoint"]
        if not ckpt:
            raise VicError("eval requires --checkpoint, --baseline-threshold, or --oracle")
        model, _ = load_checkpoint(ckpt)
        results, predictions = evaluate_sequences(
            sequences, sigma,
            lambda seq: predict_sequence(
                model, seq, sigma, tau, count_mode, collect_attention=args.dump_attention
            ),
        )
    report = build_report(results, squared_mse=args.squared_mse)
    write_report_json(report, out_dir / "report.json")
    write_report_csv(report, out_dir / "report.csv")
    if args.svg:
        write_bucket_svg(report, out_dir / "buckets.svg")
    if predictions:
        write_pair_records(predictions, out_dir / "pairs.jsonl")
    _write_manifest(out_dir, "eval", config_echo)
    print(f"MAE {report.mae:.3f}  MSE {report.mse:.3f}  WRAE {report.wrae:.3f}%")
    return EXIT_OK


def cmd_compare(args) -> int:
    file_cfg = _load_config_file(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    n_seeds = args.seeds or file_cfg.get("seeds", 5)
    config_echo = {"seed": seed, "seeds": n_seeds, "sigma": args.sigma, "tau": args.tau,
                   "count_mode": args.count_mode or "dedup"}
    result = experiments.compare_o2m_o2o(
        base_seed=seed,
        n_seeds=n_seeds,
        sigma=args.sigma,
        tau=args.tau,
        count_mode=config_echo["count_mode"],
    )
    with open(out_dir / "comparison.json", "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "compare", config_echo)
    print(
        f"model WRAE {result.mean_model:.2f}% vs tuned baseline "
        f"{result.best_o2o_mean:.2f}% (thr={result.best_threshold}); "
        f"relative improvement {100 * result.relative_improvement:.1f}%"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    file_cfg = _load_config_file(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    n_seeds = args.seeds or file_cfg.get("seeds", 1)
    depths = tuple(args.depths) if args.depths else (1, 2, 3, 4, 5)
    config_echo = {"seed": seed, "seeds": n_seeds, "sigma": args.sigma, "tau": args.tau,
                   "depths": list(depths)}
    result = experiments.run_ablation(
        base_seed=seed,
        n_seeds=n_seeds,
        sigma=args.sigma,
        tau=args.tau,
        rows=experiments.ABLATION_ROWS,
        depth_sweep=depths,
    )
    with open(out_dir / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_manifest(out_dir, "ablate", config_echo)
    for row in result.rows:
        print(f"{row['name']:>12}: WRAE {row['wrae']:.2f}%  MAE {row['mae']:.2f}")
    for entry in result.depth_sweep:
        print(f"depth {entry['mlp_depth']}: WRAE {entry['wrae']:.2f}%")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vic", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file or a previous manifest")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")

    p_sim = sub.add_parser("simulate", help="generate synthetic datasets")
    common(p_sim)
    p_sim.add_argument("--preset", action="store_true", help="20-video benchmark preset")
    p_sim.add_argument("--videos", type=int, default=None)
    p_sim.add_argument("--sigma", type=float, default=3.0)
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="train the matcher")
    common(p_train)
    p_train.add_argument("--data", help="directory of .jsonl sequences")
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--sigma", type=float, default=None)
    p_train.add_argument("--lr-heads", type=float, default=None)
    p_train.add_argument("--lr-backbone", type=float, default=None)
    p_train.add_argument("--mlp-depth", type=int, default=None)
    p_train.add_argument("--no-icg", action="store_true")
    p_train.add_argument("--no-ompm", action="store_true")
    p_train.add_argument("--no-kl", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint or baseline")
    common(p_eval)
    p_eval.add_argument("--data")
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--sigma", type=float, default=3.0)
    p_eval.add_argument("--tau", type=float, default=0.5)
    p_eval.add_argument("--k", type=int, default=5, help="group cap for match decoding")
    p_eval.add_argument("--count-mode", choices=("literal", "dedup"), default=None)
    p_eval.add_argument("--oracle", action="store_true",
                        help="score ground truth against itself (plumbing check)")
    p_eval.add_argument("--baseline-threshold", type=float, default=None,
                        help="evaluate the one-to-one baseline at this cosine threshold")
    p_eval.add_argument("--squared-mse", action="store_true",
                        help="report literal mean squared error instead of its root")
    p_eval.add_argument("--svg", action="store_true", help="emit the bucket bar chart")
    p_eval.add_argument("--dump-attention", action="store_true",
                        help="include averaged match maps in pair records")
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="paired one-to-many vs one-to-one experiment")
    common(p_cmp)
    p_cmp.add_argument("--seeds", type=int, default=None)
    p_cmp.add_argument("--sigma", type=float, default=3.0)
    p_cmp.add_argument("--tau", type=float, default=0.5)
    p_cmp.add_argument("--count-mode", choices=("literal", "dedup"), default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_abl = sub.add_parser("ablate", help="module grid and MLP depth sweep")
    common(p_abl)
    p_abl.add_argument("--seeds", type=int, default=None)
    p_abl.add_argument("--sigma", type=float, default=3.0)
    p_abl.add_argument("--tau", type=float, default=0.5)
    p_abl.add_argument("--depths", type=int, nargs="*", default=None)
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    threads = os.environ.get("VIC_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
