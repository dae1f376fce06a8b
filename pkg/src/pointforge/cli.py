"""Command-line surface: synth / pretrain / probe / ablate / featurize.

Every command is deterministic given its arguments and seed; primary outputs
(native clouds, manifests, checkpoints, CSV reports) are byte-identical
across reruns. Exit codes: 0 success, 1 runtime failure, 2 usage or config
error. PF_THREADS bounds worker parallelism for data generation.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import distill, synthbench as sb
from .config import Config, ConfigError, load_config
from .pcdata import (Domain, FormatError, ParseError, read_native, read_ply,
                     write_native)

MANIFEST = "manifest.csv"


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("PF_THREADS", "1")))
    except ValueError:
        return 1


def _resolve_domains(name: str) -> list[Domain]:
    if name == "mixture":
        return [Domain.OBJECT, Domain.INDOOR, Domain.OUTDOOR]
    return [Domain(name)]


def cmd_synth(args) -> int:
    domains = _resolve_domains(args.domain)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for i in range(args.count):
        domain = domains[i % len(domains)]
        seed = sb.domain_seed(args.seed, domain, i // len(domains))
        jobs.append((i, domain, seed))

    def build(job):
        i, domain, seed = job
        return i, domain, seed, sb.make_sample(domain, seed).cloud

    if max_workers() > 1 and jobs:
        with ThreadPoolExecutor(max_workers=max_workers()) as pool:
            built = sorted(pool.map(build, jobs), key=lambda item: item[0])
    else:
        built = [build(job) for job in jobs]

    lines = ["path,domain,seed"]
    for i, domain, seed, cloud in built:
        name = f"cloud_{i:05d}.upc"
        write_native(cloud, out / name)
        lines.append(f"{name},{domain.value},{seed}")
    (out / MANIFEST).write_text("\n".join(lines) + "\n", newline="\n")
    print(f"wrote {len(built)} clouds to {out}")
    return 0


def _load_dataset(data_dir: str) -> list[distill.Sample]:
    root = Path(data_dir)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise ConfigError(f"no {MANIFEST} in {data_dir}")
    samples = []
    for line in manifest.read_text().splitlines()[1:]:
        if not line.strip():
            continue
        path, domain, seed = line.split(",")
        cloud = read_native(root / path)
        samples.append(distill.Sample(cloud=cloud, name=f"{domain}-{seed}"))
    if not samples:
        raise ConfigError(f"manifest in {data_dir} lists no clouds")
    return samples


def _steps_from(args, cfg: Config) -> int:
    if args.steps is not None:
        return args.steps
    return int(cfg.get("train.steps"))  # raises "missing config key" -> exit 2


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    steps = _steps_from(args, cfg)
    samples = _load_dataset(args.data)
    rc = distill.run_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = distill.train(samples, rc, seed=args.seed, steps=steps,
                           csv_path=out / "metrics.csv")
    distill.save_state(result.state, out / "checkpoint.uenc")
    last = result.metrics[-1]["loss"] if result.metrics else float("nan")
    print(f"pretrained {steps} steps; final loss {last:.6g}; "
          f"checkpoint at {out / 'checkpoint.uenc'}")
    return 0


def cmd_probe(args) -> int:
    state = distill.load_state(args.checkpoint)
    samples = _load_dataset(args.data)
    report = sb.probe_state(state, samples, split_seed=args.split_seed,
                            drop_color=args.drop_color, drop_normal=args.drop_normal)
    if not report:
        raise ConfigError("no labeled clouds to probe")
    for domain in sorted(report):
        m = report[domain]
        print(f"{domain}: mIoU {m['miou']:.6f} mAcc {m['macc']:.6f} "
              f"allAcc {m['allacc']:.6f}")
    return 0


ABLATIONS = {
    "grid": sb.ablate_grid,
    "rope": sb.ablate_rope,
    "blinding": sb.ablate_blinding,
    "object-aug": sb.ablate_object_aug,
}


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    runner = ABLATIONS[args.what]
    rows = runner(cfg, seed=args.seed, steps=args.steps,
                  n_per_domain=args.clouds, n_eval=args.eval_clouds)
    csv_text = sb.report_csv(rows)
    out = Path(args.out if args.out else f"ablation_{args.what}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text, newline="\n")
    sys.stdout.write(csv_text)
    return 0


def cmd_featurize(args) -> int:
    src = Path(args.infile)
    if src.suffix.lower() == ".ply":
        pc = read_ply(src)
    else:
        pc = read_native(src)
    sampled = sb.featurize_export(args.checkpoint, pc, args.out)
    print(f"wrote {sampled.n} PCA-colored points to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointforge",
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic clouds + manifest")
    p.add_argument("--domain", required=True,
                   choices=["object", "indoor", "outdoor", "mixture"])
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="run self-distillation pretraining")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("probe", help="linear-probe a checkpoint on labeled data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--drop-color", action="store_true")
    p.add_argument("--drop-normal", action="store_true")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("ablate", help="toggled pretrain+probe comparisons")
    p.add_argument("--what", required=True, choices=sorted(ABLATIONS))
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=60)
    p.add_argument("--clouds", type=int, default=6,
                   help="training clouds per domain")
    p.add_argument("--eval-clouds", type=int, default=4,
                   help="evaluation clouds per domain")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("featurize", help="export PCA-colored features as PLY")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures, including diverged training
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
