"""Command-line entry point.

Structural settings live in one JSON config: the union of the dataset and
training fields plus ``output_dir`` and ``seeds``.  ``seed`` seeds the
dataset; each entry of ``seeds`` seeds one training run.

Exit codes: 0 ok, 1 config or I/O error, 2 numeric failure (non-finite loss
or a failed gradient check).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from . import numerics as nx
from .concepts import gt_relations
from .dataset import (SPLIT_NAMES, DatasetConfig, atomic_write, generate_dataset, metrics_csv_row,
                      read_split, write_split)
from .errors import ConfigError, NumericError
from .gradsuite import run_suite
from .toy_vqa import Batch
from .trainer import (EVAL_NOISE, TrainConfig, TrainState, evaluate, init_state, relation_branch,
                      run_experiment, run_sweep, vocabulary_for)

log = logging.getLogger("xggm")

LOSS_HEADER = ["step", "branch", "l_grad", "l_dist", "l_bce", "total"]


@dataclass
class CliConfig:
    data: DatasetConfig
    train: TrainConfig
    output_dir: Path = Path("runs")
    seeds: list[int] = field(default_factory=lambda: [0])
    data_override: Path | None = None  # not part of the JSON

    @classmethod
    def from_dict(cls, raw: dict) -> "CliConfig":
        data_keys = {f.name for f in fields(DatasetConfig)}
        train_keys = TrainConfig.field_names() - {"seed"}
        extra = {"output_dir", "seeds"}
        unknown = sorted(set(raw) - data_keys - train_keys - extra)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            data = DatasetConfig(**{k: v for k, v in raw.items() if k in data_keys})
            seeds = [int(s) for s in raw.get("seeds", [data.seed])]
            if not seeds:
                raise ConfigError("seeds must not be empty")
            train_cfg = TrainConfig(**{k: v for k, v in raw.items() if k in train_keys}, seed=seeds[0])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        data.validate()
        train_cfg.validate()
        if data.N_o != train_cfg.N_o:
            raise ConfigError("N_o differs between dataset and training settings")
        return cls(data, train_cfg, Path(raw.get("output_dir", "runs")), seeds)

    def to_dict(self) -> dict:
        out = asdict(self.data)
        out.update({k: v for k, v in asdict(self.train).items() if k != "seed"})
        out["output_dir"] = str(self.output_dir)
        out["seeds"] = list(self.seeds)
        return out

    @property
    def data_dir(self) -> Path:
        return self.data_override or self.output_dir / "data"


def load_config(path) -> CliConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return CliConfig.from_dict(raw)


def _dump_json(path: Path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _load_split(cfg: CliConfig):
    if not all((cfg.data_dir / f"{n}.jsonl").exists() for n in SPLIT_NAMES):
        raise ConfigError(f"no dataset in {cfg.data_dir}; run gen-data first")
    split, stored = read_split(cfg.data_dir)
    if stored != cfg.data:
        raise ConfigError("dataset on disk was generated from a different config")
    return split


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    split = generate_dataset(cfg.data)
    write_split(split, cfg.data_dir, cfg.data)
    print(f"wrote {len(split.train)}/{len(split.id_test)}/{len(split.ood_test)} examples to {cfg.data_dir}")
    return 0


def _state_meta(cfg: CliConfig, train_cfg: TrainConfig) -> dict:
    return {"cli": cfg.to_dict(), "train": asdict(train_cfg)}


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.mode:
        cfg.train.mode = args.mode
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    split = _load_split(cfg)
    report, loss_rows, states = run_experiment(cfg.train, split, cfg.data, seeds)
    out = cfg.output_dir / cfg.train.mode
    for seed in seeds:
        rows = [LOSS_HEADER] + [[i + 1, b.branch, repr(b.l_grad), repr(b.l_dist), repr(b.l_bce), repr(b.total)]
                                for i, b in enumerate(loss_rows[seed])]
        atomic_write(out / f"seed{seed}" / "losses.csv", _csv_text(rows))
        state = states[seed]
        checkpoint.save(out / f"seed{seed}" / "checkpoint.json", state.params, _state_meta(cfg, state.cfg))
    _dump_json(out / "report.json", report)
    agg = report["aggregate"]
    print(f"{cfg.train.mode}: OOD {agg['ood']['all']['mean']:.2f}  ID {agg['id']['all']['mean']:.2f}  "
          f"gap {agg['gap']['mean']:.2f}  -> {out / 'report.json'}")
    return 0


def _state_from_checkpoint(path, data_override=None) -> tuple[TrainState, CliConfig]:
    params, meta = checkpoint.load(path)
    if "cli" not in meta or "train" not in meta:
        raise ConfigError(f"{path} carries no run configuration")
    cfg = CliConfig.from_dict(meta["cli"])
    if data_override is not None:
        cfg.data_override = Path(data_override)
    train_cfg = TrainConfig(**meta["train"])
    state = init_state(train_cfg, vocabulary_for(train_cfg, cfg.data))
    if set(params) != set(state.params):
        raise ConfigError("checkpoint parameters do not match the configured model")
    state.params = params
    return state, cfg


def cmd_evaluate(args) -> int:
    state, cfg = _state_from_checkpoint(args.checkpoint, args.data)
    if args.eval_readout:
        state.cfg.eval_readout = args.eval_readout
    split = _load_split(cfg)
    m = evaluate(state, split, cfg.data.tail_quantile)
    doc = {"id": m["id"].to_dict(), "ood": m["ood"].to_dict()}
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.out:
        atomic_write(Path(args.out), text)
        atomic_write(Path(args.out).with_suffix(".csv"),
                     _csv_text([["split", "all", "tail", "head", "delta", "gap"]]
                               + [metrics_csv_row(k, m[k]) for k in ("id", "ood")]))
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(args.seed, corrupt=args.corrupt_gradient)
    lines = []
    for r in results:
        for name, err in sorted(r.errors.items()):
            lines.append(f"{r.kind:9s} {r.name:22s} {name:20s} {err:.3e}")
        lines.append(f"{'PASS' if r.passed else 'FAIL'} {r.name} max {r.max_error:.3e} (tol {r.tolerance:g})")
    ok = all(r.passed for r in results)
    lines.append("gradcheck: " + ("PASS" if ok else "FAIL"))
    print("\n".join(lines))
    if args.config:
        cfg = load_config(args.config)
        _dump_json(cfg.output_dir / "gradcheck.json",
                   {"passed": ok, "cases": [{"name": r.name, "kind": r.kind, "tolerance": r.tolerance,
                                             "max_error": r.max_error, "errors": r.errors} for r in results]})
    return 0 if ok else 2


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    split = _load_split(cfg)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    sweep = run_sweep(cfg.train, split, cfg.data, seed=seed)
    _dump_json(cfg.output_dir / "sweep.json", sweep)
    rows = [["eta", "ood_all", "id_all", "gap", "ood_tail", "ood_head"]]
    for r in sweep["rows"]:
        rows.append([r["eta"], r["ood"]["all"], r["id"]["all"], r["gap"], r["ood"]["tail"], r["ood"]["head"]])
    rows.append(["mean", sweep["ood_all"]["mean"], "", "", "", ""])
    rows.append(["std", sweep["ood_all"]["std"], "", "", "", ""])
    atomic_write(cfg.output_dir / "sweep.csv", _csv_text(rows))
    print(f"sweep OOD mean {sweep['ood_all']['mean']:.2f} std {sweep['ood_all']['std']:.2f}")
    return 0


def matrix_csv(m: np.ndarray) -> str:
    return "".join(",".join(format(float(v), ".17g") for v in row) + "\n" for row in m)


def matrix_pgm(m: np.ndarray) -> str:
    """P2 grey map; 0 maps to 0 and 1 to 255."""
    pix = np.clip(np.rint(np.asarray(m) * 255.0), 0, 255).astype(int)
    h, w = pix.shape
    body = "".join(" ".join(str(v) for v in row) + "\n" for row in pix)
    return f"P2\n{w} {h}\n255\n{body}"


def heatmaps(state: TrainState, example) -> tuple[np.ndarray, np.ndarray]:
    """(R_GT, R_g) for one example; R_g is generated without the init noise."""
    batch = Batch.from_examples([example])
    gen = nx.RngState(state.cfg.seed, EVAL_NOISE).generator()
    _, _, ex = relation_branch(state.params, batch, state.cfg, state.vocab, gen, sigma=0.0)
    R_gt = gt_relations(batch.classes, batch.attributes, state.vocab)[0]
    return R_gt, np.asarray(ex["R_g"])[0]


def cmd_export_heatmap(args) -> int:
    state, cfg = _state_from_checkpoint(args.checkpoint, args.data)
    split = _load_split(cfg)
    examples = split.splits()[args.split]
    if not 0 <= args.index < len(examples):
        raise IndexError(f"example index {args.index} outside 0..{len(examples) - 1}")
    R_gt, R_g = heatmaps(state, examples[args.index])
    prefix = Path(args.out)
    for tag, m in (("gt", R_gt), ("gen", R_g)):
        atomic_write(prefix.with_name(f"{prefix.name}_{tag}.csv"), matrix_csv(m))
        atomic_write(prefix.with_name(f"{prefix.name}_{tag}.pgm"), matrix_pgm(m))
    print(f"wrote {prefix}_gt.* and {prefix}_gen.*")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xggm", description="graph generative modeling for compositional VQA")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    s.add_argument("config")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train every configured seed and write a report")
    s.add_argument("config")
    s.add_argument("--mode", choices=["xggm", "baseline"])
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint on the ID and OOD splits")
    s.add_argument("checkpoint")
    s.add_argument("--data", help="dataset directory (default: the one recorded in the checkpoint)")
    s.add_argument("--eval-readout", choices=["none", "r", "n"])
    s.add_argument("--out", help="write metrics JSON (and a CSV next to it)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", help="finite-difference check of every registered gradient")
    s.add_argument("config", nargs="?")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("sweep", help="re-train over eta in 0.1..0.9 on one seed")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("export-heatmap", help="write R_GT and R_g for one example as CSV and PGM")
    s.add_argument("checkpoint")
    s.add_argument("index", type=int)
    s.add_argument("out", help="output prefix")
    s.add_argument("--split", choices=list(SPLIT_NAMES), default="id_test")
    s.add_argument("--data")
    s.set_defaults(func=cmd_export_heatmap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
