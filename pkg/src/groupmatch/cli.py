"""Command-line entry point: ``groupmatch {synth,train,eval,gradcheck}``.

Every command prints its fully resolved configuration as one JSON line
before doing any work, so a run can be reproduced from its echo.  Values
resolve as command-line flag, then ``--config`` file, then built-in default.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .data import DatasetError, SynthConfig, generate_synthetic, load_dataset, relabel, split_probe_gallery, write_dataset
from .evaluation import ModelScorer, run_group_reid, run_person_reid, summarize
from .gradcheck import NonFiniteError, grad_check
from .graph import GroupView, build_context_graph, pad_pair
from .model import (
    ABLATIONS,
    ModelConfig,
    forward_pair,
    init_params,
    load_checkpoint,
    pair_labels,
    pair_loss,
    save_checkpoint,
)
from .training import train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("groupmatch")


class UsageError(Exception):
    pass


_SYNTH_FLAGS = {
    "identities": int, "groups": int, "views": int, "dim": int, "parts": int,
    "min_members": int, "max_members": int, "noise": float, "occlusion": float, "replacement": float,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of settings; flags take precedence")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="groupmatch", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--out", type=Path, required=True)
    for name, typ in _SYNTH_FLAGS.items():
        s.add_argument("--" + name.replace("_", "-"), type=typ, dest=name)

    def model_flags(sp, training):
        for name in ("parts", "layers", "heads", "hidden"):
            sp.add_argument("--" + name, type=int)
        sp.add_argument("--tau", type=float)
        sp.add_argument("--margin", type=float)
        sp.add_argument("--sinkhorn-iters", type=int, dest="sinkhorn_iters")
        sp.add_argument("--ablate", type=str, help=f"comma list from {','.join(ABLATIONS)}")
        if training:
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--lr", type=float)

    t = sub.add_parser("train", parents=[common], help="train on a dataset file and write a checkpoint")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--ckpt", type=Path, required=True, help="checkpoint path to write")
    t.add_argument("--out", type=Path, help="optional JSON file for the per-epoch loss history")
    model_flags(t, training=True)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a dataset file")
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--ckpt", type=Path, required=True)
    e.add_argument("--out", type=Path, help="optional JSON file for the report")
    e.add_argument("--task", choices=("group", "person", "both"))
    e.add_argument("--distractors", type=int, help="number of synthetic gallery-only group views")
    e.add_argument("--sinkhorn-iters", type=int, dest="sinkhorn_iters")

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the full pair loss")
    g.add_argument("--tol", type=float)
    g.add_argument("--out", type=Path, help="optional text file for the report")
    model_flags(g, training=False)
    g.add_argument("--dim", type=int, help="input part width of the random instance")
    g.add_argument("--nodes", type=int, help="largest group size of the random instance")
    return p


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as err:
        raise UsageError(f"cannot read config file: {err}") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"config file {path} is not valid JSON: {err}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults, config file and flags (in rising precedence)."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    out = dict(defaults)
    for k, v in file_cfg.items():
        if k not in defaults:
            raise UsageError(f"unknown key {k!r} in config file")
        out[k] = v
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _parse_ablate(value) -> list[str]:
    if value in (None, ""):
        return []
    names = value if isinstance(value, list) else [s.strip() for s in str(value).split(",") if s.strip()]
    bad = [n for n in names if n not in ABLATIONS]
    if bad:
        raise UsageError(f"unknown ablation(s) {bad}; choose from {list(ABLATIONS)}")
    return names


def _model_config(run: dict, parts: int, dim: int, base: ModelConfig | None = None) -> ModelConfig:
    base = base or ModelConfig()
    kw = base.to_dict()
    kw.update(parts=parts, in_dim=dim)
    for k in ("layers", "heads", "hidden", "tau", "margin", "lr", "epochs"):
        if run.get(k) is not None:
            kw[k] = run[k]
    if run.get("hidden") is not None:
        kw["embed_dim"] = run["hidden"]
    if run.get("sinkhorn_iters") is not None:
        kw["sinkhorn_train_iters"] = kw["sinkhorn_eval_iters"] = run["sinkhorn_iters"]
    for name in _parse_ablate(run.get("ablate")):
        kw[name] = False
    if run.get("parts") is not None and run["parts"] != parts:
        raise UsageError(f"--parts {run['parts']} does not match the data's {parts} parts")
    try:
        return ModelConfig.from_dict(kw)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err)) from None


def _echo(command: str, resolved: dict, stream=None) -> None:
    print(json.dumps({"command": command, "config": resolved}, sort_keys=True, default=str),
          file=stream or sys.stdout, flush=True)


def _load(path: Path) -> list[GroupView]:
    if not Path(path).is_file():
        raise DatasetError(f"{path}: no such file")
    return load_dataset(path)


# -- commands -----------------------------------------------------------------------

def cmd_synth(args) -> int:
    defaults = {f.name: f.default for f in fields(SynthConfig)}
    run = resolve(args, defaults)
    try:
        cfg = SynthConfig(**run)
    except (TypeError, ValueError) as err:
        raise UsageError(str(err)) from None
    out = Path(args.out)
    if not out.parent.exists():
        raise UsageError(f"output directory {out.parent} does not exist")
    _echo("synth", {**asdict(cfg), "out": str(out)})
    records = generate_synthetic(cfg)
    write_dataset(out, records)
    print(f"wrote {len(records)} records ({cfg.groups} groups x {cfg.views} views, "
          f"{cfg.identities} identities) to {out}")
    return EXIT_OK


def _train_defaults() -> dict:
    return {"seed": 0, "epochs": None, "lr": None, "parts": None, "layers": None, "heads": None,
            "hidden": None, "tau": None, "margin": None, "sinkhorn_iters": None, "ablate": None}


def cmd_train(args) -> int:
    run = resolve(args, _train_defaults())
    records = _load(args.data)
    n, p, d = records[0].parts.shape
    cfg = _model_config(run, p, d)
    if not Path(args.ckpt).parent.exists():
        raise UsageError(f"checkpoint directory {Path(args.ckpt).parent} does not exist")
    _echo("train", {"seed": run["seed"], "data": str(args.data), "ckpt": str(args.ckpt), "model": cfg.to_dict()})
    params = init_params(cfg, run["seed"])
    t0 = time.perf_counter()

    def report(epoch, entry):
        print(json.dumps({k: (round(v, 6) if isinstance(v, float) else v) for k, v in entry.items()}), flush=True)

    try:
        result = train(records, cfg, seed=run["seed"], params=params, on_epoch=report)
    except FloatingPointError as err:
        # parameters are only updated after a finite step, so they are the last good state
        save_checkpoint(args.ckpt, params, {"aborted": str(err)})
        print(f"error: {err}; last good parameters kept in {args.ckpt}", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(args.ckpt, result.params, {"epochs": cfg.epochs})
    if args.out is not None:
        Path(args.out).write_text(json.dumps(result.history, indent=1))
    print(f"trained {cfg.epochs} epochs in {time.perf_counter() - t0:.1f}s; checkpoint {args.ckpt}")
    return EXIT_OK


def _distractor_views(n: int, like: GroupView, seed: int) -> list[GroupView]:
    _, p, d = like.parts.shape
    cfg = SynthConfig(groups=n, views=1, parts=p, dim=d, seed=seed + 7919)
    return relabel(generate_synthetic(cfg), "distractor-")


def cmd_eval(args) -> int:
    run = resolve(args, {"seed": 0, "task": "both", "distractors": 0, "sinkhorn_iters": None})
    records = _load(args.data)
    try:
        params = load_checkpoint(args.ckpt)
    except (OSError, KeyError, ValueError) as err:
        raise DatasetError(f"cannot load checkpoint {args.ckpt}: {err}") from None
    cfg = params.config
    _, p, d = records[0].parts.shape
    if (p, d) != (cfg.parts, cfg.in_dim):
        raise DatasetError(f"checkpoint expects {cfg.parts} parts of width {cfg.in_dim}, data has {p} x {d}")
    if run["sinkhorn_iters"] is not None:
        cfg = ModelConfig.from_dict({**cfg.to_dict(), "sinkhorn_eval_iters": run["sinkhorn_iters"]})
        params.config = cfg
    if run["distractors"] < 0:
        raise UsageError("--distractors must be >= 0")
    resolved = {"seed": run["seed"], "task": run["task"], "distractors": run["distractors"],
                "data": str(args.data), "ckpt": str(args.ckpt), "model": cfg.to_dict()}
    _echo("eval", resolved)
    distractors = _distractor_views(run["distractors"], records[0], run["seed"]) if run["distractors"] else []
    try:
        episodes = split_probe_gallery(records, distractors)
    except ValueError as err:
        raise DatasetError(str(err)) from None
    report = {"config": resolved}
    if run["task"] in ("group", "both"):
        report["group"] = summarize(run_group_reid(episodes, ModelScorer(params).group))
    if run["task"] in ("person", "both"):
        report["person"] = summarize(run_person_reid(episodes, ModelScorer(params, use_matching=True).persons))
    text = json.dumps(report, indent=1, sort_keys=True)
    print(text)
    if args.out is not None:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def random_pair(rng: np.random.Generator, parts: int, dim: int, max_nodes: int):
    """A positive pair of small random groups sharing most members."""
    n_s, n_r = (int(k) for k in rng.integers(2, max_nodes + 1, size=2))
    bank = rng.uniform(-1, 1, size=(n_s + n_r, parts, dim))
    bank /= np.linalg.norm(bank, axis=-1, keepdims=True)  # unit parts, the scale of the synthetic data
    ids_s = list(range(n_s))
    ids_r = list(rng.permutation(n_s))[: max(1, n_r - 1)] + [n_s + k for k in range(n_r - max(1, n_r - 1))]
    noise = 0.05 * rng.normal(size=(n_r, parts, dim))
    a = GroupView("pair", 0, tuple(ids_s), bank[ids_s])
    b = GroupView("pair", 1, tuple(int(k) for k in ids_r), bank[[int(k) for k in ids_r]] + noise)
    return a, b


def full_loss_check(cfg: ModelConfig, seed: int, tol: float, max_nodes: int = 4):
    """grad_check of the complete positive-pair loss over every parameter."""
    rng = np.random.default_rng(seed)
    a, b = random_pair(rng, cfg.parts, cfg.in_dim, max_nodes)
    g_s, g_r = pad_pair(build_context_graph(a), build_context_graph(b))
    labels = pair_labels(g_s, g_r, cfg.margin)
    params = init_params(cfg, seed)

    def f(handles):
        out = forward_pair(g_s, g_r, handles, cfg, train=True)
        return pair_loss(out, labels)[0]

    return grad_check(f, params.arrays, tol=tol)


def cmd_gradcheck(args) -> int:
    defaults = {"seed": 0, "tol": 1e-4, "parts": 4, "dim": 8, "nodes": 4, "layers": None, "heads": None,
                "hidden": 8, "tau": None, "margin": None, "sinkhorn_iters": None, "ablate": None}
    run = resolve(args, defaults)
    if run["parts"] < 1 or run["dim"] < 1 or run["nodes"] < 2:
        raise UsageError("--parts and --dim must be >= 1, --nodes >= 2")
    cfg = _model_config({**run, "parts": None}, run["parts"], run["dim"])
    _echo("gradcheck", {"seed": run["seed"], "tol": run["tol"], "nodes": run["nodes"], "model": cfg.to_dict()})
    try:
        rep = full_loss_check(cfg, run["seed"], run["tol"], run["nodes"])
    except NonFiniteError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    text = "\n".join(rep.lines())
    print(text)
    if args.out is not None:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK if rep.passed else EXIT_NUMERIC


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, NonFiniteError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
