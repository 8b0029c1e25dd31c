"""``unicorn`` command line: synth, pretrain, train, eval, interactive, inspect-checkpoint."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from . import checkpoint, synth
from .agent import Agent, train
from .config import ConfigError, RunConfig, resolve
from .evaluation import AbsGreedy, MaxEntropy, RandomPolicy, evaluate
from .graph import DatasetError, KnowledgeGraph, Split, load_dataset, read_splits, split_interactions
from .plotting import plot_sr_curves, plot_training
from .pretrain import EmbeddingTable, check_embeddings, load_embeddings, save_embeddings, train_embeddings
from .rollout import rollout

log = logging.getLogger("unicorn_crs")

EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_CHECKPOINT = 5
EXIT_DATA = 6

POLICIES = ("unicorn", "abs-greedy", "max-entropy", "random")


class MissingFile(FileNotFoundError):
    pass


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingFile(f"{what} not found: {path}")
    return path


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_data(cfg: RunConfig) -> tuple[KnowledgeGraph, dict[Split, object]]:
    d = Path(cfg.data_dir)
    g, pairs = load_dataset(
        _require(d / "interactions.tsv", "interactions file"),
        _require(d / "item_attributes.tsv", "item attributes file"),
        d / "kg.tsv",
    )
    if (d / "splits.tsv").exists():
        splits = read_splits(g, d / "splits.tsv")
    else:
        splits = split_interactions(pairs, cfg.seed)
    return g, splits


def _split(splits, name: str):
    try:
        return splits[Split(name)]
    except ValueError:
        raise ConfigError(f"unknown split {name!r}") from None


def embeddings_path(cfg: RunConfig) -> Path:
    return Path(cfg.embeddings) if cfg.embeddings else Path(cfg.out_dir) / "embeddings.ucrn"


def checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.checkpoint) if cfg.checkpoint else Path(cfg.out_dir) / "agent.ucrn"


def save_agent(agent: Agent, path: Path, cfg: RunConfig) -> None:
    checkpoint.save(path, agent.tensors())
    write_json(path.with_suffix(".json"), {**agent.metadata(), **cfg.echo()})


# change the forward pass without changing any tensor shape
SHAPELESS_FIELDS = ("positional", "canonical_dueling", "pretrained_action_reps", "heads")


def load_agent(g: KnowledgeGraph, cfg: RunConfig, path: Path) -> Agent:
    tensors = checkpoint.load(_require(path, "agent checkpoint"))
    emb = EmbeddingTable.from_tensors(tensors)
    check_embeddings(emb, g, cfg.dim)
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    saved = meta.get("config", {})
    for name in SHAPELESS_FIELDS:
        if name in saved and saved[name] != getattr(cfg, name):
            raise checkpoint.CheckpointError(
                f"{path}: trained with {name}={saved[name]!r}, run config has {getattr(cfg, name)!r}")
    agent = Agent(g, emb, cfg.agent_config(), cfg.env_config(), seed=meta.get("seed", cfg.seed))
    agent.load_tensors(tensors)
    agent.episode = meta.get("episode", 0)
    agent.epsilon = meta.get("epsilon", agent.epsilon)
    agent.beta = meta.get("beta", agent.beta)
    return agent


def make_policy(name: str, g: KnowledgeGraph, cfg: RunConfig, agent: Agent | None = None):
    if name == "unicorn":
        return agent.policy(0.0)
    if name == "abs-greedy":
        return AbsGreedy(cfg.rec_size)
    if name == "max-entropy":
        return MaxEntropy(g, cfg.rec_size, cfg.max_turn)
    if name == "random":
        return RandomPolicy(cfg.rec_size)
    raise ConfigError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}")


# -- commands ---------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    out = synth.write_dataset(cfg.data_dir if args.out is None else args.out,
                              cfg.n_users, cfg.n_items, cfg.n_attrs, cfg.seed)
    print(f"wrote synthetic dataset to {out}")
    return 0


def cmd_pretrain(cfg: RunConfig, args) -> int:
    g, splits = load_data(cfg)
    triplets = g.triplets(splits[Split.TRAIN].pairs)
    emb = train_embeddings(g, cfg.transe_config(), triplets)
    out = embeddings_path(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_embeddings(emb, out)
    write_json(out.with_suffix(".json"), {**cfg.echo(), "loss_history": emb.loss_history})
    print(f"wrote embeddings {out} ({g.n_nodes} nodes, dim {emb.dim}); final loss {emb.loss_history[-1]:.4f}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    g, splits = load_data(cfg)
    emb = load_embeddings(_require(embeddings_path(cfg), "embeddings checkpoint"), g, cfg.dim)
    agent = Agent(g, emb, cfg.agent_config(), cfg.env_config(), seed=cfg.seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    with log_path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(cfg.echo(), sort_keys=True) + "\n")

        def on_episode(row, rec):
            fh.write(json.dumps(row.to_json(), sort_keys=True) + "\n")
            if (row.episode + 1) % 100 == 0:
                log.info("episode %d  sr(avg) %.3f  eps %.3f  loss %s", row.episode + 1, row.sr_moving_avg,
                         row.epsilon, "-" if row.loss is None else f"{row.loss:.4f}")

        rows = train(agent, _split(splits, cfg.train_split), cfg.episodes, cfg.seed, on_episode)
    save_agent(agent, checkpoint_path(cfg), cfg)
    plot_training([r.episode for r in rows], [r.sr_moving_avg for r in rows], [r.total_reward for r in rows],
                  out / "training.png")
    print(f"trained {cfg.episodes} episodes; checkpoint {checkpoint_path(cfg)}; log {log_path}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    g, splits = load_data(cfg)
    names = [p.strip() for p in cfg.policy.split(",") if p.strip()]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agent = load_agent(g, cfg, checkpoint_path(cfg)) if "unicorn" in names else None
    if agent is None:
        # baselines still need embeddings for item scores
        emb = load_embeddings(_require(embeddings_path(cfg), "embeddings checkpoint"), g, cfg.dim)
    else:
        emb = agent.emb
    curves = {}
    for name in names:
        policy = make_policy(name, g, cfg, agent)
        report, records = evaluate(g, emb, policy, _split(splits, cfg.eval_split), cfg.env_config(), cfg.seed)
        target = out if len(names) == 1 else out / name
        target.mkdir(parents=True, exist_ok=True)
        write_json(target / "report.json", {**report.to_json(), "policy": name, "seed": cfg.seed, **cfg.echo()})
        with (target / "sr_curve.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["turn", "sr"])
            for t, v in report.sr_at.items():
                w.writerow([t, repr(v)])
        with (target / "episodes.jsonl").open("w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
        plot_sr_curves({name: report.sr_at}, target / "sr_curve.png", title=f"{name} ({cfg.eval_split})")
        curves[name] = report.sr_at
        print(f"{name}: SR@{cfg.max_turn}={report.sr_at[cfg.max_turn]:.3f}  AT={report.at:.2f}  "
              f"hDCG={report.hdcg:.3f}  (n={report.n_sessions})")
    if len(names) > 1:
        plot_sr_curves(curves, out / "sr_comparison.png", title=cfg.eval_split)
    return 0


class HumanResponder:
    """Asks a person at the terminal; same answers contract as the simulator."""

    def __init__(self, g: KnowledgeGraph, stdin: TextIO, stdout: TextIO):
        self.g, self.stdin, self.stdout = g, stdin, stdout

    def _ask(self, prompt: str) -> str:
        self.stdout.write(prompt)
        self.stdout.flush()
        line = self.stdin.readline()
        if not line:
            raise EOFError("input closed")
        return line.strip().lower()

    def respond_ask(self, attr: int) -> bool:
        while True:
            ans = self._ask(f"Do you want items with '{self.g.attr_names[attr]}'? [y/n] ")
            if ans in ("y", "yes", "n", "no"):
                return ans.startswith("y")

    def respond_recommend(self, items) -> tuple[bool, int | None]:
        items = list(items)
        self.stdout.write("How about:\n")
        for i, v in enumerate(items, start=1):
            self.stdout.write(f"  {i}. {self.g.item_names[v]}\n")
        while True:
            ans = self._ask("Number of the item you want, or 'no': ")
            if ans in ("n", "no"):
                return False, None
            if ans.isdigit() and 1 <= int(ans) <= len(items):
                return True, int(ans)


def cmd_interactive(cfg: RunConfig, args, stdin: TextIO = sys.stdin, stdout: TextIO = sys.stdout) -> int:
    g, _ = load_data(cfg)
    if g.n_users == 0:
        raise DatasetError("dataset has no users; cannot start a session")
    agent = load_agent(g, cfg, checkpoint_path(cfg)) if cfg.policy == "unicorn" else None
    emb = agent.emb if agent else load_embeddings(_require(embeddings_path(cfg), "embeddings checkpoint"), g,
                                                  cfg.dim)
    policy = make_policy(cfg.policy, g, cfg, agent)
    users = {name: i for i, name in enumerate(g.user_names)}
    if args.user not in users:
        raise ConfigError(f"unknown user {args.user!r}")
    attrs = {name: i for i, name in enumerate(g.attr_names)}
    human = HumanResponder(g, stdin, stdout)
    try:
        start = args.attribute or human._ask("Name one attribute you want: ")
    except EOFError:
        return 0
    if start not in attrs:
        raise ConfigError(f"unknown attribute {start!r}")
    try:
        rec = rollout(g, emb, human, users[args.user], -1, policy, cfg.env_config(),
                      np.random.default_rng(cfg.seed), initial_attr=attrs[start])
    except EOFError:
        stdout.write("\nSession abandoned.\n")
        return 0
    if rec.success:
        stdout.write(f"Found it in {rec.length} turn(s).\n")
    else:
        stdout.write(f"No match after {rec.length} turn(s).\n")
    return 0


def cmd_inspect(cfg: RunConfig, args) -> int:
    path = _require(Path(args.path), "checkpoint")
    tensors = checkpoint.load(path)
    for name, arr in tensors.items():
        print(f"{name:40s} {'x'.join(map(str, arr.shape)) or 'scalar':>12s}")
    side = path.with_suffix(".json")
    if side.exists():
        print(side.read_text(), end="")
    return 0


COMMANDS: dict[str, Callable] = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "interactive": cmd_interactive,
    "inspect-checkpoint": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("-v", "--verbose", action="store_true")
    for f in fields(RunConfig):
        common.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar=f.type.upper())
    parser = argparse.ArgumentParser(prog="unicorn", description="Graph-based conversational recommendation.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="generate a clustered synthetic dataset")
    p.add_argument("--out", default=None, help="output directory (default: --data-dir)")
    sub.add_parser("pretrain", parents=[common], help="TransE node embeddings")
    sub.add_parser("train", parents=[common], help="online DQN training against the simulator")
    sub.add_parser("eval", parents=[common], help="evaluate a policy on a held-out split")
    p = sub.add_parser("interactive", parents=[common], help="converse with a trained policy")
    p.add_argument("--user", required=True)
    p.add_argument("--attribute", default=None, help="initial attribute (prompted if omitted)")
    p = sub.add_parser("inspect-checkpoint", parents=[common], help="list tensors in a checkpoint")
    p.add_argument("path")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
        if args.command == "synth" and args.out is not None:
            overrides["data_dir"] = overrides["data_dir"] or args.out
        cfg = resolve(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except MissingFile as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except checkpoint.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
