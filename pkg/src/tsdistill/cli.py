"""Command-line entry point: ``tsdistill {gen-data,train,eval,distill,bench}``.

Settings come from a plain ``key = value`` file (``--config``), then flags.
Top-level keys are the :class:`RunConfig` fields; module settings use the
prefixes ``data.`` (:class:`SynthSpec`), ``net.`` (:class:`NetConfig`) and
``train.`` (:class:`TrainConfig`). Shared settings (``T``, ``Ts``, ``Q``,
``seed``, ``variant``) exist only at top level. Unknown keys are rejected.

Exit status: 0 success, 1 configuration error or missing input, 2 runtime
failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from . import container, nets, saasbench, synthvid, train
from .errors import ArgumentError, TsdError
from .nets import ModelParams, NetConfig
from .synthvid import SynthSpec
from .tensor import Tensor
from .train import TrainConfig
from .tsd import distill

log = logging.getLogger("tsdistill")

COMMANDS = ("gen-data", "train", "eval", "distill", "bench")
DEPLOYMENT_FLAGS = {"cloud": "cloud_only", "split": "split"}
CHECKPOINT_NAME = "checkpoint.tsdp"
META_PREFIX = "meta."


class ConfigError(ArgumentError):
    """Bad or unknown configuration key/value; maps to exit status 1."""


# keys owned by RunConfig; module configs may not redefine them
_SHARED = {
    "data": {"T", "seed"},
    "net": {"T", "T_s"},
    "train": {"variant", "T", "T_s", "Q", "seed"},
}
_SECTIONS = {"data": SynthSpec, "net": NetConfig, "train": TrainConfig}
_PATH_KEYS = ("out", "dataset", "checkpoint", "clip")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one invocation.

    ``data``, ``net`` and ``train`` hold overrides of the respective module
    config defaults, keyed by field name.
    """

    variant: str = "tsd"
    T: int = 16
    Ts: int = 4
    Q: int = 3
    seed: int = 0
    out: str = "out"
    deployment: str = "cloud"
    dataset: str = ""
    checkpoint: str = ""
    clip: str = ""
    n_train: int = 4000
    n_test: int = 1000
    data: dict = field(default_factory=dict)
    net: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in train.VARIANTS:
            raise ConfigError(f"variant must be one of {train.VARIANTS}, got {self.variant!r}")
        if self.deployment not in DEPLOYMENT_FLAGS:
            raise ConfigError(f"deployment must be cloud or split, got {self.deployment!r}")
        if self.Q < 1 or not 1 <= self.Ts <= self.T or min(self.n_train, self.n_test) < 1:
            raise ConfigError(f"need Q >= 1, 1 <= Ts <= T and positive dataset sizes "
                              f"(Q={self.Q}, T={self.T}, Ts={self.Ts})")

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(**{**self.data, "T": self.T, "seed": self.seed})

    def net_config(self) -> NetConfig:
        return NetConfig(**{**self.net, "T": self.T, "T_s": self.Ts})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**self.train, "variant": self.variant, "T": self.T,
                              "T_s": self.Ts, "Q": self.Q, "seed": self.seed})

    def to_text(self, paths=True) -> str:
        """Config file that reproduces this run when passed to ``--config``.

        ``paths=False`` drops file locations, leaving only what determines
        the numbers (used for checkpoint metadata).
        """
        lines = []
        for f in fields(self):
            if not paths and f.name in _PATH_KEYS:
                continue
            if f.name in _SECTIONS:
                for k in sorted(getattr(self, f.name)):
                    lines.append(f"{f.name}.{k} = {_format(getattr(self, f.name)[k])}")
            else:
                lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _format(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _defaults(cls) -> dict:
    return {f.name: getattr(cls(), f.name) for f in fields(cls)}


def _parse_pairs(pairs, origin: str) -> dict:
    """``[(key, raw value)]`` to ``{key: typed value}`` with sections nested."""
    top = {f.name: f.default for f in fields(RunConfig) if f.name not in _SECTIONS}
    out = {name: {} for name in _SECTIONS}
    for key, raw in pairs:
        section, _, name = key.partition(".")
        if name:
            if section not in _SECTIONS:
                raise ConfigError(f"{origin}: unknown section in key {key!r}")
            known = _defaults(_SECTIONS[section])
            if name not in known:
                raise ConfigError(f"{origin}: unknown key {key!r}")
            if name in _SHARED[section]:
                raise ConfigError(f"{origin}: {key!r} is set by the top-level key instead")
            out[section][name] = _coerce(key, raw, known[name])
        else:
            if key not in top:
                raise ConfigError(f"{origin}: unknown key {key!r}")
            out[key] = _coerce(key, raw, top[key])
    return out


def read_config_file(path) -> list:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
            key, value = text.split("=", 1)
            pairs.append((key.strip(), value))
    return pairs


def resolve(args) -> RunConfig:
    """Merge defaults, the config file, ``--set`` pairs and explicit flags."""
    pairs = read_config_file(args.config) if args.config else []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v))
    for flag, key in (("variant", "variant"), ("T", "T"), ("Ts", "Ts"), ("Q", "Q"),
                      ("seed", "seed"), ("out", "out"), ("deployment", "deployment"),
                      ("dataset", "dataset"), ("checkpoint", "checkpoint"), ("clip", "clip")):
        value = getattr(args, flag)
        if value is not None:
            pairs.append((key, str(value)))
    parsed = _parse_pairs(pairs, args.config or "flags")
    try:
        cfg = RunConfig(**parsed)
        cfg.synth_spec(), cfg.net_config(), cfg.train_config()
    except (TypeError, ArgumentError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, cfg: RunConfig):
    arrays = {k: v.data for k, v in params.named().items()}
    arrays[META_PREFIX + "config"] = np.frombuffer(cfg.to_text(paths=False).encode(), dtype=np.uint8)
    container.write_params_file(path, arrays)


def load_checkpoint(path):
    """``(ModelParams, config text)`` from a checkpoint file."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    arrays = container.read_params_file(path)
    groups = {g: {} for g in ModelParams().groups()}
    meta = ""
    for name, arr in arrays.items():
        if name == META_PREFIX + "config":
            meta = arr.tobytes().decode("utf-8", errors="replace")
            continue
        group, _, key = name.partition(".")
        if group not in groups or not key:
            raise container.FormatError(f"unexpected record {name!r} in {path}")
        groups[group][key] = Tensor(arr, requires_grad=True)
    return ModelParams(**groups), meta


def _need_file(path, what):
    if not path:
        raise ConfigError(f"{what} path is required")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return path


def _checkpoint_path(cfg: RunConfig):
    return cfg.checkpoint or os.path.join(cfg.out, CHECKPOINT_NAME)


def _check_variant(params: ModelParams, cfg: RunConfig):
    has = {"tsd": bool(params.tsd), "attn": bool(params.attention)}
    for variant, present in has.items():
        if (cfg.variant == variant) != present:
            raise ConfigError(f"checkpoint groups do not match variant {cfg.variant!r}")


# ----------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig):
    spec = cfg.synth_spec()
    for split, n in (("train", cfg.n_train), ("test", cfg.n_test)):
        clips, labels = synthvid.generate_dataset(spec, n, split)
        synthvid.write_dataset(os.path.join(cfg.out, split), clips, labels)
        log.info("wrote %d %s clips to %s", n, split, os.path.join(cfg.out, split))


def _dataset_dir(cfg: RunConfig, split):
    path = os.path.join(cfg.dataset or cfg.out, split)
    _need_file(os.path.join(path, synthvid.MANIFEST), f"{split} manifest")
    return path


def cmd_train(cfg: RunConfig):
    clips, labels = synthvid.read_dataset(_dataset_dir(cfg, "train"))

    def progress(stage, step, value):
        if step % 100 == 0:
            log.info("%s step %d loss %.4f", stage, step, value)

    params, curves = train.train_variant(clips, labels, cfg.net_config(), cfg.train_config(),
                                         progress=progress)
    save_checkpoint(_checkpoint_path(cfg), params, cfg)
    for stage, losses in curves.items():
        train.write_loss_csv(os.path.join(cfg.out, f"loss_{stage}.csv"), losses)
    log.info("wrote checkpoint %s", _checkpoint_path(cfg))


def cmd_eval(cfg: RunConfig):
    clips, labels = synthvid.read_dataset(_dataset_dir(cfg, "test"))
    params, _ = load_checkpoint(_checkpoint_path(cfg))
    _check_variant(params, cfg)
    report = train.evaluate_qclips(params, clips, labels, cfg.variant, cfg.T, cfg.Ts, cfg.Q,
                                   cfg.seed, cfg.net_config())
    train.write_eval_csv(os.path.join(cfg.out, "eval.csv"), [report])
    log.info("accuracy %.4f over %d clips (%d skipped)", report.accuracy,
             report.clips_evaluated, report.skipped)


def cmd_distill(cfg: RunConfig):
    lc = synthvid.read_clip(_need_file(cfg.clip, "clip"))
    net_cfg = cfg.net_config()
    if lc.clip.shape[0] != cfg.T:
        raise ConfigError(f"clip has {lc.clip.shape[0]} frames, config T={cfg.T}")
    x = Tensor(lc.clip)
    if cfg.variant == "tsd":
        params, _ = load_checkpoint(_checkpoint_path(cfg))
        _check_variant(params, cfg)
        p = nets.tsd_transform(x, params, net_cfg).data
    else:
        params = None
        if cfg.variant == "attn":
            params, _ = load_checkpoint(_checkpoint_path(cfg))
        p = train.eval_selection(cfg.variant, cfg.T, cfg.Ts, np.random.default_rng(cfg.seed),
                                 params, lc.clip.dtype)
    y = distill(x, Tensor(p)).data
    y = np.clip(y, 0.0, 1.0)  # float rounding only; y lies in the frame hull
    synthvid.write_clip(os.path.join(cfg.out, "distilled.tsdc"), synthvid.LabeledClip(y, lc.label))
    with open(os.path.join(cfg.out, "P.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame"] + [f"out{j}" for j in range(p.shape[1])])
        for i, row in enumerate(p):
            writer.writerow([i] + [repr(float(v)) for v in row])
    log.info("wrote distilled clip and P to %s", cfg.out)


def cmd_bench(cfg: RunConfig):
    net_cfg = cfg.net_config()
    if cfg.checkpoint:
        params, _ = load_checkpoint(cfg.checkpoint)
        _check_variant(params, cfg)
    else:
        params = nets.init_params(net_cfg, cfg.seed, cfg.variant)
    report = saasbench.simulate_session(params, cfg.variant, DEPLOYMENT_FLAGS[cfg.deployment],
                                        cfg.T, cfg.Ts, cfg.Q, net_cfg)
    saasbench.write_cost_csv(os.path.join(cfg.out, "bench.csv"), [report])
    log.info("client %d FLOPs, cloud %d FLOPs, %d bytes sent", report.client_flops,
             report.cloud_flops, report.bytes_transmitted)


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "distill": cmd_distill, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsdistill", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key = value settings file")
    parser.add_argument("--variant", choices=train.VARIANTS)
    parser.add_argument("--T", type=int, help="window length in frames")
    parser.add_argument("--Ts", type=int, help="frames after selection or distillation")
    parser.add_argument("--Q", type=int, help="clips averaged per video at evaluation")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--deployment", choices=tuple(DEPLOYMENT_FLAGS))
    parser.add_argument("--dataset", help="dataset root holding train/ and test/")
    parser.add_argument("--checkpoint", help="checkpoint path (default OUT/checkpoint.tsdp)")
    parser.add_argument("--clip", help="clip file for distill")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. train.stage1_steps=100")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = resolve(args)
        os.makedirs(cfg.out, exist_ok=True)
        text = cfg.to_text()
        log.info("resolved config:\n%s", text.rstrip())
        with open(os.path.join(cfg.out, f"{args.command}.config"), "w") as fh:
            fh.write(text)
        HANDLERS[args.command](cfg)
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc.filename or exc)
        return 1
    except ArgumentError as exc:
        log.error("config error: %s", exc)
        return 1
    except (TsdError, ValueError, ArithmeticError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
