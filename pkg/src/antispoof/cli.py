"""Command-line front end: one subcommand per pipeline stage.

Every setting has a config-file key ``section.key`` and exactly one flag
``--section-key``. Precedence, lowest first: built-in default, config file,
environment (``ANTISPOOF_PATHS_<KEY>``, path settings only), command line.

Workspace layout::

    {paths.corpus}/{subset}/*.wav, {paths.corpus}/protocols/{subset}.txt
    {paths.features}/{KIND}_{subset}.spfa
    {paths.models}/G-{KIND}.bonafide.gmm, G-{KIND}.spoof.gmm, x-{KIND}.xv
    {paths.scores}/{system}_{subset}.tsv
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AntispoofError, ConfigError, KindMismatch, NotFound
from .features import FEATURE_KINDS, FeatureArchive
from .frontend import extract_corpus, feature_config
from .fusion import calibrate, fuse_all
from .gmm import em_fit, gmm_score, load_model, save_model
from .metrics import TDcfParams, evaluate, format_key_values, format_table, join_labels
from .protocol import SUBSETS, parse_protocol
from .scores import ScoreSet, read_scores, write_scores
from .synth import DEFAULT_COUNTS, SynthConfig, generate_corpus
from .xvector import TrainConfig, load_checkpoint, save_checkpoint, train, xvector_score

log = logging.getLogger("antispoof")

INVALID_ARGUMENT_EXIT = 2


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_parse_bool.__name__ = "bool"


def _optional(cast):
    def parse(text: str):
        return None if text.strip().lower() in ("", "none", "auto") else cast(text)

    parse.__name__ = cast.__name__
    return parse


@dataclass(frozen=True)
class Option:
    section: str
    key: str
    cast: object
    default: object
    help: str

    @property
    def name(self) -> str:
        return f"{self.section}.{self.key}"

    @property
    def flag(self) -> str:
        return f"--{self.section}-{self.key.replace('_', '-')}"

    @property
    def dest(self) -> str:
        return f"{self.section}__{self.key}"


_td = TDcfParams()

OPTIONS = [
    Option("run", "seed", int, 42, "seed for x-vector initialisation, splits and crops"),
    Option("run", "workers", int, 1, "worker processes for generation and extraction"),
    Option("run", "log_level", str, "warning", "logging level: debug, info, warning, error"),
    Option("paths", "corpus", str, "corpus", "corpus directory (WAVs and protocols)"),
    Option("paths", "features", str, "features", "feature archive directory"),
    Option("paths", "models", str, "models", "model directory"),
    Option("paths", "scores", str, "scores", "score file directory"),
    Option("synth", "seed", int, 7, "corpus generator seed"),
    Option("synth", "scale", float, 1.0, "multiplier on the default per-subset trial counts"),
    Option("synth", "seconds", float, 2.0, "utterance duration in seconds"),
    Option("synth", "subsets", str, "train,dev,eval", "subsets to generate"),
    Option("feature", "kind", str, "MFCC", "feature kind: " + ", ".join(FEATURE_KINDS)),
    Option("feature", "num_ceps", int, 20, "cepstral coefficients kept (cepstral kinds)"),
    Option("feature", "num_filters", _optional(int), None, "filterbank channels (default 20, or 40 for *FBE)"),
    Option("feature", "nfft", int, 512, "FFT size for the spectral front-ends"),
    Option("feature", "f_min", _optional(float), None, "lowest analysis frequency in Hz (default 0, CQCC 125)"),
    Option("feature", "f_max", _optional(float), None, "highest analysis frequency in Hz (default Nyquist)"),
    Option("feature", "bins_per_octave", int, 96, "CQT bins per octave (CQCC)"),
    Option("feature", "deltas", _parse_bool, True, "append delta and delta-delta coefficients"),
    Option("feature", "drop_c0", _parse_bool, False, "drop the zeroth cepstral coefficient"),
    Option("feature", "cmvn", _parse_bool, False, "per-utterance mean and variance normalisation"),
    Option("extract", "subsets", str, "train,dev", "subsets to extract"),
    Option("gmm", "components", int, 32, "mixture components per class"),
    Option("gmm", "max_iters", int, 50, "maximum EM iterations"),
    Option("gmm", "tol", float, 1e-4, "stop when the average log-likelihood gains less than this"),
    Option("gmm", "seed", int, 0, "k-means initialisation seed"),
    Option("xvector", "epochs", int, 30, "training epochs"),
    Option("xvector", "lr", float, 1e-3, "initial learning rate"),
    Option("xvector", "momentum", float, 0.9, "SGD momentum"),
    Option("xvector", "batch", int, 64, "utterances per batch"),
    Option("xvector", "crop_frames", int, 150, "training crop length in frames"),
    Option("xvector", "hidden1", int, 256, "first TDNN width"),
    Option("xvector", "hidden2", int, 256, "second TDNN width"),
    Option("xvector", "embed", int, 128, "embedding width"),
    Option("xvector", "alpha", float, 1.0, "focal loss alpha"),
    Option("xvector", "gamma", float, 2.0, "focal loss gamma"),
    Option("xvector", "val_fraction", float, 0.2, "held-out validation fraction per class"),
    Option("xvector", "patience", int, 2, "stale epochs before the learning rate halves"),
    Option("score", "systems", str, "G-MFCC", "systems to score, e.g. G-MFCC,x-LFCC"),
    Option("score", "subsets", str, "dev", "subsets to score"),
    Option("fuse", "systems", str, "G-MFCC,G-LFCC,x-MFCC", "constituent systems in tie-break order"),
    Option("fuse", "name", _optional(str), None, "fused system name (default G-Prim, x-Prim or Prim)"),
    Option("fuse", "calibrate", _parse_bool, True, "standardise each system before switching"),
    Option("fuse", "calibration_subset", str, "dev", "subset whose scores set the calibration"),
    Option("fuse", "subsets", str, "dev", "subsets to fuse"),
    Option("evaluate", "subset", str, "dev", "subset to evaluate"),
    Option("evaluate", "systems", str, "", "systems to evaluate (default: every score file of the subset)"),
    Option("evaluate", "format", str, "table", "output format: table or kv"),
    Option("evaluate", "threshold", float, 0.0, "decision threshold for accuracy"),
    Option("tdcf", "pi_tar", float, _td.pi_tar, "target prior"),
    Option("tdcf", "pi_non", float, _td.pi_non, "non-target prior"),
    Option("tdcf", "pi_spoof", float, _td.pi_spoof, "spoof prior"),
    Option("tdcf", "c_miss_asv", float, _td.c_miss_asv, "ASV miss cost"),
    Option("tdcf", "c_fa_asv", float, _td.c_fa_asv, "ASV false-alarm cost"),
    Option("tdcf", "c_miss_cm", float, _td.c_miss_cm, "countermeasure miss cost"),
    Option("tdcf", "c_fa_cm", float, _td.c_fa_cm, "countermeasure false-alarm cost"),
    Option("tdcf", "p_miss_asv", float, _td.p_miss_asv, "ASV miss rate at its operating point"),
    Option("tdcf", "p_fa_asv", float, _td.p_fa_asv, "ASV false-alarm rate at its operating point"),
    Option("tdcf", "p_miss_spoof_asv", float, _td.p_miss_spoof_asv, "rate at which ASV rejects spoofs"),
]
OPTION_BY_NAME = {o.name: o for o in OPTIONS}

COMMON = ("run", "paths")
COMMANDS = {
    "synth-corpus": (("synth",), "generate the synthetic two-class corpus"),
    "extract": (("feature", "extract"), "extract one feature kind for the listed subsets"),
    "train-gmm": (("feature", "gmm"), "train the bonafide and spoof GMMs on one feature kind"),
    "train-xvector": (("feature", "xvector"), "train an x-vector classifier on one feature kind"),
    "score": (("score",), "score subsets with trained systems"),
    "fuse": (("fuse",), "decision-level feature switching over scored systems"),
    "evaluate": (("evaluate", "tdcf"), "EER, min t-DCF and accuracy per system"),
}

SYSTEM_RE = re.compile(r"^(G|x)-([A-Z]+)$")


def read_config(path) -> dict:
    """Parse ``section.key = value`` lines into typed values."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'section.key = value'")
        name, value = (part.strip() for part in line.split("=", 1))
        opt = OPTION_BY_NAME.get(name)
        if opt is None:
            raise ConfigError(f"{path}:{line_no}: unknown key {name!r}")
        if name in values:
            raise ConfigError(f"{path}:{line_no}: {name} set twice")
        try:
            values[name] = opt.cast(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{line_no}: {name}: {exc}") from None
    return values


def resolve(args: argparse.Namespace, sections) -> dict:
    """Merge defaults, config file, environment and flags for ``sections``."""
    from_file = read_config(args.config) if args.config else {}
    out = {}
    for opt in OPTIONS:
        if opt.section not in sections:
            continue
        value = from_file.get(opt.name, opt.default)
        env = f"ANTISPOOF_{opt.section}_{opt.key}".upper()
        if opt.section == "paths" and os.environ.get(env):
            value = os.environ[env]
        if hasattr(args, opt.dest):
            value = getattr(args, opt.dest)
        out[opt.name] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="antispoof",
        description="Spoofed-speech countermeasure pipeline.",
        epilog="Errors print one line 'error: CODE: message' and exit with the code's status.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (sections, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="FILE", help="flat 'section.key = value' config file")
        for section in COMMON + sections:
            group = p.add_argument_group(section)
            for opt in (o for o in OPTIONS if o.section == section):
                group.add_argument(opt.flag, dest=opt.dest, type=opt.cast, default=argparse.SUPPRESS,
                                   metavar=opt.cast.__name__.upper().strip("_"),
                                   help=f"{opt.help} [{opt.name}, default {opt.default!r}]")
    return parser


def _split(text: str) -> list:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _subsets(text: str) -> list:
    subsets = _split(text)
    bad = [s for s in subsets if s not in SUBSETS]
    if bad or not subsets:
        raise ConfigError(f"subsets must be drawn from {', '.join(SUBSETS)}, got {text!r}")
    return subsets


def _kind(text: str) -> str:
    kind = str(text).upper()
    if kind not in FEATURE_KINDS:
        raise ConfigError(f"unknown feature kind {text!r}; choose from {', '.join(FEATURE_KINDS)}")
    return kind


def _system(name: str):
    m = SYSTEM_RE.match(name)
    if not m or m.group(2) not in FEATURE_KINDS:
        raise ConfigError(f"system names look like G-MFCC or x-LFCC, got {name!r}")
    return m.group(1), m.group(2)


def _protocol(cfg, subset):
    return parse_protocol(Path(cfg["paths.corpus"]) / "protocols" / f"{subset}.txt", subset)


def _archive_path(cfg, kind, subset) -> Path:
    return Path(cfg["paths.features"]) / f"{kind}_{subset}.spfa"


def _score_path(cfg, system, subset) -> Path:
    return Path(cfg["paths.scores"]) / f"{system}_{subset}.tsv"


def _gmm_paths(cfg, kind):
    base = Path(cfg["paths.models"])
    return base / f"G-{kind}.bonafide.gmm", base / f"G-{kind}.spoof.gmm"


def _xvector_path(cfg, kind) -> Path:
    return Path(cfg["paths.models"]) / f"x-{kind}.xv"


def _labelled_features(cfg, kind, subset):
    archive = FeatureArchive.load(_archive_path(cfg, kind, subset))
    if archive.kind != kind:
        raise KindMismatch(f"{_archive_path(cfg, kind, subset)} holds {archive.kind}, expected {kind}")
    trials = _protocol(cfg, subset)
    missing = [t.utterance_id for t in trials if t.utterance_id not in archive.items]
    if missing:
        raise NotFound(f"{len(missing)} {subset} utterances have no features (e.g. {missing[0]})")
    return [(archive[t.utterance_id], t.is_bonafide) for t in trials]


def cmd_synth_corpus(cfg) -> int:
    scale = cfg["synth.scale"]
    subsets = _subsets(cfg["synth.subsets"])
    counts = {k: max(1, int(round(v * scale))) for k, v in DEFAULT_COUNTS.items() if k[0] in subsets}
    synth = SynthConfig(counts, utterance_seconds=cfg["synth.seconds"], seed=cfg["synth.seed"])
    plans = generate_corpus(synth, cfg["paths.corpus"], cfg["run.workers"])
    for subset, trials in plans.items():
        n_b = sum(t.is_bonafide for t in trials)
        print(f"{subset}: {n_b} bonafide, {len(trials) - n_b} spoof")
    return 0


def _feature_cfg(cfg):
    overrides = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("feature.") and k != "feature.kind"}
    return feature_config(_kind(cfg["feature.kind"]), **overrides)


def cmd_extract(cfg) -> int:
    fcfg = _feature_cfg(cfg)
    for subset in _subsets(cfg["extract.subsets"]):
        trials = _protocol(cfg, subset)
        archive = extract_corpus(trials, Path(cfg["paths.corpus"]) / subset, fcfg, cfg["run.workers"])
        path = _archive_path(cfg, fcfg.kind, subset)
        path.parent.mkdir(parents=True, exist_ok=True)
        archive.save(path)
        first = next(iter(archive.items.values()))
        print(f"{path}: {len(archive)} utterances, {first.dim} dims")
    return 0


def cmd_train_gmm(cfg) -> int:
    kind = _kind(cfg["feature.kind"])
    data = _labelled_features(cfg, kind, "train")
    Path(cfg["paths.models"]).mkdir(parents=True, exist_ok=True)
    for label, path in zip((True, False), _gmm_paths(cfg, kind)):
        frames = np.concatenate([f.values for f, y in data if y == label])
        res = em_fit(frames, cfg["gmm.components"], cfg["gmm.max_iters"], cfg["gmm.tol"],
                     seed=cfg["gmm.seed"], kind=kind)
        save_model(path, res.model)
        state = "converged" if res.converged else "stopped"
        print(f"{path}: {len(frames)} frames, {state} after {len(res.trace) - 1} iterations, "
              f"avg log-likelihood {res.trace[-1]:.4f}")
    return 0


def cmd_train_xvector(cfg) -> int:
    kind = _kind(cfg["feature.kind"])
    data = [(f, int(y)) for f, y in _labelled_features(cfg, kind, "train")]
    tcfg = TrainConfig(
        lr=cfg["xvector.lr"], momentum=cfg["xvector.momentum"], epochs=cfg["xvector.epochs"],
        batch=cfg["xvector.batch"], crop_frames=cfg["xvector.crop_frames"], seed=cfg["run.seed"],
        alpha=cfg["xvector.alpha"], gamma=cfg["xvector.gamma"], hidden1=cfg["xvector.hidden1"],
        hidden2=cfg["xvector.hidden2"], embed=cfg["xvector.embed"],
        val_fraction=cfg["xvector.val_fraction"], patience=cfg["xvector.patience"],
    )
    state = train(data, tcfg)
    path = _xvector_path(cfg, kind)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, state.model, tcfg.digest())
    print(f"{path}: best epoch {state.best_epoch} of {state.epoch}, "
          f"validation loss {state.val_loss[state.best_epoch - 1]:.5f}")
    return 0


def cmd_score(cfg) -> int:
    for system in _split(cfg["score.systems"]):
        backend, kind = _system(system)
        if backend == "G":
            bona, spoof = (load_model(p) for p in _gmm_paths(cfg, kind))

            def score(f, uid):
                return gmm_score(bona, spoof, f, uid, system)
        else:
            model, _ = load_checkpoint(_xvector_path(cfg, kind))

            def score(f, uid):
                return xvector_score(model, f, uid, system)

        for subset in _subsets(cfg["score.subsets"]):
            archive = FeatureArchive.load(_archive_path(cfg, kind, subset))
            out = ScoreSet(system)
            for uid, f in archive.items.items():
                out.add(uid, score(f, uid).score)
            path = _score_path(cfg, system, subset)
            path.parent.mkdir(parents=True, exist_ok=True)
            write_scores(path, out)
            print(f"{path}: {len(out)} trials")
    return 0


def _fused_name(systems, name):
    if name:
        return name
    backends = {_system(s)[0] for s in systems}
    return f"{backends.pop()}-Prim" if len(backends) == 1 else "Prim"


def cmd_fuse(cfg) -> int:
    systems = _split(cfg["fuse.systems"])
    if not systems:
        raise ConfigError("fuse.systems is empty")
    name = _fused_name(systems, cfg["fuse.name"])
    calibrations = {}
    if cfg["fuse.calibrate"]:
        for s in systems:
            calibrations[s] = calibrate(read_scores(_score_path(cfg, s, cfg["fuse.calibration_subset"]), s))
    for subset in _subsets(cfg["fuse.subsets"]):
        sets = [read_scores(_score_path(cfg, s, subset), s) for s in systems]
        fused = fuse_all(sets, calibrations, name)
        path = _score_path(cfg, name, subset)
        write_scores(path, fused.scores)
        counts = ", ".join(f"{s}={n}" for s, n in fused.counts.items())
        print(f"{path}: {len(fused)} trials, selected {counts}")
    return 0


def cmd_evaluate(cfg) -> int:
    subset = _subsets(cfg["evaluate.subset"])[0]
    fmt = cfg["evaluate.format"]
    if fmt not in ("table", "kv"):
        raise ConfigError(f"evaluate.format must be table or kv, got {fmt!r}")
    systems = _split(cfg["evaluate.systems"])
    if systems:
        paths = [(s, _score_path(cfg, s, subset)) for s in systems]
    else:
        suffix = f"_{subset}.tsv"
        found = sorted(Path(cfg["paths.scores"]).glob(f"*{suffix}"))
        paths = [(p.name[: -len(suffix)], p) for p in found]
        if not paths:
            raise NotFound(f"no score files for subset {subset!r} in {cfg['paths.scores']}")
    tdcf = TDcfParams(**{k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("tdcf.")})
    trials = _protocol(cfg, subset)
    results = {}
    selections = {}
    for system, path in paths:
        scores = read_scores(path, system)
        results[system] = evaluate(join_labels(scores, trials), tdcf, cfg["evaluate.threshold"])
        if scores.chosen:
            selections[system] = Counter(scores.chosen.values())
    if fmt == "table":
        print(format_table(results))
        for system, counts in selections.items():
            print(f"{system} selections: " + ", ".join(f"{s}={n}" for s, n in counts.items()))
    else:
        print(format_key_values(results))
        for system, counts in selections.items():
            for s, n in counts.items():
                print(f"{system}.selected.{s}={n}")
    return 0


HANDLERS = {
    "synth-corpus": cmd_synth_corpus,
    "extract": cmd_extract,
    "train-gmm": cmd_train_gmm,
    "train-xvector": cmd_train_xvector,
    "score": cmd_score,
    "fuse": cmd_fuse,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args, COMMON + COMMANDS[args.command][0])
        level = getattr(logging, str(cfg["run.log_level"]).upper(), None)
        if not isinstance(level, int):
            raise ConfigError(f"unknown log level {cfg['run.log_level']!r}")
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        return HANDLERS[args.command](cfg)
    except AntispoofError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: INVALID_ARGUMENT: {exc}", file=sys.stderr)
        return INVALID_ARGUMENT_EXIT
    except OSError as exc:
        print(f"error: IO_ERROR: {exc}", file=sys.stderr)
        return 74


if __name__ == "__main__":
    sys.exit(main())
