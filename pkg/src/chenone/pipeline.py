"""Stage orchestration: every stage reads plain files from the work
directory and writes its own, so stages can be rerun one at a time.

Work directory layout (all names relative to ``--out``)::

    data/             synthetic corpus (train/, test/, words.txt, lm.arpa)
    units.txt         unit inventory
    lexicon.txt       lexicon
    mono.tree         context-independent tied-state map
    mono.mdl          bootstrap model
    ali.txt           forced alignments of the training set
    stats.txt         tri-context statistics
    tree.txt          tied-state decision tree
    final.mdl         context-dependent model
    hyp.txt           test-set hypotheses
    score.txt         WER/CER report
    ablate.txt        ablation table
    manifest.txt      one line per stage: input hashes and config
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .am import (AcousticModel, Utterance, build_graphs, align_corpus, em_iterate,
                 flat_start, model_centers, retie, split_mixtures)
from .context import CdConfig, HmmTopology
from .decode import DecodeConfig, build_prefix_tree, decode, write_hypotheses
from .errors import ChenoneError, MissingArtifact
from .evaluate import read_tags, read_text, score_corpus, select_rare_words
from .features import read_features, read_table
from .lm import load_arpa
from .stats import StatsTable, accumulate, merge
from .synth import (SyntheticSpec, ablation_spec, read_alignments, segments_from_result,
                    write_alignments, write_synthetic)
from .tree import TiedStateMap, TreeConfig, generate_questions, grow_tree, root_key
from .units import CaseMode, Lexicon, UnitInventory, build_lexicon, load_phonetic_lexicon

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"


@dataclass
class PathsConfig:
    data: str = ""
    words: str = ""
    phonetic_lexicon: str = ""
    phones: str = ""
    lm: str = ""


@dataclass
class LexiconConfig:
    case_mode: str = "preserve"


@dataclass
class SynthConfig:
    preset: str = "default"
    num_utterances: int = 500
    dim: int = 6
    mean_scale: float = 3.0
    noise: float = 1.0
    sil_prob: float = 0.5
    zipf: float = 1.0
    test_fraction: float = 0.2
    context_units: str = ""
    lm_order: int = 2


@dataclass
class TrainConfig:
    mono_iterations: int = 5
    cd_iterations: int = 4
    mixtures: tuple = ()
    mix_iterations: int = 2
    sil_prob: float = 0.5
    # share of the training set, drawn at random, used for the bootstrap model
    bootstrap_fraction: float = 1.0


@dataclass
class TreeSection:
    max_leaves: int = 300
    min_gain: float = 20.0
    min_count: float = 10.0
    share_wb_root: bool = False

    def tree_config(self):
        return TreeConfig(max_leaves=self.max_leaves, min_gain=self.min_gain,
                          min_count=self.min_count, share_wb_root=self.share_wb_root)


@dataclass
class ScoreConfig:
    rare_threshold: float = 0.8
    count_spaces: bool = True


@dataclass
class AblateConfig:
    cases: tuple = ("preserve", "lowercase")


@dataclass
class PipelineConfig:
    out: str = "work"
    seed: int = 0
    jobs: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    lexicon: LexiconConfig = field(default_factory=LexiconConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    context: CdConfig = field(default_factory=CdConfig)
    tree: TreeSection = field(default_factory=TreeSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)

    SECTIONS = ("paths", "lexicon", "synth", "context", "tree", "train", "decode",
                "score", "ablate")

    @property
    def out_dir(self):
        return Path(self.out)

    @property
    def data_dir(self):
        return Path(self.paths.data) if self.paths.data else self.out_dir / "data"

    @property
    def case_mode(self):
        return CaseMode(self.lexicon.case_mode)

    def with_values(self, section, **values):
        """Copy with some fields of one section replaced."""
        sub = dataclasses.replace(getattr(self, section), **values)
        return dataclasses.replace(self, **{section: sub})

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def load(cls, path=None, overrides=()):
        """Read an INI-style ``key = value`` file, then apply ``section.key=value``
        overrides in order."""
        cfg = cls()
        parser = configparser.ConfigParser(interpolation=None)
        if path is not None:
            if not Path(path).is_file():
                raise MissingArtifact(f"config file {path} not found")
            parser.read(path, encoding="utf-8")
        items = [(s, k, v) for s in parser.sections() for k, v in parser.items(s)]
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ValueError(f"override {item!r} is not section.key=value")
            items.append((section, name, value.strip()))
        for section, name, value in items:
            cfg = cfg._set(section, name, value)
        return cfg

    def _set(self, section, name, value):
        if section == "run":
            if name not in ("out", "seed", "jobs"):
                raise ValueError(f"unknown key run.{name}")
            return dataclasses.replace(self, **{name: _convert(getattr(self, name), value)})
        if section not in self.SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        current = getattr(self, section)
        if name not in {f.name for f in dataclasses.fields(current)}:
            raise ValueError(f"unknown key {section}.{name}")
        return self.with_values(section, **{name: _convert(getattr(current, name), value)})


def _convert(default, text):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        parts = [p.strip() for p in text.replace(",", " ").split()]
        if default and isinstance(default[0], str):
            return tuple(parts)
        return tuple(int(p) for p in parts)
    return text


# -- manifest ---------------------------------------------------------------

def file_hash(path):
    h = hashlib.sha256()
    path = Path(path)
    if path.is_dir():
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(str(sub.relative_to(path)).encode())
            h.update(hashlib.sha256(sub.read_bytes()).digest())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _rel(cfg, path):
    return Path(os.path.relpath(path, cfg.out_dir)).as_posix()


def record(cfg: PipelineConfig, stage, inputs, outputs):
    """Write the stage's manifest line in place of any earlier line for the
    same stage so that reruns leave the manifest unchanged."""
    entry = {
        "stage": stage,
        "inputs": {_rel(cfg, p): file_hash(p) for p in inputs},
        "outputs": {_rel(cfg, p): file_hash(p) for p in outputs},
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("out", "jobs")},
    }
    # paths are recorded relative to the work directory
    entry["config"]["paths"] = {k: _rel(cfg, v) if v else v
                                for k, v in entry["config"]["paths"].items()}
    line = json.dumps(entry, sort_keys=True)
    path = cfg.out_dir / MANIFEST
    lines = path.read_text(encoding="utf-8").splitlines() if path.exists() else []
    stages = [json.loads(ln).get("stage") for ln in lines]
    if stage in stages:
        lines[stages.index(stage)] = line
    else:
        lines.append(line)
    path.write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def _need(*paths):
    for p in paths:
        if not Path(p).exists():
            raise MissingArtifact(f"required input {p} is missing; run the upstream stage first")


# -- loading helpers ---------------------------------------------------------

def load_corpus(corpus_dir):
    corpus_dir = Path(corpus_dir)
    _need(corpus_dir / "text", corpus_dir / "feats.scp")
    texts = read_text(corpus_dir / "text")
    scp = read_table(corpus_dir / "feats.scp")
    utts = []
    for utt_id, words in texts.items():
        if utt_id not in scp:
            raise MissingArtifact(f"{corpus_dir}/feats.scp has no entry for {utt_id}")
        utts.append(Utterance(utt_id, words, read_features(corpus_dir / scp[utt_id])))
    return utts


def load_lexicon(cfg):
    out = cfg.out_dir
    _need(out / "units.txt", out / "lexicon.txt")
    inventory = UnitInventory.read(out / "units.txt")
    return Lexicon.read(out / "lexicon.txt", inventory)


def _lm_path(cfg):
    return Path(cfg.paths.lm) if cfg.paths.lm else cfg.data_dir / "lm.arpa"


# -- stages ----------------------------------------------------------------

def synth_spec(cfg: PipelineConfig) -> SyntheticSpec:
    s = cfg.synth
    if s.preset == "ablation":
        return ablation_spec(cfg.seed, s.num_utterances)
    if s.preset != "default":
        raise ValueError(f"unknown synth preset {s.preset!r}")
    return SyntheticSpec(num_utterances=s.num_utterances, seed=cfg.seed, dim=s.dim,
                         mean_scale=s.mean_scale, noise=s.noise, sil_prob=s.sil_prob,
                         zipf=s.zipf, context_units=frozenset(s.context_units),
                         test_fraction=s.test_fraction)


def cmd_synth(cfg: PipelineConfig):
    out = cfg.data_dir
    write_synthetic(synth_spec(cfg), out, lm_order=cfg.synth.lm_order)
    record(cfg, "synth", [], [out])
    return out


def cmd_lexicon(cfg: PipelineConfig):
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if cfg.paths.phonetic_lexicon:
        _need(cfg.paths.phonetic_lexicon, cfg.paths.phones)
        inventory = UnitInventory.read(cfg.paths.phones)
        lexicon = load_phonetic_lexicon(cfg.paths.phonetic_lexicon, inventory)
        inputs = [cfg.paths.phonetic_lexicon, cfg.paths.phones]
    else:
        words_path = Path(cfg.paths.words) if cfg.paths.words else cfg.data_dir / "words.txt"
        _need(words_path)
        words = words_path.read_text(encoding="utf-8").split()
        inventory = UnitInventory.graphemic(cfg.case_mode)
        lexicon = build_lexicon(words, inventory)
        inputs = [words_path]
    inventory.write(out / "units.txt")
    lexicon.write(out / "lexicon.txt")
    record(cfg, "lexicon", inputs, [out / "units.txt", out / "lexicon.txt"])
    return lexicon


def _train_corpus(cfg):
    return load_corpus(cfg.data_dir / "train")


def bootstrap_subset(corpus, fraction, seed):
    """A seeded random share of ``corpus`` in its original order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"bootstrap_fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return list(corpus)
    k = max(1, int(round(len(corpus) * fraction)))
    keep = np.random.default_rng([seed, 3]).choice(len(corpus), size=k, replace=False)
    return [corpus[i] for i in sorted(keep)]


def cmd_align(cfg: PipelineConfig):
    """Flat start, context-independent EM, then forced alignment."""
    out = cfg.out_dir
    lexicon = load_lexicon(cfg)
    train = bootstrap_subset(_train_corpus(cfg), cfg.train.bootstrap_fraction, cfg.seed)
    cd, topo = cfg.context, HmmTopology()
    model = flat_start(train, lexicon, cd, topo, share_wb_root=cfg.tree.share_wb_root)
    graphs = build_graphs(train, lexicon, cd, topo, cfg.train.sil_prob)
    for i in range(cfg.train.mono_iterations):
        model, ll = em_iterate(model, train, graphs, cfg.jobs)
        log.info("mono iteration %d: log-likelihood %.3f", i, ll)
    results = align_corpus(model, train, graphs, cfg.jobs)
    segs = {u.utt_id: segments_from_result(r) for u, r in zip(train, results) if r is not None}
    model.tied_map.write(out / "mono.tree")
    model.write(out / "mono.mdl")
    write_alignments(out / "ali.txt", segs)
    record(cfg, "align", [out / "lexicon.txt", cfg.data_dir / "train"],
           [out / "mono.tree", out / "mono.mdl", out / "ali.txt"])
    return model


def cmd_stats(cfg: PipelineConfig):
    out = cfg.out_dir
    _need(out / "ali.txt")
    lexicon = load_lexicon(cfg)
    train = {u.utt_id: u for u in _train_corpus(cfg)}
    alis = read_alignments(out / "ali.txt", lexicon.inventory)
    dim = next(iter(train.values())).features.shape[1] if train else 0
    stats = StatsTable(dim)
    for utt_id, segs in alis.items():
        if utt_id not in train:
            raise MissingArtifact(f"alignment for unknown utterance {utt_id}")
        labels = []
        for start, end, ctx, _ in segs:
            labels += [ctx] * (end - start + 1)
        stats = merge(stats, accumulate(labels, train[utt_id].features[:len(labels)]))
    stats.write(out / "stats.txt")
    record(cfg, "stats", [out / "ali.txt", cfg.data_dir / "train"], [out / "stats.txt"])
    return stats


def cmd_tree(cfg: PipelineConfig):
    out = cfg.out_dir
    _need(out / "stats.txt")
    lexicon = load_lexicon(cfg)
    stats = StatsTable.read(out / "stats.txt", lexicon.inventory)
    # a shared root pools both positions of a center, so it may ask about the center
    questions = generate_questions(stats, center_questions=cfg.tree.share_wb_root)
    tied = grow_tree(stats, questions, cfg.tree.tree_config())
    # centers that never occurred in the alignments still need a root
    share = cfg.tree.share_wb_root
    missing = [c for c in model_centers(lexicon, cfg.context)
               if root_key(c, share) not in tied.roots]
    if missing:
        raise MissingArtifact(f"no statistics for units {[str(u) for u in missing[:5]]}")
    tied.write(out / "tree.txt")
    record(cfg, "tree", [out / "stats.txt"], [out / "tree.txt"])
    return tied


def cmd_train(cfg: PipelineConfig):
    """Retie the bootstrap model to the tree and run CD EM with an optional
    mixture-splitting schedule."""
    out = cfg.out_dir
    _need(out / "tree.txt", out / "mono.mdl", out / "mono.tree", out / "stats.txt")
    lexicon = load_lexicon(cfg)
    train = _train_corpus(cfg)
    tied = TiedStateMap.read(out / "tree.txt")
    mono = AcousticModel.read(out / "mono.mdl", TiedStateMap.read(out / "mono.tree"))
    stats = StatsTable.read(out / "stats.txt", lexicon.inventory)
    model = retie(mono, tied, stats)
    graphs = build_graphs(train, lexicon, cfg.context, model.topology, cfg.train.sil_prob)
    for i in range(cfg.train.cd_iterations):
        model, ll = em_iterate(model, train, graphs, cfg.jobs)
        log.info("cd iteration %d: log-likelihood %.3f", i, ll)
    for target in cfg.train.mixtures:
        model = split_mixtures(model, target)
        for i in range(cfg.train.mix_iterations):
            model, ll = em_iterate(model, train, graphs, cfg.jobs)
            log.info("%d-component iteration %d: log-likelihood %.3f", target, i, ll)
    model.write(out / "final.mdl")
    record(cfg, "train", [out / "tree.txt", out / "mono.mdl", out / "stats.txt",
                          cfg.data_dir / "train"], [out / "final.mdl"])
    return model


def _decode_one(args):
    utt_id, feats, model, tree, lm, dcfg = args
    return utt_id, decode(feats, model, tree, lm, dcfg).words


def cmd_decode(cfg: PipelineConfig):
    out = cfg.out_dir
    lm_path = _lm_path(cfg)
    _need(out / "final.mdl", out / "tree.txt", lm_path)
    lexicon = load_lexicon(cfg)
    tied = TiedStateMap.read(out / "tree.txt")
    model = AcousticModel.read(out / "final.mdl", tied)
    lm = load_arpa(lm_path)
    tree = build_prefix_tree(lexicon, tied, cfg.context)
    test = load_corpus(cfg.data_dir / "test")
    work = [(u.utt_id, u.features, model, tree, lm, cfg.decode) for u in test]
    if cfg.jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            hyps = dict(pool.map(_decode_one, work))
    else:
        hyps = dict(map(_decode_one, work))
    write_hypotheses(out / "hyp.txt", hyps)
    record(cfg, "decode", [out / "final.mdl", out / "tree.txt", out / "lexicon.txt", lm_path,
                           cfg.data_dir / "test"], [out / "hyp.txt"])
    return hyps


def cmd_score(cfg: PipelineConfig):
    out = cfg.out_dir
    test_dir, train_dir = cfg.data_dir / "test", cfg.data_dir / "train"
    _need(out / "hyp.txt", test_dir / "text")
    refs = read_text(test_dir / "text")
    hyps = read_text(out / "hyp.txt")
    tags = read_tags(test_dir / "tags") if (test_dir / "tags").exists() else []
    rare = None
    inputs = [out / "hyp.txt", test_dir / "text"]
    if (train_dir / "text").exists():
        counts = Counter(w for words in read_text(train_dir / "text").values() for w in words)
        if counts:
            rare = select_rare_words(dict(counts), cfg.score.rare_threshold)
        inputs.append(train_dir / "text")
    report = score_corpus(refs, hyps, tags, rare, cfg.score.count_spaces)
    (out / "score.txt").write_text(report.to_text(), encoding="utf-8")
    record(cfg, "score", inputs, [out / "score.txt"])
    return report


STAGES = ("lexicon", "align", "stats", "tree", "train", "decode", "score")


def run_pipeline(cfg: PipelineConfig, synth=True):
    """Every stage in order; returns the score report."""
    if synth:
        cmd_synth(cfg)
    cmd_lexicon(cfg)
    cmd_align(cfg)
    cmd_stats(cfg)
    cmd_tree(cfg)
    cmd_train(cfg)
    cmd_decode(cfg)
    return cmd_score(cfg)


@dataclass
class AblationCell:
    context_dependent: bool
    position_dependent: bool
    case_mode: str
    wer: float | None = None
    error: str = ""


def cmd_ablate(cfg: PipelineConfig, grid=None):
    """Run the pipeline for every CD x PD x case cell on one shared corpus."""
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if not cfg.paths.data:
        cmd_synth(cfg)
        cfg = cfg.with_values("paths", data=str(cfg.data_dir))
    if grid is None:
        grid = [(cd, pd, case) for cd in (False, True) for pd in (False, True)
                for case in cfg.ablate.cases]
    cells = []
    for cd, pd, case in grid:
        name = f"cd{int(cd)}_pd{int(pd)}_{case}"
        cell_cfg = dataclasses.replace(
            cfg, out=str(out / "ablate" / name),
            context=dataclasses.replace(cfg.context, context_dependent=cd,
                                        position_dependent=pd),
            lexicon=LexiconConfig(case))
        cell = AblationCell(cd, pd, case)
        try:
            cell.wer = run_pipeline(cell_cfg, synth=False).wer.wer
        except (ChenoneError, ValueError) as err:
            log.error("ablation cell %s failed: %s", name, err)
            cell.error = f"{type(err).__name__}: {err}"
        cells.append(cell)
    (out / "ablate.txt").write_text(format_ablation(cells), encoding="utf-8")
    record(cfg, "ablate", [cfg.data_dir], [out / "ablate.txt"])
    return cells


def format_ablation(cells):
    """Table with CD and PD columns and one WER cell per configuration."""
    lines = [f"{'CD':<4}{'PD':<4}{'case':<11}{'WER':>7}"]
    for c in cells:
        wer = f"{c.wer:7.2f}" if c.wer is not None else f"{'failed':>7}  {c.error}"
        lines.append(f"{'Y' if c.context_dependent else 'N':<4}"
                     f"{'Y' if c.position_dependent else 'N':<4}{c.case_mode:<11}{wer}")
    return "\n".join(lines) + "\n"
