"""Diagonal-covariance GMM/HMM acoustic model.

Training is Viterbi-EM: align every utterance against its transcript graph,
then re-estimate each tied state's mixture from the frames aligned to it.
Everything is computed in the natural-log domain.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .context import (
    CdConfig,
    HmmTopology,
    build_alignment_graph,
    expand_utterance,
)
from .errors import (
    FormatError,
    NoPath,
    UtteranceTooShort,
)
from .stats import GaussStats, StatsTable
from .tree import GARBAGE_ID, SIL_ID, TiedStateMap, ci_tied_map
from .units import GARBAGE_UNIT, SIL_UNIT, Lexicon

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-4
WEIGHT_FLOOR = 1e-5
LOG_2PI = math.log(2.0 * math.pi)
HEADER = "CFAM v1"


@dataclass
class Utterance:
    utt_id: str
    words: list
    features: np.ndarray


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    var: np.ndarray


@dataclass
class Gmm:
    weights: np.ndarray
    means: np.ndarray
    vars: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.vars = np.maximum(np.atleast_2d(np.asarray(self.vars, dtype=np.float64)),
                               VAR_FLOOR)
        if len(self.weights) < 1 or self.means.shape != self.vars.shape \
                or len(self.weights) != len(self.means):
            raise ValueError("inconsistent GMM parameter shapes")
        if abs(self.weights.sum() - 1.0) > 1e-8:
            raise ValueError("GMM weights must sum to 1")

    @classmethod
    def single(cls, mean, var):
        return cls(np.ones(1), [mean], [var])

    @classmethod
    def from_stats(cls, stats: GaussStats):
        return cls.single(stats.mean(), np.maximum(stats.var(), VAR_FLOOR))

    @property
    def num_components(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def components(self):
        return [DiagGaussian(m, v) for m, v in zip(self.means, self.vars)]

    def component_loglik(self, x):
        x = np.atleast_2d(x)
        diff = x[:, None, :] - self.means[None, :, :]
        return (np.log(self.weights)[None, :]
                - 0.5 * np.sum(LOG_2PI + np.log(self.vars), axis=1)[None, :]
                - 0.5 * np.sum(diff * diff / self.vars[None, :, :], axis=2))

    def loglik(self, x):
        return _logsumexp(self.component_loglik(x), axis=1)


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


@dataclass
class AcousticModel:
    tied_map: TiedStateMap
    pdfs: dict
    dim: int
    topology: HmmTopology = field(default_factory=HmmTopology)

    def __post_init__(self):
        n = self.tied_map.num_tied_states
        missing = [i for i in range(n) if i not in self.pdfs]
        if missing:
            raise ValueError(f"no pdf for tied states {missing[:5]}")
        for gmm in self.pdfs.values():
            if gmm.dim != self.dim:
                raise ValueError("pdf dimension mismatch")
        self._pack()

    def _pack(self):
        ids = sorted(self.pdfs)
        means, vars_, consts, starts = [], [], [], []
        for i in ids:
            g = self.pdfs[i]
            starts.append(len(means))
            for w, m, v in zip(g.weights, g.means, g.vars):
                means.append(m)
                vars_.append(v)
                consts.append(math.log(w) - 0.5 * float(np.sum(LOG_2PI + np.log(v))))
        self._ids = np.array(ids)
        self._means = np.array(means)
        self._inv_var = 1.0 / np.array(vars_)
        self._consts = np.array(consts)
        self._starts = np.array(starts)

    @property
    def num_pdfs(self):
        return len(self.pdfs)

    def log_likelihoods(self, features):
        """Frame-by-pdf emission log-likelihood matrix (T x num_pdfs)."""
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"features must be T x {self.dim}")
        diff = x[:, None, :] - self._means[None, :, :]
        comp = self._consts[None, :] - 0.5 * np.einsum("tcd,cd->tc", diff * diff, self._inv_var)
        if len(self._starts) == comp.shape[1]:
            return comp
        m = np.maximum.reduceat(comp, self._starts, axis=1)
        expanded = np.repeat(m, np.diff(np.append(self._starts, comp.shape[1])), axis=1)
        s = np.add.reduceat(np.exp(comp - expanded), self._starts, axis=1)
        return m + np.log(s)

    def to_text(self):
        out = [f"{HEADER} dim={self.dim} leaves={self.num_pdfs} "
               f"selfloop={self.topology.self_loop_prob:g}\n"]
        for i in sorted(self.pdfs):
            g = self.pdfs[i]
            out.append(f"PDF {i} ncomp={g.num_components}\n")
            out.append("W " + " ".join(f"{w:.17g}" for w in g.weights) + "\n")
            for m, v in zip(g.means, g.vars):
                out.append("M " + " ".join(f"{x:.17g}" for x in m) + "\n")
                out.append("V " + " ".join(f"{x:.17g}" for x in v) + "\n")
        return "".join(out)

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text, tied_map):
        lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not lines or " ".join(lines[0][:2]) != HEADER:
            raise FormatError("missing CFAM header")
        head = dict(p.split("=", 1) for p in lines[0][2:])
        dim = int(head["dim"])
        selfloop = float(head.get("selfloop", 0.5))
        topo = HmmTopology(1, selfloop, 1.0 - selfloop)
        pdfs = {}
        pos = 1
        while pos < len(lines):
            parts = lines[pos]
            if parts[0] != "PDF" or len(parts) != 3 or not parts[2].startswith("ncomp="):
                raise FormatError(f"model line {pos + 1}: expected PDF block")
            pid, k = int(parts[1]), int(parts[2][6:])
            block = lines[pos + 1: pos + 2 + 2 * k]
            if len(block) != 1 + 2 * k or block[0][0] != "W":
                raise FormatError(f"model line {pos + 2}: malformed PDF {pid}")
            weights = [float(x) for x in block[0][1:]]
            means = [[float(x) for x in block[1 + 2 * j][1:]] for j in range(k)]
            vars_ = [[float(x) for x in block[2 + 2 * j][1:]] for j in range(k)]
            pdfs[pid] = Gmm(np.array(weights), means, vars_)
            pos += 2 + 2 * k
        if len(pdfs) != int(head["leaves"]):
            raise FormatError("pdf count does not match header")
        return cls(tied_map, pdfs, dim, topo)

    @classmethod
    def read(cls, path, tied_map):
        return cls.from_text(Path(path).read_text(encoding="utf-8"), tied_map)


@dataclass
class AlignmentResult:
    frame_labels: list
    log_likelihood: float
    states: list = field(default_factory=list)

    @property
    def contexts(self):
        return [ctx for _, ctx in self.frame_labels]

    @property
    def tied_ids(self):
        return [tid for tid, _ in self.frame_labels]


def _graph_tables(graph):
    """Padded predecessor tables over emitting states (index = node - 1)."""
    n = len(graph.labels) - 2
    init = np.full(n, -np.inf)
    preds = [[] for _ in range(n)]
    fin = np.full(n, -np.inf)
    for s, d, lp in graph.arcs:
        if s == graph.start:
            init[d - 1] = max(init[d - 1], lp)
        elif d == graph.final:
            fin[s - 1] = max(fin[s - 1], lp)
        else:
            preds[d - 1].append((s - 1, lp))
    width = max(1, max(len(p) for p in preds))
    src = np.full((n, width), n, dtype=np.int64)
    lps = np.full((n, width), -np.inf)
    for d, plist in enumerate(preds):
        plist.sort()
        for j, (s, lp) in enumerate(plist):
            src[d, j] = s
            lps[d, j] = lp
    return init, src, lps, fin


def viterbi_align(graph, features, model: AcousticModel) -> AlignmentResult:
    """Best state path through ``graph``; ties go to the lowest state id."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.dim:
        raise ValueError(f"features must be T x {model.dim}")
    T = len(features)
    if T == 0 or T < graph.min_path_length():
        raise NoPath(f"{T} frames cannot cover a path of {graph.min_path_length()} states")
    labels = graph.labels[1:-1]
    tied = np.array([model.tied_map.tie(c) for c in labels])
    pdf_col = {pid: j for j, pid in enumerate(model._ids)}
    emis = model.log_likelihoods(features)[:, [pdf_col[t] for t in tied]]
    init, src, lps, fin = _graph_tables(graph)
    n = len(labels)
    back = np.zeros((T, n), dtype=np.int64)
    delta = init + emis[0]
    for t in range(1, T):
        padded = np.append(delta, -np.inf)
        cand = padded[src] + lps
        j = np.argmax(cand, axis=1)
        back[t] = src[np.arange(n), j]
        delta = cand[np.arange(n), j] + emis[t]
    total = delta + fin
    last = int(np.argmax(total))
    best = float(total[last])
    if not math.isfinite(best):
        raise NoPath("no complete path through the graph")
    path = [last]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    frame_labels = [(int(tied[s]), labels[s]) for s in path]
    return AlignmentResult(frame_labels, best, [s + 1 for s in path])


def _canonical_units(words, lexicon):
    seq = [[SIL_UNIT]]
    for w in words:
        if lexicon is not None and w in lexicon:
            seq.append(list(lexicon[w][0]))
        else:
            seq.append([GARBAGE_UNIT])
    seq.append([SIL_UNIT])
    return seq


def model_centers(lexicon: Lexicon, config: CdConfig):
    units = set()
    for _, pron in lexicon.pronunciations():
        for u in pron:
            units.add(u if config.position_dependent else u.internal())
    return sorted(units, key=lambda u: u.sort_key())


def flat_start(corpus: Sequence[Utterance], lexicon: Lexicon, config: CdConfig,
               topology: HmmTopology = HmmTopology(), skipped: Optional[list] = None,
               share_wb_root: bool = False) -> AcousticModel:
    """CI model from a uniform segmentation of each utterance.

    Every utterance is cut evenly over its canonical path (first
    pronunciation, no optional silence). Pdfs that receive no frames start
    from the global mean and variance.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    tied_map = ci_tied_map(model_centers(lexicon, config), share_wb_root)
    dim = corpus[0].features.shape[1]
    acc = {}
    total = GaussStats.zeros(dim)
    for utt in corpus:
        ctxs = expand_utterance(_canonical_units(utt.words, lexicon), config)
        T, k = len(utt.features), len(ctxs)
        if T < k:
            err = UtteranceTooShort(f"{utt.utt_id}: {T} frames < {k} states")
            log.warning("skipping %s", err)
            if skipped is not None:
                skipped.append(utt.utt_id)
            continue
        bounds = [(i * T) // k for i in range(k + 1)]
        for i, ctx in enumerate(ctxs):
            st = GaussStats.from_frames(utt.features[bounds[i]:bounds[i + 1]])
            tid = tied_map.tie(ctx)
            acc[tid] = acc[tid] + st if tid in acc else st
            total = total + st
    if total.count == 0:
        raise UtteranceTooShort("every utterance is shorter than its graph")
    fallback = Gmm.from_stats(total)
    pdfs = {}
    for tid in range(tied_map.num_tied_states):
        pdfs[tid] = Gmm.from_stats(acc[tid]) if tid in acc else fallback
    return AcousticModel(tied_map, pdfs, dim, topology)


def build_graphs(corpus, lexicon, config, topology=HmmTopology(), sil_prob=0.5):
    return [build_alignment_graph(u.words, lexicon, config, topology, sil_prob)
            for u in corpus]


def _align_one(args):
    graph, features, model = args
    try:
        return viterbi_align(graph, features, model)
    except NoPath:
        return None


def align_corpus(model, corpus, graphs, jobs=1):
    work = [(g, u.features, model) for g, u in zip(graphs, corpus)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_align_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    return [_align_one(w) for w in work]


def _reestimate(gmm: Gmm, frames):
    """One EM update of a mixture on its aligned frames."""
    if gmm.num_components == 1:
        return Gmm.from_stats(GaussStats.from_frames(frames))
    comp = gmm.component_loglik(frames)
    post = np.exp(comp - _logsumexp(comp, axis=1)[:, None])
    occ = post.sum(axis=0)
    means = gmm.means.copy()
    vars_ = gmm.vars.copy()
    for k in range(gmm.num_components):
        if occ[k] <= 0:
            continue
        m = post[:, k] @ frames / occ[k]
        v = post[:, k] @ (frames * frames) / occ[k] - m * m
        means[k] = m
        vars_[k] = np.maximum(v, VAR_FLOOR)
    weights = np.maximum(occ / occ.sum(), WEIGHT_FLOOR)
    return Gmm(weights / weights.sum(), means, vars_)


def em_iterate(model: AcousticModel, corpus: Sequence[Utterance], graphs,
               jobs: int = 1, skipped: Optional[list] = None):
    """One Viterbi-EM step.

    Returns the updated model and the total alignment log-likelihood under
    the model that was passed in.
    """
    results = align_corpus(model, corpus, graphs, jobs)
    total = 0.0
    grouped = {}
    for utt, res in zip(corpus, results):
        if res is None:
            if skipped is not None:
                skipped.append(utt.utt_id)
            continue
        total += res.log_likelihood
        ids = np.array(res.tied_ids)
        for tid in np.unique(ids):
            grouped.setdefault(int(tid), []).append(utt.features[ids == tid])
    pdfs = dict(model.pdfs)
    for tid, chunks in grouped.items():
        pdfs[tid] = _reestimate(model.pdfs[tid], np.concatenate(chunks))
    n_skip = sum(r is None for r in results)
    if n_skip:
        log.info("em_iterate: %d utterances without a path", n_skip)
    return AcousticModel(model.tied_map, pdfs, model.dim, model.topology), total


def split_mixtures(model: AcousticModel, target_components: int) -> AcousticModel:
    """Grow every pdf to ``target_components`` by splitting its heaviest
    component into two copies with means shifted by +/- 0.1 sigma."""
    pdfs = {}
    for tid, g in model.pdfs.items():
        if target_components < g.num_components:
            raise ValueError("target_components is below the current size")
        w, m, v = list(g.weights), list(g.means), list(g.vars)
        while len(w) < target_components:
            c = int(np.argmax(w))
            sigma = np.sqrt(v[c])
            half = w[c] / 2.0
            base = m[c]
            w[c], m[c] = half, base + 0.1 * sigma
            w.append(half)
            m.append(base - 0.1 * sigma)
            v.append(v[c].copy())
        weights = np.array(w)
        pdfs[tid] = Gmm(weights / weights.sum(), m, v)
    return AcousticModel(model.tied_map, pdfs, model.dim, model.topology)


def retie(model: AcousticModel, tied_map: TiedStateMap, stats: StatsTable) -> AcousticModel:
    """CD model whose tied states start from their pooled leaf statistics.

    A leaf without statistics borrows from its nearest ancestor that has
    some; SIL and GARBAGE keep the input model's pdfs.
    """
    node_stats = {}
    parent = {}
    for root in tied_map.roots.values():
        stack = [root]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                parent[id(node.yes)] = node
                parent[id(node.no)] = node
                stack += [node.yes, node.no]
    for ctx in stats.sorted_keys():
        if ctx.center.is_special:
            continue
        for node in tied_map.path(ctx):
            key = id(node)
            node_stats[key] = node_stats[key] + stats[ctx] if key in node_stats else stats[ctx]
    global_stats = stats.pooled()
    pdfs = {SIL_ID: model.pdfs[SIL_ID], GARBAGE_ID: model.pdfs[GARBAGE_ID]}
    for root in tied_map.roots.values():
        for leaf in root.leaves():
            if leaf.leaf_id in pdfs:
                continue
            node = leaf
            while node is not None and node_stats.get(id(node), GaussStats.zeros(1)).count <= 0:
                node = parent.get(id(node))
            src = node_stats[id(node)] if node is not None else global_stats
            pdfs[leaf.leaf_id] = Gmm.from_stats(src)
    return AcousticModel(tied_map, pdfs, model.dim, model.topology)
