import json
import shutil
from pathlib import Path

import pytest

from chenone import cli
from chenone.errors import MissingArtifact
from chenone.pipeline import (MANIFEST, STAGES, PipelineConfig, cmd_ablate, cmd_align,
                              bootstrap_subset, cmd_decode, cmd_lexicon, cmd_score, cmd_tree, file_hash,
                              format_ablation, run_pipeline)

SMALL = ["synth.num_utterances=80", "tree.max_leaves=60", "train.mono_iterations=3",
         "train.cd_iterations=2"]


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "work"
    cfg = PipelineConfig.load(None, SMALL + [f"run.out={out}", "run.seed=1"])
    report = run_pipeline(cfg)
    return cfg, report


class TestConfig:
    def test_defaults(self):
        cfg = PipelineConfig.load()
        assert cfg.seed == 0 and cfg.jobs == 1
        assert cfg.context.context_dependent and not cfg.context.cross_word_context

    def test_file_and_overrides(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[context]\ncross_word_context = yes\n[train]\nmixtures = 2, 4\n"
                       "[tree]\nmin_gain = 3.5\n[ablate]\ncases = lowercase\n")
        cfg = PipelineConfig.load(ini, ["run.seed=9", "tree.min_gain=7"])
        assert cfg.context.cross_word_context
        assert cfg.train.mixtures == (2, 4)
        assert cfg.tree.min_gain == 7.0
        assert cfg.ablate.cases == ("lowercase",)
        assert cfg.seed == 9

    @pytest.mark.parametrize("item", ["nosuch.key=1", "tree.nosuch=1", "run.color=red",
                                      "tree.max_leaves", "context.context_dependent=maybe",
                                      "tree.max_leaves=many"])
    def test_bad_overrides(self, item):
        with pytest.raises(ValueError):
            PipelineConfig.load(None, [item])

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingArtifact):
            PipelineConfig.load(tmp_path / "none.ini")

    def test_shipped_configs_load(self):
        for ini in sorted((Path(__file__).parent.parent / "configs").glob("*.ini")):
            PipelineConfig.load(ini)


class TestStages:
    def test_outputs(self, small_run):
        cfg, report = small_run
        out = cfg.out_dir
        for name in ["units.txt", "lexicon.txt", "mono.tree", "mono.mdl", "ali.txt", "stats.txt",
                     "tree.txt", "final.mdl", "hyp.txt", "score.txt", MANIFEST]:
            assert (out / name).is_file(), name
        assert (out / "score.txt").read_text() == report.to_text()
        assert report.wer.wer < 20.0

    def test_manifest(self, small_run):
        cfg, _ = small_run
        entries = [json.loads(ln) for ln in (cfg.out_dir / MANIFEST).read_text().splitlines()]
        assert [e["stage"] for e in entries] == ["synth"] + list(STAGES)
        for e in entries:
            assert all(not p.startswith("/") for p in list(e["inputs"]) + list(e["outputs"]))
            assert "out" not in e["config"] and e["config"]["seed"] == 1

    def test_rerun_in_place_is_stable(self, small_run, tmp_path):
        cfg, _ = small_run
        copy = tmp_path / "copy"
        shutil.copytree(cfg.out_dir, copy)
        again = PipelineConfig.load(None, SMALL + [f"run.out={copy}", "run.seed=1"])
        before = {p.name: p.read_bytes() for p in copy.iterdir() if p.is_file()}
        cmd_tree(again)
        cmd_score(again)
        after = {p.name: p.read_bytes() for p in copy.iterdir() if p.is_file()}
        assert before == after

    def test_missing_upstream(self, tmp_path):
        cfg = PipelineConfig.load(None, [f"run.out={tmp_path}"])
        for stage in (cmd_lexicon, cmd_align, cmd_tree, cmd_decode, cmd_score):
            with pytest.raises(MissingArtifact):
                stage(cfg)

    def test_parallel_decode_matches(self, small_run, tmp_path):
        cfg, _ = small_run
        copy = tmp_path / "par"
        shutil.copytree(cfg.out_dir, copy)
        par = PipelineConfig.load(None, SMALL + [f"run.out={copy}", "run.seed=1", "run.jobs=2"])
        cmd_decode(par)
        assert (copy / "hyp.txt").read_bytes() == (cfg.out_dir / "hyp.txt").read_bytes()

    def test_word_list_and_case(self, tmp_path):
        words = tmp_path / "words.txt"
        words.write_text("Hello\nhello\n...\n")
        cfg = PipelineConfig.load(None, [f"run.out={tmp_path / 'w'}", f"paths.words={words}",
                                         "lexicon.case_mode=lowercase"])
        lex = cmd_lexicon(cfg)
        assert lex.words == ["Hello", "hello"]
        assert (tmp_path / "w" / "lexicon.txt").read_text() == \
            "Hello\th_WB e l l o_WB\nhello\th_WB e l l o_WB\n"

    def test_phonetic_lexicon(self, tmp_path):
        (tmp_path / "phones.txt").write_text("HH\nAH\nL\nOW\n")
        (tmp_path / "dict.txt").write_text("hello\tHH AH L OW\n")
        cfg = PipelineConfig.load(None, [f"run.out={tmp_path / 'w'}",
                                         f"paths.phones={tmp_path / 'phones.txt'}",
                                         f"paths.phonetic_lexicon={tmp_path / 'dict.txt'}"])
        lex = cmd_lexicon(cfg)
        assert lex.to_text() == "hello\tHH_WB AH L OW_WB\n"


class TestBootstrapSubset:
    def test_full_share_keeps_everything(self):
        assert bootstrap_subset(list("abcdef"), 1.0, 0) == list("abcdef")

    def test_seeded_and_ordered(self):
        items = list(range(50))
        a = bootstrap_subset(items, 0.3, 4)
        assert a == bootstrap_subset(items, 0.3, 4)
        assert len(a) == 15 and a == sorted(a)
        assert a != bootstrap_subset(items, 0.3, 5)

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(ValueError):
            bootstrap_subset([1, 2], fraction, 0)

    def test_align_on_subset(self, small_run, tmp_path):
        cfg, _ = small_run
        out = tmp_path / "work"
        shutil.copytree(cfg.out_dir, out)
        sub = PipelineConfig.load(None, SMALL + [f"run.out={out}", "run.seed=1",
                                                 "train.bootstrap_fraction=0.5"])
        cmd_align(sub)
        aligned = {ln.split()[0] for ln in (out / "ali.txt").read_text().splitlines()[1:]}
        full = {ln.split()[0] for ln in (cfg.out_dir / "ali.txt").read_text().splitlines()[1:]}
        assert aligned < full
        assert len(aligned) <= (len(full) + 1) // 2


class TestAblate:
    def test_grid_and_table(self, tmp_path):
        cfg = PipelineConfig.load(None, SMALL + [f"run.out={tmp_path}", "run.seed=1"])
        cells = cmd_ablate(cfg, [(True, True, "preserve"), (False, False, "lowercase")])
        assert [(c.context_dependent, c.position_dependent, c.case_mode) for c in cells] == \
            [(True, True, "preserve"), (False, False, "lowercase")]
        assert all(c.wer is not None and c.error == "" for c in cells)
        table = (tmp_path / "ablate.txt").read_text()
        assert table == format_ablation(cells)
        assert table.splitlines()[0].split() == ["CD", "PD", "case", "WER"]
        assert (tmp_path / "ablate" / "cd1_pd1_preserve" / "final.mdl").is_file()

    def test_failed_cell_is_reported(self, tmp_path):
        cfg = PipelineConfig.load(None, SMALL + [f"run.out={tmp_path}", "synth.num_utterances=40",
                                                 "tree.max_leaves=1"])
        cells = cmd_ablate(cfg, [(True, True, "preserve")])
        assert cells[0].wer is None and "ValueError" in cells[0].error
        assert "failed" in (tmp_path / "ablate.txt").read_text()


class TestCli:
    def test_run_and_stage(self, tmp_path, capsys):
        out = tmp_path / "cli"
        args = ["--out", str(out), "--seed", "2", "--jobs", "1"]
        for item in SMALL:
            args += ["--set", item]
        assert cli.main(["run"] + args) == 0
        assert capsys.readouterr().out.startswith("wer=")
        assert cli.main(["score"] + args) == 0
        assert capsys.readouterr().out == (out / "score.txt").read_text()

    def test_missing_artifact_exit_code(self, tmp_path, capsys):
        assert cli.main(["tree", "--out", str(tmp_path)]) == 1
        assert "MissingArtifact" in capsys.readouterr().err

    def test_bad_value_exit_code(self, tmp_path, capsys):
        assert cli.main(["lexicon", "--out", str(tmp_path), "--jobs", "0"]) == 2
        assert cli.main(["lexicon", "--set", "tree.nosuch=1"]) == 2

    def test_every_stage_is_a_subcommand(self):
        parser = cli.build_parser()
        for name in ["lexicon", "synth", "align", "stats", "tree", "train", "decode", "score",
                     "ablate"]:
            args = parser.parse_args([name, "--config", "x.ini", "--seed", "3", "--jobs", "2",
                                      "--out", "w"])
            assert (args.command, args.seed, args.jobs, args.out) == (name, 3, 2, "w")


class TestManifestCompleteness:
    def test_every_artifact_is_traced(self, small_run):
        cfg, _ = small_run
        out = cfg.out_dir
        entries = [json.loads(ln) for ln in (out / MANIFEST).read_text().splitlines()]
        produced = {}
        for e in entries:
            for rel, digest in e["outputs"].items():
                produced[rel] = digest
        for rel, digest in produced.items():
            assert file_hash(out / rel) == digest
        listed = {p.name for p in out.iterdir() if p.is_file() and p.name != MANIFEST}
        assert listed <= set(produced)
