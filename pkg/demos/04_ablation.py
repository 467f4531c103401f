"""
Why context and position both matter
====================================

The ablation corpus is built so that "tai" and "tei" differ only in how
"a" sounds before a vowel, and "to" and "tu" differ only in how a
word-final "o" sounds. Turning off either context or position tags should
cost accuracy. This runs the full pipeline three times and takes about
ten seconds.
"""

import tempfile
from pathlib import Path

from chenone.pipeline import PipelineConfig, cmd_ablate, format_ablation

configs = Path(__file__).resolve().parent.parent / "configs"

with tempfile.TemporaryDirectory() as work:
    cfg = PipelineConfig.load(configs / "ablation.ini", [f"run.out={work}", "run.seed=0"])
    grid = [(False, True, "preserve"), (True, False, "preserve"), (True, True, "preserve")]
    cells = cmd_ablate(cfg, grid)
    print(format_ablation(cells))
