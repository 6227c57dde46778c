"""Recompute the regression values for the default config and write golden.json.

Run only after the default pipeline has been verified; the file is shipped
with the package and compared against on every ``run``.
"""
import json
from pathlib import Path

from hcdefect.config import validate_config
from hcdefect.pipeline import Workspace

cfg = validate_config({})
ws = Workspace(cfg)
gap = ws.gap()
golden = {"config_hash": cfg.hash(), "lambda0": ws.mode().lambda0, "gap_lo": gap.lo,
          "gap_hi": gap.hi, "ahom": ws.ahom().matrix.tolist()}
path = Path(__file__).resolve().parents[1] / "src" / "hcdefect" / "golden.json"
path.write_text(json.dumps(golden, indent=1, sort_keys=True) + "\n")
print(json.dumps(golden, indent=1))
