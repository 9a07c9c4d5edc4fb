# coding: utf-8
"""The command line
==================

`matchvar estimate` runs one analysis on a CSV file, `matchvar diagnose`
reports match quality and `matchvar simulate` runs a coverage study from a
configuration file. Each writes report.json into --output-dir.
"""

# %%
import json
import subprocess
import sys
import tempfile
from pathlib import Path

from matchvar.data import save_csv
from matchvar.simulation.dgp import gen_che

work = Path(tempfile.mkdtemp())
d, _ = gen_che(seed=11)
save_csv(d, work / "che.csv")


def run(*args):
    res = subprocess.run([sys.executable, "-m", "matchvar", *args], capture_output=True, text=True)
    err = res.stderr.strip().splitlines()[-1:] or [""]
    print(f"exit {res.returncode}: {res.stdout.strip()} {err[0]}")
    return res.returncode


# %%
run("estimate", "--input", str(work / "che.csv"), "--outcome-col", "y", "--treatment-col", "z",
    "--id-col", "id", "--matcher", "scm", "--c", "3", "--min-controls", "1",
    "--variance", "pooled", "--seed", "1", "--output-dir", str(work / "est"))
report = json.loads((work / "est" / "report.json").read_text())
print({k: report[k] for k in ("tau_tilde", "se", "ci_lower", "ci_upper", "ess")})

# %% [markdown]
# Flags that do not fit the chosen matcher are usage errors (exit 2).

# %%
run("estimate", "--input", "x.csv", "--outcome-col", "y", "--treatment-col", "z",
    "--matcher", "radius", "--M", "3", "--variance", "pooled", "--seed", "1")

# %%
run("diagnose", "--input", str(work / "che.csv"), "--outcome-col", "y", "--treatment-col", "z",
    "--id-col", "id", "--matcher", "mnn", "--M", "8", "--output-dir", str(work / "diag"))

# %%
(work / "small.cfg").write_text("dgp = OtsuRai\nn_reps = 20\nbase_seed = 1000\n\n[method pooled]\nvariance = pooled_ve\n")
run("simulate", "--config", str(work / "small.cfg"), "--output-dir", str(work / "sim"))
