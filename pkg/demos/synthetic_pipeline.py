"""The whole pipeline on a generated log, through the command line.

Generates a small multi-user log with injected anomalies, then runs
ingest -> encode -> train -> detect -> evaluate in one work directory and
prints the analyst report for one user.  Scaled down to run in seconds; the
acceptance suite runs the full-size version.
"""

from __future__ import annotations

import csv
import json
import sys
import tempfile
from pathlib import Path

from authlstm import cli

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="authlstm-"))

cli.main(["synth", "--out", str(work / "logs"), "--users", "2", "--events", "4000", "--vocab", "20",
          "--anomaly-rate", "0.01", "--anomaly-burst", "4", "--seed", "7"])

cli.main(["run-all", "--auth", str(work / "logs" / "auth.csv"), "--redteam", str(work / "logs" / "redteam.csv"),
          "--out", str(work / "run"), "--window", "10", "--hidden", "32", "--epochs", "8",
          "--batch-size", "128"])

summary = json.loads((work / "run" / "U0.summary.json").read_text())
print("\nU0 summary:", json.dumps({k: summary[k] for k in ("auc", "top1_accuracy", "threat_in_top_k")}))

print("\nU0: incorrect predictions the model was least sure about")
with open(work / "run" / "U0.report.csv") as fh:
    for row in csv.DictReader(fh):
        if row["list"] == "low_incorrect":
            flag = "RED TEAM" if row["is_red_team"] == "1" else ""
            print(f"{row['rank']:>3} {row['timestamp']}  p={float(row['probability']):.3f}  "
                  f"expected {row['predicted_event']:18s} saw {row['actual_event']:22s} {flag}")
print("\nartifacts in", work / "run")
