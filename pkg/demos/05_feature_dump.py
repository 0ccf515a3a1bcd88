# coding: utf-8

# # Running a config and reading the feature dump
#
# The harness writes summary.csv, report.json, a trace per run and one
# features_<method>.csv with a 2-D projection of the extractor output for
# every source and target row. Those CSVs are ready for any scatter plot.

# In[1]:

import csv
import tempfile
from collections import Counter

from dctn import ExperimentConfig, TrainConfig, run_experiment


# In[2]:

out = tempfile.mkdtemp()
cfg = ExperimentConfig(samples_per_domain=200, methods=("source_only", "dctn"), output_dir=out,
                       train=TrainConfig(lr_f=0.002, momentum=0.5, pretrain_epochs=10, max_rounds=3))
report = run_experiment(cfg)
print(open(f"{out}/summary.csv").read())


# In[3]:

with open(f"{out}/features_dctn.csv") as fh:
    rows = list(csv.DictReader(fh))
print(rows[0])
print(Counter(r["domain"] for r in rows))
print("target rows predicted correctly:",
      sum(r["label"] == r["predicted"] for r in rows if r["domain"] == "target"))
