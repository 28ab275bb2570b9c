"""Krippendorff's alpha for nominal labels, and class rebalancing."""

import numpy as np

from permlm.data import Label, LabeledExample, krippendorff_alpha
from permlm.training import resample

annotations = [
    ["Positive", "Positive", "Positive"],
    ["Negative", "Negative", None],
    ["Mixed", "Positive", "Mixed"],
    ["Positive", "Positive", "Negative"],
    [None, "unknown", "unknown"],
]
print(f"alpha = {krippendorff_alpha(annotations):.4f}")
print("perfect agreement:", krippendorff_alpha([["a", "a"], ["b", "b"]]))

counts = {Label.Positive: 12, Label.Negative: 4, Label.MixedFeelings: 2, Label.UnknownState: 3, Label.OtherLanguage: 1}
train = [LabeledExample(f"{label.name} {i}", label) for label, n in counts.items() for i in range(n)]
rng = np.random.default_rng(0)
for policy in ("none", "oversample_minority", "undersample_majority", "both"):
    out = resample(train, policy, rng)
    tally = {label.name: sum(e.label is label for e in out) for label in Label}
    print(f"{policy:22s}", tally)
