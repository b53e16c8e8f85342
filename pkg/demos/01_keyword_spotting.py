"""
Finding a keyword in noise
==========================

A synthetic "spectrogram" task: 32 channels by 64 frames of smoothed noise,
where half the samples hide a 16-frame keyword in the upper-middle channels.
Inside the keyword window each channel keeps exactly the same values as the
noise, only rearranged, so the classifier has to find a temporal pattern
rather than a loud spot.  Runs in about a minute on one core.
"""

import numpy as np

from decennt import evaluation as ev
from decennt.data import split_indices, synth_keyword_dataset
from decennt.experiments import KEYWORD_TRAIN
from decennt.model import ModelParams
from decennt.temporal import attention_threshold, top_fraction_timepoints
from decennt.training import TrainConfig, fit, positive_scores, predict

seed = 0
ds = synth_keyword_dataset(seed, 1000, n=32, T=64, keyword_len=16, snr=3.0)
train, val, test = (ds.subset(i) for i in split_indices(ds, (600, 200, 200), seed))
print(ds.note, ds.class_counts())

# The amplitude statistic is the same inside and outside the keyword window.
s = next(s for s in ds.samples if s.label == 1)
amp = np.abs(s.matrix).mean(axis=0)
print(f"mean |x| inside window {amp[s.event_mask].mean():.3f}, outside {amp[~s.event_mask].mean():.3f}")

# %%
# Train a small model.  The desk preset trades width for speed.

config = TrainConfig.from_dict({**KEYWORD_TRAIN.to_dict(), "seed": seed})
rng = np.random.default_rng(seed)
params = ModelParams.init(config.model_config(ds.n, ds.T), rng)
result = fit(params, config, train, val, rng)
for e in result.history:
    print(f"epoch {e.epoch}: train {e.train_loss:.3f}  val {e.val_loss:.3f}  val AUC {e.val_auc:.3f}")

report = ev.classification_report(positive_scores(predict(params, test.X)), test.labels)
print(f"test AUC {report.auc:.3f}, accuracy {report.accuracy:.3f}")

# %%
# Where does the temporal attention look?  Draw one positive test sample:
# '#' marks the true keyword frames, '^' the frames weighted above uniform.

pos = np.flatnonzero(test.labels == 1)
trace = ev.trace_attention(params, test.X[pos])
k = 0
mask = test.masks[pos[k]]
attended = attention_threshold(trace.alpha[k])
print("".join("#" if m else "." for m in mask))
print("".join("^" if a else " " for a in attended))

loc = ev.localization_stats(attention_threshold(trace.alpha), test.masks[pos])
print(f"localization over all positives: precision {loc.precision:.2f}, "
      f"sensitivity {loc.sensitivity:.2f}, specificity {loc.specificity:.2f}")

# %%
# Ablation: rebuild the final graph from only the 5% most (or least)
# attended frames and let a logistic-regression probe classify it.

top, bottom = ev.ablation_aucs(params, train, test, [(0.05, "top"), (0.05, "bottom")])
print(f"probe AUC: top 5% {top:.3f}, bottom 5% {bottom:.3f}  (full model {report.auc:.3f})")
print("frames kept for the first positive:", top_fraction_timepoints(trace.alpha[0], 0.05))

# A linear model on the raw 2048 values has nothing to hold on to.
print(f"raw logistic regression AUC {ev.raw_lr_baseline(train, test):.3f}")
