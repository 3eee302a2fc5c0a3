"""
Checking a published metric row
===============================

Rebuilds the integer confusion matrix behind a reported sensitivity and
specificity, then recomputes the remaining columns from it.
"""
from mvsnet.evaluation import metrics_from_cm, reconstruct_confusion

# ResNet50 row: 99 positives (73 stroke + 26 TIA) and 121 controls
r = reconstruct_confusion(0.687, 0.785, n_pos=99, n_neg=121)
print("TP FN TN FP:", r.cm.tp, r.cm.fn, r.cm.tn, r.cm.fp, "feasible:", r.feasible)

m = metrics_from_cm(r.cm)
print(f"precision {m.precision:.3f}  F1 {m.f1:.3f}  accuracy {m.accuracy:.3f}")

# a pair of rates that no integer matrix can produce
print(reconstruct_confusion(0.5, 0.5, 3, 4).feasible)
