"""
Distilling into a weak modality
===============================

The synthetic data has a weak target modality and a strong auxiliary one.
We train a target-only student, then the full method, on the same seed and
data, and compare validation accuracy.  Takes around ten seconds.
"""

from amid import AmidConfig, train

cfg = AmidConfig(seed=0)
print("classes:", cfg.num_classes, " train examples per class:", cfg.per_class)

# %%
# The reference point: the target modality on its own, cross-entropy only.
alone = train(cfg.replace(baseline="student"))
print("student alone, best val accuracy:", round(alone.best_val_student, 3))

# %%
# The full objective.  The first t_start epochs use only the classification
# terms, then the MI and adversarial terms switch on.
full = train(cfg)
print("with distillation, best val accuracy:", round(full.best_val_student, 3))

for r in full.val[cfg.t_start - 1: cfg.t_start + 3]:
    print(f"epoch {r.epoch:>2}  mi_s {r.losses.mi_s:.3f}  adv {r.losses.adv:.3f}  "
          f"lambda1 {r.lambda1:.3f}  d {r.d_est:.2f}  student {r.report.acc_student:.3f}")

# %%
# Teacher and student accuracies over the final epochs.
print("teacher tail mean:", round(full.tail_mean("acc_teacher"), 3))
print("student tail mean:", round(full.tail_mean("acc_student"), 3))
t = full.test
print(f"test: student {t.acc_student:.3f}  teacher {t.acc_teacher:.3f}  R@1 {t.r_at_k[1]:.3f}")
