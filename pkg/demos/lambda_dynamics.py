"""
How the discriminator weights move
==================================

The two adversarial terms are weighted by a softmax over moving averages of
how badly the student is aligned.  Feed in a constant misalignment and the
weights settle where the logits equal one minus the cosine averages.
"""

import numpy as np

from amid.schedule import LambdaState, end_of_epoch_lambda, update_d

state = LambdaState(beta=0.9)
history = []
for epoch in range(80):
    # same-instance cosine 0.2, same-class cross-sample cosine -0.5
    state.sums[:] = (0.2, -0.5)
    state.counts[:] = (1, 1)
    lam1, lam2, _ = end_of_epoch_lambda(state)
    history.append((lam1, lam2))

for epoch in (0, 5, 20, 79):
    print(f"epoch {epoch:>2}  lambda = ({history[epoch][0]:.4f}, {history[epoch][1]:.4f})")

target = np.exp([0.8, 1.5]) / np.exp([0.8, 1.5]).sum()
print("limit:", np.round(target, 4))

# %%
# Pairs drawn per batch are smoothed the same way, with a floor of one.
d = 1.0
for w in [6, 9, 7, 8, 0, 0, 0, 5]:
    d = update_d(w, d)
    print(f"w={w}  d={d:.3f}")
