"""The four static anomaly scores and the learned prior reweighting.

Every score follows one orientation: larger = more out-of-distribution.
The prior network multiplies a static score by a per-point weight w >= 1
computed by cross-attending the logit embedding against a learnable prior
table; with a zero weight head it is exactly the identity.

Run:  python demos/03_scores_and_prior_weighting.py
"""

import numpy as np

import lidarood as lo
from lidarood.priornet import init_params, prior_backward, prior_weight
from lidarood.scoring import ScoreMethod, static_score

K = 4
spec = lo.ClassSpec(inlier_classes=(1, 2, 3, 4), void_id=0, ood_id=200,
                    ignore_id=250, extended=True)

rows = {
    "confident inlier": [8.0, 0, 0, 0, -6, -6, -6, -6],
    "uncertain": [0.5, 0.4, 0.3, 0.2, 0.1, 0.0, 0.1, 0.2],
    "negative-dominated": [0.0, 0, 0, 0, 4, 4, 4, 4],
}
field = lo.LogitField(values=np.array(list(rows.values())), class_spec=spec)

print(f"{'':<20} {'entropy':>9} {'energy':>9} {'ext-energy':>11} {'maxlogit':>9}")
for name, row in zip(rows, field.values):
    one = lo.LogitField(values=row[None, :], class_spec=spec)
    vals = [static_score(one, m)[0] for m in ScoreMethod]
    print(f"{name:<20} " + " ".join(f"{v:>9.4f}" if i != 2 else f"{v:>11.4f}"
                                    for i, v in enumerate(vals)))

print("\nclosed forms:")
uniform = lo.LogitField(values=np.zeros((1, 4)),
                        class_spec=lo.ClassSpec((1, 2, 3, 4), 0, 200, 250))
print(f"  entropy(uniform, K=4) = {lo.entropy_score(uniform)[0]:.12f} = ln 4")
two = lo.LogitField(values=np.zeros((1, 2)), class_spec=lo.ClassSpec((1, 2), 0, 200, 250))
print(f"  energy((0, 0))        = {lo.energy_score(two)[0]:.12f} = -ln 2")
allsame = lo.LogitField(values=np.ones((1, 8)), class_spec=spec)
print(f"  ext-energy(all equal) = {lo.extended_energy_score(allsame)[0]:.12f} = ln 2")

# fresh parameters: zero weight head, so reweighting is the identity
params = init_params(c=2 * K, d=16, seed=0)
weighted = lo.reweighted_score(field, ScoreMethod.EXTENDED_ENERGY, params)
base = static_score(field, ScoreMethod.EXTENDED_ENERGY)
print(f"\nzero-head reweighting identical to static: "
      f"{np.array_equal(weighted.scores, base)}")

# a live head produces per-point weights >= 1, trained by exact backprop
rng = np.random.default_rng(1)
params.w_head = rng.normal(size=32) * 0.5
w, tape = prior_weight(field, params)
print(f"live head weights: {np.round(w, 4)} (all >= 1)")
grads, dlogits = prior_backward(tape, np.ones(len(w)))
print(f"backward pass: d(prior table) norm = {np.linalg.norm(grads.psi):.4f}, "
      f"d(logits) shape = {dlogits.shape}")
