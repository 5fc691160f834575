"""
How far can a latent move before its meaning changes?
=====================================================

Adversarial variants live in a small ball around the edit sample's
latent. Here we look at the variants themselves and then search for the
largest step along the loss gradient that keeps the model's output
distribution nearly unchanged.
"""

import numpy as np

from robustedit import generate_knowledge_base, train_base
from robustedit.lar import generate_variants, semantic_budget_search
from robustedit.model import ToyMultimodalModel, cross_entropy

kb = generate_knowledge_base(n_units=10, m_variants=6, seed=1)
model, _ = train_base(ToyMultimodalModel(seed=1), kb)
x = kb.units[0].variants[0]
z = model.encode(*x).z
target = (kb.units[0].label + 1) % kb.n_classes

vs = generate_variants(model, z, target, n=4, eps=1e-3, seed=0)
for d, init in zip(vs.deltas, vs.inits):
    ce_adv = cross_entropy(model.forward_from_latent(z + d), target)[0]
    ce_init = cross_entropy(model.forward_from_latent(z + init), target)[0]
    print(f"|delta|={np.linalg.norm(d):.2e}  CE init {ce_init:.6f} -> variant {ce_adv:.6f}")

# %%
# Bisection on the step size, scored by cosine similarity of softmax outputs.

for tau in (0.999, 0.99, 0.9):
    res = semantic_budget_search(model, x, tau_sim=tau, search_hi=10.0)
    print(f"tau_sim={tau}: eps*={res.epsilon_star:.5f} ({res.iterations} probes, cap hit: {res.cap_hit})")
