"""
A stream of edits
=================

Ten edits applied one after another to the same model. Locality is
always measured against the original model, so drift accumulates.
"""

from robustedit import EditConfig, generate_knowledge_base, make_edit_requests, sequential_edit, train_base
from robustedit.model import ToyMultimodalModel

kb = generate_knowledge_base(n_units=20, m_variants=8, seed=2)
model, _ = train_base(ToyMultimodalModel(seed=2), kb)
requests = make_edit_requests(kb, 10, seed=2)

for beta in (0.0, 10.0):
    _, _, running = sequential_edit(model.copy(), requests, EditConfig(beta=beta, seed=2), kb=kb)
    print(f"beta={beta}")
    for row in running:
        print(f"  after {row['n_edits']:2d} edits: rel {row['rel']:.2f} gen {row['gen']:.3f} loc {row['loc']:.3f}")
