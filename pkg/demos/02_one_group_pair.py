"""
Looking inside one forward pass
===============================

Two views of the same group go through the paired network.  We print the
attention each member pays to the others, how members of one view attend
across to the other view, and the soft person correspondence Sinkhorn
produces at the end.
"""

import numpy as np

from groupmatch import ModelConfig, SynthConfig, build_context_graph, forward_pair, generate_synthetic, init_params
from groupmatch.matching import exact_assignment, ground_truth_permutation

np.set_printoptions(precision=3, suppress=True)

view_a, view_b = generate_synthetic(SynthConfig(groups=1, min_members=4, max_members=4, seed=3))
print("members", view_a.person_ids, "and", view_b.person_ids)

cfg = ModelConfig()
params = init_params(cfg, seed=0)
out = forward_pair(build_context_graph(view_a), build_context_graph(view_b), params)

rec = out.records_s[0]
print("\nintra-part attention of member 0 over the group, part 0:")
print(rec.intra_part[0][0, :, 0])
print("\ninter-graph attention (rows: view a, columns: view b):")
print(rec.inter_graph)
print("\nreadout weights:", out.records_s[-1].readout)
print("pair distance:", round(out.distance, 4))

s = out.matching.values
print(f"\nSinkhorn ({out.matching.iterations} iterations, residual {out.matching.residual:.1e}):")
print(s)
print("hard assignment from S:\n", exact_assignment(s))
print("ground truth:\n", ground_truth_permutation(view_a.person_ids, view_b.person_ids))
# an untrained network has no reason to agree with the ground truth yet;
# see 03_train_and_evaluate.py
