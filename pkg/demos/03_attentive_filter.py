"""
Attention heatmaps of an untrained filter
=========================================

Run the U-net attention block with each squashing function and look at the
properties of the resulting heatmaps.
"""

import numpy as np

from afnet.model import AfConfig, DrnConfig, attentive_filter, build_model, receptive_field_report

rng = np.random.default_rng(1)
S = rng.standard_normal((1, 1, 257, 64))

for nl in ("sigmoid", "tanh", "softmaxT", "softmaxF"):
    cfg = AfConfig(nl)
    model = build_model((257, 64), cfg, DrnConfig(), seed=3, dtype=np.float64)
    S_star, A = attentive_filter(S, model.tensors(), cfg)
    a = A.data[0, 0]
    print(f"{nl:9s} range [{a.min():+.3f}, {a.max():+.3f}]"
          f"  row-sum {a.sum(axis=1).mean():8.3f}  column-sum {a.sum(axis=0).mean():7.3f}")

# The filtered map keeps a residual copy of the input: S* = A * S + S.
print("S* - S equals A * S:", np.allclose(S_star.data - S, A.data * S))

# Receptive field of each dilated residual module, by recurrence and by
# gradient support.
full = build_model((257, 1091), AfConfig(), DrnConfig(), seed=0)
for r in receptive_field_report(full):
    print(f"block {r.block}: theoretical {r.theoretical:5d}  empirical {r.empirical}  contiguous {r.contiguous}")
