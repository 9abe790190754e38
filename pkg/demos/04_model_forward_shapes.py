"""Walk a feature batch through the detector and trace every stage.

The two CNN branches exchange feature maps after each block (each one
sees its own maps concatenated with the other's), then separate
conformer encoders produce per-branch posteriors E1 and E2, and a
learned per-event weight fuses them.
"""

import numpy as np

from softsed import autodiff as ad
from softsed.model import SedModel

rng = np.random.default_rng(0)
model = SedModel(n_events=11, n_mels=128, rng=rng)
model.eval()

x = rng.standard_normal((1, 100, 128))
trace = []
with ad.no_grad():
    e1, e2, fused = model(x, trace)

print("stage trace for a (1, 100, 128) input:")
for name, shape in trace:
    print(f"  {name:<10} {shape}")

n_params = sum(p.data.size for _, p in model.named_parameters())
print(f"\nparameters: {n_params:,}")
print(f"branch posteriors: E1 {e1.shape}, E2 {e2.shape}, fused {fused.shape}")
print(f"all in [0, 1]: {bool((fused.data >= 0).all() and (fused.data <= 1).all())}")

# fusion starts perfectly balanced: raw weights of zero pass through a
# sigmoid, giving mu = 0.5 for every event, so fused = (E1 + E2) / 2
mu = model.fusion.effective()
print(f"\ninitial fusion weights mu: {np.unique(mu.data)}")
mean_both = 0.5 * (e1.data + e2.data)
print(f"fused equals the branch mean at init: {np.allclose(fused.data, mean_both)}")

# the same model scales down for quick experiments
small = SedModel(n_events=3, n_mels=32, channels=(4, 6, 8), pools=(2, 2, 2),
                 conformer_dim=16, conformer_heads=2, conformer_blocks=1,
                 ffn_expansion=2, conv_kernel=3, dropout=0.1,
                 rng=np.random.default_rng(1))
small.eval()
with ad.no_grad():
    _, _, out = small(np.zeros((2, 40, 32)))
print(f"\ndesk-scale variant output: {out.shape}"
      f", {sum(p.data.size for _, p in small.named_parameters()):,} parameters")
