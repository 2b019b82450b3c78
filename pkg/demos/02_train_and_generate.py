"""
Training the conditional VAE
============================

Train the generator on all base data (SVAE) and on the selected subset
(R-SVAE), then compare the mean of generated features with the planted class
means, which the synthetic benchmark knows exactly.
"""

import numpy as np

from rsvae.cvae import CvaeConfig
from rsvae.harness import prototype_fidelity_study, train_svae_pair
from rsvae.synthoracle import SynthConfig, generate_synth

fs, table, truth = generate_synth(SynthConfig())

# a small network is plenty for 32-dim features
config = CvaeConfig(fs.feat_dim, table.sem_dim, latent_dim=8, hidden_dim=256, epochs=40)
pair = train_svae_pair(fs, table, config, threshold=0.9, score="chi2")
print(f"R-SVAE trains on {pair.fraction_kept:.1%} of the base samples")

print("\nepoch  SVAE loss  R-SVAE loss")
for e in range(0, config.epochs, 5):
    print(f"{e:5d}  {pair.svae_log.total[e]:9.4f}  {pair.rsvae_log.total[e]:11.4f}")

rows = prototype_fidelity_study(fs, table, truth, pair)
d_all = np.array([r[1] for r in rows])
d_sel = np.array([r[2] for r in rows])
print("\ndistance of the generated prototype to the planted mean")
print(f"  SVAE   {d_all.mean():.4f}")
print(f"  R-SVAE {d_sel.mean():.4f}  (closer for {np.mean(d_sel < d_all):.0%} of classes)")
