"""
Few-shot evaluation
===================

5-way episodes on the novel classes. Baseline prototypes come from the
support samples only; SVAE and R-SVAE mix in the mean of 500 generated
features; zero-shot uses generated features alone.
"""

from rsvae.cvae import CvaeConfig
from rsvae.harness import EvalConfig, run_eval, train_svae_pair
from rsvae.synthoracle import SynthConfig, generate_synth

fs, table, truth = generate_synth(SynthConfig())
config = CvaeConfig(fs.feat_dim, table.sem_dim, latent_dim=8, hidden_dim=256, epochs=40)
pair = train_svae_pair(fs, table, config, threshold=0.9, score="chi2")
models = {"baseline": None, "svae": pair.svae, "rsvae": pair.rsvae, "zeroshot": pair.svae}

EPISODES = 500
for shot in (1, 5):
    print(f"\n5-way {shot}-shot, {EPISODES} episodes")
    for method, model in models.items():
        r = run_eval(fs, table, EvalConfig(shot=shot, episodes=EPISODES, method=method), model, workers=4)
        print(f"  {method:9s} {r.mean:.4f} +- {r.ci95:.4f}")

# other task classifiers take generated features as extra training rows
print("\n1-shot with other classifiers (200 episodes)")
for clf in ("1nn", "logreg", "svm"):
    b = run_eval(fs, table, EvalConfig(episodes=200, classifier=clf))
    s = run_eval(fs, table, EvalConfig(episodes=200, classifier=clf, method="rsvae", gen_count=100),
                 pair.rsvae, workers=4)
    print(f"  {clf:6s} baseline {b.mean:.4f}  R-SVAE {s.mean:.4f}")
