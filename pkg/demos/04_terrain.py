"""
Terrain under the fabric
========================

Blob statistics plus multinomial logistic regression, evaluated with a
row-normalised confusion matrix. Uses 150 renders per class so it runs in
well under a minute.
"""
import numpy as np

from tacsole import terrain
from tacsole.synth import TERRAIN_CLASSES

counts = {c: 150 for c in TERRAIN_CLASSES}
X, y = terrain.synth_features(counts, seed=0)
Xv, yv = terrain.synth_features({c: 50 for c in TERRAIN_CLASSES}, seed=1)
Xt, yt = terrain.synth_features({c: 50 for c in TERRAIN_CLASSES}, seed=2)

model = terrain.train_classifier(X, y, Xv, yv)
h = model.history
print(f"best epoch {h['best_epoch']} of {h['epochs_run']}, val acc {h['val_acc'][h['best_epoch'] - 1]:.3f}")

cm = terrain.confusion_matrix(model, Xt, yt)
print("rows true, columns predicted (%)")
print("       " + "  ".join(f"{c:>6s}" for c in TERRAIN_CLASSES))
for c, row in zip(TERRAIN_CLASSES, cm):
    print(f"{c:>6s} " + "  ".join(f"{v:6.1f}" for v in row))

# what separates the classes: mean feature per class
for name, col in zip(terrain.FEATURE_NAMES, X.T):
    print(f"{name:>15s}", np.round([col[y == k].mean() for k in range(4)], 2))
