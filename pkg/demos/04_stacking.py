"""
Stacking two learners
=====================

Train two differently shaped transformers, turn their logits into
meta-features and fit a class-weighted logistic regression on top.
"""
import numpy as np

from ttstack import vit
from ttstack.data import PipelineConfig, balance_by_upsampling, eval_tensors, stratified_split
from ttstack.meta import compute_class_weights, extract_logits, fit_meta_learner, logits_to_csv, stack_predict
from ttstack.metrics import classification_report
from ttstack.synthetic import make_synthetic
from ttstack.trainer import TrainConfig, train

ds = make_synthetic({0: 200, 1: 40}, size=32, seed=7)
tr, va = stratified_split(ds, 0.8, seed=7)
bal = balance_by_upsampling(tr, seed=7)
pipe = PipelineConfig(batch_size=32, seed=7)
cfg = TrainConfig(learning_rate=1e-3, max_epochs=3, seed=7)

shapes = {"wide_p8": dict(patch_size=8, embed_dim=32, depth=1, num_heads=2),
          "deep_p16": dict(patch_size=16, embed_dim=16, depth=2, num_heads=4)}
learners = []
for lid, kw in shapes.items():
    m, _ = train(vit.init_model(vit.ViTConfig(image_size=32, seed=len(learners), **kw)), bal, va, cfg, pipe, lid)
    learners.append((lid, m))

train_feats = extract_logits(learners, bal, pipe, "train")
val_feats = extract_logits(learners, va, pipe, "val")
print(logits_to_csv(val_feats).splitlines()[0])
print("weights on the raw validation split:", compute_class_weights(val_feats.labels))

meta = fit_meta_learner(train_feats)
print("meta weights", np.round(meta.model.weights, 4), "bias %.4f" % meta.model.bias,
      "newton steps:", meta.model.iterations_run)

pred, prob = meta.predict(val_feats)
rep = classification_report(val_feats.labels, pred, prob)
print("stack: acc %.4f  f1 %.4f  auc %.4f" % (rep.accuracy, rep.f1, rep.roc_auc))

# the same answer straight from images
x, _ = eval_tensors(va, pipe)
pred2, _ = stack_predict(learners, meta, x)
print("agrees with image path:", np.array_equal(pred, pred2))
