"""
Training one base learner
=========================

AdamW with a plateau scheduler on the synthetic corpus. The model with the
lowest validation loss is kept.
"""
from ttstack import vit
from ttstack.data import PipelineConfig, balance_by_upsampling, stratified_split
from ttstack.synthetic import make_synthetic
from ttstack.trainer import TrainConfig, plateau_lr_trace, train

ds = make_synthetic({0: 200, 1: 40}, size=32, seed=3)
tr, va = stratified_split(ds, 0.8, seed=3)
tr = balance_by_upsampling(tr, seed=3)

pipe = PipelineConfig(batch_size=32, seed=3)
cfg = TrainConfig(learning_rate=1e-3, max_epochs=5, seed=3)
model = vit.init_model(vit.ViTConfig(image_size=32, patch_size=8, embed_dim=32, depth=1, num_heads=2))

best, hist = train(model, tr, va, cfg, pipe, name="demo")
print(hist.to_csv())
print("best epoch:", hist.best_epoch + 1, " val loss %.4f" % hist.best_val_loss)

# how the scheduler reacts to a loss curve that stalls
losses = [1.0, 0.8, 0.8, 0.81, 0.82, 0.9, 0.7, 0.7, 0.7, 0.7]
print("lr trace:", plateau_lr_trace(losses, 1e-4))
