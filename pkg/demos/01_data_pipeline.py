"""
Building the image pipeline
===========================

Generate a small synthetic corpus, split it per class, upsample the
minority class and look at what one augmented batch contains.
"""
import numpy as np

from ttstack.data import PipelineConfig, augment, balance_by_upsampling, make_batches, stratified_split
from ttstack.synthetic import make_synthetic

# 620 benign-looking and 125 bright images, 32x32 uint8
ds = make_synthetic({0: 620, 1: 125}, size=32, seed=42)
print("corpus:", ds.class_counts)

# every class keeps the same share in both halves
train, val = stratified_split(ds, 0.8, seed=42)
print("train:", train.class_counts, " val:", val.class_counts)

# minority rows are repeated until both classes match; ids get an @up<k> suffix
bal = balance_by_upsampling(train, seed=42)
print("balanced:", bal.class_counts, " e.g.", [i for i in bal.ids if "@up" in i][:3])

# flip + small rotation, drawn from a seeded generator
img = ds.samples[0].image
rng = np.random.default_rng(0)
aug = augment(img, rng, flip_probability=0.5, rotation_limit=5)
print("mean pixel before/after augment: %.2f / %.2f" % (img.pixels.mean(), aug.pixels.mean()))

cfg = PipelineConfig(batch_size=64, seed=42)
x, y = next(iter(make_batches(bal, cfg, training=True, seed=42, epoch=0)))
print("first batch:", x.shape, "range [%.2f, %.2f]" % (x.min(), x.max()), "positives:", int(y.sum()))

# the same seed and epoch give the same batch
x2, _ = next(iter(make_batches(bal, cfg, training=True, seed=42, epoch=0)))
print("repeatable:", np.array_equal(x, x2))
