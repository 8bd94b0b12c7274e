"""
A tiny vision transformer and its gradients
===========================================

Forward pass, attention maps and a finite-difference check of the
hand-written backward pass.
"""
import numpy as np

from ttstack import vit

cfg = vit.ViTConfig(image_size=16, patch_size=4, embed_dim=8, depth=1, num_heads=2, seed=0)
model = vit.init_model(cfg)
print("tokens:", cfg.num_tokens, " parameters:", model.num_parameters)

rng = np.random.default_rng(1)
x = rng.uniform(-1, 1, (2, 1, 16, 16))
y = np.array([0, 1])

logits, cache = vit.forward(model, x, return_cache=True)
attn = cache["blocks"][0]["attn"]
print("logits:\n", logits)
print("attention", attn.shape, "rows sum to 1:", np.allclose(attn.sum(-1), 1))

# push the weights away from the tiny init so every gradient is measurable
for k in model.params:
    model.params[k] += rng.normal(0, 0.3, model.params[k].shape)

loss, grads = vit.backward(model, x, y)
h, worst = 1e-4, 0.0
for name, a in model.params.items():
    for idx in np.ndindex(a.shape):
        orig = a[idx]
        a[idx] = orig + h
        lp = vit.cross_entropy(vit.forward(model, x), y)
        a[idx] = orig - h
        lm = vit.cross_entropy(vit.forward(model, x), y)
        a[idx] = orig
        num = (lp - lm) / (2 * h)
        worst = max(worst, abs(num - grads[name][idx]) / max(abs(num), abs(grads[name][idx]), 1e-6))
print("loss %.6f, worst relative gradient error %.2e" % (loss, worst))

# checkpoints round-trip bit for bit
blob = vit.checkpoint_bytes(model)
print("checkpoint bytes:", len(blob), " identical after reload:",
      vit.checkpoint_from_bytes(blob).checksum() == model.checksum())
