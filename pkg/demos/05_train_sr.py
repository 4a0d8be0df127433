import time

import numpy as np

from scn import tensor as T
from scn.checkpoint import load_checkpoint, save_checkpoint
from scn.data import DegradationSpec, degrade, synthetic_image
from scn.models import ModelConfig, count_params
from scn.train import TrainConfig, bicubic_baseline, evaluate, train

# three 48x48 textured images, bicubic-downsampled by 2
images = [T.Tensor(synthetic_image(48, 3, seed=s)[None]) for s in range(3)]
pairs = [degrade(im, DegradationSpec("sr_bicubic", factor=2), name=f"img{i}") for i, im in enumerate(images)]

cfg = ModelConfig(n_blocks=4, width=16, width_mult=4, n_scales=2, ratio="1/2", k=1)
tcfg = TrainConfig(epochs=40, patches_per_image=64, patch=16, batch=8, seed=0, validate=False, decay_start=25, decay_every=3)
print(f"training {count_params(cfg)} params for {40 * 3 * 64 // 8} steps")

t0 = time.time()
res = train(cfg, tcfg, pairs=pairs)
print(f"done in {time.time() - t0:.0f}s, final loss {res.history[-1]['loss']:.4f}")

print("bicubic  %.2f dB" % bicubic_baseline(pairs, 2).mean_psnr)
print("SCN      %.2f dB" % evaluate(cfg, res.weights, pairs).mean_psnr)
print("SCN+     %.2f dB" % evaluate(cfg, res.weights, pairs, use_self_ensemble=True).mean_psnr)

# the pyramid can be changed at evaluation; the training ratio works best
for r in ("1/3", "1/2", "3/4"):
    print("eval ratio", r, "%.2f dB" % evaluate(cfg, res.weights, pairs, ratio=r).mean_psnr)
for n in (1, 2, 3):
    print("eval scales", n, "%.2f dB" % evaluate(cfg, res.weights, pairs, n_scales=n).mean_psnr)

save_checkpoint(res.weights, cfg, "/tmp/demo_sr.scnw")
w, back = load_checkpoint("/tmp/demo_sr.scnw")
print("checkpoint round trip exact:", back == cfg and all(np.array_equal(w[k].data, res.weights[k].data) for k in w))
print(evaluate(cfg, res.weights, pairs).format_table())
