import tempfile

import numpy as np

from scn import tensor as T
from scn.data import DegradationSpec, degrade, save_image, synthetic_image
from scn.metrics import psnr
from scn.models import ModelConfig
from scn.train import TrainConfig, evaluate, train

# grayscale corpus on disk; training draws fresh sigma-25 noise for every patch
clean = [T.Tensor(synthetic_image(40, 1, seed=50 + s)[None]) for s in range(4)]
corpus = tempfile.mkdtemp()
for i, im in enumerate(clean[:3]):
    save_image(im, f"{corpus}/img_{i}.png")

cfg = ModelConfig(task="denoise", n_blocks=3, width=12, width_mult=4, n_scales=3, ratio="2/3")
tcfg = TrainConfig(data_dir=corpus, epochs=12, patches_per_image=32, patch=24, batch=8, sigma=25,
                   validate=False, decay_start=8, decay_every=2)
res = train(cfg, tcfg)
print("final training loss %.4f" % res.history[-1]["loss"])

held_out = degrade(clean[3], DegradationSpec("gaussian_noise", sigma=25), seed=1, name="held_out")
print("noisy input %.2f dB" % psnr(np.clip(held_out.degraded.data, 0, 1), held_out.target.data))
print("denoised    %.2f dB" % evaluate(cfg, res.weights, [held_out]).mean_psnr)
