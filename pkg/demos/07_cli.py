import json
import tempfile
from pathlib import Path

from scn.cli import main
from scn.data import write_synthetic_corpus

work = Path(tempfile.mkdtemp())
write_synthetic_corpus(work / "data", 6, size=32)

config = {
    "model": {"n_blocks": 2, "width": 8, "width_mult": 2, "n_scales": 2, "ratio": "1/2"},
    "train": {"epochs": 3, "patches_per_image": 16, "patch": 12, "batch": 8, "val_fraction": 0.34},
}
(work / "cfg.json").write_text(json.dumps(config, indent=2))

main(["train", "--config", str(work / "cfg.json"), "--data", str(work / "data"), "--out", str(work / "m.scnw"), "--log", str(work / "train.log")])
print((work / "train.log").read_text())

main(["eval", "--ckpt", str(work / "m.scnw"), "--data", str(work / "data"), "--scales", "3", "--ratio", "0.5", "--self-ensemble"])
main(["infer", "--ckpt", str(work / "m.scnw"), "--input", str(work / "data" / "img_000.png"), "--output", str(work / "up.png")])
main(["gradcheck", "--seeds", "2"])

# a resampling ablation at toy size
main(["ablate", "resampling", "--config", str(work / "cfg.json"), "--data", str(work / "data"), "--csv", str(work / "resampling.csv")])

# errors come back as exit codes with one line on stderr
print("exit code for a typo'd config:", main(["train", "--config", "/nonexistent.json", "--out", "x"]))
