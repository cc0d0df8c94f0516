"""Walk one image through the augmentation pipeline and list what fired.

Every sample draws from its own random substream, keyed by the master seed
and the sample index, so the output does not depend on worker count.
"""
from pathlib import Path

from exprnet import AugmentConfig, apply_pipeline, synth_toy
from exprnet.data import write_ppm

out = Path("augment_demo")
out.mkdir(exist_ok=True)
image = synth_toy(1, image_size=96, seed=0)[0].image
write_ppm(out / "original.ppm", image)

cfg = AugmentConfig(master_seed=42)
for index in range(6):
    ops = []
    augmented = apply_pipeline(image, cfg, index, ops)
    write_ppm(out / f"sample_{index}.ppm", augmented)
    print(f"sample {index}: {', '.join(ops) or 'no-op'}")

# Same seed and index always reproduce the same image.
assert (apply_pipeline(image, cfg, 3) == apply_pipeline(image, cfg, 3)).all()
print(f"images written to {out}/")
