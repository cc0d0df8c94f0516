"""Train briefly, then see where the network looks.

Grad-CAM weights the last convolutional feature maps by their average
gradient for the chosen class and keeps the positive part. The heatmap is
upsampled to 224x224 and written as a PGM next to the input image.
"""
from pathlib import Path

import numpy as np

from exprnet import ModelConfig, TrainConfig, grad_cam, stratified_split, synth_toy, train_run
from exprnet.cli import emit_pgm
from exprnet.data import write_ppm
from exprnet.image import to_tensor

size = 48
corpus = synth_toy(n_per_class=120, image_size=size, seed=5)
train_ds, val_ds = stratified_split(corpus, val_frac=0.2, seed=0)
model = ModelConfig(input_size=size, use_batchnorm=True, use_dropout=True, attention="se")
net = train_run(TrainConfig(epochs=10, workers=1, model=model), train_ds, val_ds).best_net()

out = Path("gradcam_demo")
out.mkdir(exist_ok=True)
for k, item in enumerate(list(val_ds)[:4]):
    cam = grad_cam(net, to_tensor([item.image], net.dtype), item.label)
    py, px = np.unravel_index(cam.argmax(), cam.shape)
    scale = size / cam.shape[0]
    print(f"image {k} (label {item.label}): peak at ({px * scale:.0f}, {py * scale:.0f}), "
          f"glyph box {tuple(round(v) for v in item.meta['bbox'])}")
    write_ppm(out / f"image_{k}.ppm", item.image)
    emit_pgm(cam, out / f"image_{k}_cam.pgm")
