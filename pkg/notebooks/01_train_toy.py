"""Train the SE-attention configuration on a small toy corpus.

Run with ``python notebooks/01_train_toy.py``. Takes about a minute on one core.
"""
from exprnet import ModelConfig, TrainConfig, stratified_split, synth_toy, train_run
from exprnet.metrics import summarize

# A procedural corpus stands in for face photos: a glyph with a mouth arc
# curving up (happy) or down (sad). Keep it small and low resolution.
corpus = synth_toy(n_per_class=120, image_size=48, seed=3)
train_ds, val_ds = stratified_split(corpus, val_frac=0.2, seed=0)
print(f"train {len(train_ds)} images, validation {len(val_ds)} images")

# Batch norm, dropout and SE attention on, trained with the default SGD
# recipe: lr 0.02, momentum 0.9, decayed tenfold every 15 epochs.
model = ModelConfig(input_size=48, use_batchnorm=True, use_dropout=True, attention="se")
cfg = TrainConfig(epochs=10, workers=1, model=model)
result = train_run(cfg, train_ds, val_ds)

for row in result.log:
    print(f"epoch {row['epoch']:2d}  lr {row['lr']:.4f}  train loss {row['train_loss']:.3f}  "
          f"val acc {row['val_acc']:.3f}")

happy, sad = summarize(result.final_cm, 0), summarize(result.final_cm, 1)
print(f"happy F1 {happy.f1:.2f}, sad F1 {sad.f1:.2f}, accuracy {happy.accuracy:.2f}")
