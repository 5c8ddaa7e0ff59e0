"""What do the future-prediction heads actually learn?

After training on the copy task, the bag-of-words head is asked at every
decoding step for the set of words it believes are still untranslated, and
the length head for how many steps remain. This script reproduces the
package's two analyses:

  * accuracy of the bag-of-words head, binned by how many words remain --
    predicting a small leftover set is easier than a large one, so accuracy
    falls as the remaining count grows;
  * bucket accuracy of the remaining-length head against chance.

Takes about a minute. Run from the repository root:

    python3 demos/04_future_prediction_analysis.py
"""

from fpb.data import build_task
from fpb.decoding import bow_accuracy_curve, length_accuracy
from fpb.model import FpbConfig, FpbModel
from fpb.training import TrainConfig, train

print("=== training with an emphasis on the auxiliary heads ===")
bundle = build_task("copy", n_train=1200, n_dev=120, n_test=120,
                    vocab_size=14, len_range=(3, 8), seed=4)
config = FpbConfig(
    vocab_src=len(bundle.vocab_src), vocab_tgt=len(bundle.vocab_tgt),
    d_emb=32, d_hidden=32, k_heads=2, k_len=9, dropout_rate=0.0,
    lambda2=1.0, lambda3=0.1,
)
model = FpbModel(config, seed=5)
result = train(
    model, bundle,
    TrainConfig(alpha=0.01, epochs=14, batch_size=8, seed=5,
                log_interval=10**6, patience=14, max_decode_len=11),
    out_dir=None,
)
print(f"best dev BLEU {result.best_bleu:.4f}")

print()
print("=== bag-of-words accuracy vs words remaining ===")
curve = bow_accuracy_curve(model, bundle.vocab_src, bundle.vocab_tgt,
                           bundle.dev, seed=0)
print(f"{'remaining':>9}  {'accuracy':>8}  {'steps':>6}")
for r, acc, count in curve.rows():
    bar = "#" * int(round(acc * 40))
    print(f"{r:>9}  {acc:8.3f}  {count:>6}  {bar}")

print()
print("=== remaining-length bucket accuracy ===")
acc = length_accuracy(model, bundle.vocab_src, bundle.vocab_tgt,
                      bundle.dev, seed=0)
chance = 1.0 / config.k_len
print(f"length head: {acc:.3f}   (chance would be about {chance:.3f})")
