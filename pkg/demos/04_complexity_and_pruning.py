"""
Complexity and pruning
======================

Real multiplications per sample for the designed equalizers, checked by an
instrumented forward pass, and progressive c0 pruning with fine-tuning.
"""
from paldbp import dataset
from paldbp.channel import LaunchConfig, LinkParams
from paldbp.experiments import evaluate_model, fit_scheme, initial_model, split_train
from paldbp.metrics import analytic_complexity, instrumented_count, optimal_fft_size
from paldbp.model import build_model
from paldbp.training import TrainConfig, prune

link = LinkParams()

# %% multiplications per sample on the full 20-span link
print(f"{'scheme':>8} {'TDE':>8} {'FDE':>8} {'counted':>8}")
for S in (1, 2, 4, 10):
    for mode in ("ldbp", "pa"):
        m = build_model(mode, link, S, LaunchConfig(0.0).P)
        tde = analytic_complexity(m).total
        fde = analytic_complexity(m, "fde").total
        counted = instrumented_count(m).total
        print(f"{mode + '-' + str(S):>8} {tde:8.0f} {fde:8.1f} {counted:8.0f}")

print("optimal FFT sizes for 37/77/157/300 taps:", [optimal_fft_size(n) for n in (37, 77, 157, 300)])

# %% prune c0 on a short link, two taps per stage with fine-tuning
short = LinkParams(n_spans=4, steps_per_span=20)
p = 4.0
train = dataset.simulate(short, [p], 32, seed=0, split="train")
test = dataset.simulate(short, [p], 16, seed=0, split="test")
m0 = initial_model("pa", short, 2, p, c0_len=21)
model, _, _ = fit_scheme("pa", short, 2, train, p, TrainConfig(epochs=10), model=m0)
(x, s), _ = split_train(train, p)
for target in (15, 9, 3):
    model, _ = prune(model, x, s, c0_length=target, finetune=TrainConfig(epochs=3))
    print(f"c0 {target:2d} taps: Q2 {evaluate_model(model, test, p).q2_text()} dB, "
          f"{analytic_complexity(model).total:.0f} mults/sample")
