"""
Training strategy comparison
============================

Four ways to fit the same two-upstream ensemble, on a small task so the whole
comparison runs in seconds:

- mel: one joint objective over every subset's risk, then a short fine-tune
  of the heads with the trunks frozen;
- standalone: the joint loop reduced to the full ensemble's risk only;
- individual: each upstream fitted alone, then combiners fitted on top of the
  frozen trunks;
- small: a single-upstream model of matching width, the degradation baseline.
"""

from melkit import MelWeights, SyntheticSpec, TrainPlan, gen_hierarchical, run_strategy, standard_spec
from melkit.ensemble import all_subsets
from melkit.nn import LrSchedule

spec_data = SyntheticSpec(coarse_classes=2, fine_per_coarse=2, dim=8, samples_per_class=100, seed=1)
data = gen_hierarchical(spec_data)
spec = standard_spec(input_dim=8, num_fine=4, num_coarse=2, widths=(12, 8))
weights = MelWeights.uniform(all_subsets(2))
plan = TrainPlan(
    epochs=20,
    batch_size=32,
    schedule=LrSchedule(base_rate=0.01, warmup_epochs=2, total_epochs=20, min_rate=1e-4),
    fine_tune_epochs=4,
)

# Same seed everywhere, so every strategy starts from its own fresh model but
# sees identical data batches where the phases line up.
results = {name: run_strategy(name, data, spec, weights, plan, seed=0) for name in
           ("mel", "standalone", "individual", "small")}

print(f"{'strategy':<12}" + "".join(f"{k:>8}" for k in ("1", "2", "1+2")))
for name, result in results.items():
    accs = {s.key(): a for s, a in result.report.test_accuracy.items()}
    row = "".join(f"{accs.get(k, float('nan')):>8.3f}" for k in ("1", "2", "1+2"))
    print(f"{name:<12}{row}")

# The joint objective keeps the singleton exits usable: if either server dies,
# the survivor still answers close to the combined accuracy.
mel = results["mel"].report
combined = max(a for s, a in mel.test_accuracy.items() if len(s) == 2)
solo = min(a for s, a in mel.test_accuracy.items() if len(s) == 1)
print(f"worst singleton keeps {solo / combined:.1%} of the combined accuracy")

# Reports carry the full per-epoch risk/accuracy curves for every subset.
last = [r for r in mel.curves if r.epoch == max(c.epoch for c in mel.curves)]
for record in last:
    print(f"final epoch {record.subset}: risk {record.risk:.3f}, accuracy {record.accuracy:.3f}")
