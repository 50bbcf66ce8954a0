from efbv import (
    Algorithm,
    CompressorSpec,
    RunConfig,
    Simulator,
    reference_solution,
    synth_dataset,
)
from efbv.engine import bits_to_target
from efbv.problems import build_problem

# 50 workers share 500 unit-norm samples in dimension 10
dataset = synth_dataset(seed=1, d=10, N=500, separation=1.0)
problem = build_problem(dataset.normalize_rows(), n=50, l2=1.0)
reference = reference_solution(problem)

compressor = CompressorSpec.comp(10, 1, 5)
target = 1e-6

print("\n--- EF-BV vs EF21 ---")
print(f"Compressor: {compressor.label}")
print(f"f* = {reference.optimum:.10f}")

for algorithm in (Algorithm.EF_BV, Algorithm.EF21):
    config = RunConfig(
        compressor=compressor,
        algorithm=algorithm,
        rounds=3000,
        cadence=100,
        seed=0,
    )
    sim = Simulator(config, problem, reference)
    records = sim.run()
    bits = bits_to_target(records, target)

    print(f"\n{'='*60}")
    print(f"{algorithm.value}")
    print(f"{'='*60}")
    print(
        f"lambda={sim.lam:.4g}  nu={sim.nu:.4g}"
        f"  gamma={sim.gamma:.4g}"
    )
    print(f"Rate per round: {sim.tuned.rate:.6f}")
    print(f"Final f_gap: {records[-1].f_gap:.3e}")
    if bits is None:
        print(f"Target {target:g} not reached")
    else:
        print(f"Bits per node to {target:g}: {bits:.0f}")
