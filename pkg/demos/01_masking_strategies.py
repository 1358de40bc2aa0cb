"""Training and evaluation masks on one synthetic window.

Each training strategy splits the observed cells into a conditioning set the
model sees and a target set it learns to reconstruct. Evaluation patterns
inject sensor faults into a whole test span instead.
"""

import numpy as np

from stimpute.data import SyntheticSpec, synthesize
from stimpute.masking import EvalPattern, StrategyConfig, simulate_eval_missing, training_mask


def show(name, plan):
    rows = ["".join("#" if t else ("." if c else " ") for t, c in zip(tr, co)) for tr, co in zip(plan.target_mask, plan.cond_mask)]
    print(f"{name}: {int(plan.target_mask.sum())} target cells (#), conditioning (.)")
    for row in rows[:6]:
        print("   |" + row + "|")


corpus = synthesize(SyntheticSpec(node_count=8, n_steps=480, missing_rate=0.05))
window = corpus.windows[0]
rng = np.random.default_rng(0)

for kind in ("point", "block"):
    show(kind, training_mask(window, rng, StrategyConfig(kind=kind)))

# hybrid draws point masks half the time and borrows another window's
# missing layout (or a block mask) otherwise
show("hybrid", training_mask(window, rng, StrategyConfig(kind="hybrid", hybrid_alternative="block")))

span = corpus.windows[1]
show("eval point", simulate_eval_missing(span, "point", rng))
# a raised run-start probability so a short window shows a few outages
show("eval block", simulate_eval_missing(span, EvalPattern("block", block_prob=0.02), rng))
show("eval failure", simulate_eval_missing(span, f"failure:{span.node_ids[2]}", rng))
