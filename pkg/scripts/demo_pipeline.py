#!/usr/bin/env python3
"""Walk one intent through the whole pipeline and print every stage.

Shows: characteristic function -> nucleolus -> rule probabilities -> sampled
string -> per-target schedules -> tracked/merged string -> parse tree ->
graph-transformer coalition estimates (untrained model, so the last numbers
are illustrative only).
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from groupintent import gtnn, harness
from groupintent.game import coalition_members
from groupintent.metaparse import parse, tree_to_graph


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--class-id", default=None)
    parser.add_argument("--seed", type=int, default=4)
    args = parser.parse_args()

    cfg = harness.default_config()
    spec = cfg.classes[0]
    if args.class_id:
        spec = next(c for c in cfg.classes if c.class_id == args.class_id)
    intent = harness.build_intent(spec, cfg.allocation_method)

    print(f"intent class {spec.class_id}")
    n = cfg.n_players
    for mask in range(2**n):
        members = coalition_members(mask, n)
        print(f"  u({members or '{}'}) = {intent.char_fn.value(mask):.3f}")
    print(f"nucleolus allocation: {np.round(intent.allocation, 4)}")
    print("rule probabilities:")
    for rule in intent.grammar.rules:
        p = intent.grammar.probs[rule.id]
        if p > 0:
            lhs = "".join(s.name for s in rule.lhs)
            rhs = "".join(s.name for s in rule.rhs)
            print(f"  {rule.id:>4}: {lhs} -> {rhs}   p={p:.4f}")

    result = harness.end_to_end_forward(intent, cfg, seed=args.seed)
    print(f"\nsampled string:    {' '.join(result.letters)}")
    for j, schedule in enumerate(result.schedules):
        print(f"  target {j} schedule: {' '.join(schedule)}")
    print(f"merged (tracked):  {' '.join(result.merged_velocity)}")
    print(f"post-merge truth:  {' '.join(result.reference)}")

    tree = parse(result.letters, harness.reference_grammar())
    print(f"\nparse tree: {len(tree.nodes)} nodes, "
          f"p = {tree.probability:.3g}, rules = {tree.applied_rules()}")
    graph = tree_to_graph(tree, cfg.model.feature_dim)
    model = gtnn.init_model(cfg.model)
    theta = gtnn.forward(model, graph)
    print(f"untrained model theta = {np.round(theta, 4)}")


if __name__ == "__main__":
    main()
