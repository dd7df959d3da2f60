"""Shared helpers for the test suite."""

import numpy as np


def supernet_as_discrete_arrays(sup, spec, geno):
    """Map supernet parameters onto the matching DiscreteNetwork state dict.

    Backbone, per-head preprocessing, the genotype's chosen operations, and
    classifiers line up one-to-one when the discrete network is built from
    the same genotype (k=1 supernet, track=False discrete norms).
    """
    arrays = {}
    arrays.update(sup.backbone.state_arrays("backbone."))
    for h in range(spec.num_heads):
        arrays.update(
            sup.heads[h].classifier.state_arrays(f"classifiers.{h}.")
        )
        for ci, sup_cell in enumerate(sup.heads[h].cells):
            prefix = f"heads.{h}.{ci}."
            arrays.update(sup_cell.pre[0].state_arrays(prefix + "pre.0."))
            arrays.update(sup_cell.pre[1].state_arrays(prefix + "pre.1."))
            oi = 0
            for choice in geno.heads[h]:
                start, _ = spec.node_edge_range(choice.node)
                for src, op_name in zip(choice.inputs, choice.ops):
                    op = sup_cell.edges[start + src].ops[spec.ops.index(op_name)]
                    arrays.update(
                        op.state_arrays(prefix + f"op_modules.{oi}.")
                    )
                    oi += 1
    return arrays


def random_prob_rows(rng, n, c, scale=1.0):
    z = rng.normal(scale=scale, size=(n, c))
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)
