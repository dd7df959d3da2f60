"""Ensemble selection and the non-one-shot baseline constructors.

A pool member is a trained model plus its validation predictions; forward
selection greedily grows the member set that minimizes ensemble validation
NLL. Baselines cover random samples, random search, pools with architectural
or hyperparameter variation, and their multi-headed counterparts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import metrics
from .config import TrainHyperparams
from .metrics import PredictionMatrix
from .search import Budget, select_min_nll, train_discrete
from .space import ModelSpec, sample_random_genotype
from .supernet import DiscreteNetwork


@dataclass
class PoolMember:
    genotype: object
    model: DiscreteNetwork
    val_probs: np.ndarray  # [heads, N, C]
    val_nll: float
    tag: str = ""


@dataclass
class EnsemblePool:
    members: list
    val_labels: np.ndarray

    def __len__(self):
        return len(self.members)


@dataclass
class Ensemble:
    """Final ensemble: trained models whose heads are the members."""

    models: list
    genotypes: list
    method: str

    def predict_members(self, images, batch=256):
        return np.concatenate([m.predict(images, batch=batch) for m in self.models])

    def param_count(self):
        return sum(m.param_count() for m in self.models)

    @property
    def num_members(self):
        return sum(m.genotype.num_heads for m in self.models)


def _member_probs(member_sets):
    return np.concatenate(member_sets, axis=0)


def forward_select(pool: EnsemblePool, num_members, with_replacement=False):
    """Greedy member indices minimizing ensemble validation NLL.

    Starts empty and repeatedly adds the member whose inclusion gives the
    lowest ensemble NLL; ties resolve to the lowest pool index.
    """
    if not with_replacement and num_members > len(pool):
        raise ValueError(
            f"pool of {len(pool)} cannot fill {num_members} slots without replacement"
        )
    chosen = []
    labels = pool.val_labels
    for _ in range(num_members):
        scores = []
        for i, cand in enumerate(pool.members):
            if not with_replacement and i in chosen:
                scores.append(np.inf)
                continue
            stack = [pool.members[j].val_probs for j in chosen] + [cand.val_probs]
            avg = metrics.ensemble_average(
                PredictionMatrix(_member_probs(stack), labels)
            )
            scores.append(metrics.nll(avg, labels))
        chosen.append(select_min_nll(scores))
    return chosen


def _trained_member(genotype, bundle, hp, seed, tag="", label_smoothing=None):
    model, reports, budget = train_discrete(
        genotype, bundle, hp, seed, label_smoothing=label_smoothing
    )
    val_x, val_y = bundle.split("val")
    probs = model.predict(val_x)
    return (
        PoolMember(genotype, model, probs, reports["val"].nll, tag=tag),
        budget,
    )


def _single_head_spec(spec: ModelSpec):
    return dataclasses.replace(spec, num_heads=1)


def build_baseline(kind, bundle, spec: ModelSpec, train_hp: TrainHyperparams,
                   pool_size, seed):
    """Construct one baseline ensemble; returns (Ensemble, Budget).

    deepens_sample: M seeds of one random single-head genotype.
    deepens_rs: M seeds of the best single-head genotype from a
        ``pool_size``-sample random search (by validation NLL).
    nes_rs: forward selection over a pool of ``pool_size`` random
        single-head models.
    hyperdeepens_rs: forward selection over label-smoothing/weight-decay
        variants of the deepens_rs genotype.
    mhe_sample: one random multi-head genotype, trained once.
    mhe_rs: best of ``pool_size`` random multi-head genotypes by
        validation NLL.
    """
    rng = np.random.default_rng([int(seed), 0xBA5E])
    budget = Budget()
    m = spec.num_heads
    single = _single_head_spec(spec)

    def rs_best_single_genotype(tag):
        members = []
        for i in range(pool_size):
            geno = sample_random_genotype(single, rng)
            member, b = _trained_member(geno, bundle, train_hp, [seed, tag, i])
            budget.merge(b)
            members.append(member)
        best = select_min_nll([mem.val_nll for mem in members])
        return members, best

    if kind == "deepens_sample":
        geno = sample_random_genotype(single, rng)
        models = []
        for i in range(m):
            member, b = _trained_member(geno, bundle, train_hp, [seed, 1, i])
            budget.merge(b)
            models.append(member.model)
        return Ensemble(models, [geno] * m, kind), budget

    if kind == "deepens_rs":
        members, best = rs_best_single_genotype(2)
        geno = members[best].genotype
        models = []
        for i in range(m):
            member, b = _trained_member(geno, bundle, train_hp, [seed, 3, i])
            budget.merge(b)
            models.append(member.model)
        return Ensemble(models, [geno] * m, kind), budget

    if kind == "nes_rs":
        members = []
        for i in range(pool_size):
            geno = sample_random_genotype(single, rng)
            member, b = _trained_member(geno, bundle, train_hp, [seed, 4, i])
            budget.merge(b)
            members.append(member)
        pool = EnsemblePool(members, bundle.split("val")[1])
        picked = forward_select(pool, m)
        return (
            Ensemble(
                [members[i].model for i in picked],
                [members[i].genotype for i in picked],
                kind,
            ),
            budget,
        )

    if kind == "hyperdeepens_rs":
        members, best = rs_best_single_genotype(5)
        geno = members[best].genotype
        smoothings = (0.0, 0.05, 0.1, 0.2)
        variants = []
        for i in range(pool_size):
            ls = smoothings[i % len(smoothings)]
            wd = float(10 ** rng.uniform(-5, -3))
            hp_i = dataclasses.replace(
                train_hp, weight_decay=wd, label_smoothing=ls
            )
            member, b = _trained_member(
                geno, bundle, hp_i, [seed, 6, i], tag=f"ls={ls},wd={wd:.2e}"
            )
            budget.merge(b)
            variants.append(member)
        pool = EnsemblePool(variants, bundle.split("val")[1])
        picked = forward_select(pool, m)
        return (
            Ensemble(
                [variants[i].model for i in picked],
                [variants[i].genotype for i in picked],
                kind,
            ),
            budget,
        )

    if kind == "mhe_sample":
        geno = sample_random_genotype(spec, rng)
        member, b = _trained_member(geno, bundle, train_hp, [seed, 7, 0])
        budget.merge(b)
        return Ensemble([member.model], [geno], kind), budget

    if kind == "mhe_rs":
        members = []
        for i in range(pool_size):
            geno = sample_random_genotype(spec, rng)
            member, b = _trained_member(geno, bundle, train_hp, [seed, 8, i])
            budget.merge(b)
            members.append(member)
        best = select_min_nll([mem.val_nll for mem in members])
        return (
            Ensemble([members[best].model], [members[best].genotype], kind),
            budget,
        )

    raise ValueError(f"unknown baseline kind {kind!r}")
