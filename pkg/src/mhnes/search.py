"""One-shot search methods, the bilevel loop, and discrete-network training.

All methods are pure functions of (data, spec, hyperparams, seed): rngs are
derived from the seed plus a fixed tag, so repeated runs are bit-identical.
Budgets count optimization iterations; one bilevel iteration (an architecture
update plus a weight update) is one step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .config import SearchHyperparams, TrainHyperparams
from .metrics import MetricReport, PredictionMatrix
from .optim import SGD, Adam, cosine_lr
from .space import ModelSpec, MultiHeadGenotype, sample_random_genotype
from .supernet import ArchParams, DiscreteNetwork, Supernet, discretize
from .tensor import Tape, Tensor, backward


@dataclass
class Budget:
    """Mini-batch step accounting, per phase."""

    phases: list = field(default_factory=list)

    def add(self, phase, steps, **extra):
        self.phases.append({"phase": phase, "steps": int(steps), **extra})

    @property
    def total_steps(self):
        return sum(p["steps"] for p in self.phases)

    def to_dict(self):
        return {"total_steps": self.total_steps, "phases": self.phases}

    def merge(self, other):
        self.phases.extend(other.phases)
        return self


def steps_per_epoch(n, batch):
    return -(-n // batch)


def search_split_sizes(n_train, val_fraction):
    n_val = int(n_train * val_fraction)
    return n_train - n_val, n_val


def _epoch_batches(n, batch, rng):
    order = rng.permutation(n)
    return [order[i : i + batch] for i in range(0, n, batch)]


def hash_tag(tag):
    # stable small integer per tag string (process-independent)
    return sum((i + 1) * b for i, b in enumerate(tag.encode())) % (2**31)


def rng_for(seed, tag):
    """Generator derived from a seed (int or sequence of ints) plus a tag."""
    base = [int(s) for s in (seed if isinstance(seed, (list, tuple)) else [seed])]
    return np.random.default_rng(base + [hash_tag(tag)])


def _weight_step(net, opt, lr, x, y, forward_kwargs=None):
    with Tape():
        probs = net(Tensor(x), **(forward_kwargs or {}))
        loss = losses.ensemble_train_loss(probs, losses.ensemble_average(probs), y)
        opt.zero_grad()
        backward(loss)
        opt.step(lr)
    return loss.item()


def _arch_step(net, arch, opt, jsd_weight, x, y, rng=None):
    with Tape():
        probs = net(Tensor(x), mode="continuous", rng=rng)
        loss = losses.arch_val_loss(
            probs, losses.ensemble_average(probs), y, jsd_weight
        )
        opt.zero_grad()
        backward(loss)
        opt.step()
        arch.clamp()
    return loss.item()


def bilevel_search_step(net, arch, w_opt, a_opt, train_batch, val_batch, hp, lr,
                        warm, sample_rng=None):
    """One alternation: architecture Adam step (skipped during warmstart),
    then a weight SGD step. Returns the two loss values."""
    a_loss = None
    if not warm:
        a_loss = _arch_step(
            net, arch, a_opt, hp.jsd_weight, val_batch[0], val_batch[1],
            rng=sample_rng,
        )
    w_loss = _weight_step(
        net,
        w_opt,
        lr,
        train_batch[0],
        train_batch[1],
        forward_kwargs={"mode": "continuous", "rng": sample_rng},
    )
    return a_loss, w_loss


def _run_bilevel_phase(net, arch, hp, epochs, warmstart, data_split, rng,
                       sample_rng=None, epoch_hook=None, lr0=None):
    (tr_x, tr_y), (va_x, va_y) = data_split
    w_opt = SGD(
        net.parameters(),
        lr=hp.weight_lr,
        momentum=hp.weight_momentum,
        weight_decay=hp.weight_decay,
    )
    a_opt = Adam(
        arch.tensors(),
        lr=hp.arch_lr,
        beta1=hp.arch_beta1,
        beta2=hp.arch_beta2,
        weight_decay=hp.arch_weight_decay,
    )
    steps = 0
    for epoch in range(epochs):
        lr = cosine_lr(epoch, epochs, lr0 if lr0 is not None else hp.weight_lr)
        tb = _epoch_batches(len(tr_y), hp.batch, rng)
        vb = _epoch_batches(len(va_y), hp.batch, rng)
        for t_idx, v_idx in zip(tb, vb):
            bilevel_search_step(
                net,
                arch,
                w_opt,
                a_opt,
                (tr_x[t_idx], tr_y[t_idx]),
                (va_x[v_idx], va_y[v_idx]),
                hp,
                lr,
                warm=(epoch < warmstart),
                sample_rng=sample_rng,
            )
            steps += 1
        if epoch_hook is not None:
            epoch_hook(epoch, net, arch)
    return steps


def _split_search_data(bundle, hp: SearchHyperparams, rng):
    x, y = bundle.split("train")
    n_tr, _ = search_split_sizes(len(y), hp.val_fraction)
    order = rng.permutation(len(y))
    tr, va = order[:n_tr], order[n_tr:]
    return (x[tr], y[tr]), (x[va], y[va])


def pcdarts_search(bundle, spec: ModelSpec, hp: SearchHyperparams, seed,
                   epoch_hook=None):
    """Partial-channel bilevel search with edge weights."""
    rng = rng_for(seed, "pcdarts")
    split = _split_search_data(bundle, hp, rng)
    arch = ArchParams(spec, "pcdarts", rng)
    net = Supernet(rng, spec, arch, k=hp.partial_k)
    budget = Budget()
    steps = _run_bilevel_phase(
        net, arch, hp, hp.epochs, hp.warmstart_epochs, split, rng,
        epoch_hook=epoch_hook,
    )
    budget.add("search", steps)
    return discretize(arch), budget, arch


def _prune_head_ops(arch: ArchParams, keep):
    """Per head, keep the ops with highest mean concentration (ties: lower
    index); returns (new head_ops, surviving column indices per head)."""
    new_ops, new_cols = [], []
    for h, ops in enumerate(arch.head_ops):
        mean_conc = arch.alpha[h].data.mean(axis=0)
        order = sorted(range(len(ops)), key=lambda o: (-mean_conc[o], o))
        cols = sorted(order[:keep])
        new_cols.append(cols)
        new_ops.append(tuple(ops[o] for o in cols))
    return new_ops, new_cols


def drnas_search(bundle, spec: ModelSpec, hp: SearchHyperparams, seed,
                 epoch_hook=None):
    """Two-stage distribution search: sample mixture weights from learned
    Dirichlet concentrations; stage 2 prunes to the strongest ops per head
    and widens the channel fraction."""
    rng = rng_for(seed, "drnas")
    sample_rng = rng_for(seed, "drnas-sample")
    split = _split_search_data(bundle, hp, rng)
    budget = Budget()

    arch = ArchParams(spec, "drnas", rng)
    net = Supernet(rng, spec, arch, k=hp.partial_k)
    steps = _run_bilevel_phase(
        net, arch, hp, hp.drnas_stage_epochs, hp.drnas_warmstart_epochs, split,
        rng, sample_rng=sample_rng, epoch_hook=epoch_hook,
    )
    budget.add("search_stage1", steps, k=hp.partial_k)

    head_ops, cols = _prune_head_ops(arch, hp.drnas_keep_ops)
    arch2 = ArchParams(spec, "drnas", rng, head_ops=head_ops)
    for h in range(spec.num_heads):
        arch2.alpha[h].data[...] = arch.alpha[h].data[:, cols[h]]
    net2 = Supernet(rng, spec, arch2, k=hp.drnas_stage2_k)
    steps = _run_bilevel_phase(
        net2, arch2, hp, hp.drnas_stage_epochs, hp.drnas_warmstart_epochs, split,
        rng, sample_rng=sample_rng, epoch_hook=epoch_hook,
    )
    budget.add("search_stage2", steps, k=hp.drnas_stage2_k)
    return discretize(arch2), budget, arch2


def genotype_val_nll(net, genotype, val_x, val_y, batch=256):
    probs = net.predict(val_x, genotype=genotype, mode="discrete", batch=batch)
    pm = PredictionMatrix(probs, val_y)
    from . import metrics

    return metrics.nll(metrics.ensemble_average(pm), val_y)


def select_min_nll(rows):
    """Index of the lowest-NLL row; ties resolve to the first."""
    best, best_v = 0, rows[0]
    for i, v in enumerate(rows[1:], start=1):
        if v < best_v:
            best, best_v = i, v
    return best


def randomnas_search(bundle, spec: ModelSpec, hp: SearchHyperparams, seed,
                     epoch_hook=None):
    """Shared-weight training on randomly sampled genotypes, then selection
    of the best of ``hp.eval_samples`` random genotypes by validation NLL."""
    rng = rng_for(seed, "randomnas")
    (tr_x, tr_y), (va_x, va_y) = _split_search_data(bundle, hp, rng)
    arch = ArchParams(spec, "plain", rng)
    net = Supernet(rng, spec, arch, k=1)
    w_opt = SGD(
        net.parameters(),
        lr=hp.weight_lr,
        momentum=hp.weight_momentum,
        weight_decay=hp.weight_decay,
    )
    budget = Budget()
    steps = 0
    for epoch in range(hp.epochs):
        lr = cosine_lr(epoch, hp.epochs, hp.weight_lr)
        for idx in _epoch_batches(len(tr_y), hp.batch, rng):
            geno = sample_random_genotype(spec, rng)
            _weight_step(
                net, w_opt, lr, tr_x[idx], tr_y[idx],
                forward_kwargs={"mode": "sampled", "genotype": geno},
            )
            steps += 1
        if epoch_hook is not None:
            epoch_hook(epoch, net, arch)
    budget.add("search", steps)

    if hp.eval_examples:
        va_x, va_y = va_x[: hp.eval_examples], va_y[: hp.eval_examples]
    candidates = [sample_random_genotype(spec, rng) for _ in range(hp.eval_samples)]
    scores = [genotype_val_nll(net, g, va_x, va_y) for g in candidates]
    budget.add("selection_evals", 0, evaluations=len(candidates))
    return candidates[select_min_nll(scores)], budget, scores


def train_discrete(genotype: MultiHeadGenotype, bundle, hp: TrainHyperparams,
                   seed, label_smoothing=None, loss_log=None):
    """Train a discrete network from fresh He-initialized parameters.

    Returns the model, per-split MetricReports at severity 0, and the budget.
    ``loss_log``, when given, collects the mean training loss of each epoch.
    """
    rng = rng_for(seed, "train")
    ls = hp.label_smoothing if label_smoothing is None else label_smoothing
    net = DiscreteNetwork(rng, genotype, num_classes=_bundle_classes(bundle))
    opt = SGD(
        net.parameters(), lr=hp.lr, momentum=hp.momentum, weight_decay=hp.weight_decay
    )
    tr_x, tr_y = bundle.split("train")
    steps = 0
    for epoch in range(hp.epochs):
        lr = cosine_lr(epoch, hp.epochs, hp.lr)
        epoch_losses = []
        for idx in _epoch_batches(len(tr_y), hp.batch, rng):
            with Tape():
                probs = net(Tensor(tr_x[idx]))
                loss = losses.ensemble_train_loss(
                    probs, losses.ensemble_average(probs), tr_y[idx],
                    label_smoothing=ls,
                )
                opt.zero_grad()
                backward(loss)
                opt.step(lr)
            epoch_losses.append(loss.item())
            steps += 1
        if loss_log is not None:
            loss_log.append(float(np.mean(epoch_losses)))
    budget = Budget()
    budget.add("train", steps)
    reports = {}
    for split in ("train", "val", "test"):
        x, y = bundle.split(split)
        reports[split] = MetricReport.from_predictions(
            PredictionMatrix(net.predict(x), y)
        )
    return net, reports, budget


def _bundle_classes(bundle):
    return bundle.classes


# ---------------------------------------------------------------------------
# planned budgets (pure arithmetic; cross-checked against executed counts)


def planned_budget(method, n_train, search_hp: SearchHyperparams,
                   train_hp: TrainHyperparams, pool_size, num_members):
    b = Budget()
    n_tr, n_va = search_split_sizes(n_train, search_hp.val_fraction)
    spe_search = min(
        steps_per_epoch(n_tr, search_hp.batch), steps_per_epoch(n_va, search_hp.batch)
    )
    spe_train = steps_per_epoch(n_train, train_hp.batch)
    train_steps = spe_train * train_hp.epochs
    if method == "pcdarts":
        b.add("search", spe_search * search_hp.epochs)
        b.add("train", train_steps)
    elif method == "drnas":
        b.add("search_stage1", spe_search * search_hp.drnas_stage_epochs)
        b.add("search_stage2", spe_search * search_hp.drnas_stage_epochs)
        b.add("train", train_steps)
    elif method == "randomnas":
        b.add("search", steps_per_epoch(n_tr, search_hp.batch) * search_hp.epochs)
        b.add("selection_evals", 0, evaluations=search_hp.eval_samples)
        b.add("train", train_steps)
    elif method == "mhe_sample":
        b.add("train", train_steps)
    elif method == "mhe_rs":
        b.add("pool_train", pool_size * train_steps, models=pool_size)
    elif method == "deepens_sample":
        b.add("member_train", num_members * train_steps, models=num_members)
    elif method == "deepens_rs":
        b.add("pool_train", pool_size * train_steps, models=pool_size)
        b.add("member_train", num_members * train_steps, models=num_members)
    elif method == "nes_rs":
        b.add("pool_train", pool_size * train_steps, models=pool_size)
    elif method == "hyperdeepens_rs":
        b.add("base_pool_train", pool_size * train_steps, models=pool_size)
        b.add("variant_train", pool_size * train_steps, models=pool_size)
    else:
        raise ValueError(f"unknown method {method!r}")
    return b
