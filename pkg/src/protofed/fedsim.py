"""Round-based federated training loop with prototype exchange.

One round: sample clients, run local SGD from the current global parameters,
average the returned parameter vectors by sample count, and (for prototype
algorithms) aggregate the class prototypes reported by this round's
participants.  Clients train round t against the prototypes aggregated at
round t-1; the first round sees none.

Everything is deterministic given the config: every random draw comes from a
named stream of the run seed, client results are reduced in client-id order,
and the summary carries no timing, so the same config produces byte-identical
output at any thread count (PROTOFED_THREADS caps the worker pool).
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import metrics as metrics_mod
from . import rng as rng_mod
from .autodiff import ParamStore, Tape, add, scalar_mul, sgd_step
from .config import ExperimentConfig
from .datagen import (
    ClientShard, MultimodalDataset, client_batches, eval_batch,
    load_feature_files, make_client_shards, synthesize,
)
from .errors import ConfigError, NumericError, TrainingError
from .losses import LossToggles, proximal_l2, total_loss, unimodal_total_loss
from .models import MultimodalNet, preset
from .prototypes import (
    CompletePrototypes, LocalPrototypeSet, aggregate_complete, aggregate_unimodal,
    complete_to_dict, compute_local_prototypes, compute_local_unimodal, payload_bytes,
)

_EVAL_CHUNK = 1024
_HEADLINE_KEY = 1 << 20         # eval-mask stream key reserved for the final pass

_PROTO_ALGOS = ("mfcpl", "fedproto")
_UNIMODAL_ALGOS = ("mfcpl_unimodal",)


@dataclass
class ClientUpdate:
    client_id: int
    n_samples: int
    flat: np.ndarray
    train_loss: float
    prototypes: LocalPrototypeSet | None = None
    unimodal: dict[int, LocalPrototypeSet] | None = None


@dataclass
class RoundReport:
    round_index: int
    participants: list[int]
    train_loss: float
    val: dict
    test: dict | None


@dataclass
class RunResult:
    summary: dict
    reports: list[RoundReport]
    final_params: ParamStore
    best_params: ParamStore
    best_round: int
    prototypes: CompletePrototypes | None
    unimodal: dict[int, CompletePrototypes] | None
    dataset: MultimodalDataset


def thread_count() -> int:
    raw = os.environ.get("PROTOFED_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PROTOFED_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def sample_clients(n_clients: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """ceil(rate * N) distinct clients, returned sorted."""
    if not 0 < rate <= 1:
        raise ConfigError(f"participation rate must lie in (0, 1], got {rate}")
    k = math.ceil(rate * n_clients)
    return np.sort(rng.choice(n_clients, size=k, replace=False))


def build_dataset(cfg: ExperimentConfig) -> MultimodalDataset:
    if cfg.dataset == "synthetic":
        return synthesize(cfg.n_modalities, cfg.n_classes, cfg.n_samples,
                          rng_mod.stream(cfg.seed, rng_mod.DOMAIN_DATASET),
                          latent_dim=cfg.latent_dim, class_sep=cfg.class_sep,
                          noise_sigma=cfg.noise_sigma, feat_dim=cfg.feat_dim,
                          view_size=cfg.view_size or None)
    return load_feature_files(cfg.dataset)


def _objective(cfg: ExperimentConfig, outputs: dict, batch, proto_vecs, uni_vecs,
               snapshot: ParamStore | None):
    alg = cfg.algorithm
    if alg == "mfcpl":
        return total_loss(outputs, batch.labels, batch.present, proto_vecs,
                          cfg.weights(), cfg.toggles(), cfg.cma_kind)
    if alg == "mfcpl_unimodal":
        return unimodal_total_loss(outputs, batch.labels, batch.present, uni_vecs,
                                   cfg.weights(), cfg.toggles(), cfg.cma_kind)
    if alg == "fedproto":
        return total_loss(outputs, batch.labels, batch.present, proto_vecs,
                          cfg.weights(), LossToggles(cmpr=True, cmpc=False, cma=False))
    parts = total_loss(outputs, batch.labels, batch.present, {},
                       cfg.weights(), LossToggles.none())
    if alg == "fedprox":
        prox = proximal_l2(outputs["params"], snapshot)
        parts["total"] = add(parts["total"], scalar_mul(prox, 0.5 * cfg.mu))
    return parts


def _collect_representations(net: MultimodalNet, dataset, shard: ClientShard,
                             batch_size: int, want_unimodal: bool):
    """Eval-mode pass over the client's rows for prototype extraction."""
    reps, labels = [], []
    z_by_m = {m: [] for m, flag in enumerate(shard.present) if flag}
    for batch in client_batches(dataset, shard, batch_size):
        out = net.forward_full(batch.features)
        labels.append(batch.labels)
        if want_unimodal:
            for m in z_by_m:
                z_by_m[m].append(out["zprime"][m].data)
        else:
            reps.append(out["r"].data)
    y = np.concatenate(labels)
    if want_unimodal:
        stacked = {m: np.concatenate(chunks) for m, chunks in z_by_m.items()}
        return compute_local_unimodal(stacked, y, client_id=shard.client_id)
    return compute_local_prototypes(np.concatenate(reps), y, client_id=shard.client_id)


def local_update(dataset, shard: ClientShard, arch, layout, global_flat: np.ndarray,
                 cfg: ExperimentConfig, round_index: int,
                 complete: CompletePrototypes | None,
                 unimodal: dict[int, CompletePrototypes] | None) -> ClientUpdate:
    params = ParamStore.from_flat(global_flat.copy(), layout)
    net = MultimodalNet(arch, params)
    snapshot = params.copy() if cfg.algorithm == "fedprox" else None
    shuffle_rng = rng_mod.stream(cfg.seed, rng_mod.DOMAIN_CLIENT,
                                 round_index, shard.client_id, 0)
    dropout_rng = rng_mod.stream(cfg.seed, rng_mod.DOMAIN_CLIENT,
                                 round_index, shard.client_id, 1)
    proto_vecs = complete.vectors if complete else {}
    uni_vecs = {m: cp.vectors for m, cp in unimodal.items()} if unimodal else {}
    loss_sum, n_seen = 0.0, 0
    try:
        for _ in range(cfg.local_epochs):
            for batch in client_batches(dataset, shard, cfg.batch_size, rng=shuffle_rng):
                tape = Tape()
                out = net.forward_full(batch.features, tape, dropout_rng)
                parts = _objective(cfg, out, batch, proto_vecs, uni_vecs, snapshot)
                raw = tape.backward(parts["total"])
                grads = {name: raw[t.grad_id] for name, t in out["params"].items()}
                sgd_step(params, grads, cfg.lr, cfg.weight_decay)
                loss_sum += float(parts["total"].data) * batch.labels.shape[0]
                n_seen += batch.labels.shape[0]
        protos = uni = None
        if cfg.algorithm in _PROTO_ALGOS:
            protos = _collect_representations(net, dataset, shard, cfg.batch_size, False)
        elif cfg.algorithm in _UNIMODAL_ALGOS:
            uni = _collect_representations(net, dataset, shard, cfg.batch_size, True)
    except NumericError as exc:
        raise TrainingError(f"client {shard.client_id}, round {round_index}: {exc}") from exc
    return ClientUpdate(client_id=shard.client_id, n_samples=shard.n_samples(),
                        flat=params.flatten(), train_loss=loss_sum / max(n_seen, 1),
                        prototypes=protos, unimodal=uni)


def fedavg_aggregate(updates: list[ClientUpdate]) -> np.ndarray:
    """Sample-count-weighted parameter mean, reduced in client-id order."""
    if not updates:
        raise ConfigError("cannot aggregate zero client updates")
    ordered = sorted(updates, key=lambda u: u.client_id)
    total = float(sum(u.n_samples for u in ordered))
    acc = np.zeros_like(ordered[0].flat)
    for u in ordered:
        acc += (u.n_samples / total) * u.flat
    return acc


def evaluate(net: MultimodalNet, dataset, idx, mask_q=None, mask_rng=None) -> dict:
    batch = eval_batch(dataset, idx, mask_q=mask_q, mask_rng=mask_rng)
    preds = []
    n = batch.labels.shape[0]
    for lo in range(0, n, _EVAL_CHUNK):
        feats = [f[lo:lo + _EVAL_CHUNK] for f in batch.features]
        preds.append(net.forward_full(feats)["logits"].data.argmax(axis=1))
    return metrics_mod.summarize(batch.labels, np.concatenate(preds), dataset.n_classes)


def _round_updates(dataset, shards, arch, layout, global_flat, cfg, t,
                   complete, unimodal, picked) -> list[ClientUpdate]:
    def work(cid):
        return local_update(dataset, shards[cid], arch, layout, global_flat,
                            cfg, t, complete, unimodal)
    n_threads = thread_count()
    if n_threads == 1:
        updates = [work(cid) for cid in picked]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            updates = list(pool.map(work, picked))
    updates.sort(key=lambda u: u.client_id)
    return updates


def run_experiment(cfg: ExperimentConfig, out_dir=None,
                   dataset: MultimodalDataset | None = None) -> RunResult:
    """Train for cfg.rounds rounds and return the full result bundle.

    The headline metric is test-set performance at the parameters of the
    best-validation round.  With out_dir set, the summary, per-round tables,
    best checkpoint, and final prototypes are written there.
    """
    cfg.validate()
    if dataset is None:
        dataset = build_dataset(cfg)
    shards = make_client_shards(dataset, cfg.n_clients, cfg.beta, cfg.q, cfg.u,
                                cfg.seed, min_samples=cfg.min_samples)
    arch = preset("synthetic", input_dims=dataset.feature_dims(),
                  n_classes=dataset.n_classes, proj_dim=cfg.proj_dim)
    net = MultimodalNet.build(arch, rng_mod.stream(cfg.seed, rng_mod.DOMAIN_INIT))
    layout = net.params.layout()
    global_flat = net.params.flatten()

    complete: CompletePrototypes | None = None
    unimodal: dict[int, CompletePrototypes] | None = None
    reports: list[RoundReport] = []
    best_acc, best_round, best_flat = -1.0, -1, global_flat.copy()
    payloads: list[int] | None = None

    for t in range(cfg.rounds):
        picked = sample_clients(cfg.n_clients, cfg.participation,
                                rng_mod.stream(cfg.seed, rng_mod.DOMAIN_SAMPLE, t))
        updates = _round_updates(dataset, shards, arch, layout, global_flat,
                                 cfg, t, complete, unimodal, picked)
        global_flat = fedavg_aggregate(updates)
        if cfg.algorithm in _PROTO_ALGOS:
            complete = aggregate_complete([u.prototypes for u in updates], round_index=t)
            payloads = [payload_bytes(u.prototypes) for u in updates]
        elif cfg.algorithm in _UNIMODAL_ALGOS:
            unimodal = aggregate_unimodal([u.unimodal for u in updates], round_index=t)
            payloads = [sum(payload_bytes(s) for s in u.unimodal.values())
                        for u in updates]

        net = MultimodalNet(arch, ParamStore.from_flat(global_flat.copy(), layout))
        mask = cfg.eval_mask_q
        val = evaluate(net, dataset, dataset.val_idx, mask_q=mask,
                       mask_rng=rng_mod.stream(cfg.seed, rng_mod.DOMAIN_EVAL_MASK, t, 0)
                       if mask is not None else None)
        test = None
        if (t + 1) % 5 == 0 or t == cfg.rounds - 1:
            test = evaluate(net, dataset, dataset.test_idx, mask_q=mask,
                            mask_rng=rng_mod.stream(cfg.seed, rng_mod.DOMAIN_EVAL_MASK, t, 1)
                            if mask is not None else None)
        n_total = sum(u.n_samples for u in updates)
        train_loss = float(sum(u.train_loss * u.n_samples for u in updates) / n_total)
        if val["accuracy"] > best_acc:
            best_acc, best_round, best_flat = val["accuracy"], t, global_flat.copy()
        reports.append(RoundReport(round_index=t, participants=[int(c) for c in picked],
                                   train_loss=train_loss, val=val, test=test))

    best_params = ParamStore.from_flat(best_flat.copy(), layout)
    headline = evaluate(MultimodalNet(arch, best_params), dataset, dataset.test_idx,
                        mask_q=cfg.eval_mask_q,
                        mask_rng=rng_mod.stream(cfg.seed, rng_mod.DOMAIN_EVAL_MASK,
                                                _HEADLINE_KEY)
                        if cfg.eval_mask_q is not None else None)

    summary = {
        "config": cfg.to_dict(),
        "n_parameters": int(global_flat.shape[0]),
        "rounds": [{"round": r.round_index, "participants": r.participants,
                    "train_loss": r.train_loss, "val": r.val, "test": r.test}
                   for r in reports],
        "best": {"round": best_round, "val_accuracy": best_acc},
        "headline": headline,
        "final_test": reports[-1].test,
        "payload": {
            "parameters_bytes": int(global_flat.nbytes),
            "prototype_bytes_per_client": payloads,
        },
    }
    result = RunResult(summary=summary, reports=reports,
                       final_params=ParamStore.from_flat(global_flat, layout),
                       best_params=best_params, best_round=best_round,
                       prototypes=complete, unimodal=unimodal, dataset=dataset)
    if out_dir is not None:
        write_artifacts(result, out_dir)
    return result


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def write_artifacts(result: RunResult, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(result.summary, fh, indent=1, sort_keys=True)

    metric_names = ("accuracy", "macro_f1", "uar")
    with open(os.path.join(out_dir, "rounds.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "n_participants", "train_loss"]
                        + [f"val_{m}" for m in metric_names]
                        + [f"test_{m}" for m in metric_names])
        for r in result.reports:
            row = [r.round_index, len(r.participants), repr(r.train_loss)]
            row += [repr(r.val[m]) for m in metric_names]
            row += [repr(r.test[m]) if r.test else "" for m in metric_names]
            writer.writerow(row)

    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "split", "metric", "value"])
        for r in result.reports:
            writer.writerow([r.round_index, "train", "loss", repr(r.train_loss)])
            for m in metric_names:
                writer.writerow([r.round_index, "val", m, repr(r.val[m])])
            if r.test:
                for m in metric_names:
                    writer.writerow([r.round_index, "test", m, repr(r.test[m])])

    result.best_params.flatten().tofile(os.path.join(out_dir, "checkpoint.bin"))
    with open(os.path.join(out_dir, "checkpoint_layout.json"), "w") as fh:
        json.dump({"round": result.best_round, "dtype": "float64",
                   "layout": result.best_params.layout()}, fh, indent=1)

    if result.prototypes is not None:
        with open(os.path.join(out_dir, "prototypes.json"), "w") as fh:
            json.dump(complete_to_dict(result.prototypes), fh, indent=1)
    elif result.unimodal is not None:
        with open(os.path.join(out_dir, "prototypes.json"), "w") as fh:
            json.dump({str(m): complete_to_dict(cp)
                       for m, cp in sorted(result.unimodal.items())}, fh, indent=1)


def load_checkpoint(out_dir) -> ParamStore:
    with open(os.path.join(out_dir, "checkpoint_layout.json")) as fh:
        meta = json.load(fh)
    flat = np.fromfile(os.path.join(out_dir, "checkpoint.bin"), dtype=np.float64)
    return ParamStore.from_flat(flat, meta["layout"])
