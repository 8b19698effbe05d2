"""
training.py

Minibatch training loop: sample a batch, method forward, cross-entropy,
method backward chained layer by layer, Adam update. Every eval_every
iterations a DiagnosticsRecord is measured, the metrics CSV is rewritten
and the checkpoint is refreshed.

Random streams are spawned from the run seed, one per concern, so that a
resumed run draws exactly what an uninterrupted run would.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from checkpoint import Checkpoint, generator_state, load_checkpoint, restore_generator, save_checkpoint
from data import EncodedDataset
from diagnostics import GradWindow, best, compute_record, last10
from file_utils import atomic_write_csv
from gate_types import COEFFICIENT_METHODS, DiagnosticsRecord, GateClass, Method
from netarch import Network, NetworkConfig
from optim import AdamState, adam_step, cross_entropy
from run_config import RunConfig

logger = logging.getLogger(__name__)

STREAMS = ("init", "batches", "gumbel", "probe", "eval")


class DivergenceError(RuntimeError):
    """Non-finite loss or gradients; carries the iteration and per-layer state."""

    def __init__(self, iteration: int, layer_info: List[Dict]):
        self.iteration = iteration
        self.layer_info = layer_info
        details = "; ".join(
            f"layer {info['layer']}: max|param|={info['max_abs_param']:.3g}, "
            f"finite_grad={info['finite_grad']}" for info in layer_info)
        super().__init__(f"Training diverged at iteration {iteration} ({details})")


@dataclass
class RunResult:
    seed: int
    records: List[DiagnosticsRecord]
    network: Network
    metrics_path: Optional[Path] = None
    checkpoint_path: Optional[Path] = None

    @property
    def accuracy_history(self) -> List[float]:
        return [r.hard_acc_test for r in self.records]

    @property
    def last10(self) -> float:
        return last10(self.accuracy_history)

    @property
    def best(self) -> float:
        return best(self.accuracy_history)


def make_streams(seed: int) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


def _layer_info(network: Network, grads: Optional[List[np.ndarray]]) -> List[Dict]:
    info = []
    for layer, raw in enumerate(network.params):
        info.append({
            "layer": layer,
            "max_abs_param": float(np.max(np.abs(raw))) if np.all(np.isfinite(raw)) else float("inf"),
            "finite_grad": bool(grads is None or np.all(np.isfinite(grads[layer]))),
        })
    return info


def metrics_path_for(output_dir, seed: int) -> Path:
    return Path(output_dir) / f"metrics_seed{seed}.csv"


def checkpoint_path_for(output_dir, seed: int) -> Path:
    return Path(output_dir) / f"checkpoint_seed{seed}.ckpt"


def train(run_config: RunConfig, dataset: EncodedDataset, seed: int,
          output_dir: Optional[str] = None, resume: Optional[str] = None,
          iters: Optional[int] = None, progress: bool = True) -> RunResult:
    """
    Train one seed.

    Args:
        run_config: Validated run configuration
        dataset: Binary dataset
        seed: Run seed (init, batches, noise, probe)
        output_dir: Where metrics CSV and checkpoint go (None keeps results in memory)
        resume: Checkpoint to continue from
        iters: Stop after this iteration (defaults to run_config.iters)
        progress: Show a tqdm bar

    Returns:
        RunResult with one DiagnosticsRecord per evaluation checkpoint

    Raises:
        DivergenceError: non-finite loss or gradients
    """
    iters = run_config.iters if iters is None else iters
    config = run_config.network_config(dataset.input_dim, dataset.classes)
    streams = make_streams(seed)

    network = Network(config, rng=streams["init"])
    n_train = len(dataset.train_y)
    probe = dataset.train_x[streams["probe"].integers(0, n_train, size=run_config.probe_size)]

    adam = AdamState.zeros_like(network.params, lr=run_config.lr, beta1=run_config.beta1,
                                beta2=run_config.beta2, eps=run_config.eps)
    records: List[DiagnosticsRecord] = []
    start = 0

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if NetworkConfig.from_dict(ckpt.network_config) != config:
            raise ValueError(f"Checkpoint {resume} was written for a different network configuration")
        network = Network(config, params=ckpt.params, wiring=ckpt.wiring)
        adam = ckpt.adam
        streams = {name: restore_generator(state) for name, state in ckpt.rng_states.items()}
        records = [_record_from_row(row, config.depth) for row in ckpt.metrics_rows]
        start = ckpt.iteration
        logger.info(f"Resuming seed {seed} from iteration {start}")

    window = GradWindow(config.depth)
    track_grads = config.method in COEFFICIENT_METHODS
    basis = run_config.ste_basis if config.method == Method.MULTILINEAR_STE else None

    out = Path(output_dir) if output_dir else None
    metrics_path = metrics_path_for(out, seed) if out else None
    ckpt_path = checkpoint_path_for(out, seed) if out else None

    loss = float("nan")
    bar = tqdm(range(start + 1, iters + 1), desc=f"seed {seed}", disable=not progress,
               initial=start, total=iters, leave=False)
    for it in bar:
        idx = streams["batches"].integers(0, n_train, size=run_config.batch_size)
        x = dataset.train_x[idx].astype(np.float32)
        y = dataset.train_y[idx]

        _, logits, caches = network.forward(x, mode="train", rng=streams["gumbel"], basis=basis)
        loss, dlogits = cross_entropy(logits, y)
        if not np.isfinite(loss):
            raise DivergenceError(it, _layer_info(network, None))

        grads = network.backward(caches, dlogits.astype(np.float32))
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise DivergenceError(it, _layer_info(network, grads))
        if track_grads:
            window.add(grads)
        adam_step(adam, network.params, grads)

        if it % run_config.eval_every == 0 or it == iters:
            record = compute_record(network, dataset, probe, it, loss,
                                    grad_window=window if track_grads else None,
                                    eval_rng=streams["eval"])
            records.append(record)
            window.reset()
            bar.set_postfix(loss=f"{loss:.4f}", hard=f"{record.hard_acc_test:.4f}")
            logger.info(f"seed {seed} iter {it}: loss {loss:.4f}, hard test {record.hard_acc_test:.4f}, "
                        f"DG {record.dg:+.4f}")

            if out is not None:
                write_metrics(records, metrics_path)
                save_checkpoint(ckpt_path, Checkpoint(
                    run_config=run_config.to_dict(),
                    network_config=config.to_dict(),
                    seed=seed,
                    iteration=it,
                    params=network.params,
                    wiring=network.wiring,
                    adam=adam,
                    rng_states={name: generator_state(rng) for name, rng in streams.items()},
                    metrics_rows=[r.to_row() for r in records],
                    dataset={"name": dataset.name, "input_dim": dataset.input_dim,
                             "classes": dataset.classes},
                ))
    bar.close()

    return RunResult(seed=seed, records=records, network=network,
                     metrics_path=metrics_path, checkpoint_path=ckpt_path)


def write_metrics(records: List[DiagnosticsRecord], path) -> None:
    atomic_write_csv(pd.DataFrame([r.to_row() for r in records]), path)


def _record_from_row(row: Dict, depth: int) -> DiagnosticsRecord:
    return DiagnosticsRecord(
        iter=int(row["iter"]),
        loss=row["loss"],
        hard_acc_test=row["hard_acc_test"],
        hard_acc_train=row["hard_acc_train"],
        train_forward_acc=row["train_forward_acc"],
        entropy=[row[f"entropy_l{i}"] for i in range(depth)],
        survival=[row[f"survival_l{i}"] for i in range(depth)],
        grad_ratio_cab_c0=row["grad_ratio"],
        commitment_std_cab=row["commitment"],
        gate_class_counts=[
            {c.value: int(row[f"{c.value}_l{i}"]) for c in GateClass} for i in range(depth)
        ],
    )


def summarize(results: List[RunResult]) -> Dict:
    """Last-10 and best accuracies across seeds (std uses ddof=1 for 2+ seeds)."""
    last = np.array([r.last10 for r in results])
    top = np.array([r.best for r in results])
    dg = np.array([r.records[-1].dg for r in results])
    ddof = 1 if len(results) > 1 else 0
    return {
        "seeds": len(results),
        "last10_mean": float(last.mean()),
        "last10_std": float(last.std(ddof=ddof)),
        "best_mean": float(top.mean()),
        "best_std": float(top.std(ddof=ddof)),
        "final_dg_mean": float(dg.mean()),
    }


def train_seeds(run_config: RunConfig, dataset: EncodedDataset,
                output_dir: Optional[str] = None, progress: bool = True) -> Dict:
    """
    Train every seed of a run configuration and summarize.

    Returns:
        Dictionary with 'results' (per-seed RunResult) and 'summary'
    """
    results = []
    for seed in run_config.seeds:
        results.append(train(run_config, dataset, seed, output_dir=output_dir, progress=progress))

    summary = summarize(results)
    if output_dir:
        rows = [{"seed": r.seed, "last10": r.last10, "best": r.best,
                 "final_dg": r.records[-1].dg, "final_gen": r.records[-1].gen} for r in results]
        atomic_write_csv(pd.DataFrame(rows), Path(output_dir) / "summary.csv")
    return {"results": results, "summary": summary}


def restore_network(ckpt: Checkpoint) -> Network:
    """Rebuild the network stored in a checkpoint."""
    config = NetworkConfig.from_dict(ckpt.network_config)
    return Network(config, params=ckpt.params, wiring=ckpt.wiring)
