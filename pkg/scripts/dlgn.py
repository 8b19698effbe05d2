"""
dlgn.py

Command-line entry point for training, verifying, exporting and evaluating
deep logic gate networks.

Subcommands:
- train:         train one configuration over its seeds, write metrics and checkpoints
- verify:        run the property suite (optionally with an injected codebook fault)
- export:        snap a checkpoint to a netlist
- run-circuit:   evaluate a netlist bit-packed on a dataset split
- diagnose:      recompute the diagnostics row of a checkpoint
- sweep:         run a grid over depth, width or tau
- basis-metrics: coverage / coherence / bias of backward bases

Exit codes: 0 ok, 1 property/accuracy failure or runtime error, 2 usage or
configuration error.
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from checkpoint import CheckpointError, load_checkpoint
from circuit import NetlistError, export, predict, read_netlist, write_netlist, write_predictions
from data import DatasetError, EncodedDataset, load_dataset
from diagnostics import compute_record, evaluate, fit_width_power_law, gate_histogram
from file_utils import atomic_write_csv
from gate_types import parse_basis
from run_config import ConfigError, RunConfig, build_run_config
from trainers import basis_metrics
from training import DivergenceError, make_streams, restore_network, train, train_seeds
from verify import FAULTS, run_property_suite

logger = logging.getLogger("dlgn")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

SWEEP_DEFAULTS = {
    "depth": [3, 6, 9, 12],
    "tau": [0.1, 0.3, 0.5, 1.0, 2.0, 5.0, 10.0],
    "width": None,
}

DEFAULT_BASES = ["canonical", "walsh", "smoothed:0.2", "expected_value", "uniform"]


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="[%(levelname)s] %(message)s")


def banner(title: str) -> None:
    print("=" * 60)
    print(title)
    print("=" * 60)


# --- argument groups ------------------------------------------------------

def add_run_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags that override RunConfig keys; None means 'not given'."""
    parser.add_argument("--config", type=str, help="Config file (key = value, or .yaml)")
    parser.add_argument("--dataset", type=str, help="mnist, monks2, csv, parity or single_gate")
    parser.add_argument("--dataset-path", type=str, help="Dataset directory (relative to $DLGN_DATA_ROOT)")
    parser.add_argument("--method", type=str, help="Training method (covjac, ste, softmix, gumbel_st, ...)")
    parser.add_argument("--L", "--depth", dest="depth", type=int, help="Number of gate layers")
    parser.add_argument("--k", "--width", dest="width", type=int, help="Gates per layer")
    parser.add_argument("--tau", type=float, help="Soft-VQ temperature")
    parser.add_argument("--sigma", dest="init_sigma", type=float, help="Init std of raw parameters")
    parser.add_argument("--iters", type=int, help="Training iterations")
    parser.add_argument("--batch-size", type=int, help="Minibatch size")
    parser.add_argument("--eval-every", type=int, help="Iterations between evaluation checkpoints")
    parser.add_argument("--lr", type=float, help="Adam learning rate")
    parser.add_argument("--seeds", type=int, nargs="+", help="Run seeds")
    parser.add_argument("--ste-basis", type=str, help="STE backward basis (canonical, walsh, smoothed:EPS, affine:A,B, ...)")
    parser.add_argument("--wiring", dest="wiring_scheme", type=str, help="stride or random")
    parser.add_argument("--wiring-seed", type=int, help="Seed of random wiring")
    parser.add_argument("--parity-bits", type=int, help="Bits of the parity task")
    parser.add_argument("--gate", dest="target_gate", type=str, help="Target gate of the single_gate task")
    parser.add_argument("--thermometer-levels", type=int, help="Thermometer thresholds (MNIST), 0 = threshold 0.5")
    parser.add_argument("--label-column", type=str, help="Label column of csv datasets")
    parser.add_argument("--output-dir", type=str, help="Directory for metrics, checkpoints and summaries")
    parser.add_argument("--probe-size", type=int, help="Probe batch size for signal survival")
    parser.add_argument("--workers", type=int, help="Worker threads/processes")
    parser.add_argument("--deterministic", action="store_true", default=None,
                        help="Strict single-worker mode (overrides --workers)")


RUN_KEYS = ("dataset", "dataset_path", "method", "depth", "width", "tau", "init_sigma", "iters",
            "batch_size", "eval_every", "lr", "seeds", "ste_basis", "wiring_scheme", "wiring_seed",
            "parity_bits", "target_gate", "thermometer_levels", "label_column", "output_dir",
            "probe_size", "workers", "deterministic")


def run_config_from_args(args) -> RunConfig:
    overrides = {key: getattr(args, key, None) for key in RUN_KEYS}
    return build_run_config(getattr(args, "config", None), overrides)


def dataset_for(run_config: RunConfig) -> EncodedDataset:
    return load_dataset(run_config.dataset, run_config.dataset_path,
                        parity_bits=run_config.parity_bits, target_gate=run_config.target_gate,
                        thermometer_levels=run_config.thermometer_levels,
                        label_column=run_config.label_column)


def checkpoint_run_config(ckpt, args=None) -> RunConfig:
    """RunConfig stored in a checkpoint, with dataset and worker flags from the command line applied."""
    stored = dict(ckpt.run_config)
    if args is not None:
        for key in ("dataset", "dataset_path", "parity_bits", "target_gate",
                    "thermometer_levels", "label_column", "workers", "deterministic"):
            value = getattr(args, key, None)
            if value is not None:
                stored[key] = value
    return build_run_config(overrides=stored)


def print_record(record) -> None:
    print(f"  iteration:          {record.iter}")
    print(f"  hard acc (test):    {record.hard_acc_test:.4f}")
    print(f"  hard acc (train):   {record.hard_acc_train:.4f}")
    print(f"  train-forward acc:  {record.train_forward_acc:.4f}")
    print(f"  DG:                 {record.dg:+.4f}")
    print(f"  Gen:                {record.gen:+.4f}")
    print(f"  entropy per layer:  {', '.join(f'{v:.3f}' for v in record.entropy)}")
    print(f"  survival per layer: {', '.join(f'{v:.3f}' for v in record.survival)}")
    ratio = "n/a" if record.grad_ratio_cab_c0 is None else f"{record.grad_ratio_cab_c0:.3f}"
    print(f"  grad ratio cab/c0:  {ratio}")
    print(f"  commitment std cab: {record.commitment_std_cab:.4f}")


# --- subcommands ----------------------------------------------------------

def cmd_train(args) -> int:
    run_config = run_config_from_args(args)
    banner("DLGN: Train")
    dataset = dataset_for(run_config)
    print(f"Dataset: {dataset.summary()}")
    print(f"Method: {run_config.method.value}  L={run_config.depth}  k={run_config.width}  "
          f"tau={run_config.tau:g}  iters={run_config.iters}  seeds={run_config.seeds}")
    print()

    if args.resume:
        if len(run_config.seeds) != 1:
            raise ConfigError("--resume needs exactly one seed", key="seeds")
        result = train(run_config, dataset, run_config.seeds[0], output_dir=run_config.output_dir,
                       resume=args.resume, progress=not args.quiet)
        summary = {"seeds": 1, "last10_mean": result.last10, "last10_std": 0.0,
                   "best_mean": result.best, "best_std": 0.0, "final_dg_mean": result.records[-1].dg}
    else:
        summary = train_seeds(run_config, dataset, output_dir=run_config.output_dir,
                              progress=not args.quiet)["summary"]

    print()
    print(f"✓ Last-10 hard accuracy: {summary['last10_mean'] * 100:.2f} ± {summary['last10_std'] * 100:.2f}")
    print(f"✓ Best checkpoint accuracy: {summary['best_mean'] * 100:.2f} ± {summary['best_std'] * 100:.2f}")
    print(f"  Final DG (mean over seeds): {summary['final_dg_mean'] * 100:+.2f}pp")
    print(f"  Outputs in: {run_config.output_dir}")
    return EXIT_OK


def cmd_verify(args) -> int:
    banner("DLGN: Property Verification")
    if args.fault:
        print(f"Injected fault: {args.fault}")
        print()

    results = run_property_suite(fault=args.fault, seed=args.seed, quick=args.quick)
    failures = 0
    for result in results:
        mark = "✓" if result.passed else "❌"
        exact = " [exact]" if result.exact else ""
        print(f"{mark} {result.name}{exact}")
        print(f"    anchor: {result.anchor}")
        print(f"    {result.detail}")
        failures += not result.passed

    print()
    if failures:
        print(f"❌ {failures} of {len(results)} properties FAILED")
        return EXIT_FAILURE
    print(f"✓ All {len(results)} properties passed")
    return EXIT_OK


def cmd_export(args) -> int:
    banner("DLGN: Export Netlist")
    ckpt = load_checkpoint(args.checkpoint)
    network = restore_network(ckpt)
    circuit = export(network)
    write_netlist(circuit, args.output)

    counts = gate_histogram(circuit.gates)
    print(f"✓ Netlist saved to: {args.output}")
    for layer, layer_counts in enumerate(counts):
        classes = ", ".join(f"{name}={n}" for name, n in layer_counts["classes"].items())
        print(f"  layer {layer}: {classes}")
    return EXIT_OK


def cmd_run_circuit(args) -> int:
    banner("DLGN: Run Circuit")
    circuit = read_netlist(args.netlist)
    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None

    if ckpt is not None:
        run_config = checkpoint_run_config(ckpt, args)
    else:
        run_config = run_config_from_args(args)
    dataset = dataset_for(run_config)
    features, labels = dataset.split(args.split)

    if features.shape[1] != circuit.input_dim:
        raise ValueError(f"Dimension mismatch: circuit input_dim={circuit.input_dim}, "
                         f"dataset {dataset.name} has {features.shape[1]} features")

    predictions = predict(circuit, features, workers=run_config.effective_workers)
    hard_acc = float(np.mean(predictions == labels))
    print(f"✓ Hard accuracy ({args.split}, {len(labels)} samples): {hard_acc * 100:.2f}%")

    if args.predictions:
        write_predictions(args.predictions, predictions)
        print(f"✓ Predictions saved to: {args.predictions}")

    if ckpt is not None:
        network = restore_network(ckpt)
        eval_rng = make_streams(ckpt.seed)["eval"]
        forward_acc = evaluate(network, features, labels, mode="train", rng=eval_rng)
        print(f"  Train-forward accuracy: {forward_acc * 100:.2f}%")
        print(f"  DG: {(forward_acc - hard_acc) * 100:+.2f}pp")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    banner("DLGN: Diagnose Checkpoint")
    ckpt = load_checkpoint(args.checkpoint)
    run_config = checkpoint_run_config(ckpt, args)
    dataset = dataset_for(run_config)
    network = restore_network(ckpt)

    streams = make_streams(ckpt.seed)
    probe = dataset.train_x[streams["probe"].integers(0, len(dataset.train_y), size=run_config.probe_size)]
    loss = ckpt.metrics_rows[-1]["loss"] if ckpt.metrics_rows else float("nan")
    record = compute_record(network, dataset, probe, ckpt.iteration, loss, eval_rng=streams["eval"])

    print(f"Checkpoint: {args.checkpoint} ({run_config.method.value}, seed {ckpt.seed})")
    print_record(record)
    for layer, counts in enumerate(gate_histogram(network.gate_ids())):
        used = {name: n for name, n in counts["gates"].items() if n}
        print(f"  layer {layer} gates: {used}")
    return EXIT_OK


def _run_sweep_cell(job) -> List[Dict]:
    axis, value, run_config, output_dir = job
    dataset = dataset_for(run_config)
    outcome = train_seeds(run_config, dataset, output_dir=output_dir, progress=False)
    rows = []
    for result in outcome["results"]:
        rows.append({"axis": axis, "value": value, "seed": result.seed,
                     "last10": result.last10, "best": result.best,
                     "final_dg": result.records[-1].dg, "final_gen": result.records[-1].gen})
    return rows


def cmd_sweep(args) -> int:
    base = run_config_from_args(args)
    values = args.values or SWEEP_DEFAULTS[args.axis]
    if not values:
        raise ConfigError(f"--values is required for the {args.axis} axis", key="values")

    banner(f"DLGN: Sweep over {args.axis}")
    jobs = []
    for value in values:
        typed = float(value) if args.axis == "tau" else int(value)
        cell = base.replace(**{args.axis: typed})
        jobs.append((args.axis, typed, cell, str(Path(base.output_dir) / f"{args.axis}_{typed:g}")))

    workers = base.effective_workers
    progress = dict(total=len(jobs), desc=f"sweep {args.axis}", disable=args.quiet)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(tqdm(pool.map(_run_sweep_cell, jobs), **progress))
    else:
        cells = [_run_sweep_cell(job) for job in tqdm(jobs, **progress)]

    df = pd.DataFrame([row for rows in cells for row in rows])
    out = Path(base.output_dir) / f"sweep_{args.axis}.csv"
    atomic_write_csv(df, out)

    table = df.groupby("value")["last10"].agg(["mean", "std"]).reset_index()
    print(table.to_string(index=False))
    print(f"✓ Sweep results saved to: {out}")

    if args.axis == "width" and len(table) >= 2:
        percent = table["mean"].to_numpy() * 100
        if np.all(percent < 100):
            alpha, scale = fit_width_power_law(table["value"].to_numpy(), percent)
            print(f"  Power-law fit A(k) = 100 - B*k^-alpha: alpha={alpha:.3f}, B={scale:.3f}")
        else:
            logger.warning("Power-law fit skipped: a width reached 100% accuracy")
    return EXIT_OK


def cmd_basis_metrics(args) -> int:
    banner("DLGN: Backward Basis Metrics")
    rows = []
    for text in args.basis or DEFAULT_BASES:
        spec = parse_basis(text)
        try:
            rho, kappa, bias = basis_metrics(spec)
            rows.append({"basis": spec.label(), "rho": rho, "kappa": kappa, "B": bias, "note": ""})
        except ValueError as e:
            rows.append({"basis": spec.label(), "rho": None, "kappa": None, "B": None,
                         "note": f"degenerate: {e}"})
    print(pd.DataFrame(rows).to_string(index=False))
    return EXIT_OK


# --- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Train, verify, export and evaluate deep logic gate networks.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # MONK's-2 with the covariance-Jacobian method:
  python dlgn.py train --dataset monks2 --method covjac --k 136 --L 6 --iters 10000

  # STE with the Walsh backward basis:
  python dlgn.py train --method multilinear_ste --ste-basis walsh

  # Property suite, then with a codebook sign flip injected:
  python dlgn.py verify
  python dlgn.py verify --fault sign_flip

  # Deploy and evaluate:
  python dlgn.py export --checkpoint runs/checkpoint_seed0.ckpt --output model.net
  python dlgn.py run-circuit --netlist model.net --checkpoint runs/checkpoint_seed0.ckpt

  # Temperature sweep:
  python dlgn.py sweep --axis tau --dataset parity --iters 5000
        """
    )
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train a configuration over its seeds")
    add_run_arguments(p)
    p.add_argument("--resume", type=str, help="Continue from a checkpoint (single seed)")
    p.add_argument("--quiet", action="store_true", help="No progress bar")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="Run the property suite")
    p.add_argument("--fault", choices=FAULTS, help="Inject a codebook fault")
    p.add_argument("--seed", type=int, default=0, help="Monte Carlo seed (default: 0)")
    p.add_argument("--quick", action="store_true", help="Fewer random networks and circuits")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export", help="Snap a checkpoint to a netlist")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--output", type=str, required=True, help="Netlist path")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("run-circuit", help="Evaluate a netlist bit-packed")
    add_run_arguments(p)
    p.add_argument("--netlist", type=str, required=True)
    p.add_argument("--checkpoint", type=str, help="Checkpoint for the dataset spec and DG")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--predictions", type=str, help="Write sample_index,predicted_class CSV")
    p.set_defaults(func=cmd_run_circuit)

    p = sub.add_parser("diagnose", help="Recompute diagnostics of a checkpoint")
    add_run_arguments(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="Grid over depth, width or tau")
    add_run_arguments(p)
    p.add_argument("--axis", choices=sorted(SWEEP_DEFAULTS), required=True)
    p.add_argument("--values", nargs="+", type=float, help="Grid values (defaults per axis)")
    p.add_argument("--quiet", action="store_true", help="No progress bar")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("basis-metrics", help="Coverage/coherence/bias of backward bases")
    p.add_argument("--basis", nargs="+", help="Bases (default: canonical walsh smoothed:0.2 expected_value uniform)")
    p.set_defaults(func=cmd_basis_metrics)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        return args.func(args)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}")
        return EXIT_USAGE
    except (DatasetError, NetlistError, CheckpointError, DivergenceError, ValueError, OSError) as e:
        print(f"❌ {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
