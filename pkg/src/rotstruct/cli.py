"""Command-line interface.

Subcommands cover the full workflow: synthesize a dataset, simulate an
observation from a geometry, run the substitution analysis, train the
diffusion model, sample ranked structures, run the GA baseline, and score
predictions against a reference geometry. Every command takes an explicit
``--seed`` and is deterministic given it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import denoiser, diffusion, evaluate, ga, io, train
from .dataset import random_dataset
from .geom import Molecule, align_to_pas
from .kraitchman import SubstitutionTable
from .subspace import MassWeights


def _load_json(path):
    return json.loads(Path(path).read_text())


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _ranked_name(rank: int) -> str:
    return f"rank_{rank:03d}.xyz"


def cmd_gen_dataset(args) -> int:
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mols = random_dataset(rng, args.count, args.atoms)
    for i, mol in enumerate(mols):
        io.write_xyz(out / f"molecule_{i:03d}.xyz", mol, comment=f"synthetic {i}")
    print(f"wrote {len(mols)} molecules to {out}")
    return 0


def cmd_simulate(args) -> int:
    mol = io.read_xyz(args.xyz)
    aligned = align_to_pas(mol).aligned_molecule()
    rng = np.random.default_rng(args.seed)
    doc = io.simulate_observation(aligned, noise=args.noise, rng=rng)
    io.save_observation(args.out, doc)
    print(f"wrote observation with {len(doc['isotopologues'])} isotopologues to {args.out}")
    return 0


def cmd_kraitchman(args) -> int:
    obs = io.load_observation(args.observation)
    doc = {
        "planar_moments_amu_A2": obs.planar_moments.as_array().tolist(),
        "elements": [io.symbol_for(int(z)) for z in obs.atomic_numbers],
        "unsigned_coordinates_angstrom": obs.table.values.tolist(),
        "mask": obs.table.mask.astype(int).tolist(),
    }
    _write_json(args.out, doc)
    print(f"wrote substitution table for {obs.n_atoms} atoms to {args.out}")
    return 0


def _dataset_molecules(directory) -> list[Molecule]:
    paths = sorted(Path(directory).glob("*.xyz"))
    if not paths:
        raise SystemExit(f"no .xyz files in {directory}")
    return [io.read_xyz(p) for p in paths]


def cmd_train(args) -> int:
    molecules = _dataset_molecules(args.dataset)
    if args.resume:
        doc = io.load_checkpoint(args.resume)
        state, cfg = train.checkpoint_to_state(doc)
    else:
        overrides = _load_json(args.config) if args.config else {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.steps is not None:
            overrides["steps"] = args.steps
        cfg = train.TrainConfig.from_dict(overrides)
        state = None
    state = train.train(
        molecules, cfg, state=state, steps=args.steps, log_every=args.log_every
    )
    io.save_checkpoint(args.out, train.state_to_checkpoint(state, cfg))
    recent = float(np.mean(state.losses[-50:])) if state.losses else float("nan")
    print(f"step {state.step}, recent loss {recent:.4f}; checkpoint at {args.out}")
    return 0


def sample_structures(
    checkpoint: dict,
    obs: io.Observation,
    k: int,
    seed: int,
    *,
    use_ema: bool = True,
) -> tuple[list[Molecule], np.ndarray, np.ndarray]:
    """Draw K structures and rank them by deviation from the observation."""
    config = denoiser.ModelConfig(**checkpoint["model_config"])
    scaling = denoiser.FeatureScaling(**checkpoint["feature_scaling"])
    sched = diffusion.make_schedule(**checkpoint["schedule"])
    params = checkpoint["ema_params" if use_ema else "params"]
    mol = Molecule(obs.atomic_numbers, obs.masses, np.zeros((obs.n_atoms, 3)))
    cond = denoiser.build_conditioning(mol, obs.table, obs.planar_moments, scaling)
    w = MassWeights.from_masses(obs.masses)

    def denoise(z, c, t):
        return denoiser.denoise_eps(
            params, z, c, t, config, w, t_max=sched.t_max, scaling=scaling
        )

    children = [np.random.default_rng([seed, i]) for i in range(k)]
    noise = diffusion.PerSampleNoise(children)
    xs = diffusion.sample(denoise, cond, w, sched, noise, n_samples=k)
    samples = [mol.with_positions(xs[i]) for i in range(k)]
    order, scores = evaluate.rank_by_deviation(samples, obs.table)
    return samples, order, scores


def _write_ranked(out_dir, samples, order, scores, extra_rows=None) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rank, (idx, score) in enumerate(zip(order, scores), start=1):
        name = _ranked_name(rank)
        io.write_xyz(out / name, samples[int(idx)],
                     comment=f"rank {rank} deviation {score:.6e}")
        row = {
            "rank": rank,
            "file": name,
            "sample_index": int(idx),
            "deviation_score": float(score),
        }
        if extra_rows:
            row.update(extra_rows[int(idx)])
        rows.append(row)
    with open(out / "ranking.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return rows


def cmd_sample(args) -> int:
    checkpoint = io.load_checkpoint(args.checkpoint)
    obs = io.load_observation(args.observation)
    samples, order, scores = sample_structures(
        checkpoint, obs, args.k, args.seed, use_ema=not args.no_ema
    )
    _write_ranked(args.out, samples, order, scores)
    print(f"wrote {len(samples)} ranked structures to {args.out}")
    return 0


def _ga_instance(obs: io.Observation) -> ga.GaInstance:
    heavy = obs.atomic_numbers > 1
    table = SubstitutionTable(
        values=obs.table.values[heavy], mask=obs.table.mask[heavy]
    )
    return ga.GaInstance(
        elements=obs.atomic_numbers[heavy],
        masses=obs.masses[heavy],
        table=table,
        moments=obs.planar_moments,
    )


def cmd_ga(args) -> int:
    obs = io.load_observation(args.observation)
    instance = _ga_instance(obs)
    if args.histogram and Path(args.histogram).exists():
        hist = ga.DistanceHistogram.from_dict(_load_json(args.histogram))
    elif args.corpus:
        hist = ga.build_histogram(_dataset_molecules(args.corpus))
        if args.histogram:
            _write_json(args.histogram, hist.to_dict())
    else:
        raise SystemExit("need --histogram (existing) or --corpus to build one")
    overrides = _load_json(args.config) if args.config else {}
    cfg = ga.GaConfig(**overrides)
    rng = np.random.default_rng(args.seed)
    frameworks = ga.evolve(instance, cfg, hist, rng, k_best=args.k)

    n_h = int(obs.formula.get("H", 0))
    samples, extras = [], []
    for fw in frameworks:
        elems, pos, score = ga.decorate_hydrogens(
            instance.elements, fw.positions, n_h, cfg, rng
        )
        masses = np.concatenate([instance.masses, np.full(n_h, io.mass_for(1))])
        samples.append(Molecule(elems, masses, pos))
        extras.append({
            "ga_badness": fw.badness,
            "moment_error": fw.moment_error,
            "com_error": fw.com_error,
            "pairwise_nll": fw.pairwise_nll,
            "decoration_score": score,
        })
    order, scores = evaluate.rank_by_deviation(samples, obs.table)
    _write_ranked(args.out, samples, order, scores, extra_rows=extras)
    print(f"wrote {len(samples)} GA structures to {args.out}")
    return 0


def evaluate_predictions(pred_dir, truth_path, ks=(1, 5)) -> dict:
    truth = align_to_pas(io.read_xyz(truth_path)).aligned_molecule()
    heavy_truth = _heavy_only(truth)
    rows = []
    for path in sorted(Path(pred_dir).glob("*.xyz")):
        pred = align_to_pas(io.read_xyz(path)).aligned_molecule()
        report = evaluate.min_rmsd_over_reflections(pred, truth)
        heavy_report = evaluate.min_rmsd_over_reflections(_heavy_only(pred), heavy_truth)
        rows.append({
            "file": path.name,
            "rmsd_angstrom": report.rmsd,
            "heavy_rmsd_angstrom": heavy_report.rmsd,
            "reflection": list(report.reflection),
            "connectivity_correct": bool(report.connectivity_correct),
            "heavy_connectivity_correct": bool(report.heavy_connectivity_correct),
        })
    if not rows:
        raise SystemExit(f"no .xyz predictions in {pred_dir}")
    aggregate = {}
    for k in ks:
        top = rows[:k]
        aggregate[f"top_{k}"] = {
            "connectivity_correct": any(r["connectivity_correct"] for r in top),
            "heavy_connectivity_correct": any(
                r["heavy_connectivity_correct"] for r in top
            ),
            "min_rmsd_angstrom": min(r["rmsd_angstrom"] for r in top),
            "min_heavy_rmsd_angstrom": min(r["heavy_rmsd_angstrom"] for r in top),
        }
    return {"samples": rows, "aggregate": aggregate}


def _heavy_only(mol: Molecule) -> Molecule:
    heavy = mol.atomic_numbers > 1
    if heavy.all():
        return mol
    return Molecule(mol.atomic_numbers[heavy], mol.masses[heavy], mol.positions[heavy])


def cmd_evaluate(args) -> int:
    report = evaluate_predictions(args.predictions, args.truth)
    _write_json(args.out, report)
    top1 = report["aggregate"]["top_1"]
    print(
        f"top-1: connectivity={top1['connectivity_correct']} "
        f"rmsd={top1['min_rmsd_angstrom']:.4f} A; report at {args.out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotstruct",
        description="3D structure determination from rotational spectroscopy",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="generate synthetic molecules")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--atoms", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("simulate", help="observation file from a geometry")
    p.add_argument("xyz")
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=0.0,
                   help="relative noise on constants (e.g. 1e-7)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kraitchman", help="unsigned coordinates from an observation")
    p.add_argument("observation")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_kraitchman)

    p = sub.add_parser("train", help="train the diffusion model")
    p.add_argument("dataset", help="directory of .xyz files")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON overrides for the training config")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample ranked structures from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("observation")
    p.add_argument("--out", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-ema", action="store_true",
                   help="sample with raw weights instead of the EMA")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("ga", help="genetic-algorithm baseline")
    p.add_argument("observation")
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", help="directory of .xyz files for the histogram")
    p.add_argument("--histogram", help="histogram JSON to load or save")
    p.add_argument("--config", help="JSON overrides for the GA config")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ga)

    p = sub.add_parser("evaluate", help="score predictions against a reference")
    p.add_argument("predictions", help="directory of ranked .xyz predictions")
    p.add_argument("truth", help="reference .xyz")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
