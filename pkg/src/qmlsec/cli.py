"""Command-line entry point: ``qmlsec <group> <command> [options]``.

Every command writes its artifacts into ``--out`` together with a
``run_manifest.json`` describing the command, its resolved configuration,
seeds and artifact paths.  Outputs are never overwritten without ``--force``.
Exit status: 0 success, 1 validation or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cae import CaeConfig, cae_encode_dataset, cae_train, load_cae, save_cae
from .data import (
    CLASS_NAMES, generate_synthetic_defects, load_image_directory, load_manifest_set, read_latent_csv,
    read_manifest, remap_labels, save_image_set, split_indices, write_latent_csv, write_manifest,
)
from .noise import BUILTIN_DEVICES, DeviceProfile, builtin_device, ideal_device, load_device, run_noisy_counts
from .pipeline import PipelineConfig, accuracy_table, prepare_latents, run_experiments
from .qnn import (
    HEADS, LOSSES, OPTIMIZERS, TrainConfig, evaluate_qnn, gradient_finite_difference, gradient_parameter_shift,
    init_model, load_model, relative_error, save_model, train_qnn, write_history,
)
from .security import (
    DUMMY_KINDS, PUF_VARIANTS, RANK_MODES, SPLIT_POLICIES, SecurityKey, allocate_with_buffers, bell_circuit,
    insert_dummy_gates, load_fragments, qupuf_signature, rank_insertion_points, recombine_circuit,
    restore_circuit, save_fragments, simulate_fault_injection, split_circuit, write_signature_csv,
)
from .simcore import format_circuit, parse_circuit, probabilities, run_circuit, total_variation_distance

GRADCHECK_TOLERANCE = 1e-5


class CommandError(Exception):
    """Validation failure reported as a one-line diagnostic with exit status 1."""


# ---- helpers ---------------------------------------------------------------

class Outputs:
    """Collects artifact paths under one directory and refuses to clobber them."""

    def __init__(self, directory, force: bool):
        self.root = Path(directory)
        self.force = force
        self.paths = []

    def path(self, name: str) -> Path:
        p = self.root / name
        if p.exists() and not self.force:
            raise CommandError(f"{p} exists; pass --force to overwrite")
        self.paths.append(p)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def manifest(self, command: str, args: argparse.Namespace, seeds: dict) -> None:
        config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "force", "out", "config")}
        doc = {
            "command": command,
            "version": __version__,
            "config": config,
            "seeds": seeds,
            "artifacts": sorted(p.relative_to(self.root).as_posix() for p in self.paths),
        }
        self.write_json("run_manifest.json", doc)


def _device(spec: str) -> DeviceProfile:
    if spec in BUILTIN_DEVICES:
        return builtin_device(spec)
    if spec.startswith("ideal:"):
        return ideal_device(int(spec.split(":", 1)[1]))
    if not Path(spec).is_file():
        raise CommandError(f"device {spec!r} is neither a built-in profile ({', '.join(BUILTIN_DEVICES)}) nor a file")
    return load_device(spec)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip() != ""]
    except ValueError:
        raise CommandError(f"expected a comma-separated integer list, got {text!r}") from None


def _float_list(text):
    if text is None:
        return None
    try:
        return [float(x) for x in str(text).split(",") if x.strip() != ""]
    except ValueError:
        raise CommandError(f"expected a comma-separated number list, got {text!r}") from None


def _read_circuit(path):
    return parse_circuit(Path(path).read_text())


def _select_classes(X, y, classes):
    if not classes:
        return X, y
    mask = np.isin(y, classes)
    return X[mask], remap_labels(y[mask], classes)


# ---- dataset ---------------------------------------------------------------

def cmd_dataset_gen(args, out: Outputs):
    data = generate_synthetic_defects(args.per_class, args.seed)
    _save_set(data, out)
    out.manifest("dataset gen", args, {"seed": args.seed})


def _save_set(data, out: Outputs):
    for i, lab in enumerate(data.labels):
        out.path(f"{CLASS_NAMES[lab]}/{i:06d}.pgm")
    out.path("manifest.csv")
    save_image_set(data, out.root)


def cmd_dataset_ingest(args, out: Outputs):
    data = load_image_directory(args.input)
    _save_set(data, out)
    out.manifest("dataset ingest", args, {})


def cmd_dataset_split(args, out: Outputs):
    manifest = Path(args.manifest)
    rows = read_manifest(manifest)
    if not rows:
        raise CommandError(f"{manifest}: empty manifest")
    labels = [lab for _, lab in rows]
    first, second = split_indices(labels, args.fraction, args.seed)
    for name, idx in (("train.csv", first), ("holdout.csv", second)):
        target = out.path(name)
        rel = [(os.path.relpath(manifest.parent / rows[i][0], target.parent), rows[i][1]) for i in idx]
        write_manifest([(Path(p).as_posix(), lab) for p, lab in rel], target)
    out.manifest("dataset split", args, {"seed": args.seed})


# ---- cae -------------------------------------------------------------------

def cmd_cae_train(args, out: Outputs):
    data = load_manifest_set(args.manifest)
    cfg = CaeConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                    d=args.d, filters=tuple(_int_list(args.filters)))
    model, history = cae_train(data.images, cfg)
    save_cae(model, out.path("cae.json"))
    out.write_text("cae_history.csv", "epoch,mse\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(history)))
    out.manifest("cae train", args, {"seed": args.seed})


def cmd_cae_encode(args, out: Outputs):
    model = load_cae(args.model)
    data = load_manifest_set(args.manifest)
    latents, labels = cae_encode_dataset(model, data.images, data.labels)
    write_latent_csv(out.path("latents.csv"), latents, labels)
    out.manifest("cae encode", args, {})


# ---- qnn -------------------------------------------------------------------

def cmd_qnn_train(args, out: Outputs):
    X, y = read_latent_csv(args.train)
    classes = _int_list(args.classes) if args.classes else []
    X, y = _select_classes(X, y, classes)
    if args.val:
        V, vy = _select_classes(*read_latent_csv(args.val), classes)
        val = (V, vy)
    else:
        val = None
    n_classes = len(classes) if classes else int(y.max()) + 1
    model = init_model(X.shape[1], args.layers, args.head, n_classes, args.seed, args.ansatz)
    cfg = TrainConfig(args.loss, args.optimizer, args.lr, args.epochs, args.batch_size, args.seed)
    model, history = train_qnn(model, (X, y), val, cfg)
    save_model(model, out.path("model.json"))
    write_history(history, out.path("history.csv"))
    out.manifest("qnn train", args, {"seed": args.seed})
    last = history[-1]
    print(f"train_acc={last['train_acc']:.4f} val_acc={last['val_acc']:.4f}")


def cmd_qnn_eval(args, out: Outputs):
    model = load_model(args.model)
    X, y = read_latent_csv(args.data)
    X, y = _select_classes(X, y, _int_list(args.classes) if args.classes else [])
    device = _device(args.device) if args.device else None
    res = evaluate_qnn(model, X, y, device, args.shots, args.seed)
    metrics = {"accuracy": res["accuracy"],
               "per_class": {str(c): v for c, v in res["per_class"].items()}}
    out.write_json("metrics.json", metrics)
    out.manifest("qnn eval", args, {"seed": args.seed})
    print(f"accuracy={res['accuracy']:.4f}")


def cmd_qnn_gradcheck(args, out: Outputs):
    rng = np.random.default_rng(args.seed)
    model = init_model(args.qubits, args.layers, args.head, args.classes, args.seed, args.ansatz)
    X = rng.uniform(0, 2 * math.pi, size=(args.samples, args.qubits))
    y = rng.integers(0, model.n_classes, size=args.samples)
    err = relative_error(gradient_parameter_shift(model, X, y, args.loss),
                         gradient_finite_difference(model, X, y, args.loss))
    out.write_json("gradcheck.json", {"relative_error": err, "tolerance": GRADCHECK_TOLERANCE})
    out.manifest("qnn gradcheck", args, {"seed": args.seed})
    print(f"max_relative_error={err:.3e}")
    if not err < GRADCHECK_TOLERANCE:
        raise CommandError(f"relative error {err:.3e} exceeds {GRADCHECK_TOLERANCE:g}")


# ---- sim -------------------------------------------------------------------

def cmd_sim_run(args, out: Outputs):
    circ = _read_circuit(args.circuit)
    params = _float_list(args.params)
    result = {"n_qubits": circ.n_qubits}
    if args.device:
        counts = run_noisy_counts(circ, _device(args.device), args.shots, args.seed, params=params)
        result["shots"] = args.shots
        result["counts"] = {format(k, f"0{circ.n_qubits}b")[::-1]: v for k, v in sorted(counts.items())}
    else:
        p = probabilities(run_circuit(circ, params=params))
        result["probabilities"] = {format(i, f"0{circ.n_qubits}b")[::-1]: float(v)
                                   for i, v in enumerate(p) if v > 1e-15}
    out.write_json("result.json", result)
    out.manifest("sim run", args, {"seed": args.seed})


def cmd_sim_tvd(args, out: Outputs):
    a, b = _read_circuit(args.a), _read_circuit(args.b)
    if a.n_qubits != b.n_qubits:
        raise CommandError("circuits differ in qubit count")
    tvd = total_variation_distance(probabilities(run_circuit(a, params=_float_list(args.params_a))),
                                   probabilities(run_circuit(b, params=_float_list(args.params_b))))
    out.write_json("tvd.json", {"tvd": tvd})
    out.manifest("sim tvd", args, {})
    print(f"tvd={tvd!r}")


# ---- sec -------------------------------------------------------------------

def cmd_sec_puf(args, out: Outputs):
    sig = qupuf_signature(_device(args.device), args.variant, args.shots, args.delay, args.seed)
    write_signature_csv(sig, out.path("signature.csv"))
    out.manifest("sec puf", args, {"seed": args.seed})


def cmd_sec_split(args, out: Outputs):
    frags = split_circuit(_read_circuit(args.circuit), args.k, args.policy, args.shuffle_seed)
    for f in frags:
        out.path(f"fragment_{f.index:03d}.txt")
    save_fragments(frags, out.root)
    out.manifest("sec split", args, {"shuffle_seed": args.shuffle_seed})


def cmd_sec_recombine(args, out: Outputs):
    circ = recombine_circuit(load_fragments(args.fragments))
    out.write_text("circuit.txt", format_circuit(circ))
    out.manifest("sec recombine", args, {})


def cmd_sec_obfuscate(args, out: Outputs):
    circ = _read_circuit(args.circuit)
    ranked = rank_insertion_points(circ, _device(args.device), args.kind, args.mode,
                                   params=_float_list(args.params))
    chosen = ranked[:args.count]
    obf, key = insert_dummy_gates(circ, [(c.position, args.kind, c.edge) for c in chosen])
    out.write_text("obfuscated.txt", format_circuit(obf))
    out.write_text("key.json", key.to_json())
    out.write_json("ranking.json", [{"position": c.position, "edge": list(c.edge), "score": c.score}
                                    for c in ranked])
    out.manifest("sec obfuscate", args, {})


def cmd_sec_restore(args, out: Outputs):
    circ = restore_circuit(_read_circuit(args.circuit), SecurityKey.from_json(Path(args.key).read_text()))
    out.write_text("circuit.txt", format_circuit(circ))
    out.manifest("sec restore", args, {})


def cmd_sec_allocate(args, out: Outputs):
    dev = _device(args.device)
    alloc = allocate_with_buffers(dev.coupling_map, _int_list(args.sizes), dev.n_qubits)
    out.write_json("allocation.json", {"programs": {str(p): sorted(q) for p, q in alloc.programs.items()},
                                       "buffer": sorted(alloc.buffer)})
    out.manifest("sec allocate", args, {})


def cmd_sec_inject(args, out: Outputs):
    dev = _device(args.device)
    if args.multiplier is not None:
        dev = dev.with_multiplier(args.multiplier)
    victim = _read_circuit(args.victim) if args.victim else bell_circuit()
    adversary = _int_list(args.adversary)
    result = {}
    for i, arm in enumerate(("adjacent", "buffered")):
        rel = simulate_fault_injection(victim, adversary, dev, arm, args.shots, args.seed + i)
        result[arm] = {"reliability": rel, "stderr": math.sqrt(rel * (1 - rel) / args.shots)}
    adj = result["adjacent"]["reliability"]
    result["ratio"] = result["buffered"]["reliability"] / adj if adj > 0 else None
    out.write_json("reliability.json", result)
    out.manifest("sec inject", args, {"seed": args.seed})
    print(f"adjacent={adj:.4f} buffered={result['buffered']['reliability']:.4f}")


# ---- pipeline --------------------------------------------------------------

def cmd_pipeline(args, out: Outputs):
    cfg = PipelineConfig(
        per_class=args.per_class, data_seed=args.seed,
        cae=CaeConfig(learning_rate=args.cae_lr, epochs=args.cae_epochs, batch_size=args.cae_batch_size,
                      seed=args.seed, d=args.d),
        latent_samples=args.latent_samples, qnn_layers=args.layers,
        train=TrainConfig(args.loss, args.optimizer, args.lr, args.epochs, args.batch_size, args.seed),
        seeds=tuple(_int_list(args.seeds)),
    )
    stage = prepare_latents(cfg)
    save_cae(stage.cae, out.path("cae.json"))
    write_latent_csv(out.path("latents.csv"), stage.latents, stage.labels)
    results = run_experiments(stage, cfg, progress=lambda msg: print(msg, file=sys.stderr))
    summary = {name: [{"seed": r["seed"], "train_acc": r["train_acc"], "val_acc": r["val_acc"]} for r in runs]
               for name, runs in results.items()}
    out.write_json("results.json", {"config": cfg.to_dict(), "cae_history": stage.cae_history, "runs": summary})
    table = accuracy_table(results)
    out.write_text("table.md", table)
    out.manifest("pipeline", args, {"seed": args.seed, "qnn_seeds": list(cfg.seeds)})
    print(table, end="")


# ---- parser ----------------------------------------------------------------

def _qnn_train_flags(p, cfg: TrainConfig):
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--head", choices=HEADS, default="dense")
    p.add_argument("--loss", choices=LOSSES, default=cfg.loss_kind)
    p.add_argument("--optimizer", choices=OPTIMIZERS, default=cfg.optimizer)
    p.add_argument("--lr", type=float, default=cfg.learning_rate)
    p.add_argument("--epochs", type=int, default=cfg.epochs)
    p.add_argument("--batch-size", type=int, default=cfg.batch_size)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="qmlsec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qmlsec {__version__}")
    groups = parser.add_subparsers(dest="group", required=True)
    leaves = {}

    def leaf(group_parsers, group: str, name: str, func, help_text: str):
        p = group_parsers.add_parser(name, help=help_text)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--config", help="JSON file of option values (flags take precedence)")
        p.set_defaults(func=func)
        leaves[(group, name)] = p
        return p

    tcfg, ccfg = TrainConfig(), CaeConfig()

    ds = groups.add_parser("dataset", help="synthetic generation, ingestion, splitting").add_subparsers(
        dest="command", required=True)
    p = leaf(ds, "dataset", "gen", cmd_dataset_gen, "generate synthetic defect images")
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p = leaf(ds, "dataset", "ingest", cmd_dataset_ingest, "normalize a class-per-subdirectory image tree")
    p.add_argument("--input", required=True)
    p = leaf(ds, "dataset", "split", cmd_dataset_split, "stratified train/holdout split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fraction", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)

    ca = groups.add_parser("cae", help="convolutional autoencoder").add_subparsers(dest="command", required=True)
    p = leaf(ca, "cae", "train", cmd_cae_train, "train the autoencoder on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--d", type=int, default=ccfg.d)
    p.add_argument("--filters", default=",".join(map(str, ccfg.filters)))
    p.add_argument("--lr", type=float, default=ccfg.learning_rate)
    p.add_argument("--epochs", type=int, default=ccfg.epochs)
    p.add_argument("--batch-size", type=int, default=ccfg.batch_size)
    p.add_argument("--seed", type=int, default=0)
    p = leaf(ca, "cae", "encode", cmd_cae_encode, "encode a manifest into a latent CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)

    qn = groups.add_parser("qnn", help="quantum neural network").add_subparsers(dest="command", required=True)
    p = leaf(qn, "qnn", "train", cmd_qnn_train, "train on a latent CSV")
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--classes", help="comma-separated class codes to keep, remapped to 0..k-1")
    p.add_argument("--ansatz", default="crx-ring")
    p.add_argument("--seed", type=int, default=0)
    _qnn_train_flags(p, tcfg)
    p = leaf(qn, "qnn", "eval", cmd_qnn_eval, "evaluate a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--classes")
    p.add_argument("--device", help="built-in profile name or device JSON; omit for exact expectations")
    p.add_argument("--shots", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p = leaf(qn, "qnn", "gradcheck", cmd_qnn_gradcheck, "parameter-shift vs finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--qubits", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--head", choices=HEADS, default="dense")
    p.add_argument("--loss", choices=LOSSES, default="sce")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--ansatz", default="crx-ring")

    sm = groups.add_parser("sim", help="circuit simulation").add_subparsers(dest="command", required=True)
    p = leaf(sm, "sim", "run", cmd_sim_run, "exact probabilities, or noisy counts with --device")
    p.add_argument("--circuit", required=True)
    p.add_argument("--device")
    p.add_argument("--shots", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="comma-separated parameter values")
    p = leaf(sm, "sim", "tvd", cmd_sim_tvd, "total variation distance between two circuits' outputs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--params-a")
    p.add_argument("--params-b")

    sc = groups.add_parser("sec", help="hardware security toolkit").add_subparsers(dest="command", required=True)
    p = leaf(sc, "sec", "puf", cmd_sec_puf, "extract a device signature")
    p.add_argument("--device", required=True)
    p.add_argument("--variant", choices=PUF_VARIANTS, default="hadamard")
    p.add_argument("--shots", type=int, default=10_000)
    p.add_argument("--delay", type=float)
    p.add_argument("--seed", type=int, default=0)
    p = leaf(sc, "sec", "split", cmd_sec_split, "split a circuit into fragments")
    p.add_argument("--circuit", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--policy", choices=SPLIT_POLICIES, default="by_gate_count")
    p.add_argument("--shuffle-seed", type=int)
    p = leaf(sc, "sec", "recombine", cmd_sec_recombine, "reassemble fragments")
    p.add_argument("--fragments", nargs="+", required=True)
    p = leaf(sc, "sec", "obfuscate", cmd_sec_obfuscate, "insert dummy gates at the best-ranked points")
    p.add_argument("--circuit", required=True)
    p.add_argument("--device", default="ideal")
    p.add_argument("--kind", choices=DUMMY_KINDS, default="SWAP")
    p.add_argument("--mode", choices=RANK_MODES, default="exhaustive")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--params")
    p = leaf(sc, "sec", "restore", cmd_sec_restore, "remove keyed dummy gates")
    p.add_argument("--circuit", required=True)
    p.add_argument("--key", required=True)
    p = leaf(sc, "sec", "allocate", cmd_sec_allocate, "place programs with buffer qubits")
    p.add_argument("--device", required=True)
    p.add_argument("--sizes", required=True, help="comma-separated program sizes")
    p = leaf(sc, "sec", "inject", cmd_sec_inject, "crosstalk fault injection, adjacent vs buffered")
    p.add_argument("--device", required=True)
    p.add_argument("--adversary", required=True, help="comma-separated adversary qubits")
    p.add_argument("--victim", help="victim circuit file (default: Bell pair)")
    p.add_argument("--shots", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--multiplier", type=float)

    pp = groups.add_parser("pipeline", help="experiment presets").add_subparsers(dest="command", required=True)
    p = leaf(pp, "pipeline", "paper-pipeline", cmd_pipeline,
             "images -> autoencoder -> latents -> QNN, 3-class and 6-class")
    dcfg = PipelineConfig()
    p.add_argument("--per-class", type=int, default=dcfg.per_class)
    p.add_argument("--seed", type=int, default=0, help="data, split and autoencoder seed")
    p.add_argument("--seeds", default="0", help="comma-separated QNN seeds")
    p.add_argument("--d", type=int, default=ccfg.d)
    p.add_argument("--cae-lr", type=float, default=ccfg.learning_rate)
    p.add_argument("--cae-epochs", type=int, default=ccfg.epochs)
    p.add_argument("--cae-batch-size", type=int, default=ccfg.batch_size)
    p.add_argument("--latent-samples", type=int, default=dcfg.latent_samples)
    _qnn_train_flags(p, tcfg)
    return parser, leaves


def _config_defaults(argv, leaves) -> None:
    """Apply ``--config`` values as defaults of the selected command."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    positional = [a for a in argv if not a.startswith("-")]
    key = tuple(positional[:2])
    if key not in leaves:
        return
    try:
        values = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(values, dict):
        raise CommandError("config file must hold a JSON object")
    parser = leaves[key]
    dests = {a.dest for a in parser._actions}
    clean = {}
    for k, v in values.items():
        dest = k.replace("-", "_")
        if dest not in dests or dest in ("config", "help"):
            raise CommandError(f"unknown config option {k!r} for {' '.join(key)}")
        clean[dest] = v
    parser.set_defaults(**clean)
    for action in parser._actions:
        if action.dest in clean and action.required:
            action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, leaves = build_parser()
        _config_defaults(argv, leaves)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        out = Outputs(args.out, args.force)
        args.func(args, out)
        return 0
    except (CommandError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
