"""Command-line workbench tying the pipeline together.

Subcommands: ``gen-data``, ``train``, ``eval``, ``export-matrix``,
``report``.  An experiment is described by one declarative JSON config;
command-line flags override config fields.  Outputs land in one directory
per experiment with ``dataset/``, ``checkpoints/``, ``reports/`` and
``logs/`` subdirectories; all file writes are atomic and, given identical
config and seeds, byte-identical across runs.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import baselines as baselines_mod
from .dataset import ChannelGenConfig, build_dataset, import_text_dataset, load_dataset, save_dataset
from .fileio import write_atomic
from .metrics import ExperimentReport, evaluate, nmse
from .recon import MeasurementMatrix, SolverOptions, save_matrix
from .train import (
    TrainConfig,
    TrainingDivergedError,
    export_matrix,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .unfold import Variant, forward

OUTPUT_ROOT_ENV = "SENSEMAT_OUTPUT_ROOT"

_BASELINE_BUILDERS = {
    "gaussian": baselines_mod.gaussian_matrix,
    "bernoulli": baselines_mod.bernoulli_matrix,
    "partial_fourier": baselines_mod.partial_fourier_matrix,
    "selection": baselines_mod.selection_matrix,
}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Declarative experiment description.

    Defaults mirror the full-scale setup: 256 antennas, 3 paths with a
    13.2 dB Ricean factor, sparsity 16, 15 decoder layers, SGD with
    learning rate 0.001 and batch 128 for up to 1000 epochs (patience 25),
    and an M sweep over {24, 32, 40, 48, 56, 64, 72}.
    """

    # dataset generation
    n_antennas: int = 256
    n_paths: int = 3
    rice_k_db: float = 13.2
    n_channels: int = 50_000
    sparsity: int = 16
    split_ratios: tuple = (0.96, 0.02, 0.02)
    seed: int = 1
    # model and training
    variants: tuple = ("gae",)
    depth: int = 15
    batch_norm: str = "off"
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 1000
    patience: int = 25
    alpha_init: float = 1.0
    phi_init_std: float | None = None
    grad_clip: float | None = None
    # evaluation sweep
    m_sweep: tuple = (24, 32, 40, 48, 56, 64, 72)
    solvers: tuple = ("bp_exact",)
    snr_db: tuple = (None,)
    baselines: tuple = ("gaussian", "bernoulli", "partial_fourier", "selection")
    n_baseline_seeds: int = 1
    eval_n_samples: int | None = None
    solver_tol: float = 1e-10
    solver_max_iters: int = 50_000
    gpsr_tau: float | None = None
    subgrad_alpha0: float = 1.0
    rate_r0: float = 10.0
    rate_block: int = 100
    output_dir: str = "runs/exp"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values = dict(raw)
        for key in ("split_ratios", "variants", "m_sweep", "solvers", "snr_db", "baselines"):
            if key in values and values[key] is not None:
                values[key] = tuple(values[key])
        cfg = cls(**values)
        if not cfg.m_sweep or not cfg.solvers or not cfg.snr_db or not cfg.variants:
            raise UsageError("sweep lists (m_sweep, solvers, snr_db, variants) must be nonempty")
        bad = [v for v in cfg.variants if v not in Variant._value2member_map_]
        if bad:
            raise UsageError(f"unknown variants: {bad}")
        bad = [b for b in cfg.baselines if b not in _BASELINE_BUILDERS]
        if bad:
            raise UsageError(f"unknown baselines: {bad}")
        bad = [s for s in cfg.solvers if s not in ("bp_exact", "bp_subgradient", "gpsr")]
        if bad:
            raise UsageError(f"unknown solvers: {bad}")
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        return cls.from_dict(raw)


def _resolve_output_dir(cfg: RunConfig) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    out = cfg.output_dir
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    return out


class _Layout:
    def __init__(self, cfg: RunConfig):
        self.root = _resolve_output_dir(cfg)

    def _sub(self, name: str) -> str:
        path = os.path.join(self.root, name)
        os.makedirs(path, exist_ok=True)
        return path

    @property
    def dataset_file(self) -> str:
        return os.path.join(self._sub("dataset"), "channels.smd")

    def checkpoint(self, variant: str, m: int) -> str:
        return os.path.join(self._sub("checkpoints"), f"{variant}_m{m}.smck")

    def matrix_file(self, kind: str, m: int) -> str:
        return os.path.join(self._sub("checkpoints"), f"{kind}_m{m}.smmx")

    def train_log(self, variant: str, m: int) -> str:
        return os.path.join(self._sub("logs"), f"{variant}_m{m}_train.csv")

    @property
    def autoencoder_table(self) -> str:
        return os.path.join(self._sub("reports"), "autoencoder_nmse.csv")

    @property
    def report_csv(self) -> str:
        return os.path.join(self._sub("reports"), "report.csv")

    @property
    def report_json(self) -> str:
        return os.path.join(self._sub("reports"), "report.json")


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        alpha_init=cfg.alpha_init,
        phi_init_std=cfg.phi_init_std,
        depth=cfg.depth,
        batch_norm=cfg.batch_norm,
        grad_clip=cfg.grad_clip,
        seed=cfg.seed,
    )


def _solver_options(cfg: RunConfig) -> SolverOptions:
    return SolverOptions(
        tol=cfg.solver_tol,
        max_iters=cfg.solver_max_iters,
        tau=cfg.gpsr_tau,
        alpha0=cfg.subgrad_alpha0,
    )


def cmd_gen_data(cfg: RunConfig, args) -> int:
    layout = _Layout(cfg)
    if args.import_text:
        data = import_text_dataset(
            args.import_text,
            split_ratios=cfg.split_ratios,
            sparsity=cfg.sparsity,
            seed=cfg.seed,
        )
    else:
        gen_cfg = ChannelGenConfig(
            n_antennas=cfg.n_antennas,
            n_paths=cfg.n_paths,
            rice_k_db=cfg.rice_k_db,
            n_channels=cfg.n_channels,
            sparsity=cfg.sparsity,
            split_ratios=cfg.split_ratios,
            seed=cfg.seed,
        )
        data = build_dataset(gen_cfg, threads=args.threads)
    save_dataset(data, layout.dataset_file)
    s = data.split
    print(
        f"wrote {layout.dataset_file}: N={data.meta.n_antennas} S={data.meta.sparsity} "
        f"channels={data.samples.shape[0]} split={len(s.train)}/{len(s.val)}/{len(s.test)}"
    )
    return 0


def _write_train_log(path: str, report) -> None:
    lines = ["epoch,train_loss,val_loss"]
    for i, (tr, va) in enumerate(zip(report.train_loss, report.val_loss), start=1):
        lines.append(f"{i},{tr!r},{va!r}")
    write_atomic(path, ("\n".join(lines) + "\n").encode())


def cmd_train(cfg: RunConfig, args) -> int:
    layout = _Layout(cfg)
    data = load_dataset(layout.dataset_file)
    tcfg = _train_config(cfg)
    n = data.meta.n_antennas
    table = ["variant,m,test_nmse,best_val_loss,best_epoch,stopped_epoch"]
    failures = []
    for variant in cfg.variants:
        for m in cfg.m_sweep:
            ckpt = layout.checkpoint(variant, m)
            if os.path.exists(ckpt) and not args.force:
                print(f"skip existing {ckpt} (use --force to retrain)")
                continue
            model0 = init_model(Variant(variant), n, m, tcfg)
            try:
                model, report = train(model0, data, tcfg)
            except TrainingDivergedError as exc:
                print(f"FAILED {variant} M={m}: {exc}")
                failures.append((variant, m, str(exc)))
                continue
            save_checkpoint(
                model, ckpt, meta={"train_config": dataclasses.asdict(tcfg)}
            )
            _write_train_log(layout.train_log(variant, m), report)
            x_test = data.vectors("test")
            x_hat, _ = forward(model, x_test)
            test_nmse = nmse(list(x_test), list(x_hat))
            table.append(
                f"{variant},{m},{test_nmse!r},{report.best_val_loss!r},"
                f"{report.best_epoch},{report.stopped_epoch}"
            )
            print(
                f"trained {variant} M={m}: best val {report.best_val_loss:.3e} "
                f"(epoch {report.best_epoch}/{report.stopped_epoch}), test NMSE {test_nmse:.3e}"
            )
    write_atomic(layout.autoencoder_table, ("\n".join(table) + "\n").encode())
    if failures:
        print(f"{len(failures)} run(s) diverged; sweep continued")
    return 0


def _gather_matrices(cfg: RunConfig, layout: _Layout, n: int):
    """Learned matrices from checkpoints plus seeded random baselines."""
    matrices: list[MeasurementMatrix] = []
    missing = []
    for variant in cfg.variants:
        for m in cfg.m_sweep:
            ckpt = layout.checkpoint(variant, m)
            if not os.path.exists(ckpt):
                missing.append(ckpt)
                continue
            model, _ = load_checkpoint(ckpt)
            matrices.append(export_matrix(model))
    widths = [(n, False)]
    if any(Variant(v).is_cat for v in cfg.variants):
        widths.append((2 * n, True))
    for kind_idx, kind in enumerate(cfg.baselines):
        build = _BASELINE_BUILDERS[kind]
        for m in cfg.m_sweep:
            for k, split in widths:
                for i in range(cfg.n_baseline_seeds):
                    seed = int(
                        np.random.SeedSequence(
                            (cfg.seed, kind_idx, k, m, i)
                        ).generate_state(1)[0]
                    )
                    matrices.append(build(m, k, seed, split_input=split))
    return matrices, missing


def cmd_eval(cfg: RunConfig, args) -> int:
    layout = _Layout(cfg)
    data = load_dataset(layout.dataset_file)
    n = data.meta.n_antennas
    matrices, missing = _gather_matrices(cfg, layout, n)
    for path in missing:
        print(f"missing checkpoint, skipped: {path}")
    opts = _solver_options(cfg)
    rows = []
    cell = 0
    for matrix in matrices:
        for solver in cfg.solvers:
            if matrix.split_input and solver == "bp_subgradient":
                print(
                    f"skip {matrix.kind} k={matrix.k} M={matrix.m}: "
                    "bp_subgradient has no split-input form"
                )
                continue
            for snr in cfg.snr_db:
                rows.append(
                    evaluate(
                        matrix,
                        data,
                        solver,
                        opts=opts,
                        snr_db=snr,
                        noise_seed=int(
                            np.random.SeedSequence((cfg.seed, cell)).generate_state(1)[0]
                        ),
                        n_samples=cfg.eval_n_samples,
                        rate_r0=cfg.rate_r0,
                        rate_block=cfg.rate_block,
                        threads=args.threads,
                    )
                )
                cell += 1
    report = ExperimentReport(rows=rows)
    write_atomic(layout.report_csv, report.to_csv().encode())
    write_atomic(layout.report_json, report.to_json().encode())
    print(f"wrote {len(rows)} report rows to {layout.report_csv} and {layout.report_json}")
    return 0


def cmd_export_matrix(cfg: RunConfig, args) -> int:
    layout = _Layout(cfg)
    exported = []
    for variant in cfg.variants:
        for m in cfg.m_sweep:
            ckpt = layout.checkpoint(variant, m)
            if not os.path.exists(ckpt):
                print(f"missing checkpoint, skipped: {ckpt}")
                continue
            model, _ = load_checkpoint(ckpt)
            matrix = export_matrix(model)
            path = layout.matrix_file(matrix.kind, m)
            save_matrix(matrix, path)
            exported.append(path)
            print(f"exported {matrix.kind} ({matrix.m}x{matrix.k}) -> {path}")
    return 0 if exported else 2


def cmd_report(cfg: RunConfig, args) -> int:
    layout = _Layout(cfg)
    path = args.report or layout.report_json
    with open(path, "r", encoding="utf-8") as fh:
        report = ExperimentReport.from_json(fh.read())
    rows = report.sorted_rows()
    groups: dict[tuple, list] = {}
    for row in rows:
        groups.setdefault((row.solver, row.snr_db), []).append(row)
    for (solver, snr), group in sorted(
        groups.items(), key=lambda kv: (kv[0][0], -np.inf if kv[0][1] is None else kv[0][1])
    ):
        snr_txt = "noiseless" if snr is None else f"SNR {snr} dB"
        print(f"\n== solver {solver}, {snr_txt} ==")
        ms = sorted({r.m for r in group})
        header = f"{'matrix (kind, K)':<28}" + "".join(f"{('M=' + str(m)):>12}" for m in ms)
        for metric in ("nmse", "accurate_pct", "effective_rate"):
            print(f"-- {metric} --")
            print(header)
            kinds = sorted({(r.matrix_kind, r.k) for r in group})
            for kind, k in kinds:
                cells = {r.m: getattr(r, metric) for r in group if (r.matrix_kind, r.k) == (kind, k)}
                line = f"{kind + ' K=' + str(k):<28}"
                for m in ms:
                    line += f"{cells[m]:>12.4g}" if m in cells else f"{'-':>12}"
                print(line)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sensemat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--output-dir", help="override config output_dir")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--force", action="store_true", help="recompute existing outputs")
        p.add_argument("--threads", type=int, default=1, help="worker threads")

    p = sub.add_parser("gen-data", help="generate (or import) a channel dataset")
    common(p)
    p.add_argument("--import-text", help="import a plain-text dataset instead of generating")

    p = sub.add_parser("train", help="train autoencoders over the (variant, M) sweep")
    common(p)

    p = sub.add_parser("eval", help="evaluate matrices over the (M, solver, SNR) sweep")
    common(p)

    p = sub.add_parser("export-matrix", help="export normalized matrices from checkpoints")
    common(p)

    p = sub.add_parser("report", help="pretty-print an evaluation report")
    common(p)
    p.add_argument("--report", help="path to a report.json (default: experiment's)")
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-matrix": cmd_export_matrix,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            cfg = RunConfig.from_file(args.config)
        else:
            cfg = RunConfig()
        overrides = {}
        if args.output_dir:
            overrides["output_dir"] = args.output_dir
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
