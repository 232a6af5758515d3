"""Command-line interface: ``tradeslab <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.

Every command accepts ``--config FILE`` with ``key = value`` lines whose keys
are the long flag names without dashes (``inv-lambda = 0.5``). Precedence is
defaults < config file < command-line flags.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .attacks import AttackConfig, fgsm, pgd_label, pgd_pairwise, predict_labels, transfer_attack
from .calib import LOSS_KINDS, get_loss, psi_transform
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .csvio import table_to_text, write_table
from .data import Dataset, gen_synthetic, load_dataset_csv, load_idx, save_dataset_csv
from .errors import CalibrationError, DataError, NumericError, ResolutionError
from .risk import SWEEP_HEADER, evaluate, lambda_sweep
from .theory import SrmConfig, srm_linear_train, staircase_errors, tightness_witness, verify_theorem1
from .train import MODES, TrainConfig, class_targets, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

EVAL_HEADER = ("r_nat", "r_rob", "r_bdy", "r_phi", "a_nat", "a_rob", "method", "n", "epsilon")
ATTACK_SUMMARY_HEADER = ("a_nat", "a_rob", "n", "epsilon")
BOUND_HEADER = ("lambda", "epsilon", "r_rob", "r_star_nat", "r_phi", "r_star_phi", "psi_inv_term", "reg_term",
                "delta_lhs", "delta_rhs", "delta", "baseline", "method")
WITNESS_HEADER = ("theta", "xi", "loss", "gamma", "alpha1", "alpha2", "f1", "f2", "lambda", "r_rob_minus_bayes",
                  "reg", "lower", "excess_phi", "upper", "holds")
SRM_HEADER = ("k", "gamma", "prior", "empirical_loss", "penalty", "objective", "selected", "w", "heuristic")
PSI_HEADER = ("theta", "psi", "psi_tilde", "psi_closed_form")
STAIRCASE_HEADER = ("r_nat", "r_bdy", "r_rob")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ----------------------------------------------------------------------------
# argument wiring


def _pair(text):
    parts = [p for p in text.split(",") if p]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return tuple(float(p) for p in parts)


def _float_list(text):
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _int_list(text):
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# (subcommand -> list of required dests); checked after config merging
_REQUIRED = {}
_SEEDED = {"gen-data", "train", "attack", "sweep-lambda"}


def _add(sub, name, help_text, required=()):
    p = sub.add_parser(name, help=help_text, description=help_text)
    p.add_argument("--config", help="key = value file; keys are flag names without dashes")
    p.add_argument("--out", help="output path (CSV unless noted); stdout when omitted")
    _REQUIRED[name] = list(required)
    return p


def _add_data(p):
    p.add_argument("--data", help="CSV dataset, or 'images.idx,labels.idx' for an IDX pair")
    p.add_argument("--class-filter", type=_int_list, help="IDX only: two digits mapped to -1,+1")
    p.add_argument("--limit", type=int, help="IDX only: read at most this many records")
    p.add_argument("--bounds", type=_pair, help="lo,hi feature bounds for attacks to clip to")


def _add_attack(p, eps_default=0.1):
    p.add_argument("--eps", type=float, default=eps_default, help="perturbation radius")
    p.add_argument("--norm", choices=("linf", "l2"), default="linf")
    p.add_argument("--k", type=int, default=20, help="attack iterations")
    p.add_argument("--eta1", type=float, default=0.01, help="attack step size")
    p.add_argument("--sigma", type=float, default=0.001, help="Gaussian start scale of the pairwise attack")


def _add_train(p):
    p.add_argument("--mode", choices=MODES, default="trades_multiclass")
    p.add_argument("--inv-lambda", type=float, default=1.0)
    p.add_argument("--eta2", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--hidden", type=_int_list, default=(32,), help="comma-separated hidden widths")
    p.add_argument("--activation", choices=("relu", "tanh", "identity"), default="relu")
    p.add_argument("--surrogate", choices=LOSS_KINDS, default="logistic")
    p.add_argument("--unlabeled-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int)


def build_parser():
    parser = _Parser(prog="tradeslab", description="Adversarial robustness / accuracy trade-off lab.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = _add(sub, "gen-data", "generate a seeded synthetic dataset (CSV)", ["kind", "n"])
    p.add_argument("--kind", choices=("blobs", "staircase_sample", "rings"))
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float, default=0.1, help="staircase cell width")
    p.add_argument("--separation", type=float, default=4.0, help="blob separation in units of sigma")
    p.add_argument("--sigma", type=float, default=1.0, help="blob standard deviation")
    p.add_argument("--noise", type=float, default=0.1, help="ring radial noise")

    p = _add(sub, "train", "train a model and write a checkpoint", ["data", "ckpt_out"])
    _add_data(p)
    _add_attack(p)
    _add_train(p)
    p.add_argument("--ckpt-out", help="checkpoint output path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--metrics-out", help="per-epoch metrics CSV")

    p = _add(sub, "attack", "attack a model; writes the perturbed dataset as CSV", ["model", "data"])
    _add_data(p)
    _add_attack(p)
    p.add_argument("--model", help="checkpoint to attack")
    p.add_argument("--kind", choices=("pgd", "fgsm", "pairwise"), default="pgd")
    p.add_argument("--source", help="transfer setting: craft on this checkpoint, score --model")
    p.add_argument("--summary-out", help="CSV with a_nat / a_rob of the attacked model")
    p.add_argument("--seed", type=int)

    p = _add(sub, "eval", "natural / robust / boundary / surrogate risks", ["model", "data"])
    _add_data(p)
    _add_attack(p)
    p.add_argument("--model")
    p.add_argument("--mode", choices=("exact", "attack"), default="attack")
    p.add_argument("--loss", choices=LOSS_KINDS, default="logistic")
    p.add_argument("--seed", type=int)

    p = _add(sub, "sweep-lambda", "train one model per 1/lambda and evaluate", ["data", "list"])
    _add_data(p)
    _add_attack(p)
    _add_train(p)
    p.add_argument("--list", type=_float_list, help="comma-separated 1/lambda values")
    p.add_argument("--test-data", help="held-out CSV dataset")
    p.add_argument("--eval-mode", choices=("exact", "attack"), default="attack")

    p = _add(sub, "verify-bound", "evaluate both sides of the robust-error upper bound",
             ["model", "baseline", "data", "lam"])
    _add_data(p)
    _add_attack(p)
    p.add_argument("--model")
    p.add_argument("--baseline", help="naturally trained checkpoint for R*_nat and R*_phi")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--loss", choices=LOSS_KINDS, default="hinge")
    p.add_argument("--mode", choices=("exact", "attack"), default="exact")
    p.add_argument("--seed", type=int)

    p = _add(sub, "witness", "two-point distribution on which the bound is tight", ["theta"])
    p.add_argument("--theta", type=float)
    p.add_argument("--xi", type=float, default=0.01)
    p.add_argument("--loss", choices=LOSS_KINDS, default="hinge")

    p = _add(sub, "srm", "structural risk minimization for a robust linear separator", ["data", "margins"])
    _add_data(p)
    p.add_argument("--margins", type=_float_list, help="strictly decreasing margins")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--c", type=float, default=32.0)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--data-bound", type=float)
    p.add_argument("--seed", type=int, default=0, help="seed for the random search in more than 2 dimensions")

    p = _add(sub, "psi", "tabulate the psi-transform of a surrogate loss")
    p.add_argument("--loss", choices=LOSS_KINDS, default="hinge")
    p.add_argument("--grid", type=int, default=1025)

    p = _add(sub, "staircase", "exact errors on the staircase distribution")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--classifier", choices=("bayes", "allone"), default="bayes")
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_help())
    if args.config:
        sub = _subparser(parser, args.command)
        known = {a.dest: a for a in sub._actions if a.option_strings}
        try:
            file_values = load_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        defaults = {}
        for key, value in file_values.items():
            dest = key.replace("-", "_")
            if key == "lambda":
                dest = "lam"
            if dest not in known or dest in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            action = known[dest]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[dest] = _bool(value)
            else:
                defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [d for d in _REQUIRED[args.command] if getattr(args, d, None) is None]
    if missing:
        flags = ", ".join("--" + ("lambda" if d == "lam" else d.replace("_", "-")) for d in missing)
        raise UsageError(f"tradeslab {args.command}: missing required option(s): {flags}")
    needs_seed = args.command in _SEEDED or (
        args.command in ("eval", "verify-bound") and getattr(args, "mode", None) == "attack"
    )
    if needs_seed and getattr(args, "seed", None) is None:
        raise UsageError(f"tradeslab {args.command}: --seed is required for randomized commands")
    return args


# ----------------------------------------------------------------------------
# helpers


def _load_data(source, args, name="--data") -> Dataset:
    bounds = getattr(args, "bounds", None)
    if "," in source and not source.endswith(".csv"):
        images, labels = source.split(",", 1)
        ds = load_idx(images, labels, limit=getattr(args, "limit", None), class_filter=getattr(args, "class_filter", None))
        if bounds is not None:
            ds = Dataset(ds.features, ds.labels, bounds, ds.name)
        return ds
    try:
        return load_dataset_csv(source, bounds=bounds)
    except FileNotFoundError as exc:
        raise DataError(f"{name}: {exc}") from exc


def _attack_cfg(args) -> AttackConfig:
    return AttackConfig(epsilon=args.eps, norm=args.norm, step_eta1=args.eta1, iters_K=args.k,
                        init_sigma=args.sigma, seed=args.seed if getattr(args, "seed", None) is not None else 0)


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(
        mode=args.mode, inv_lambda=args.inv_lambda, eta2=args.eta2, batch_m=args.batch, epochs=args.epochs,
        attack=_attack_cfg(args), surrogate=args.surrogate, seed=args.seed,
        unlabeled_fraction=args.unlabeled_fraction, hidden=tuple(args.hidden), activation=args.activation,
    )


def _emit(args, header, rows, stdout):
    text = table_to_text(header, rows)
    if args.out:
        write_table(args.out, header, rows)
    else:
        stdout.write(text)


# ----------------------------------------------------------------------------
# commands


def cmd_gen_data(args, stdout):
    ds = gen_synthetic(args.kind, args.n, args.seed, eps=args.eps, separation=args.separation,
                       sigma=args.sigma, noise=args.noise)
    if args.out:
        save_dataset_csv(ds, args.out)
    else:
        from .data import dataset_to_csv

        stdout.write(dataset_to_csv(ds))


def cmd_train(args, stdout):
    ds = _load_data(args.data, args)
    cfg = _train_cfg(args)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        cfg = resume.config.replace(epochs=args.epochs)
    ckpt = train(ds, cfg, resume=resume)
    save_checkpoint(ckpt, args.ckpt_out)
    header = ("epoch", "loss", "term1", "term2", "train_r_nat")
    if args.metrics_out:
        write_table(args.metrics_out, header, ckpt.metrics_history)
    _emit(args, header, ckpt.metrics_history[-1:], stdout)


def cmd_attack(args, stdout):
    ds = _load_data(args.data, args)
    target = load_checkpoint(args.model).model
    cfg = _attack_cfg(args)
    y = ds.labels if target.is_binary else class_targets(ds.labels)
    if args.source:
        source = load_checkpoint(args.source).model
        rep = transfer_attack(source, target, ds.features, y, cfg, bounds=ds.declared_bounds)
        adv_x = pgd_label(source, ds.features, y, cfg, bounds=ds.declared_bounds).perturbed
        a_nat, a_rob = rep.a_nat, rep.a_rob
    else:
        if args.kind == "fgsm":
            adv_x = fgsm(target, ds.features, y, epsilon=cfg.epsilon, bounds=ds.declared_bounds).perturbed
        elif args.kind == "pgd":
            adv_x = pgd_label(target, ds.features, y, cfg, bounds=ds.declared_bounds).perturbed
        else:
            adv_x = pgd_pairwise(target, ds.features, cfg, rng=np.random.default_rng(args.seed),
                                 bounds=ds.declared_bounds).perturbed
        a_nat = float(np.mean(predict_labels(target, ds.features) == y))
        a_rob = float(np.mean((predict_labels(target, ds.features) == y) & (predict_labels(target, adv_x) == y)))
    adv = Dataset(adv_x, ds.labels, ds.declared_bounds, ds.name + "+adv")
    if args.out:
        save_dataset_csv(adv, args.out)
    else:
        from .data import dataset_to_csv

        stdout.write(dataset_to_csv(adv))
    summary = [(a_nat, a_rob, len(ds), cfg.epsilon)]
    if args.summary_out:
        write_table(args.summary_out, ATTACK_SUMMARY_HEADER, summary)


def cmd_eval(args, stdout):
    ds = _load_data(args.data, args)
    model = load_checkpoint(args.model).model
    rep = evaluate(model, ds, args.eps, mode=args.mode, attack_cfg=_attack_cfg(args), loss=args.loss, norm=args.norm)
    d = rep.as_dict()
    _emit(args, EVAL_HEADER, [[d[h] for h in EVAL_HEADER]], stdout)


def cmd_sweep(args, stdout):
    ds = _load_data(args.data, args)
    test = _load_data(args.test_data, args, "--test-data") if args.test_data else None
    rows = lambda_sweep(ds, _train_cfg(args), args.list, test_data=test, mode=args.eval_mode)
    _emit(args, SWEEP_HEADER, rows, stdout)


def cmd_verify(args, stdout):
    ds = _load_data(args.data, args)
    model = load_checkpoint(args.model).model
    base = load_checkpoint(args.baseline).model
    cfg = _attack_cfg(args)
    rep = verify_theorem1(model, ds, args.loss, args.lam, args.eps, base, mode=args.mode, attack_cfg=cfg,
                          norm=args.norm, strict=False)
    row = (rep.lam, rep.epsilon, rep.r_rob, rep.r_star_nat, rep.r_phi, rep.r_star_phi, rep.psi_inv_term,
           rep.reg_term, rep.delta_lhs, rep.delta_rhs, rep.delta, rep.baseline, rep.method)
    _emit(args, BOUND_HEADER, [row], stdout)


def cmd_witness(args, stdout):
    w = tightness_witness(args.theta, args.xi, args.loss)
    row = (w.theta, w.xi, args.loss, w.gamma, w.alphas[0], w.alphas[1], w.f_values[0], w.f_values[1], w.lam,
           w.r_rob_minus_bayes, w.reg, w.lower, w.excess_phi, w.upper, w.sandwich_holds)
    _emit(args, WITNESS_HEADER, [row], stdout)


def cmd_srm(args, stdout):
    ds = _load_data(args.data, args)
    cfg = SrmConfig(margins=tuple(args.margins), delta=args.delta, data_bound=args.data_bound, C=args.c,
                    epsilon=args.eps, seed=args.seed)
    res = srm_linear_train(ds.features, ds.labels, cfg)
    rows = []
    for entry, w in zip(res.table, res.weights):
        rows.append((entry["k"], entry["gamma"], entry["prior"], entry["empirical_loss"], entry["penalty"],
                     entry["objective"], entry["k"] == res.k_star, " ".join(repr(float(v)) for v in w),
                     res.heuristic))
    _emit(args, SRM_HEADER, rows, stdout)


def cmd_psi(args, stdout):
    psi = psi_transform(get_loss(args.loss), n_grid=args.grid)
    closed = psi.closed_form(psi.theta) if psi.closed_form is not None else np.full_like(psi.theta, np.nan)
    rows = zip(psi.theta, psi.values, psi.psi_tilde, closed)
    _emit(args, PSI_HEADER, rows, stdout)


def cmd_staircase(args, stdout):
    _emit(args, STAIRCASE_HEADER, [staircase_errors(args.classifier, args.eps)], stdout)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "sweep-lambda": cmd_sweep,
    "verify-bound": cmd_verify,
    "witness": cmd_witness,
    "srm": cmd_srm,
    "psi": cmd_psi,
    "staircase": cmd_staircase,
}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        COMMANDS[args.command](args, stdout)
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    except UsageError as exc:
        stderr.write(f"{exc}\n")
        if not argv:
            stderr.write(build_parser().format_usage())
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except (NumericError, CalibrationError, ResolutionError, FloatingPointError) as exc:
        stderr.write(f"numeric error: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
