"""``fairchain`` command line: adjust, diagnose and evaluate.

Exit status: 0 success, 1 internal error, 2 invalid input, 3 a group-parity
test rejected (diagnose only).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
import traceback
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .chain import CHAIN_FORMAT_VERSION, FittedChain, ReplicateStream, fit_and_transform, fit_replicates
from .diagnostics import ks_two_sample, ks_uniform, leakage_audit
from .errors import FairchainError, ValidationError
from .evaluate import ForestParams, evaluate_replicates
from .tabular import SpecFile, Table, load_csv, read_spec_file, validate_plan, write_text_atomic

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_FLAG = 3

MANIFEST_VERSION = 1
DIAGNOSTICS_VERSION = 1
EVALUATION_VERSION = 1

_ADJUSTED_RE = re.compile(r"^adjusted_(\d+)\.csv$")


def _dump_json(path: Path, obj) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _timestamp() -> str | None:
    """Build time from SOURCE_DATE_EPOCH; omitted otherwise so reruns stay byte-identical."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if not epoch:
        return None
    try:
        return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
    except ValueError:
        raise ValidationError(f"SOURCE_DATE_EPOCH must be an integer, got {epoch!r}") from None


def _write_manifest(out: Path, command: str, args, files: dict, seed, m) -> None:
    """Record one stage in ``out/manifest.json``; other stages' entries are kept."""
    path = out / "manifest.json"
    doc = {"format_version": MANIFEST_VERSION, "fairchain_version": __version__, "runs": {}}
    if path.exists():
        try:
            old = json.loads(path.read_text(encoding="utf-8"))
            if old.get("format_version") == MANIFEST_VERSION:
                doc["runs"] = old.get("runs", {})
        except (json.JSONDecodeError, AttributeError):
            pass
    entry = {
        "command": command,
        "data": str(args.data),
        "spec": str(args.spec),
        "out": str(args.out),
        "seed": seed,
        "m": m,
        "files": [
            {"name": name, "format_version": version, "sha256": _sha256(out / name)}
            for name, version in files.items()
        ],
    }
    if getattr(args, "adjusted", None) is not None:
        entry["adjusted"] = str(args.adjusted)
    ts = _timestamp()
    if ts is not None:
        entry["timestamps"] = {"created": ts}
    doc["runs"][command] = entry
    doc["runs"] = dict(sorted(doc["runs"].items()))
    _dump_json(path, doc)


def _output_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ValidationError(f"cannot create output directory {out}: {e}") from None
    return out


def _load_inputs(args):
    spec = read_spec_file(args.spec)
    table = load_csv(args.data, spec.variables)
    return spec, table


def _plan(spec: SpecFile, m=None, seed=None):
    return validate_plan(
        spec.variables,
        spec.order,
        spec.m if m is None else m,
        spec.seed if seed is None else seed,
    )


def _adjusted_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise ValidationError(f"adjusted directory not found: {d}")
    found = []
    for p in d.iterdir():
        m = _ADJUSTED_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    if not found:
        raise ValidationError(f"no adjusted_<k>.csv files in {d}")
    return [p for _, p in sorted(found)]


def _load_adjusted(spec: SpecFile, directory, raw: Table) -> list[Table]:
    specs = [v for v in spec.variables if v.role in ("adjust", "outcome")]
    tables = []
    for p in _adjusted_files(directory):
        t = load_csv(p, specs)
        if t.n_rows != raw.n_rows:
            raise ValidationError(f"{p.name} has {t.n_rows} rows, the data file has {raw.n_rows}")
        tables.append(t)
    return tables


def _group_labels(column) -> np.ndarray:
    """Text group label per row: levels for categorical/binary, a median split otherwise."""
    v = np.asarray(column.values)
    if column.kind == "categorical":
        return v.astype(str)
    if column.kind == "binary":
        levels = column.levels or ("0", "1")
        return np.asarray(levels)[v.astype(np.int64)]
    med = float(np.median(v))
    return np.where(v <= med, f"<= {med!r}", f"> {med!r}")


# ----------------------------------------------------------------------------


def cmd_adjust(args) -> int:
    spec, table = _load_inputs(args)
    plan = _plan(spec, args.m, args.seed)
    out = _output_dir(args.out)
    results = fit_replicates(table, plan)
    files = {}
    for chain, adjusted in results:
        name = f"adjusted_{adjusted.replicate_index}.csv"
        adjusted.to_csv(out / name)
        files[name] = None
    chain_doc = {
        "format_version": CHAIN_FORMAT_VERSION,
        "replicates": [chain.to_dict() for chain, _ in results],
    }
    _dump_json(out / "chain.json", chain_doc)
    files["chain.json"] = CHAIN_FORMAT_VERSION
    _write_manifest(out, "adjust", args, files, plan.seed, plan.m_replicates)
    return EXIT_OK


def _fit_tests(args, spec, raw, plan, alpha) -> list[dict]:
    chain_path = Path(args.adjusted) / "chain.json"
    if chain_path.exists():
        try:
            doc = json.loads(chain_path.read_text(encoding="utf-8"))
            chains = [FittedChain.from_dict(d) for d in doc["replicates"]]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ValidationError(f"cannot read {chain_path}: {e}") from None
        source = "chain.json"
    else:
        chains = [fit_and_transform(raw, plan, ReplicateStream(plan.seed, 1))[0]]
        source = "refit replicate 1"
    tests = []
    for chain in chains:
        for step in chain.steps:
            u = chain.pit_values.get(step.name)
            if u is None or u.size == 0:
                continue
            r = ks_uniform(u)
            tests.append(
                {
                    "variable": step.name,
                    "replicate": chain.replicate_index,
                    "family": step.model.family,
                    "pit_source": source,
                    **r.to_dict(),
                    "rejected": r.p_value < alpha,
                }
            )
    return tests


def _parity_tests(raw: Table, adjusted: list[Table], plan, alpha) -> list[dict]:
    tests = []
    for z in plan.protected:
        groups = _group_labels(raw[z])
        for level in sorted(set(groups.tolist())):
            inside = groups == level
            if inside.all():
                continue
            for name in plan.order:
                entry = {"protected": z, "group": level, "variable": name}
                entry["before"] = ks_two_sample(raw[name].values[inside], raw[name].values[~inside]).to_dict()
                entry["after"] = [
                    {"replicate": k, **ks_two_sample(t[name].values[inside], t[name].values[~inside]).to_dict()}
                    for k, t in enumerate(adjusted, start=1)
                ]
                tests.append(entry)
    n_tests = sum(len(t["after"]) for t in tests)
    level = alpha / max(1, n_tests)
    for t in tests:
        for a in t["after"]:
            a["rejected"] = a["p_value"] < level
    return tests


def cmd_diagnose(args) -> int:
    spec, raw = _load_inputs(args)
    plan = _plan(spec, seed=args.seed)
    adjusted = _load_adjusted(spec, args.adjusted, raw)
    out = _output_dir(args.out)
    alpha = args.alpha

    fit_tests = _fit_tests(args, spec, raw, plan, alpha)
    parity = _parity_tests(raw, adjusted, plan, alpha)
    leakage = {}
    for z in plan.protected:
        groups = _group_labels(raw[z])
        entry = {}
        for label, table in (("raw", raw), ("adjusted", adjusted[0])):
            try:
                entry[label] = leakage_audit(
                    table.select(plan.order), groups, folds=args.folds, seed=plan.seed, n_trees=args.trees
                )
            except ValidationError as e:
                entry[label] = {"error": str(e)}
        leakage[z] = entry

    for t in fit_tests:
        if t["rejected"]:
            print(
                f"warning: uniformity of {t['variable']!r} (replicate {t['replicate']}) rejected, "
                f"p = {t['p_value']:.3g}",
                file=sys.stderr,
            )
    flagged = [
        (t["variable"], t["protected"], t["group"]) for t in parity if any(a["rejected"] for a in t["after"])
    ]
    n_parity = sum(len(t["after"]) for t in parity)
    report = {
        "format_version": DIAGNOSTICS_VERSION,
        "alpha": alpha,
        "n_replicates": len(adjusted),
        "ks_fit": fit_tests,
        "group_parity": {
            "comparison": "each group against the rest",
            "correction": "bonferroni",
            "n_tests": n_parity,
            "per_test_level": alpha / max(1, n_parity),
            "tests": parity,
        },
        "leakage_auc": {"folds": args.folds, "trees": args.trees, "by_protected": leakage},
        "flagged": [{"variable": v, "protected": z, "group": g} for v, z, g in sorted(set(flagged))],
    }
    _dump_json(out / "diagnostics.json", report)
    _write_manifest(out, "diagnose", args, {"diagnostics.json": DIAGNOSTICS_VERSION}, plan.seed, len(adjusted))
    if flagged:
        print(f"fairness flag: {len(set(flagged))} group-parity test(s) rejected after adjustment", file=sys.stderr)
        return EXIT_FLAG
    return EXIT_OK


def cmd_evaluate(args) -> int:
    spec, raw = _load_inputs(args)
    plan = _plan(spec, seed=args.seed)
    adjusted = _load_adjusted(spec, args.adjusted, raw)
    out = _output_dir(args.out)
    z = plan.protected[0]
    result = evaluate_replicates(
        raw,
        adjusted,
        plan.order,
        plan.outcome,
        groups=_group_labels(raw[z]),
        params=ForestParams(n_trees=args.trees),
        folds=args.folds,
        seed=plan.seed,
    )
    doc = {
        "format_version": EVALUATION_VERSION,
        "features": list(plan.order),
        "outcome": plan.outcome,
        "group_variable": z,
        **result.to_dict(),
    }
    _dump_json(out / "evaluation.json", doc)
    write_text_atomic(out / "roc_unadjusted.csv", result.roc_unadjusted.to_csv_text())
    write_text_atomic(out / "roc_adjusted.csv", result.roc_adjusted.to_csv_text())
    write_text_atomic(out / "scores_by_group.csv", result.scores_by_group_csv())
    files = {
        "evaluation.json": EVALUATION_VERSION,
        "roc_unadjusted.csv": None,
        "roc_adjusted.csv": None,
        "scores_by_group.csv": None,
    }
    _write_manifest(out, "evaluate", args, files, plan.seed, len(adjusted))
    return EXIT_OK


# ----------------------------------------------------------------------------


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2**64), got {text}")
    return v


def _alpha(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must be in (0, 1), got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fairchain",
        description="Remove protected-attribute information from tabular covariates by chained conditional transforms.",
        epilog="FAIRCHAIN_THREADS caps worker threads.",
    )
    p.add_argument("--version", action="version", version=f"fairchain {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, adjusted: bool):
        sp.add_argument("--data", required=True, help="raw CSV file")
        if adjusted:
            sp.add_argument("--adjusted", required=True, help="directory holding adjusted_<k>.csv")
        sp.add_argument("--spec", required=True, help="variable spec JSON")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=_seed, default=None, help="override the spec seed")

    a = sub.add_parser("adjust", help="fit the chain and write M adjusted replicates")
    common(a, adjusted=False)
    a.add_argument("--m", type=_positive, default=None, help="number of replicates (default: spec, else 10)")
    a.set_defaults(func=cmd_adjust)

    d = sub.add_parser("diagnose", help="KS fit and group-parity tests plus a leakage audit")
    common(d, adjusted=True)
    d.add_argument("--alpha", type=_alpha, default=0.05, help="test level (default 0.05)")
    d.add_argument("--folds", type=_positive, default=5, help="leakage-audit folds (default 5)")
    d.add_argument("--trees", type=_positive, default=100, help="leakage-audit forest size (default 100)")
    d.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("evaluate", help="out-of-fold random-forest AUC on raw versus adjusted data")
    common(e, adjusted=True)
    e.add_argument("--trees", type=_positive, default=500, help="trees per forest (default 500)")
    e.add_argument("--folds", type=_positive, default=5, help="cross-validation folds (default 5)")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except FairchainError as e:
        print(f"fairchain {args.command}: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"fairchain {args.command}: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        traceback.print_exc()
        print(f"fairchain {args.command}: internal error", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
