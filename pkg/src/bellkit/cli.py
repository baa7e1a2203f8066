"""Command-line pipeline driver.

Two verbs:

* ``run <config.json> [--seed N]``: simulate a configured source,
  apply per-arm detector models, match coincidences, and emit every
  table and report plus a manifest pinning the full effective
  configuration.
* ``analyze <inputs...> --out DIR [--tau T] [--policy P] [...]``:
  the same analysis tail for externally produced files; accepts one
  pairs file, or two arm-record files plus a window to match them.

Exit codes: 0 success, 2 configuration or input-format error,
3 resource guard tripped, 4 internal verification failure.  All
validation happens before anything is written; each output file is
written atomically (temp then rename).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .coincidence import POLICIES, match_events
from .events import (ArmRecord, FormatError, PairSet, ResourceGuardError,
                     read_arm_record, read_pairs, write_arm_record,
                     write_pairs)
from .feasibility import (MarginalProblem, VerificationError,
                          solve_joint_feasibility)
from .models import (DetectorModel, LhvModel, NoSignalingBox,
                     TrialSchedule, apply_detector, pr_box,
                     sign_lhv_model, simulate_box, simulate_lhv,
                     singlet_box, table_lhv_model, vector_sign_lhv_model)
from .rng import derive_seed
from .statistics import (chsh, chsh_sigma, conditionals, counts_csv_text,
                         no_signaling_check, tabulate)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GUARD = 3
EXIT_VERIFY = 4

_DETECTOR_SEED_A = 21
_DETECTOR_SEED_B = 22

_DETECTOR_DEFAULTS = {"efficiency": 1.0, "jitter_sigma": 0.0,
                      "dark_rate": 0.0, "time_offset": 0.0}
_ANALYSIS_DEFAULTS = {"z_threshold": 5.0, "feasibility_tolerance": 1e-9,
                      "project_singles": False}


class ConfigError(ValueError):
    """Configuration or input problem; maps to exit code 2."""


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _section(cfg: dict, key: str, required: bool = False) -> dict:
    value = cfg.get(key)
    if value is None:
        if required:
            _fail(key, "section is required")
        return {}
    if not isinstance(value, dict):
        _fail(key, "must be a mapping")
    return value


def _no_unknown_keys(section: dict, allowed, path: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        _fail(path, f"unknown keys {unknown}; allowed: {sorted(allowed)}")


def _get_number(section: dict, key: str, path: str, default=None,
                required: bool = False):
    if key not in section:
        if required:
            _fail(f"{path}.{key}", "is required")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(f"{path}.{key}", f"must be a number, got {value!r}")
    return value


def _get_int(section: dict, key: str, path: str, default=None,
             required: bool = False):
    value = _get_number(section, key, path, default, required)
    if value is None:
        return None
    if value != int(value):
        _fail(f"{path}.{key}", f"must be an integer, got {value!r}")
    return int(value)


def _get_list(section: dict, key: str, path: str, required: bool = False):
    if key not in section:
        if required:
            _fail(f"{path}.{key}", "is required")
        return None
    value = section[key]
    if not isinstance(value, list):
        _fail(f"{path}.{key}", "must be a list")
    return value


def _build_model(cfg: dict):
    """Returns (model, is_box, (S_A, S_B), effective model section)."""
    section = _section(cfg, "model", required=True)
    kind = section.get("kind")
    if kind == "singlet":
        _no_unknown_keys(section, ("kind", "angles_a", "angles_b"),
                         "model")
        a = _get_list(section, "angles_a", "model", required=True)
        b = _get_list(section, "angles_b", "model", required=True)
        try:
            model = singlet_box(a, b)
        except (ValueError, TypeError) as exc:
            _fail("model", str(exc))
        return model, True, (len(a), len(b)), {
            "kind": kind, "angles_a": a, "angles_b": b}
    if kind == "box":
        _no_unknown_keys(section, ("kind", "table"), "model")
        table = _get_list(section, "table", "model", required=True)
        try:
            model = NoSignalingBox(np.array(table, dtype=float))
        except (ValueError, TypeError) as exc:
            _fail("model", str(exc))
        return model, True, (model.S_A, model.S_B), {
            "kind": kind, "table": table}
    if kind == "lhv":
        form = section.get("form")
        if form == "sign":
            _no_unknown_keys(section,
                             ("kind", "form", "angles_a", "angles_b"),
                             "model")
            a = _get_list(section, "angles_a", "model", required=True)
            b = _get_list(section, "angles_b", "model", required=True)
            try:
                model = sign_lhv_model(a, b)
            except (ValueError, TypeError) as exc:
                _fail("model", str(exc))
            return model, False, (len(a), len(b)), {
                "kind": kind, "form": form, "angles_a": a,
                "angles_b": b}
        if form == "vector-sign":
            _no_unknown_keys(section,
                             ("kind", "form", "axes_a", "axes_b"),
                             "model")
            a = _get_list(section, "axes_a", "model", required=True)
            b = _get_list(section, "axes_b", "model", required=True)
            try:
                model = vector_sign_lhv_model(a, b)
            except (ValueError, TypeError) as exc:
                _fail("model", str(exc))
            return model, False, (len(a), len(b)), {
                "kind": kind, "form": form, "axes_a": a, "axes_b": b}
        if form == "table":
            _no_unknown_keys(section,
                             ("kind", "form", "outcomes_a", "outcomes_b",
                              "lambda_probs"), "model")
            oa = _get_list(section, "outcomes_a", "model", required=True)
            ob = _get_list(section, "outcomes_b", "model", required=True)
            lp = _get_list(section, "lambda_probs", "model", required=True)
            try:
                model = table_lhv_model(oa, ob, lp)
            except (ValueError, TypeError) as exc:
                _fail("model", str(exc))
            return model, False, (len(oa), len(ob)), {
                "kind": kind, "form": form, "outcomes_a": oa,
                "outcomes_b": ob, "lambda_probs": lp}
        _fail("model.form",
              f"must be one of sign, vector-sign, table; got {form!r}")
    _fail("model.kind",
          f"must be one of lhv, box, singlet; got {kind!r}")


def _build_detector(cfg: dict, key: str):
    section = _section(cfg, key)
    _no_unknown_keys(section, tuple(_DETECTOR_DEFAULTS), key)
    eff = dict(_DETECTOR_DEFAULTS)
    for name in _DETECTOR_DEFAULTS:
        eff[name] = float(_get_number(section, name, key,
                                      default=eff[name]))
    try:
        det = DetectorModel(**eff)
    except ValueError as exc:
        _fail(key, str(exc))
    return det, eff


def _build_analysis(cfg: dict) -> dict:
    section = _section(cfg, "analysis")
    _no_unknown_keys(section, tuple(_ANALYSIS_DEFAULTS), "analysis")
    eff = dict(_ANALYSIS_DEFAULTS)
    eff["z_threshold"] = float(_get_number(
        section, "z_threshold", "analysis", eff["z_threshold"]))
    eff["feasibility_tolerance"] = float(_get_number(
        section, "feasibility_tolerance", "analysis",
        eff["feasibility_tolerance"]))
    flag = section.get("project_singles", eff["project_singles"])
    if not isinstance(flag, bool):
        _fail("analysis.project_singles", "must be true or false")
    eff["project_singles"] = flag
    if eff["z_threshold"] <= 0:
        _fail("analysis.z_threshold", "must be positive")
    if not (0 < eff["feasibility_tolerance"] < 1e-3):
        _fail("analysis.feasibility_tolerance",
              "must be in (0, 1e-3)")
    return eff


def load_config(path: str, seed_override: Optional[int] = None):
    """Parse and fully validate a pipeline config; nothing is written.

    Returns (plan dict, effective config dict, raw file bytes).
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    _no_unknown_keys(cfg, ("model", "schedule", "detector_a",
                           "detector_b", "matching", "analysis",
                           "output_dir"), "config")

    model, is_box, (S_A, S_B), model_eff = _build_model(cfg)

    sched = _section(cfg, "schedule", required=True)
    _no_unknown_keys(sched, ("num_trials", "trial_period",
                             "setting_law_a", "setting_law_b", "seed"),
                     "schedule")
    num_trials = _get_int(sched, "num_trials", "schedule", required=True)
    trial_period = float(_get_number(sched, "trial_period", "schedule",
                                     required=True))
    law_a = _get_list(sched, "setting_law_a", "schedule")
    law_b = _get_list(sched, "setting_law_b", "schedule")
    if law_a is None:
        law_a = [1.0 / S_A] * S_A
    if law_b is None:
        law_b = [1.0 / S_B] * S_B
    if len(law_a) != S_A:
        _fail("schedule.setting_law_a",
              f"length {len(law_a)} does not match {S_A} settings")
    if len(law_b) != S_B:
        _fail("schedule.setting_law_b",
              f"length {len(law_b)} does not match {S_B} settings")
    seed_cfg = _get_int(sched, "seed", "schedule", default=0)
    seed = seed_cfg if seed_override is None else seed_override
    try:
        schedule = TrialSchedule(num_trials, trial_period,
                                 np.array(law_a, dtype=float),
                                 np.array(law_b, dtype=float), seed)
    except (ValueError, TypeError) as exc:
        _fail("schedule", str(exc))

    det_a, det_a_eff = _build_detector(cfg, "detector_a")
    det_b, det_b_eff = _build_detector(cfg, "detector_b")

    matching = _section(cfg, "matching", required=True)
    _no_unknown_keys(matching, ("tau", "policy"), "matching")
    tau = _get_number(matching, "tau", "matching", required=True)
    if not tau > 0:
        _fail("matching.tau", f"must be positive, got {tau!r}")
    policy = matching.get("policy", "greedy-nearest")
    if policy not in POLICIES:
        _fail("matching.policy",
              f"must be one of {list(POLICIES)}; got {policy!r}")

    analysis_eff = _build_analysis(cfg)

    output_dir = cfg.get("output_dir")
    if not isinstance(output_dir, str) or not output_dir:
        _fail("output_dir", "must be a nonempty string")

    effective = {
        "model": model_eff,
        "schedule": {"num_trials": num_trials,
                     "trial_period": trial_period,
                     "setting_law_a": list(law_a),
                     "setting_law_b": list(law_b),
                     "seed": seed_cfg},
        "detector_a": det_a_eff,
        "detector_b": det_b_eff,
        "matching": {"tau": float(tau), "policy": policy},
        "analysis": analysis_eff,
        "output_dir": output_dir,
    }
    plan = {"model": model, "is_box": is_box, "schedule": schedule,
            "det_a": det_a, "det_b": det_b, "tau": float(tau),
            "policy": policy, "analysis": analysis_eff,
            "output_dir": Path(output_dir), "seed": seed}
    return plan, effective, raw


def _atomic_write_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_write_with(path: Path, writer):
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _flatten(prefix: str, value, out: dict):
    if isinstance(value, dict):
        for k in value:
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], out)
    else:
        out[prefix] = json.dumps(value, sort_keys=True,
                                 separators=(",", ":"))


def _manifest_text(entries: dict) -> str:
    lines = [f"{key} = {entries[key]}" for key in sorted(entries)]
    return "\n".join(lines) + "\n"


def _version_entries() -> dict:
    import scipy
    return {
        "version.numpy": json.dumps(np.__version__),
        "version.package": json.dumps(__version__),
        "version.python": json.dumps(
            ".".join(map(str, sys.version_info[:3]))),
        "version.scipy": json.dumps(scipy.__version__),
    }


def _analysis_documents(pairs: PairSet, analysis_cfg: dict):
    """The analysis tail shared by run and analyze: counts plus the
    report dictionary.  Raises ResourceGuardError or
    VerificationError like the underlying modules."""
    table = tabulate(pairs)
    conds = conditionals(table)
    report = {
        "dims": {"S_A": table.S_A, "S_B": table.S_B,
                 "d_A": table.d_A, "d_B": table.d_B},
        "total_pairs": table.total,
        "match_diagnostics": {
            "matched": pairs.diagnostics.matched,
            "unmatched_A": pairs.diagnostics.unmatched_A,
            "unmatched_B": pairs.diagnostics.unmatched_B,
            "multi_candidate_events":
                pairs.diagnostics.multi_candidate_events,
            "tau": pairs.tau,
            "policy": pairs.policy,
        },
        "conditional_tables": [
            {"a": c.a, "b": c.b, "n": c.n_ab,
             "probs": c.probs.tolist()} for c in conds],
        "no_signaling": no_signaling_check(
            table, analysis_cfg["z_threshold"]).to_dict(),
    }
    dims = (table.S_A, table.S_B, table.d_A, table.d_B)
    if dims == (2, 2, 2, 2):
        if all(c.n_ab > 0 for c in conds):
            s, pattern = chsh(conds)
            report["chsh"] = {"S": s, "pattern": list(pattern),
                              "sigma": chsh_sigma(conds)}
        else:
            report["chsh"] = {
                "skipped": "a setting pair has no data"}
    else:
        report["chsh"] = {
            "skipped": "requires 2 settings and 2 outcomes per arm"}
    empty = [(c.a, c.b) for c in conds if c.is_empty]
    if empty:
        report["feasibility"] = {
            "skipped": f"setting pairs without data: {empty}"}
    else:
        problem = MarginalProblem.from_conditionals(
            conds, tolerance=analysis_cfg["feasibility_tolerance"])
        result = solve_joint_feasibility(
            problem, project_singles=analysis_cfg["project_singles"])
        report["feasibility"] = result.to_dict()
    return table, report


def _emit_analysis(out_dir: Path, table, report: dict):
    _atomic_write_text(out_dir / "counts.csv", counts_csv_text(table))
    _atomic_write_text(out_dir / "analysis.json",
                       json.dumps(report, sort_keys=True, indent=2)
                       + "\n")


def _summarize(report: dict):
    chsh_part = report["chsh"]
    if "S" in chsh_part:
        print(f"chsh S = {chsh_part['S']:.6f} "
              f"(sigma {chsh_part['sigma']:.2e})")
    feas = report["feasibility"]
    if "status" in feas:
        line = f"feasibility: {feas['status']}"
        if feas["status"] == "infeasible":
            line += (f" (witness {feas['witness_value']:.6f} > "
                     f"bound {feas['classical_bound']:g})")
        print(line)


def cmd_run(args) -> int:
    plan, effective, raw = load_config(args.config, args.seed)

    schedule = plan["schedule"]
    if plan["is_box"]:
        rec_a, rec_b = simulate_box(plan["model"], schedule)
    else:
        rec_a, rec_b = simulate_lhv(plan["model"], schedule)
    rec_a = apply_detector(rec_a, plan["det_a"],
                           derive_seed(plan["seed"], _DETECTOR_SEED_A),
                           setting_law=schedule.setting_law_A)
    rec_b = apply_detector(rec_b, plan["det_b"],
                           derive_seed(plan["seed"], _DETECTOR_SEED_B),
                           setting_law=schedule.setting_law_B)

    out_dir = plan["output_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_with(out_dir / "arm_A.txt",
                       lambda p: write_arm_record(rec_a, p))
    _atomic_write_with(out_dir / "arm_B.txt",
                       lambda p: write_arm_record(rec_b, p))

    pairs = match_events(rec_a, rec_b, tau=plan["tau"],
                         policy=plan["policy"])
    _atomic_write_with(out_dir / "pairs.txt",
                       lambda p: write_pairs(pairs, p))

    table, report = _analysis_documents(pairs, plan["analysis"])
    _emit_analysis(out_dir, table, report)

    entries = {}
    _flatten("config", effective, entries)
    entries["command"] = json.dumps("run")
    entries["config_sha256"] = json.dumps(
        hashlib.sha256(raw).hexdigest())
    entries["created_utc"] = json.dumps(
        datetime.now(timezone.utc).isoformat())
    entries["seed.effective"] = json.dumps(plan["seed"])
    entries.update(_version_entries())
    _atomic_write_text(out_dir / "manifest.txt",
                       _manifest_text(entries))

    print(f"wrote {out_dir}")
    _summarize(report)
    return EXIT_OK


def _sniff_kind(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    first = line.strip()
                    break
            else:
                first = ""
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if first.startswith("arm="):
        return "arm"
    if first.startswith("tau="):
        return "pairs"
    raise ConfigError(
        f"{path}: not an arm-record or pairs file "
        f"(first line {first[:40]!r})")


def cmd_analyze(args) -> int:
    analysis_cfg = {
        "z_threshold": args.z_threshold,
        "feasibility_tolerance": args.tolerance,
        "project_singles": args.project_singles,
    }
    if analysis_cfg["z_threshold"] <= 0:
        raise ConfigError("--z-threshold must be positive")
    if not (0 < analysis_cfg["feasibility_tolerance"] < 1e-3):
        raise ConfigError("--tolerance must be in (0, 1e-3)")
    if args.policy is not None and args.policy not in POLICIES:
        raise ConfigError(
            f"--policy must be one of {list(POLICIES)}")

    kinds = [_sniff_kind(p) for p in args.inputs]
    matched_here = False
    if kinds == ["pairs"]:
        if args.tau is not None or args.policy is not None:
            raise ConfigError(
                "--tau/--policy apply only when matching two arm "
                "files; a pairs file is already matched")
        pairs = read_pairs(args.inputs[0])
    elif sorted(kinds) == ["arm", "arm"]:
        if args.tau is None:
            raise ConfigError("matching two arm files requires --tau")
        if not args.tau > 0:
            raise ConfigError(f"--tau must be positive, got {args.tau}")
        records = {}
        for path in args.inputs:
            rec = read_arm_record(path)
            if rec.arm_id in records:
                raise ConfigError(
                    f"both files declare arm={rec.arm_id}; need one "
                    "record per arm")
            records[rec.arm_id] = rec
        pairs = match_events(records["A"], records["B"], tau=args.tau,
                             policy=args.policy or "greedy-nearest")
        matched_here = True
    else:
        raise ConfigError(
            "inputs must be one pairs file or two arm-record files; "
            f"got {kinds}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if matched_here:
        _atomic_write_with(out_dir / "pairs.txt",
                           lambda p: write_pairs(pairs, p))
    table, report = _analysis_documents(pairs, analysis_cfg)
    _emit_analysis(out_dir, table, report)

    entries = {
        "command": json.dumps("analyze"),
        "created_utc": json.dumps(
            datetime.now(timezone.utc).isoformat()),
        "config.matching.tau": json.dumps(pairs.tau),
        "config.matching.policy": json.dumps(pairs.policy),
    }
    _flatten("config.analysis", analysis_cfg, entries)
    _flatten("config", {"output_dir": str(out_dir)}, entries)
    for k, path in enumerate(args.inputs):
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        entries[f"inputs.{k}.path"] = json.dumps(str(path))
        entries[f"inputs.{k}.sha256"] = json.dumps(digest)
    entries.update(_version_entries())
    _atomic_write_text(out_dir / "manifest.txt",
                       _manifest_text(entries))

    print(f"wrote {out_dir}")
    _summarize(report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bellkit",
        description="Simulate two-arm timestamped experiments, match "
                    "coincidences, and test joint-distribution "
                    "feasibility.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full pipeline from a config")
    p_run.add_argument("config", help="JSON configuration file")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override schedule.seed")

    p_an = sub.add_parser("analyze",
                          help="analysis tail on existing files")
    p_an.add_argument("inputs", nargs="+",
                      help="one pairs file, or two arm-record files")
    p_an.add_argument("--out", required=True, help="output directory")
    p_an.add_argument("--tau", type=float, default=None,
                      help="coincidence window (arm files only)")
    p_an.add_argument("--policy", default=None,
                      help="matching policy (arm files only)")
    p_an.add_argument("--z-threshold", type=float, default=5.0)
    p_an.add_argument("--tolerance", type=float, default=1e-9)
    p_an.add_argument("--project-singles", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_analyze(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceGuardError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
