"""``rockmass`` command line: synth | ingest | aggregate | train | cv | tune | predict | report.

Every command resolves one ``RunConfig`` (JSON file, then flags on top),
validates it before touching data and writes it to the output directory as
``run_config.json``. Outputs carry no timestamps, so a replayed config
reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from rockmass.errors import ConfigError, DataError, RockmassError, UnknownKind
from rockmass.qsystem import DROP, apply_grouping, get_scheme

COMMANDS = ("synth", "ingest", "aggregate", "train", "cv", "tune", "predict", "report")
TARGETS = ("class", "log_q", "log_q_base")
EVAL_MODES = ("holdout", "cv", "both")

# the three-learner ensemble used when --model voting is given without members
DEFAULT_VOTING_MEMBERS = ("knn", "extra_trees", "gbt")


@dataclass
class RunConfig:
    command: str = "train"
    input: str | None = None
    model_file: str | None = None
    out: str = "."
    seed: int = 0
    grouping: str = "A,B,C,D,E1,E2"
    feature_set: str = "all"
    target: str = "class"
    model: Any = "knn"
    scaler: str = "minmax"
    outliers: Any = "none"
    balance: Any = "none"
    eval_mode: str = "holdout"
    test_fraction: float = 0.25
    cv_folds: int = 5
    n_trials: int = 20
    sampler: str = "tpe_lite"
    rounds: int = 2000
    synth: dict = field(default_factory=dict)
    section_length_m: float = 1.0
    transition_window_m: float = 10.0

    @property
    def task(self) -> str:
        return "classification" if self.target == "class" else "regression"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**d)

    def model_spec(self):
        from rockmass.models import ModelSpec, model_kind

        m = self.model
        if isinstance(m, str):
            m = {"kind": m}
        if not isinstance(m, dict) or "kind" not in m:
            raise ConfigError("model must be a kind name or an object with a 'kind' entry")
        kind = model_kind(m["kind"])
        params = dict(m.get("params", {}))
        if kind == "voting" and "members" not in params:
            params["members"] = [
                {"scaler": self.scaler, "model": {"kind": k, "task": self.task, "params": {}, "seed": 0}}
                for k in DEFAULT_VOTING_MEMBERS
            ]
        return ModelSpec(kind, self.task, params, int(m.get("seed", self.seed)))

    def pipeline(self):
        from rockmass.pipeline import Pipeline

        return Pipeline(self.model_spec(), self.scaler, self.outliers, self.balance, self.seed)

    def validate(self) -> None:
        from rockmass.features import feature_set_kind

        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"eval_mode must be one of {EVAL_MODES}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if not isinstance(self.cv_folds, int) or self.cv_folds < 2:
            raise ConfigError("cv_folds must be an integer >= 2")
        if not isinstance(self.n_trials, int) or self.n_trials < 1:
            raise ConfigError("n_trials must be a positive integer")
        if not isinstance(self.rounds, int) or self.rounds < 1:
            raise ConfigError("rounds must be a positive integer")
        if not self.section_length_m > 0 or not self.transition_window_m >= 0:
            raise ConfigError("section_length_m must be positive and transition_window_m non-negative")
        get_scheme(self.grouping)
        feature_set_kind(self.feature_set)
        if self.command in ("train", "cv", "tune"):
            self.pipeline()
        if self.command in ("ingest", "aggregate", "train", "cv", "tune", "predict", "report") and not self.input:
            raise ConfigError(f"{self.command} needs --input")
        if self.command == "predict" and not self.model_file:
            raise ConfigError("predict needs --model-file")


# ---------------------------------------------------------------- helpers


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(obj):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _sections_path(p: str) -> Path:
    path = Path(p)
    if path.is_dir():
        path = path / "sections.csv"
    if not path.exists():
        raise DataError(f"sections file not found: {path}")
    return path


def _dataset_paths(p: str) -> tuple[Path, Path]:
    d = Path(p)
    holes, rounds = d / "drillholes.csv", d / "rounds.csv"
    for f in (holes, rounds):
        if not f.exists():
            raise DataError(f"dataset file not found: {f}")
    return holes, rounds


def _load_table(cfg: RunConfig):
    from rockmass.features import read_sections, select_features

    table = read_sections(_sections_path(cfg.input))
    return select_features(table, cfg.feature_set)


def _targets(cfg: RunConfig, table):
    """Training labels plus the row subset that carries them."""
    if cfg.task == "classification":
        if any(c is None for c in table.q_class):
            raise DataError("training needs labeled sections (q_class column)")
        y = np.array([apply_grouping(str(c), cfg.grouping) for c in table.q_class], dtype=object)
        keep = np.flatnonzero(y != DROP)
        return table.subset(keep), y[keep].astype(str)
    src = table.q if cfg.target == "log_q" else table.q_base
    ok = np.flatnonzero(np.isfinite(src) & (src > 0))
    if len(ok) == 0:
        raise DataError(f"no finite positive {cfg.target[4:]} labels to regress on")
    return table.subset(ok), np.log10(src[ok])


def _roster(cfg: RunConfig):
    return get_scheme(cfg.grouping).labels if cfg.task == "classification" else None


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: RunConfig, out: Path) -> list[Path]:
    from rockmass.synth import SynthSpec, generate, write_synthetic

    spec = SynthSpec.from_dict({**cfg.synth, "n_rounds": cfg.rounds, "seed": cfg.seed})
    return write_synthetic(generate(spec), out)


def cmd_ingest(cfg: RunConfig, out: Path) -> list[Path]:
    from rockmass.dataset import load_dataset, validate, write_dataset

    holes, rounds = _dataset_paths(cfg.input)
    ds = load_dataset(holes, rounds)
    report = validate(ds)
    paths = list(write_dataset(ds, out))
    counts = ds.provenance.counts
    doc = {
        "validation": report.to_dict(),
        "n_rounds": len(ds.rounds),
        "n_records": ds.n_records,
        "parse_counts": None if counts is None else asdict(counts),
    }
    paths.append(_write_json(out / "validation.json", doc))
    return paths


def cmd_aggregate(cfg: RunConfig, out: Path) -> list[Path]:
    from rockmass.dataset import load_dataset
    from rockmass.features import build_sections, write_sections

    holes, rounds = _dataset_paths(cfg.input)
    table = build_sections(load_dataset(holes, rounds), cfg.section_length_m, cfg.transition_window_m)
    return [write_sections(table, out / "sections.csv")]


def _prediction_rows(table, fp, index=None):
    from rockmass.pipeline import pipeline_predict, pipeline_predict_proba, pipeline_predict_value

    if fp.task == "classification":
        label = pipeline_predict(fp, table.X, table.feature_names)
        proba = pipeline_predict_proba(fp, table.X, table.feature_names)
        cols = [f"p_{c}" for c in fp.classes]
        rows = [[*ids, label[i], *proba[i].tolist()] for i, ids in enumerate(_ids(table))]
        return ["label", *cols], rows, label, proba
    value = pipeline_predict_value(fp, table.X, table.feature_names)
    rows = [[*ids, float(value[i]), float(10.0 ** value[i])] for i, ids in enumerate(_ids(table))]
    return ["value_log10", "value"], rows, value, None


def _ids(table):
    return list(zip(table.tunnel_id.tolist(), table.round_id.tolist(), table.section_start_m.tolist()))


ID_HEADER = ["tunnel_id", "round_id", "section_start_m"]


def _emit_confusion(cm, out: Path, stem: str = "confusion") -> list[Path]:
    from rockmass.plots import confusion_triptych

    svg, twin = confusion_triptych(cm)
    (out / f"{stem}.svg").write_text(svg, encoding="utf-8")
    (out / f"{stem}.csv").write_text(twin, encoding="utf-8")
    return [out / f"{stem}.svg", out / f"{stem}.csv"]


def cmd_train(cfg: RunConfig, out: Path) -> list[Path]:
    from rockmass.evaluation import holdout_eval
    from rockmass.pipeline import serialize_pipeline

    table, y = _targets(cfg, _load_table(cfg))
    pipe = cfg.pipeline()
    res = holdout_eval(pipe, table.X, y, cfg.test_fraction, cfg.seed, table.feature_names, _roster(cfg))
    paths = []
    model_path = out / "model.json"
    model_path.write_bytes(serialize_pipeline(res.fitted))
    paths.append(model_path)
    report = res.to_dict()
    report["target"] = cfg.target
    report["grouping"] = get_scheme(cfg.grouping).name
    report["feature_set"] = cfg.feature_set
    report["features"] = list(table.feature_names)
    paths.append(_write_json(out / "eval_report.json", _clean(report)))

    test = table.subset(res.test_index)
    if res.task == "classification":
        header = ID_HEADER + ["y_true", "y_pred"] + [f"p_{c}" for c in res.fitted.classes]
        rows = [[*ids, y[res.test_index][i], res.y_pred[i], *res.proba[i].tolist()] for i, ids in enumerate(_ids(test))]
        paths += _emit_confusion(res.confusion, out)
    else:
        header = ID_HEADER + ["y_true_log10", "y_pred_log10"]
        rows = [[*ids, float(y[res.test_index][i]), float(res.y_pred[i])] for i, ids in enumerate(_ids(test))]
    paths.append(_write_csv(out / "holdout_predictions.csv", header, rows))
    if cfg.eval_mode in ("cv", "both"):
        paths += cmd_cv(cfg, out)
    return paths


def cmd_cv(cfg: RunConfig, out: Path) -> list[Path]:
    from rockmass.evaluation import kfold_cv

    table, y = _targets(cfg, _load_table(cfg))
    res = kfold_cv(cfg.pipeline(), table.X, y, cfg.cv_folds, cfg.seed, table.feature_names, _roster(cfg))
    paths = [_write_json(out / "cv_result.json", _clean(res.to_dict()))]
    if res.confusion is not None:
        paths += _emit_confusion(res.confusion, out, "cv_confusion")
    return paths


def cmd_tune(cfg: RunConfig, out: Path) -> list[Path]:
    from rockmass.evaluation import kfold_cv
    from rockmass.tuning import apply_config, export_history, pipeline_space, search

    table, y = _targets(cfg, _load_table(cfg))
    pipe = cfg.pipeline()
    space = pipeline_space(pipe.model, default_scaler=pipe.scaler)
    metric = "balanced_accuracy" if cfg.task == "classification" else "r2"

    def evaluator(config):
        res = kfold_cv(apply_config(pipe, config), table.X, y, cfg.cv_folds, cfg.seed, table.feature_names)
        return res.summary[metric]["mean"]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        best, history = search(space, evaluator, cfg.n_trials, cfg.sampler, cfg.seed, metric)
    paths = list(export_history(history, space, out, metric))
    doc = {
        "objective": metric,
        "best_trial": None if best is None else best.index,
        "best_value": None if best is None else best.value,
        "best_params": None if best is None else best.params,
        "pipeline": None if best is None else apply_config(pipe, best.params).to_dict(),
    }
    paths.append(_write_json(out / "best_config.json", _clean(doc)))
    return paths


def cmd_predict(cfg: RunConfig, out: Path) -> list[Path]:
    from rockmass.features import read_sections
    from rockmass.pipeline import deserialize_pipeline

    path = Path(cfg.model_file)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    fp = deserialize_pipeline(path.read_bytes())
    table = read_sections(_sections_path(cfg.input))
    try:
        table = table.with_features(fp.model.feature_names)
    except UnknownKind as exc:
        from rockmass.errors import FeatureContractMismatch

        raise FeatureContractMismatch(str(exc)) from None
    header, rows, _, _ = _prediction_rows(table, fp)
    return [_write_csv(out / "predictions.csv", ID_HEADER + header, rows)]


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, list(r)


def cmd_report(cfg: RunConfig, out: Path) -> list[Path]:
    from rockmass.evaluation import confusion_matrix
    from rockmass.features import read_sections
    from rockmass.plots import parallel_coordinates_svg, q_histogram, regression_panels

    run = Path(cfg.input)
    if not run.is_dir():
        raise DataError(f"report needs a run directory, got {run}")
    paths: list[Path] = []
    preds = run / "holdout_predictions.csv"
    if preds.exists():
        header, rows = _read_csv(preds)
        if "y_true" in header:
            report = json.loads((run / "eval_report.json").read_text(encoding="utf-8"))
            roster = report["confusion_matrix"]["roster"]
            t, p = header.index("y_true"), header.index("y_pred")
            cm = confusion_matrix([r[t] for r in rows], [r[p] for r in rows], roster)
            paths += _emit_confusion(cm, out, "confusion_triptych")
        else:
            t, p = header.index("y_true_log10"), header.index("y_pred_log10")
            yt = np.array([float(r[t]) for r in rows])
            yp = np.array([float(r[p]) for r in rows])
            svg, twin = regression_panels(yt, yp)
            (out / "regression_qq.svg").write_text(svg, encoding="utf-8")
            (out / "regression_qq.csv").write_text(twin, encoding="utf-8")
            paths += [out / "regression_qq.svg", out / "regression_qq.csv"]
    run_cfg = run / "run_config.json"
    sections = None
    if run_cfg.exists():
        src = json.loads(run_cfg.read_text(encoding="utf-8")).get("input")
        if src:
            try:
                sections = _sections_path(src)
            except DataError:
                sections = None
    if sections is None and (run / "sections.csv").exists():
        sections = run / "sections.csv"
    if sections is not None:
        table = read_sections(sections)
        ok = np.isfinite(table.q) & (table.q > 0)
        if ok.any():
            svg, twin = q_histogram(table.q[ok], table.q_base[ok])
            (out / "q_histogram.svg").write_text(svg, encoding="utf-8")
            (out / "q_histogram.csv").write_text(twin, encoding="utf-8")
            paths += [out / "q_histogram.svg", out / "q_histogram.csv"]
    pc = run / "parallel_coordinates.json"
    if pc.exists():
        svg, twin = parallel_coordinates_svg(json.loads(pc.read_text(encoding="utf-8")))
        (out / "parallel_coordinates.svg").write_text(svg, encoding="utf-8")
        (out / "parallel_coordinates.csv").write_text(twin, encoding="utf-8")
        paths += [out / "parallel_coordinates.svg", out / "parallel_coordinates.csv"]
    if not paths:
        raise DataError(f"nothing to report in {run}")
    return paths


HANDLERS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "aggregate": cmd_aggregate,
    "train": cmd_train,
    "cv": cmd_cv,
    "tune": cmd_tune,
    "predict": cmd_predict,
    "report": cmd_report,
}


# ---------------------------------------------------------------- argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _json_or_str(text: str):
    t = text.strip()
    if t.startswith("{") or t.startswith("["):
        try:
            return json.loads(t)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON option {text!r}: {exc}") from None
    return text


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rockmass", description="Rock mass classification from drilling data.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON RunConfig; flags override its entries")
    p.add_argument("--input", help="dataset directory, sections.csv or run directory")
    p.add_argument("--model-file", dest="model_file", help="fitted model.json for predict")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--grouping", help='class grouping scheme, e.g. "ABCD,E"')
    p.add_argument("--feature-set", dest="feature_set")
    p.add_argument("--target", choices=TARGETS)
    p.add_argument("--model", type=_json_or_str, help="learner kind or JSON model spec")
    p.add_argument("--scaler")
    p.add_argument("--balance", type=_json_or_str)
    p.add_argument("--outliers", type=_json_or_str)
    p.add_argument("--eval", dest="eval_mode", choices=EVAL_MODES)
    p.add_argument("--cv-folds", dest="cv_folds", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--trials", dest="n_trials", type=int)
    p.add_argument("--sampler", choices=("random", "tpe_lite"))
    p.add_argument("--rounds", type=int)
    return p


def resolve_config(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    base: dict = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError("config must be a JSON object")
    flags = {k: v for k, v in vars(args).items() if k != "config" and v is not None}
    cfg = RunConfig.from_dict({**base, **flags})
    cfg.validate()
    return cfg


def run(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = HANDLERS[cfg.command](cfg, out)
    paths.append(_write_json(out / "run_config.json", cfg.to_dict()))
    return paths


def _fail(exc: Exception, code: int) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        cfg = resolve_config(sys.argv[1:] if argv is None else argv)
        paths = run(cfg)
    except RockmassError as exc:
        return _fail(exc, exc.exit_code)
    except (FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        return _fail(exc, DataError.exit_code)
    except TypeError as exc:
        return _fail(exc, ConfigError.exit_code)
    except Exception as exc:  # surfaced as a runtime failure, never a traceback
        return _fail(exc, 4)
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
