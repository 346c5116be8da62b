"""Command-line interface.

Commands::

    subclassrep mine CORPUS [--config CFG] [--thr T] [--top-k K] --out DIR
        DIR/catalog.csv, DIR/cooccurrence.csv
    subclassrep split CORPUS [--ratios 4 3 1] [--seed S] --out DIR
        DIR/part_subclass.jsonl, DIR/part_top.jsonl, DIR/part_val.jsonl
    subclassrep run [CFG | MANIFEST] [--seed S] [--jobs N] [--out DIR]
        DIR/manifest.json, DIR/config.yaml and per method
        DIR/<method>/learning_curve.csv,
        DIR/<method>/size_<n>/{ranking_<class>.csv, report.json, models.json[, catalog.csv]}
    subclassrep compare DIR [--out DIR2]
        DIR2/compare.csv (DIR2 defaults to DIR)
    subclassrep evaluate RANKINGS_DIR TRUTH_CORPUS [--out DIR]
        DIR/report.json
    subclassrep synth [--seed S] --out DIR
        DIR/train.jsonl, DIR/test.jsonl (synthetic subclass-mixture corpus)

Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import yaml

from subclassrep.dataset import load_records, split_dataset, write_records
from subclassrep.errors import DataError, InvariantError
from subclassrep.evaluation import MAPReport, RankedList, learning_curve, map_over_classes, rows_to_csv
from subclassrep.pipeline import MethodKind, PipelineConfig, run_method
from subclassrep.tagmine import MiningConfig, mine_subclasses

logger = logging.getLogger("subclassrep")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4


@dataclass(frozen=True)
class RunConfig:
    corpus: str
    test_corpus: str
    out: str = "runs/out"
    methods: tuple[MethodKind, ...] = tuple(MethodKind)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        methods = tuple(m if isinstance(m, MethodKind) else MethodKind.parse(m) for m in self.methods)
        if not methods:
            raise DataError("config lists no methods")
        object.__setattr__(self, "methods", methods)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "corpus": self.corpus,
            "test_corpus": self.test_corpus,
            "out": self.out,
            "methods": [m.value for m in self.methods],
            "pipeline": self.pipeline.to_dict(),
        }
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "RunConfig":
        if not isinstance(obj, dict):
            raise DataError("config must be a mapping")
        unknown = sorted(set(obj) - {"corpus", "test_corpus", "out", "methods", "pipeline", "labels"})
        if unknown:
            raise DataError(f"unknown config key(s): {', '.join(unknown)}")
        for key in ("corpus", "test_corpus"):
            if key not in obj:
                raise DataError(f"config is missing {key!r}")
        return cls(
            corpus=str(obj["corpus"]),
            test_corpus=str(obj["test_corpus"]),
            out=str(obj.get("out", "runs/out")),
            methods=tuple(obj.get("methods", [m.value for m in MethodKind])),
            pipeline=PipelineConfig.from_dict(obj.get("pipeline", {}) or {}),
            labels=obj.get("labels"),
        )

    def render(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        try:
            obj = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise DataError(f"config is not valid YAML: {exc}") from None
        return cls.from_dict(obj)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load_run_config(path: Path) -> tuple[RunConfig, str]:
    """The config and the verbatim text it was read from (carried over from a manifest)."""
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
        if isinstance(obj, dict) and "config_text" in obj:
            return RunConfig.parse(obj["config_text"]), obj.get("config_source", obj["config_text"])
        return RunConfig.from_dict(obj), text
    return RunConfig.parse(text), text


def _read_mining(path: str | None) -> MiningConfig:
    if path is None:
        return MiningConfig()
    obj = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if "pipeline" in obj:
        obj = obj["pipeline"]
    try:
        return MiningConfig(**(obj.get("mining", obj) or {}))
    except TypeError as exc:
        raise DataError(f"invalid mining config: {exc}") from None


def cmd_mine(args) -> int:
    records = load_records(args.corpus)
    if not records:
        raise DataError(f"corpus {args.corpus} is empty")
    cfg = _read_mining(args.config)
    overrides = {}
    if args.thr is not None:
        overrides["thr_distin"] = args.thr
    if args.top_k is not None:
        overrides["top_k"] = args.top_k
    cfg = replace(cfg, **overrides)
    classes = sorted({r.label for r in records})
    catalog, C = mine_subclasses(records, classes, cfg)
    out = Path(args.out)
    _write(out / "catalog.csv", catalog.to_csv())
    _write(out / "cooccurrence.csv", C.to_csv())
    for label, count in catalog.per_class_counts().items():
        print(f"{label}\t{count}")
    print(f"total\t{len(catalog)}")
    return EXIT_OK


def cmd_split(args) -> int:
    records = load_records(args.corpus)
    split = split_dataset(records, args.ratios, args.seed if args.seed is not None else 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("part_subclass", "part_top", "part_val"), split.parts):
        write_records(part, out / f"{name}.jsonl")
        print(f"{name}\t{len(part)}")
    return EXIT_OK


def _report_json(report: MAPReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def execute_run(config: RunConfig, config_source: str | None = None, jobs: int = 1) -> Path:
    """Run every configured method and write all outputs under ``config.out``.

    The manifest keeps the effective config (after command-line overrides),
    which alone reproduces the run, and the verbatim source it came from.
    """
    config_text = config.render()
    pc = config.pipeline
    corpus_path, test_path = Path(config.corpus), Path(config.test_corpus)
    records = load_records(corpus_path, labels=config.labels)
    if not records:
        raise DataError(f"corpus {corpus_path} is empty")
    test = load_records(test_path, expected_dim=records[0].dim, labels=config.labels)
    if not test:
        raise DataError(f"test corpus {test_path} is empty")
    classes = tuple(sorted(config.labels)) if config.labels else tuple(sorted({r.label for r in records}))
    split = split_dataset(records, pc.split_ratios, pc.seed)
    truth = {r.id: r.label for r in test}

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, Any] = {
        "config_text": config_text,
        "config_source": config_text if config_source is None else config_source,
        "config": config.to_dict(),
        "seed": pc.seed,
        "corpus_sha256": _sha256(corpus_path),
        "test_corpus_sha256": _sha256(test_path),
        "classes": list(classes),
        "split_sizes": [len(p) for p in split.parts],
        "methods": {},
    }
    for method in config.methods:
        results = run_method(method, split, test, pc, classes=classes, jobs=jobs)
        mdir = out / method.value
        reports = []
        entry: dict[str, Any] = {"sizes": []}
        for res in results:
            sdir = mdir / f"size_{res.train_size}"
            for label, ranked in res.per_class_rankings.items():
                _write(sdir / f"ranking_{_slug(label)}.csv", ranked.to_csv())
            report = map_over_classes(res.per_class_rankings, truth, train_size=res.train_size)
            reports.append(report)
            _write(sdir / "report.json", _report_json(report))
            models = {k: v.to_dict() for k, v in res.models.items()}
            _write(sdir / "models.json", json.dumps(models) + "\n")
            size_entry: dict[str, Any] = {
                "train_size": res.train_size,
                "requested_size": res.requested_size,
                "clamped": res.clamped,
                "map": report.map,
                "model_file": str((sdir / "models.json").relative_to(out)),
            }
            if res.catalog is not None:
                _write(sdir / "catalog.csv", res.catalog.to_csv())
                size_entry["catalog_sha256"] = res.catalog.digest()
                size_entry["catalog_size"] = len(res.catalog)
            if res.clamped:
                logger.warning("%s: training sizes clamped: %s", method.value, res.clamped)
            entry["sizes"].append(size_entry)
            print(f"{method.value}\tsize={res.train_size}\tMAP={report.map:.4f}")
        _write(mdir / "learning_curve.csv", rows_to_csv(learning_curve(reports, classes)))
        manifest["methods"][method.value] = entry
    _write(out / "config.yaml", config_text)
    _write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return out


def cmd_run(args) -> int:
    path = args.config_file or args.config
    if path is None:
        raise DataError("run needs a config file (positional or --config)")
    config, source = _load_run_config(Path(path))
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["pipeline"] = replace(config.pipeline, seed=args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if overrides:
        config = replace(config, **overrides)
    execute_run(config, source, jobs=args.jobs)
    return EXIT_OK


def _read_curve(path: Path) -> dict[int, float]:
    with path.open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {int(r["train_size"]): float(r["map"]) for r in rows}


def compare_curves(curves: dict[str, dict[int, float]]) -> list[list]:
    """Rows of (baseline, train_size, map_sub, map_base, delta, relative_gain)."""
    sub = MethodKind.SUBCLASS_PROB.value
    if sub not in curves:
        raise DataError(f"no {sub} reports found")
    baselines = [m for m in curves if m != sub]
    if not baselines:
        raise DataError("need at least one baseline report set to compare against")
    grid = sorted(curves[sub])
    rows: list[list] = [["baseline", "train_size", "map_subclass", "map_baseline", "delta", "relative_gain"]]
    for base in sorted(baselines):
        if sorted(curves[base]) != grid:
            raise DataError(f"size grids differ: {sub} has {grid}, {base} has {sorted(curves[base])}")
        deltas, gains = [], []
        for size in grid:
            a, b = curves[sub][size], curves[base][size]
            delta = a - b
            gain = delta / b if b > 0 else float("nan")
            deltas.append(delta)
            gains.append(gain)
            rows.append([base, size, a, b, delta, gain])
        rows.append([base, "average", "", "", sum(deltas) / len(deltas), sum(gains) / len(gains)])
    return rows


def _format_table(rows: Sequence[Sequence]) -> str:
    cells = [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in row] for row in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(cells[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells)


def cmd_compare(args) -> int:
    root = Path(args.report_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"report directory not found: {root}")
    curves = {}
    for m in MethodKind:
        path = root / m.value / "learning_curve.csv"
        if path.exists():
            curves[m.value] = _read_curve(path)
    if len(curves) < 2:
        raise DataError(f"{root}: need reports from at least two methods, found {sorted(curves) or 'none'}")
    rows = compare_curves(curves)
    out = Path(args.out) if args.out else root
    _write(out / "compare.csv", rows_to_csv(rows))
    print(_format_table(rows))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    truth_records = load_records(args.truth)
    truth = {r.id: r.label for r in truth_records}
    by_slug = {_slug(label): label for label in set(truth.values())}
    rankings = {}
    for path in sorted(Path(args.rankings).glob("ranking_*.csv")):
        slug = path.stem[len("ranking_") :]
        if slug not in by_slug:
            raise DataError(f"{path.name}: no class in the truth corpus matches {slug!r}")
        rankings[by_slug[slug]] = RankedList.from_csv(path.read_text(encoding="utf-8"))
    if not rankings:
        raise DataError(f"no ranking_*.csv files in {args.rankings}")
    report = map_over_classes(rankings, truth)
    out = Path(args.out) if args.out else Path(args.rankings)
    _write(out / "report.json", _report_json(report))
    for label, ap in report.per_class_ap.items():
        print(f"{label}\t{ap:.4f}")
    print(f"MAP\t{report.map:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from subclassrep.synthetic import make_subclass_mixture

    train, test = make_subclass_mixture(
        n_train=args.n_train, n_test=args.n_test, dim=args.dim, tag_noise=args.tag_noise,
        seed=args.seed if args.seed is not None else 0,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(train, out / "train.jsonl")
    write_records(test, out / "test.jsonl")
    print(f"train\t{len(train)}\ntest\t{len(test)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (YAML) or run manifest (JSON)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--jobs", type=int, default=1, help="worker threads; results do not depend on it")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="subclassrep", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", parents=[common], help="mine the subclass catalog from a corpus")
    p.add_argument("corpus")
    p.add_argument("--thr", type=float, help="distinctive-score threshold")
    p.add_argument("--top-k", type=int, help="subclasses kept per class")
    p.set_defaults(func=cmd_mine, out_required=True)

    p = sub.add_parser("split", parents=[common], help="stratified three-way split of a corpus")
    p.add_argument("corpus")
    p.add_argument("--ratios", type=int, nargs=3, default=[4, 3, 1], metavar=("R1", "R2", "R3"))
    p.set_defaults(func=cmd_split, out_required=True)

    p = sub.add_parser("run", parents=[common], help="train, rank and evaluate the configured methods")
    p.add_argument("config_file", nargs="?", help="run configuration or manifest")
    p.set_defaults(func=cmd_run, out_required=False)

    p = sub.add_parser("compare", parents=[common], help="MAP deltas of SVM_SubClassProb against the baselines")
    p.add_argument("report_dir")
    p.set_defaults(func=cmd_compare, out_required=False)

    p = sub.add_parser("evaluate", parents=[common], help="AP/MAP of ranking files against a labelled corpus")
    p.add_argument("rankings")
    p.add_argument("truth")
    p.set_defaults(func=cmd_evaluate, out_required=False)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic subclass-mixture corpus")
    p.add_argument("--n-train", type=int, default=600)
    p.add_argument("--n-test", type=int, default=300)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--tag-noise", type=float, default=0.1)
    p.set_defaults(func=cmd_synth, out_required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.out_required and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"error [{_where(exc)}]: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except DataError as exc:
        print(f"error [{_where(exc)}]: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_IO


def _where(exc: BaseException) -> str:
    tb = exc.__traceback__
    module = "cli"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("subclassrep."):
            module = name.rsplit(".", 1)[-1]
        tb = tb.tb_next
    return module


if __name__ == "__main__":
    sys.exit(main())
