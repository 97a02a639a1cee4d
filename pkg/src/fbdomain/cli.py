"""Command line entry point: ``fbdomain solve | diagnose | check | render``.

Thread count: ``--threads`` or the ``FBDOMAIN_THREADS`` environment variable
(applied to the BLAS pools before numpy is loaded).
"""

import argparse
import os
import sys


def _apply_threads(argv):
    threads = os.environ.get("FBDOMAIN_THREADS")
    if "--threads" in argv:
        i = argv.index("--threads")
        if i + 1 < len(argv):
            threads = argv[i + 1]
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


_apply_threads(sys.argv)

import copy  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    FBError,
    IntegrityError,
    StaleArtifactError,
)

DEFAULTS = {
    "seed": 0,
    "sequence": {
        "kind": "autonomous",
        "N": 100,
        "epsilon": 0.01,
        "model": "both",
        "tail": "freeze",
        "n_samples": 10000,
        "k": 2,
        "a": 0.15,
        "b": 0.55,
        "xi_order": 0.9,
        "d": 2,
        "F": None,
        "path": None,
    },
    "normalization": {
        "rho": 0.5,
        "gap_spec": 0.05,
        "delta": 0.25,
        "xi_order": 0.95,
        "offdiag_scale": 1.0,
        "dilation": None,
        "n_samples": 10000,
    },
    "solver": {
        "xi_exp": 1.05,
        "p": None,
        "q": None,
        "residual_tol": 1e-9,
    },
    "diagnostics": {
        "grid_radius": 0.3,
        "grid_n": 20,
        "n_range": None,
        "R": [1, 10, 100],
        "slice": {
            "window": [-2.0, 2.0, -2.0, 2.0],
            "px": 128,
            "max_iter": 200,
            "rho_in": 0.5,
            "rho_out": 1000.0,
        },
    },
}

SEQUENCE_KINDS = ("autonomous", "perturb", "random_ua", "file")

ARTIFACT_FILES = ("sequence.json", "normalization.json", "conjugacy.json",
                  "boundedness.csv", "residuals.csv")


def _merge(defaults, given, path):
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'} must be an object", details={"field": path})
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown field {where}", details={"field": where})
        if isinstance(defaults[key], dict) and key != "F":
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _require(cond, field, message):
    if not cond:
        raise ConfigError(f"{field}: {message}", details={"field": field})


def _positive_int(value, field):
    _require(isinstance(value, int) and not isinstance(value, bool) and value > 0,
             field, "must be a positive integer")


def validate_config(cfg):
    seq = cfg["sequence"]
    _require(seq["kind"] in SEQUENCE_KINDS, "sequence.kind",
             f"must be one of {', '.join(SEQUENCE_KINDS)}")
    _positive_int(seq["N"], "sequence.N")
    _require(seq["tail"] in ("freeze", "cycle"), "sequence.tail", "must be freeze or cycle")
    _require(seq["model"] in ("linear", "shear", "both"), "sequence.model",
             "must be linear, shear or both")
    if seq["kind"] in ("autonomous", "perturb"):
        _require(isinstance(seq["F"], dict), "sequence.F", "reference map required")
    if seq["kind"] == "perturb":
        _require(isinstance(seq["epsilon"], (int, float)) and seq["epsilon"] >= 0,
                 "sequence.epsilon", "must be a non-negative number")
    if seq["kind"] == "random_ua":
        _positive_int(seq["k"], "sequence.k")
        _positive_int(seq["d"], "sequence.d")
        _require(0 < seq["a"] < seq["b"] < 1, "sequence.a/b", "need 0 < a < b < 1")
        _require(0 < seq["xi_order"] < 1, "sequence.xi_order", "must lie in (0, 1)")
    if seq["kind"] == "file":
        _require(isinstance(seq["path"], str), "sequence.path", "file path required")
    norm = cfg["normalization"]
    _require(norm["rho"] > 0, "normalization.rho", "must be positive")
    _require(0 < norm["gap_spec"] < 1, "normalization.gap_spec", "must lie in (0, 1)")
    _require(0 < norm["xi_order"] < 1, "normalization.xi_order", "must lie in (0, 1)")
    _require(norm["dilation"] is None or norm["dilation"] > 0, "normalization.dilation",
             "must be positive or null")
    sol = cfg["solver"]
    _require(sol["xi_exp"] > 1, "solver.xi_exp", "must exceed 1")
    for key in ("p", "q"):
        if sol[key] is not None:
            _positive_int(sol[key], f"solver.{key}")
    diag = cfg["diagnostics"]
    _require(diag["grid_radius"] > 0, "diagnostics.grid_radius", "must be positive")
    _positive_int(diag["grid_n"], "diagnostics.grid_n")
    _require(isinstance(diag["R"], list) and all(r > 0 for r in diag["R"]), "diagnostics.R",
             "must be a list of positive radii")
    sl = diag["slice"]
    _require(len(sl["window"]) == 4, "diagnostics.slice.window", "need x0,x1,y0,y1")
    _positive_int(sl["px"], "diagnostics.slice.px")
    _require(sl["rho_in"] < sl["rho_out"], "diagnostics.slice.rho_in", "need rho_in < rho_out")
    return cfg


def load_config(path):
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                          details={"line": exc.lineno, "column": exc.colno}) from None
    cfg = validate_config(_merge(DEFAULTS, raw, ""))
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg, config_hash(raw)


def config_hash(raw):
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(f"{canon}|{__version__}".encode()).hexdigest()


def _complex(v):
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def reference_map(cfg_map):
    """JetMap from {"k", "diag" | "linear", "terms": [[j, [alpha], re, im], ...]}."""
    from .jets import JetMap

    try:
        k = int(cfg_map["k"])
        if "linear" in cfg_map:
            lin = np.array([[_complex(v) for v in row] for row in cfg_map["linear"]])
        else:
            lin = np.diag([_complex(v) for v in cfg_map["diag"]])
        terms = {}
        for entry in cfg_map.get("terms", []):
            j, alpha, re = entry[0], tuple(entry[1]), entry[2]
            im = entry[3] if len(entry) > 3 else 0.0
            terms[(int(j), alpha)] = terms.get((int(j), alpha), 0) + complex(re, im)
        d = max([1] + [sum(a) for _, a in terms])
        base = JetMap.from_linear(lin, d).coef.copy()
        extra = JetMap.from_terms(k, d, terms).coef
        return JetMap(base + extra)
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        if isinstance(exc, FBError):
            raise
        raise ConfigError(f"sequence.F: malformed reference map ({exc})",
                          details={"field": "sequence.F"}) from None


def build_sequence(cfg):
    from .seq_gen import AutomorphismSequence, autonomous, perturb, random_uniformly_attracting

    s = cfg["sequence"]
    seed = cfg["seed"]
    if s["kind"] == "autonomous":
        seq = autonomous(reference_map(s["F"]), s["N"])
        seq.tail = s["tail"]
        return seq
    if s["kind"] == "perturb":
        return perturb(reference_map(s["F"]), s["epsilon"], seed, s["N"], s["model"],
                       n_samples=s["n_samples"], tail=s["tail"])
    if s["kind"] == "random_ua":
        return random_uniformly_attracting(s["k"], s["a"], s["b"], s["xi_order"], s["d"],
                                           seed, s["N"], tail=s["tail"])
    path = Path(s["path"])
    if not path.is_absolute():
        path = Path(cfg["_base"]) / path
    return AutomorphismSequence.loads(path.read_text())


def _norm_params(cfg):
    from .normal_form import NormalizationParams

    n = cfg["normalization"]
    return NormalizationParams(rho=n["rho"], gap_spec=n["gap_spec"], delta=n["delta"],
                               xi_order=n["xi_order"], offdiag_scale=n["offdiag_scale"],
                               dilation=n["dilation"], n_samples=n["n_samples"], seed=cfg["seed"])


def _solver_params(cfg):
    from .pipeline import SolverParams

    s = cfg["solver"]
    return SolverParams(xi_exp=s["xi_exp"], p=s["p"], q=s["q"], residual_tol=s["residual_tol"])


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(out, name, text, files):
    data = text.encode() if isinstance(text, str) else text
    (out / name).write_bytes(data)
    files[name] = hashlib.sha256(data).hexdigest()


def run_solve(config_path, out_dir):
    from .pipeline import run_pipeline

    cfg, digest = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seq = build_sequence(cfg)
    res = run_pipeline(seq, _norm_params(cfg), _solver_params(cfg))
    files = {}
    norm_doc = res.norm.to_dict()
    norm_doc["profile"] = res.profile.to_dict()
    norm_doc["convergence_params"] = res.params.to_dict()
    _write(out, "sequence.json", seq.dumps(), files)
    _write(out, "normalization.json", json.dumps(norm_doc, sort_keys=True), files)
    _write(out, "conjugacy.json", res.data.dumps(), files)
    _write(out, "boundedness.csv", res.data.boundedness_csv(), files)
    _write(out, "residuals.csv", _residuals_csv(res), files)
    for fl in res.norm.flags:
        _write(out, f"flag_split{fl.split}.csv", res.norm.flag_csv(fl.split), files)
    manifest = {"config_sha256": digest, "version": __version__, "seed": cfg["seed"],
                "files": files, "summary": _jsonable(res.summary())}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def _residuals_csv(res):
    from .fb_map import pointwise_defect
    from .sampling import sphere_points

    lines = ["n,coeff_residual,sampled_defect"]
    pts = sphere_points(res.data.k, 200, res.params.r, seed=0)
    for n in range(1, res.data.horizon + 1):
        defect = float(np.linalg.norm(pointwise_defect(res.data, res.norm, pts, n), axis=1).max())
        lines.append(f"{n},{float(res.data.residuals[n - 1])!r},{defect!r}")
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    from .suites import _plain

    return _plain(obj)


def verify_artifacts(art_dir, digest=None):
    art = Path(art_dir)
    mpath = art / "manifest.json"
    if not mpath.exists():
        raise IntegrityError("manifest.json missing", details={"dir": str(art)})
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError:
        raise IntegrityError("manifest.json is not valid JSON") from None
    if digest is not None and manifest.get("config_sha256") != digest:
        raise StaleArtifactError("artifacts were produced from a different config",
                                 details={"expected": digest,
                                          "found": manifest.get("config_sha256")})
    bad = []
    for name, sha in manifest.get("files", {}).items():
        p = art / name
        if not p.exists() or _sha(p) != sha:
            bad.append(name)
    if bad:
        raise IntegrityError("artifact files do not match the manifest", details={"files": bad})
    return manifest


def load_artifacts(art_dir):
    from .conjugacy import ConjugacyData
    from .normal_form import NormalizationData
    from .seq_gen import AutomorphismSequence

    art = Path(art_dir)
    seq = AutomorphismSequence.loads((art / "sequence.json").read_text())
    norm_doc = json.loads((art / "normalization.json").read_text())
    norm = NormalizationData.from_dict(norm_doc)
    data = ConjugacyData.loads((art / "conjugacy.json").read_text())
    return seq, norm, norm_doc, data


def run_diagnostics(config_path, art_dir):
    from .fb_map import (
        ConvergenceParams,
        certificate_json,
        convergence_report,
        grid_points,
        render_ppm,
        slice_pixels,
        surjectivity_probe,
    )

    cfg, digest = load_config(config_path)
    verify_artifacts(art_dir, digest)
    seq, norm, norm_doc, data = load_artifacts(art_dir)
    cp = norm_doc["convergence_params"]
    params = ConvergenceParams(cp["r"], cp["b"], cp["gamma"], cp["beta"], cp["q"],
                               cp["alpha_rate"], cp["C"], cp["m"], cp["n_samples"])
    diag = cfg["diagnostics"]
    grid = norm.to_normalized(grid_points(data.k, diag["grid_radius"], diag["grid_n"]), 0)
    rep = convergence_report(data, norm, grid, diag["n_range"], params)
    art = Path(art_dir)
    (art / "convergence.csv").write_text(rep.to_csv())
    certs = [surjectivity_probe(data, norm, params, R) for R in diag["R"]]
    (art / "surjectivity.json").write_text(certificate_json(certs, params.b))
    sl = diag["slice"]
    codes, steps = slice_pixels(seq, sl["window"], sl["px"], sl["max_iter"],
                                sl["rho_in"], sl["rho_out"])
    (art / "slice.ppm").write_bytes(render_ppm(codes, steps))
    return {"convergence": rep.to_dict(), "surjectivity": certs,
            "pass": rep.passed and all(c["pass"] for c in certs)}


def run_render(art_dir, window, px, max_iter=200, rho_in=0.5, rho_out=1000.0, out=None):
    from .fb_map import render_ppm, slice_pixels
    from .seq_gen import AutomorphismSequence

    seq = AutomorphismSequence.loads((Path(art_dir) / "sequence.json").read_text())
    codes, steps = slice_pixels(seq, window, px, max_iter, rho_in, rho_out)
    target = Path(out) if out else Path(art_dir) / "slice.ppm"
    target.write_bytes(render_ppm(codes, steps))
    return {"path": str(target), "attracted": int((codes == 1).sum()),
            "escaped": int((codes == -1).sum()), "undecided": int((codes == 0).sum())}


def run_check(suites=None, artifacts=None):
    from .suites import SUITES, run_suite

    report = {"suites": [], "pass": True}
    if artifacts:
        try:
            verify_artifacts(artifacts)
            report["integrity"] = {"pass": True}
        except FBError as exc:
            report["integrity"] = {"pass": False, **exc.to_dict()}
            report["pass"] = False
    names = suites or ([] if artifacts else list(SUITES))
    for name in names:
        if name not in SUITES:
            raise ConfigError(f"unknown suite {name!r}", details={"known": list(SUITES)})
        result = run_suite(name)
        print(result.line(), file=sys.stderr, flush=True)
        report["suites"].append(result.to_dict())
        report["pass"] &= result.passed
    return report


def _window(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("window must be x0,x1,y0,y1") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("window must be x0,x1,y0,y1")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="fbdomain", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, help="BLAS thread count (default: FBDOMAIN_THREADS)")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="generate, normalize and solve; write artifacts")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    d = sub.add_parser("diagnose", help="convergence, surjectivity and basin slice")
    d.add_argument("--config", required=True)
    d.add_argument("--artifacts", required=True)
    c = sub.add_parser("check", help="run the property suites")
    c.add_argument("--suite", action="append", help="suite name (repeatable)")
    c.add_argument("--artifacts", help="also verify an artifact directory")
    r = sub.add_parser("render", help="basin slice as a binary PPM")
    r.add_argument("--artifacts", required=True)
    r.add_argument("--window", type=_window, required=True)
    r.add_argument("--px", type=int, required=True)
    r.add_argument("--max-iter", type=int, default=200)
    r.add_argument("--out")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            result = run_solve(args.config, args.out)
            ok = True
        elif args.command == "diagnose":
            result = run_diagnostics(args.config, args.artifacts)
            ok = result["pass"]
        elif args.command == "check":
            result = run_check(args.suite, args.artifacts)
            ok = result["pass"]
        else:
            result = run_render(args.artifacts, args.window, args.px, args.max_iter, out=args.out)
            ok = True
    except FBError as exc:
        print(json.dumps(_jsonable(exc.to_dict()), sort_keys=True), file=sys.stderr)
        return exc.code
    except OSError as exc:
        err = ConfigError(f"cannot access file: {exc}", details={"path": exc.filename})
        print(json.dumps(err.to_dict(), sort_keys=True), file=sys.stderr)
        return err.code
    print(json.dumps(_jsonable(result), sort_keys=True, indent=1))
    if not result.get("integrity", {}).get("pass", True):
        return IntegrityError.code
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
