"""Command-line entry point: identity suites, derivations, rescale and
instanton checks, annulus monopole solves, and decay fits.

All machine-readable output is JSON with sorted keys (identical inputs,
including seeds, produce byte-identical artifacts); profile and decay
tables are CSV.  The environment variable G2LAB_THREADS caps the linear
algebra thread pools.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .forms import (
    DIM,
    FormError,
    KForm,
    MetricTensor,
    hodge,
    index_sets,
    interior,
    pullback,
    pullback_metric,
    wedge,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BEST_EFFORT = 2


def _cap_threads() -> None:
    cap = os.environ.get("G2LAB_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        raise FormError(f"G2LAB_THREADS must be an integer, got {cap!r}")
    import threadpoolctl

    threadpoolctl.threadpool_limits(limits=n)


def _dump_json(obj, path=None) -> str:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _named_phi_field(name: str, eps: float, rotation_index: int = 0):
    """Resolve a 3-form field: a shipped family name or a file path."""
    from .fields import (
        euclidean_field,
        interior_perturbation_field,
        linear_perturbation_field,
        radial_perturbation_field,
    )

    if name == "euclidean":
        return euclidean_field()
    if name == "linear-perturb":
        return linear_perturbation_field(eps)
    if name == "coassoc-perturb":
        return interior_perturbation_field(eps)
    if name == "radial-perturb":
        return radial_perturbation_field(eps)
    if name in ("rotation-perturb", "flow-perturb"):
        from .g2 import stabilizer_basis

        basis = stabilizer_basis()
        if not 0 <= rotation_index < len(basis):
            raise FormError(
                f"rotation index {rotation_index} outside 0..{len(basis) - 1}"
            )
        X = basis[rotation_index]
        X = X * np.sqrt(2.0) / np.linalg.norm(X)
        if name == "rotation-perturb":
            return interior_perturbation_field(eps, X)
        return radial_perturbation_field(eps, X)
    if os.path.exists(name):
        from .polyfield import PolyFormField

        return PolyFormField.load(name)
    raise FormError(
        f"unknown 3-form family or missing file: {name!r} "
        "(names: euclidean, linear-perturb, coassoc-perturb, "
        "radial-perturb, rotation-perturb, flow-perturb)"
    )


# ---------------------------------------------------------------------------
# algebra-check


def _random_spd(rng) -> MetricTensor:
    A = rng.standard_normal((DIM, DIM))
    return MetricTensor(A @ A.T + DIM * np.eye(DIM))


def _random_form(rng, k: int) -> KForm:
    return KForm(k, rng.standard_normal(len(index_sets(k))))


def cmd_algebra_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = []

    def check(name, err, tol, witness):
        if not err <= tol:
            failures.append(
                {"invariant": name, "error": float(err), "witness": witness}
            )

    for trial in range(args.trials):
        k = int(rng.integers(1, 4))
        l = int(rng.integers(1, 4))
        a = _random_form(rng, k)
        b = _random_form(rng, l)
        g = _random_spd(rng)
        lam = float(np.exp(rng.uniform(-1.0, 1.0)))
        wit = {"trial": trial, "k": k, "l": l, "lambda": lam}

        if k + l <= DIM:
            sgn = (-1.0) ** (k * l)
            err = (wedge(a, b) - sgn * wedge(b, a)).norm()
            check("wedge graded commutativity", err, 1e-12 * a.norm() * b.norm(), wit)
        err = (hodge(g, hodge(g, a)) - a).norm()
        check("star involution", err, 1e-9 * a.norm(), wit)
        gl = MetricTensor(lam**2 * g.entries)
        err = (
            hodge(gl, a) - lam ** (DIM - 2 * k) * hodge(g, a)
        ).norm() / max(1.0, hodge(g, a).norm())
        check("star conformal scaling", err, 1e-9, wit)
        v = rng.standard_normal(DIM)
        if k + l <= DIM:
            lhs = interior(v, wedge(a, b))
            rhs = wedge(interior(v, a), b) + (-1.0) ** k * wedge(a, interior(v, b))
            check("interior Leibniz", (lhs - rhs).norm(),
                  1e-11 * max(1.0, lhs.norm()), wit)
        M = rng.standard_normal((DIM, DIM))
        N = rng.standard_normal((DIM, DIM))
        err = (pullback(M @ N, a) - pullback(N, pullback(M, a))).norm()
        check("pullback contravariance", err,
              1e-8 * max(1.0, pullback(M @ N, a).norm()), wit)
        vol = hodge(g, KForm(0, np.ones(1)))
        gram = np.linalg.inv(g.entries)
        op = np.zeros((len(index_sets(k)),) * 2)
        for i1, idx1 in enumerate(index_sets(k)):
            for i2, idx2 in enumerate(index_sets(k)):
                op[i1, i2] = np.linalg.det(gram[np.ix_(idx1, idx2)])
        inner = float(a.coeffs @ op @ b.coeffs) if k == l else 0.0
        if k == l:
            err = (wedge(a, hodge(g, b)) - inner * vol).norm()
            check("wedge-star inner product", err,
                  1e-9 * max(1.0, abs(inner) * vol.norm()), wit)

    report = {
        "command": "algebra-check",
        "seed": args.seed,
        "trials": args.trials,
        "failures": failures,
        "passed": not failures,
    }
    text = _dump_json(report, args.out)
    if failures:
        for f in failures:
            print(
                f"FAIL {f['invariant']}: error {f['error']:.3e} "
                f"witness {f['witness']}"
            )
        return EXIT_ERROR
    if args.out:
        sys.stdout.write(f"algebra-check: {args.trials} trials passed -> {args.out}\n")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# g2-derive / normalize


def _phi_at_point(args) -> KForm:
    field = _named_phi_field(args.phi, args.eps, args.rotation_index)
    pt = np.array([float(v) for v in args.point.split(",")])
    if pt.shape != (DIM,):
        raise FormError("--point needs 7 comma-separated values")
    return field.at(pt)


def cmd_g2_derive(args) -> int:
    from .g2 import DegenerateStructureError, metric_from_phi, structure_from_phi

    phi = _phi_at_point(args)
    try:
        st = structure_from_phi(phi)
    except DegenerateStructureError as exc:
        print(f"g2-derive: degenerate 3-form: {exc}")
        return EXIT_ERROR
    B_eigs = np.linalg.eigvalsh(metric_from_phi(phi).entries)
    ginv = np.linalg.inv(st.g.entries)
    op = np.zeros((35, 35))
    for i1, idx1 in enumerate(index_sets(3)):
        for i2, idx2 in enumerate(index_sets(3)):
            op[i1, i2] = np.linalg.det(ginv[np.ix_(idx1, idx2)])
    report = {
        "command": "g2-derive",
        "phi": args.phi,
        "point": args.point,
        "metric": [[float(v) for v in row] for row in st.g.entries],
        "psi": [float(v) for v in st.psi.coeffs],
        "vol": [float(v) for v in st.vol.coeffs],
        "nondegeneracy_margin": float(B_eigs.min()),
        "phi_norm_sq": float(phi.coeffs @ op @ phi.coeffs),
    }
    text = _dump_json(report, args.out)
    if args.out:
        print(f"g2-derive: margin {B_eigs.min():.3e} -> {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_normalize(args) -> int:
    from .g2 import normalize

    phi = _phi_at_point(args)
    res = normalize(phi, tol=args.tol, seed=args.seed)
    report = {
        "command": "normalize",
        "phi": args.phi,
        "point": args.point,
        "L": [[float(v) for v in row] for row in res.L],
        "residual": float(res.residual),
        "converged": bool(res.converged),
        "restarts_used": res.restarts_used,
        "iterations": res.iterations,
    }
    text = _dump_json(report, args.out)
    summary = (
        f"normalize: residual {res.residual:.3e} "
        f"({'converged' if res.converged else 'best effort'})"
    )
    print(summary if not args.out else summary + f" -> {args.out}")
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK if res.converged else EXIT_BEST_EFFORT


# ---------------------------------------------------------------------------
# instanton-check


def cmd_instanton_check(args) -> int:
    from .model_connection import (
        canonical_connection,
        flat_connection,
        instanton_defect,
        pullback_to_cone,
        sphere_samples,
    )

    phi_field = _named_phi_field(args.phi, args.eps, args.rotation_index)

    if args.connection in ("canonical", "flat"):
        base = (
            canonical_connection()
            if args.connection == "canonical"
            else flat_connection(6)
        )
        a0 = pullback_to_cone(base)
        samples = sphere_samples(args.samples, args.seed) * args.radius
        per_point = []
        worst = 0.0
        from .fields import PolyG2Field, monopole_residual, FieldPair
        from .forms import LieValuedKForm, wedge_lie_scalar

        for x in samples:
            psi = PolyG2Field(phi_field).at(x).psi
            F = a0.curvature_form(x)
            d = wedge_lie_scalar(F, psi).norm()
            per_point.append(float(d))
            worst = max(worst, float(d))
    else:
        # saved radial-profile connection over the canonical model
        from .fields import (
            PolyG2Field,
            RadialProfilePair,
            canonical_templates,
            curvature,
        )
        from .forms import wedge_lie_scalar
        from .model_connection import sphere_samples as _ss

        theta, theta_j, sigma0 = canonical_templates()
        a0 = pullback_to_cone(canonical_connection())
        try:
            pair = RadialProfilePair.load(
                args.connection, a0, theta, sigma0, theta2=theta_j
            )
        except FormError:
            pair = RadialProfilePair.load(args.connection, a0, theta, sigma0)
        fp = pair.as_field_pair()
        r_mid = float(np.sqrt(pair.mesh[0] * pair.mesh[-1]))
        samples = _ss(args.samples, args.seed) * r_mid
        G = PolyG2Field(phi_field)
        per_point = []
        worst = 0.0
        for x in samples:
            d = wedge_lie_scalar(curvature(fp, x), G.at(x).psi).norm()
            per_point.append(float(d))
            worst = max(worst, float(d))

    report = {
        "command": "instanton-check",
        "connection": args.connection,
        "phi": args.phi,
        "samples": args.samples,
        "defect": worst,
        "per_point": per_point,
    }
    text = _dump_json(report, args.out)
    if args.out:
        print(f"instanton-check: defect {worst:.3e} -> {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# rescale-check


def cmd_rescale_check(args) -> int:
    from .g2 import structure_from_phi
    from .rescale import ScaleMap, c5_deviation, check_star_covariance

    phi_field = _named_phi_field(args.phi, args.eps, args.rotation_index)
    s = ScaleMap(args.lam)
    rep = c5_deviation(phi_field, s, C=args.C)

    rng = np.random.default_rng(args.seed)
    cov_rows = []
    for _ in range(args.samples):
        x = rng.standard_normal(DIM)
        x *= rep.ball_radius * 0.9 / np.linalg.norm(x)
        g = structure_from_phi(phi_field.at(x)).g
        a = _random_form(rng, 1)
        cov_rows.append(float(check_star_covariance(g, s, a)))

    report = {
        "command": "rescale-check",
        "phi": args.phi,
        "report": rep.as_dict(),
        "covariance_defects": cov_rows,
        "max_covariance_defect": max(cov_rows) if cov_rows else 0.0,
    }
    text = _dump_json(report, args.out)
    msg = (
        f"rescale-check: c_phi {rep.c_phi:.3e}, min margin "
        f"{min(rep.margins):.3e}, max covariance defect "
        f"{max(cov_rows) if cov_rows else 0.0:.3e}"
    )
    print(msg if not args.out else msg + f" -> {args.out}")
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


_SOLVE_KEYS = {
    "theta": float,
    "p": float,
    "delta0": float,
    "lambda": float,
    "gauge_penalty": float,
    "tol": float,
    "max_iter": int,
    "r_in": float,
    "r_out": float,
    "n_mesh": int,
    "n_sphere": int,
    "seed": int,
    "r0": float,
    "C": float,
    "pin_u_outer": lambda v: v.lower() in ("1", "true", "yes"),
    "phi": str,
    "eps": float,
    "model": str,
    "rotation_index": int,
    "out": str,
}


def parse_config(path) -> dict:
    """Plain-text key=value config, one per line, # comments; unknown keys
    rejected."""
    cfg = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _SOLVE_KEYS:
                raise FormError(f"{path}:{lineno}: unknown key {key!r}")
            cfg[key] = _SOLVE_KEYS[key](val)
    return cfg


def cmd_solve(args) -> int:
    from .fields import (
        DecayTable,
        PolyG2Field,
        RadialProfilePair,
        abelian_templates,
        rotation_templates,
    )
    from .model_connection import (
        canonical_connection,
        flat_connection,
        pullback_to_cone,
    )
    from .solver import SolverConfig, solve_monopole, sphere_samples

    raw = parse_config(args.config)
    out = raw.pop("out", "solve")
    phi_name = raw.pop("phi", "euclidean")
    eps = raw.pop("eps", 0.1)
    model = raw.pop("model", "canonical")
    rotation_index = raw.pop("rotation_index", 0)
    if "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    cfg = SolverConfig(**raw)

    phi_field = _named_phi_field(phi_name, eps, rotation_index)
    G = PolyG2Field(phi_field)
    mesh = cfg.mesh()
    z = np.zeros_like(mesh)
    if model == "canonical":
        from .g2 import stabilizer_basis

        basis = stabilizer_basis()
        X = basis[rotation_index]
        X = X * np.sqrt(2.0) / np.linalg.norm(X)
        a0 = pullback_to_cone(canonical_connection())
        theta, sigma0 = rotation_templates(X, a0)
    elif model == "abelian":
        a0 = pullback_to_cone(flat_connection(2))
        theta, sigma0 = abelian_templates()
    else:
        raise FormError(f"unknown model {model!r} (canonical or abelian)")

    init = RadialProfilePair(
        mesh=mesh, f=z.copy(), u=z.copy(), base=a0, theta=theta, sigma0=sigma0
    )
    try:
        pair, rep = solve_monopole(G, a0, cfg, init, phi_field=phi_field)
    except FormError as exc:
        print(f"solve: precondition failure: {exc}")
        return EXIT_ERROR

    _dump_json({"command": "solve", "config": str(args.config),
                **rep.as_dict()}, f"{out}_report.json")
    with open(f"{out}_profiles.csv", "w") as fh:
        cols = ["r"] + [f"f{i+1}" if i else "f"
                        for i in range(len(pair.angular_profiles()))] + ["u"]
        fh.write(",".join(cols) + "\n")
        profiles = pair.angular_profiles()
        for i, r in enumerate(mesh):
            vals = [r] + [f[i] for f in profiles] + [pair.u[i]]
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")

    # l = 0 decay table of the solved field against the model connection
    sub = mesh[:: max(1, len(mesh) // 16)]
    dirs = sphere_samples(8, cfg.seed + 1)
    rows = []
    for r in sub:
        X7 = r * dirs
        dev = 0.0
        for th, f in zip(pair.angular_templates(), pair.angular_profiles()):
            dev = dev + float(np.interp(r, mesh, f)) * th.value(X7)
        sup = float(np.max(np.sqrt(np.sum(np.asarray(dev) ** 2, axis=(1, 2, 3)))))
        rows.append((float(r), 0, sup, sup))
    DecayTable(rows=rows, samples_per_sphere=len(dirs)).to_csv(f"{out}_decay.csv")

    print(
        f"solve: {rep.iterations} iters, residual "
        f"{rep.initial_residual:.3e} -> {rep.final_residual:.3e}, "
        f"decay {rep.decay_exponent:.3f} ({rep.message})"
    )
    return EXIT_OK if rep.converged else EXIT_BEST_EFFORT


# ---------------------------------------------------------------------------
# decay-fit


def cmd_decay_fit(args) -> int:
    from .fields import DecayTable
    from .solver import fit_decay_rate

    table = DecayTable.from_csv(args.table)
    try:
        slope = fit_decay_rate(table, args.theta)
    except FormError as exc:
        print(f"decay-fit: {exc}")
        return EXIT_ERROR
    status = "zero-field" if np.isnan(slope) else (
        "ok" if slope >= (1.0 - args.theta) - 0.1 else "below-contract"
    )
    report = {
        "command": "decay-fit",
        "table": str(args.table),
        "theta": args.theta,
        "slope": None if np.isnan(slope) else float(slope),
        "status": status,
    }
    text = _dump_json(report, args.out)
    print(f"decay-fit: slope {slope:.4f} ({status})" if not np.isnan(slope)
          else f"decay-fit: zero difference field, slope undefined")
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK if status == "ok" else EXIT_BEST_EFFORT


# ---------------------------------------------------------------------------


def _add_phi_args(p):
    p.add_argument("--phi", default="euclidean",
                   help="family name or 3-form field file")
    p.add_argument("--eps", type=float, default=0.1,
                   help="perturbation size for named families")
    p.add_argument("--rotation-index", type=int, default=0,
                   help="stabilizer basis element for rotation families")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="g2lab",
        description="G2-structure algebra and singular monopole lab",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("algebra-check", help="random identity suite on forms")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_algebra_check)

    p = sub.add_parser("g2-derive", help="derive g, psi, vol from a 3-form")
    _add_phi_args(p)
    p.add_argument("--point", default="0,0,0,0,0,0,0")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_g2_derive)

    p = sub.add_parser("normalize", help="normalize a 3-form to the model")
    _add_phi_args(p)
    p.add_argument("--point", default="0,0,0,0,0,0,0")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("instanton-check",
                       help="F wedge psi defect of a connection")
    p.add_argument("--connection", default="canonical",
                   help="canonical, flat, or a saved profile file")
    _add_phi_args(p)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_instanton_check)

    p = sub.add_parser("rescale-check",
                       help="deviation ladder and star covariance")
    _add_phi_args(p)
    p.add_argument("--lambda", dest="lam", type=float, default=16.0)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rescale_check)

    p = sub.add_parser("solve", help="annulus monopole least squares")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("decay-fit", help="log-log decay slope of a table")
    p.add_argument("--table", required=True)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_decay_fit)

    return ap


def main(argv=None) -> int:
    try:
        _cap_threads()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except FormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
