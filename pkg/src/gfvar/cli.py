"""Command-line experiment runner.

Each subcommand writes ``<out>/<name>.csv`` and a ``<name>.csv.meta``
key=value sidecar (config echo, versions, timing).  Exit codes: 0 success,
1 invalid input, 2 numerical failure.
"""

import argparse
import csv
import os
import platform
import sys
import time

import numpy as np

from . import __version__

OUTDIR_ENV = "GFVAR_OUTDIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text):
    try:
        vals = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text):
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return tuple(int(v) for v in vals)


def _complex(text):
    try:
        return complex(str(text).replace(" ", ""))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a complex number like 0.5+0.3j, got {text!r}")


def _positive(text):
    v = float(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _params(text):
    out = {}
    for item in filter(None, str(text).split(",")):
        key, sep, val = item.partition(":")
        if not sep:
            raise argparse.ArgumentTypeError(f"family parameters look like p:2 or sigma:1, got {item!r}")
        out[key.strip()] = float(val) if key.strip() != "p" else int(val)
    return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write(args, columns, rows, meta=None):
    out = args.out or os.environ.get(OUTDIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"{args.name or args.command}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    info = {"command": args.command}
    for k, v in sorted(vars(args).items()):
        if k not in ("func", "command", "config") and not k.startswith("_"):
            info[f"config.{k}"] = v
    info.update({"version.gfvar": __version__, "version.numpy": np.__version__,
                 "version.python": platform.python_version()})
    try:
        import scipy
        info["version.scipy"] = scipy.__version__
    except ImportError:
        pass
    info.update(meta or {})
    info["timing.seconds"] = f"{time.perf_counter() - args._t0:.3f}"
    with open(path + ".meta", "w") as fh:
        for k, v in info.items():
            if not k.startswith("config._"):
                fh.write(f"{k}={v}\n")
    print(path)
    return path


# -- subcommands ---------------------------------------------------------------

def cmd_mollifier(args):
    from .mollifiers import build_family
    fam = build_family(args.kind, args.params, args.q)
    qs = [q for q in range(0, args.q + 1) if not (fam.symmetric and q % 2)]
    lim = fam.radius if fam.compact else 4 * fam.params.get("sigma", 1.0)
    x = np.linspace(-lim, lim, args.samples)
    cols = np.stack([fam.eta(x, q) for q in qs], axis=1)
    rows = [[xi, *c] for xi, c in zip(x, cols)]
    meta = {f"alpha.{n}": repr(float(a)) for n, a in enumerate(fam.alphas)}
    return _write(args, ["x"] + [f"eta_q{q}" for q in qs], rows, meta)


FUNCS = {
    "sin": np.sin,
    "step": lambda x: (np.asarray(x) >= 0).astype(float),
    "abs": np.abs,
    "gauss": lambda x: np.exp(-np.asarray(x) ** 2),
}


def cmd_regularize(args):
    from .generalized import convolve
    from .mollifiers import mollifier
    m = mollifier(args.kind, args.q, args.eps, args.params)
    f = FUNCS[args.test_func]
    g = convolve(f, m, check=False)
    x = np.linspace(-args.half_width, args.half_width, args.samples)
    return _write(args, ["x", "f", "f_reg"], zip(x, f(x), g(x)), {"mollifier": m.id})


def cmd_order(args):
    from .generalized import order_estimate
    from .mollifiers import build_family
    fam = build_family(args.kind, args.params, max(args.q))
    rows, meta = [], {}
    for q in args.q:
        est = order_estimate(FUNCS[args.test_func], fam, q, args.eps)
        rows += [[q, e, err] for e, err in zip(est.eps, est.errors)]
        meta[f"slope.q{q}"] = repr(est.slope)
    return _write(args, ["q", "eps", "max_error"], rows, meta)


def cmd_diffeo(args):
    from .tensorfield import TensorFieldRep, diffeo_order_check, polar_map, rotation_map
    cmap = polar_map() if args.map == "polar" else rotation_map(0.7)
    T = TensorFieldRep((1, 0), 2, lambda x: np.stack([np.cos(x[:, 1]), np.sin(x[:, 0])], -1))
    probes = np.array([[1.0, 0.3], [1.4, 0.9], [0.9, -0.5]])
    rows, meta = [], {}
    for q in args.q:
        est = diffeo_order_check(T, cmap, args.kind, q, args.eps, probes, args.nodes)
        rows += [[q, e, err] for e, err in zip(est.eps, est.errors)]
        meta[f"slope.q{q}"] = repr(est.slope)
    return _write(args, ["q", "eps", "max_error"], rows, meta)


def cmd_lie(args):
    from scipy.linalg import expm
    from .mollifiers import mollifier
    from .variation import VariationProbe, lie_exp_variation
    rng = np.random.default_rng(args.seed)
    m = mollifier("gaussian", 0, 0.1)
    probe = VariationProbe(0.0, m)
    rows = []
    for i in range(args.pairs):
        f = rng.normal(size=(3, 3))
        f *= args.norm / np.linalg.norm(f, 2)
        tau = rng.normal(size=(3, 3))
        h = 1e-5
        fd = (expm(f + h * tau) - expm(f - h * tau)) / (2 * h) * float(m(0.0))
        got = lie_exp_variation(f, tau, probe, 0.0, args.order)
        rows.append([i, float(np.linalg.norm(got - fd) / np.linalg.norm(fd))])
    return _write(args, ["pair", "rel_error"], rows)


def _ho_cfg(args):
    from .oscillator import HOConfig
    return HOConfig(mass=args.mass, k=args.k, eps_list=tuple(args.eps))


def cmd_ho_extremal(args):
    from .oscillator import ho_extremal, to_alpha, to_pi
    cfg = _ho_cfg(args)
    eps = args.eps[0]
    tr = ho_extremal(args.kind, cfg, eps)
    if args.kind == "oc":
        t = np.linspace(*tr.domain, args.samples)
        a, p = to_alpha(tr.q_at(t)), to_pi(tr.p_at(t))
        rows = zip(t, a.real, a.imag, p.real, p.imag)
        cols = ["t", "re_alpha", "im_alpha", "re_pi", "im_pi"]
    else:
        t = np.linspace(*tr.domain, args.samples)
        vals = tr(t)
        if args.kind == "quad":
            rows = zip(t, vals[:, 0], tr.derivative(1)(t)[:, 0])
            cols = ["t", "q", "qdot"]
        else:
            rows = zip(t, vals[:, 0], vals[:, 1])
            cols = ["t", "re_alpha", "im_alpha"]
    return _write(args, cols, rows, {"eps": eps, "domain": f"{tr.domain[0]!r},{tr.domain[1]!r}"})


def cmd_ho_table(args):
    from .oscillator import TABLE_COLUMNS, ho_table
    rows = ho_table(_ho_cfg(args))
    out = [[r.eps, r.kind, r.mollifier_id, r.S, r.dS, r.d2S, r.d2S_half, r.d2S_oracle, r.error] for r in rows]
    failed = [r for r in rows if r.error]
    path = _write(args, list(TABLE_COLUMNS), out, {"failed_rows": len(failed)})
    if failed:
        raise ArithmeticError(f"{len(failed)} table rows failed; see {path}")
    return path


def cmd_scalar(args):
    from .scalarfield import plane_wave_extremal, scalar_boundary_cost, scalar_pmp_check
    lat, zeta = plane_wave_extremal(args.n, args.wavenumber, args.mass)
    rep = scalar_pmp_check(lat, zeta)
    h = scalar_boundary_cost(zeta, lat, args.sign)
    rows = list(rep.as_dict().items()) + [("re_h", float(h.real)), ("im_h", float(h.imag))]
    return _write(args, ["quantity", "value"], rows)


def cmd_propagate(args):
    from .pathintegral import ho_propagator
    exact = ho_propagator(args.beta_i, args.beta_f, args.T, 2, args.omega, "exact")
    rows = []
    for N in args.N:
        a = ho_propagator(args.beta_i, args.beta_f, args.T, N, args.omega, args.mode)
        rows.append([N, args.T / (N - 1), a.real, a.imag, abs(a), abs(a - exact)])
    return _write(args, ["N", "dt", "re", "im", "abs", "err_vs_exact"], rows,
                  {"exact.re": repr(exact.real), "exact.im": repr(exact.imag)})


def cmd_quad_pi(args):
    from .generalized import window
    from .mollifiers import mollifier
    from .pathintegral import damped_gaussian_oracle, quad_gaussian_pi, quad_matrix
    m = mollifier(args.kind, args.q, args.eps, args.params)
    w = window(args.t_i, args.t_f, m)
    rows = []
    for N in args.N:
        v = quad_gaussian_pi(m, N, args.dt, args.mass, args.k, w, args.normalization)
        o = float("nan") + 0j
        if N <= 3:
            A, _ = quad_matrix(m, N, args.dt, args.mass, args.k, w)
            o, _ = damped_gaussian_oracle(A, args.dt, (1e-2, 1e-3) if N == 2 else (2e-3, 1e-3, 5e-4))
        rows.append([N, v.real, v.imag, o.real, o.imag, abs(v - o) / abs(o) if N <= 3 else float("nan")])
    return _write(args, ["N", "re", "im", "oracle_re", "oracle_im", "rel_err"], rows, {"mollifier": m.id})


# -- parser ----------------------------------------------------------------------

def _mollifier_opts(p, kind="gaussian", q=0, eps=None):
    p.add_argument("--kind", default=kind, choices=("bump", "gaussian", "cosine-squared"))
    p.add_argument("--q", type=int, default=q)
    p.add_argument("--params", type=_params, default=None, help="family parameters, e.g. p:2 or sigma:1")
    if eps is not None:
        p.add_argument("--eps", type=_positive, default=eps)


def build_parser():
    parser = _Parser(prog="gfvar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gfvar {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--out", default=None, help=f"output directory (default ${OUTDIR_ENV} or .)")
    common.add_argument("--name", default=None, help="output file stem (default: the subcommand)")
    common.add_argument("--config", default=None, help="key=value file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mollifier", parents=[common], help="sample a mollifier family")
    _mollifier_opts(p)
    p.add_argument("--samples", type=int, default=401)
    p.set_defaults(func=cmd_mollifier)

    p = sub.add_parser("regularize", parents=[common], help="regularize a test function")
    _mollifier_opts(p, eps=0.1)
    p.add_argument("--func", dest="test_func", choices=sorted(FUNCS), default="sin")
    p.add_argument("--half-width", type=_positive, default=2.0)
    p.add_argument("--samples", type=int, default=201)
    p.set_defaults(func=cmd_regularize)

    p = sub.add_parser("order", parents=[common], help="convergence order of regularization")
    p.add_argument("--kind", default="gaussian", choices=("bump", "gaussian", "cosine-squared"))
    p.add_argument("--params", type=_params, default=None)
    p.add_argument("--q", type=_ints, default=(1, 3, 5))
    p.add_argument("--eps", type=_floats, default=(0.4, 0.2, 0.1, 0.05))
    p.add_argument("--func", dest="test_func", choices=sorted(FUNCS), default="sin")
    p.set_defaults(func=cmd_order)

    p = sub.add_parser("diffeo-check", parents=[common], help="order of the diffeomorphism operator")
    p.add_argument("--map", choices=("polar", "rotation"), default="polar")
    p.add_argument("--kind", default="gaussian", choices=("gaussian",))
    p.add_argument("--q", type=_ints, default=(1, 3))
    p.add_argument("--eps", type=_floats, default=(0.1, 0.05, 0.025, 0.0125))
    p.add_argument("--nodes", type=int, default=20)
    p.set_defaults(func=cmd_diffeo)

    p = sub.add_parser("lie-check", parents=[common], help="Lie-group variation vs finite differences")
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--norm", type=_positive, default=1.0)
    p.add_argument("--order", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_lie)

    for name, fn, help_ in (("ho-extremal", cmd_ho_extremal, "oscillator extremal trajectory"),
                            ("ho-table", cmd_ho_table, "oscillator variation table")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--eps", type=_floats, default=(0.5,) if name == "ho-extremal" else (1.0, 0.5, 0.1, 0.01))
        p.add_argument("--mass", type=_positive, default=1.0)
        p.add_argument("--k", type=_positive, default=1.0)
        if name == "ho-extremal":
            p.add_argument("--kind", choices=("quad", "oc", "holo"), default="oc")
            p.add_argument("--samples", type=int, default=501)
        p.set_defaults(func=fn)

    p = sub.add_parser("scalar-check", parents=[common], help="scalar-field boundary matching")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--mass", type=_positive, default=1.0)
    p.add_argument("--wavenumber", type=float, default=1.0)
    p.add_argument("--sign", type=float, choices=(-1.0, 1.0), default=-1.0)
    p.set_defaults(func=cmd_scalar)

    p = sub.add_parser("propagate", parents=[common], help="coherent-state OC propagator")
    p.add_argument("--beta-i", type=_complex, default=1.0 + 0j)
    p.add_argument("--beta-f", type=_complex, default=0.5 + 0.3j)
    p.add_argument("--T", type=_positive, default=1.0)
    p.add_argument("--omega", type=_positive, default=1.0)
    p.add_argument("--N", type=_ints, default=(101, 1001, 10001))
    p.add_argument("--mode", choices=("euler", "exact"), default="euler")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("quad-pi", parents=[common], help="Gaussian path integral of the quadratic action")
    _mollifier_opts(p, eps=0.3)
    p.add_argument("--dt", type=_positive, default=0.4)
    p.add_argument("--N", type=_ints, default=(2, 3))
    p.add_argument("--mass", type=_positive, default=1.0)
    p.add_argument("--k", type=_positive, default=1.0)
    p.add_argument("--t-i", type=float, default=0.0)
    p.add_argument("--t-f", type=float, default=2.0)
    p.add_argument("--normalization", choices=("gaussian", "closed-form"), default="gaussian")
    p.set_defaults(func=cmd_quad_pi)
    return parser


def read_config(path):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _apply_config(parser, argv):
    """Re-parse with config values as defaults so explicit flags win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    unknown = sorted(set(cfg) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    defaults = {}
    for key, raw in cfg.items():
        act = actions[key]
        try:
            val = act.type(raw) if act.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"config key {key}: {exc}")
        if act.choices is not None and val not in act.choices:
            raise UsageError(f"config key {key}: {raw!r} not in {list(act.choices)}")
        defaults[key] = val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, sys.argv[1:] if argv is None else argv)
        args._t0 = time.perf_counter()
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (OSError, KeyError) as exc:
        print(f"gfvar: error: {exc}", file=sys.stderr)
        return 1
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"gfvar: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"gfvar: invalid input: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
