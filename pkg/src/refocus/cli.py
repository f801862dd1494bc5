"""``refocus`` command line: gen, pyramid, verify, compare, tokenize, attn-demo, distill-toy.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 I/O error.
``REFOCUS_SEED`` overrides the default seed; an explicit ``--seed`` wins.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name
from .imagecore import (ImageError, PATTERN_KINDS, PatternSpec, atomic_write_bytes,
                        gen_pattern, load_image, save_image)

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("REFOCUS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"REFOCUS_SEED must be an integer, got {env!r}")
    return 0


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write_bytes(path, text.encode())


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _center_crop(img: np.ndarray, multiple: int) -> np.ndarray:
    h, w = img.shape
    nh, nw = h - h % multiple, w - w % multiple
    if nh == 0 or nw == 0:
        raise UsageError(f"image {w}x{h} is smaller than the coarsest factor {multiple}")
    top, left = (h - nh) // 2, (w - nw) // 2
    return img[top:top + nh, left:left + nw]


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    spec = PatternSpec(kind=args.kind, size=args.size, level=args.level, freq=args.freq,
                       angle=args.angle, alpha=args.alpha, cell=args.cell, seed=_seed(args))
    try:
        img = gen_pattern(spec)
    except ValueError as exc:
        raise UsageError(str(exc))
    save_image(img, args.output)
    return EXIT_OK


def cmd_pyramid(args) -> int:
    from .psf import focus_schedule
    from .pyramid import beta_schedule, build_pyramid, dump_pyramid, dyadic_factors

    seed = _seed(args)
    x = load_image(args.input)
    factors = _ints(args.factors) if args.factors else dyadic_factors(args.K)
    if len(factors) != args.K:
        raise UsageError(f"--factors needs {args.K} entries")
    if args.beta is not None:
        betas = [args.beta] * args.K
    else:
        betas = beta_schedule(args.K, args.beta_lo, args.beta_hi)
    try:
        schedule = focus_schedule(args.K, args.rho_max)
        x = _center_crop(x, max(factors))
        pyr = build_pyramid(x, schedule, factors, betas, kernel_kind=args.kernel, seed=seed,
                            boundary=args.boundary, supersample=args.supersample)
    except ValueError as exc:
        raise UsageError(str(exc))
    extra = {"input": str(args.input), "input_sha256": _file_digest(args.input),
             "crop": list(x.shape), "supersample": args.supersample, "version": __version__}
    dump_pyramid(pyr, args.output, extra)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .spectral import report_json, run_verification_suite

    seeds = _ints(args.seeds) if args.seeds else [_seed(args)]
    sizes = _ints(args.sizes)
    image_sizes = _ints(args.image_sizes)
    results = []
    for s in seeds:
        for r in run_verification_suite(sizes, s, args.n_signals, image_sizes,
                                        corrupt=args.self_test_corrupt):
            r.size = f"{r.size}@seed{s}" if len(seeds) > 1 else r.size
            results.append(r)
    text = report_json(results, seeds=seeds, sizes=sizes, image_sizes=image_sizes,
                       n_signals=args.n_signals, corrupted=args.self_test_corrupt)
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write_bytes(args.output, text.encode())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def compare_report(img: np.ndarray, factor: int, sigmas, rhos, supersample: int = 8) -> dict:
    from .psf import disk_kernel, gaussian_kernel
    from .spectral import folded_energy_metric

    base = folded_energy_metric(img, factor)
    entries = [{"name": "none", "kernel": "none", "param": None, "metric": base}]
    for sg in sigmas:
        entries.append({"name": f"gaussian_sigma={sg:g}", "kernel": "gaussian", "param": sg,
                        "metric": folded_energy_metric(img, factor, gaussian_kernel(sg))})
    for r in rhos:
        entries.append({"name": f"disk_rho={r:g}", "kernel": "disk", "param": r,
                        "metric": folded_energy_metric(img, factor, disk_kernel(r, supersample))})
    for e in entries:
        e["ratio"] = e["metric"] / base if base > 0 else None
    entries.sort(key=lambda e: (-e["metric"], e["name"]))
    return {"schema": "refocus.compare/1", "factor": factor, "baseline": base,
            "results": entries}


def cmd_compare(args) -> int:
    img = load_image(args.input)
    try:
        img = _center_crop(img, args.factor)
        report = compare_report(img, args.factor, _floats(args.sigmas), _floats(args.rhos),
                                args.supersample)
    except ValueError as exc:
        raise UsageError(str(exc))
    report.update(input=str(args.input), input_sha256=_file_digest(args.input))
    _write_json(report, args.output)
    return EXIT_OK


def cmd_tokenize(args) -> int:
    from .pyramid import load_pyramid_dir
    from .vq import (DualVQConfig, codebook_stats, patchify, save_codebook, save_token_grid,
                     tokenize_grid, train_codebook)

    cfg = DualVQConfig(patch=args.patch, structure_size=args.structure_size,
                       alias_size=args.alias_size, iters=args.iters, seed=_seed(args))
    manifest, scales = load_pyramid_dir(args.pyramid)
    usable = [(k, L, A) for k, (L, D, A) in enumerate(scales, start=1)
              if L.shape[0] % cfg.patch == 0 and L.shape[1] % cfg.patch == 0]
    if not usable:
        raise UsageError(f"no pyramid scale is divisible by patch {cfg.patch}")
    Lp = np.concatenate([patchify(L, cfg.patch) for _, L, _ in usable])
    Ap = np.concatenate([patchify(A, cfg.patch) for _, _, A in usable])
    cb_L = train_codebook(Lp, cfg.structure_size, cfg.iters, cfg.seed, role="structure")
    cb_A = train_codebook(Ap, cfg.alias_size, cfg.iters, cfg.seed, role="alias")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_codebook(cb_L, out / "codebook_structure")
    save_codebook(cb_A, out / "codebook_alias")
    per_scale = []
    all_r, all_a = [], []
    for k, L, A in usable:
        tr, _ = tokenize_grid(cb_L, L, cfg.patch)
        ta, _ = tokenize_grid(cb_A, A, cfg.patch)
        save_token_grid(tr, out / f"r_{k}.csv")
        save_token_grid(ta, out / f"a_{k}.csv")
        all_r.append(tr.indices.ravel())
        all_a.append(ta.indices.ravel())
        per_scale.append({"k": k, "grid": list(tr.indices.shape)})
    s_stats = codebook_stats(np.concatenate(all_r), cb_L)
    a_stats = codebook_stats(np.concatenate(all_a), cb_A)
    report = {"schema": "refocus.tokenize/1", "config": asdict(cfg), "pyramid": manifest,
              "scales": per_scale,
              "structure": {"perplexity": s_stats["perplexity"], "used": s_stats["used"],
                            "final_distortion": cb_L.trace[-1], "degenerate": cb_L.degenerate},
              "alias": {"perplexity": a_stats["perplexity"], "used": a_stats["used"],
                        "final_distortion": cb_A.trace[-1], "degenerate": cb_A.degenerate},
              "alias_le_structure_perplexity": a_stats["perplexity"] <= s_stats["perplexity"],
              "patch_variance": {"structure": float(Lp.var(axis=0).mean()),
                                 "alias": float(Ap.var(axis=0).mean())}}
    _write_json(report, out / "manifest.json")
    return EXIT_OK


def cmd_attn_demo(args) -> int:
    from .agxattn import agx_forward, fit_gate_diagnostic, grad_check, random_case, wsa_forward

    seed = _seed(args)
    case = dict(N=args.N, M=args.M, d=args.d, d_h=args.d_h, window=args.window)
    report = {"schema": "refocus.attn_demo/1", "seed": seed, "case": case}
    ok = True
    if args.grad_check:
        per_seed = []
        worst = {}
        for s in range(seed, seed + args.seeds):
            errs = grad_check(s, eps=args.eps, **case)
            per_seed.append({"seed": s, "max_rel_err": errs})
            for k, v in errs.items():
                worst[k] = max(worst.get(k, 0.0), v)
        overall = max(worst.values())
        ok = overall <= args.tol
        report["grad_check"] = {"eps": args.eps, "tolerance": args.tol, "per_seed": per_seed,
                                "max_rel_err": worst, "overall": overall, "pass": ok}
    params, seq, _ = random_case(seed, **case)
    Z, cache = agx_forward(seq, params, return_cache=True)
    W = wsa_forward(cache["X_L"], params)
    # processed alias evidence: attention-pooled alias embeddings per query
    P, A_emb = cache["cross"][5], cache["cross"][1]
    gate = fit_gate_diagnostic(Z, W, P @ A_emb)
    zeroed = params.copy()
    zeroed.xa_v[...] = 0.0
    student_equal = bool(np.array_equal(agx_forward(seq, zeroed),
                                        agx_forward(seq, zeroed, use_alias=False)))
    report["teacher_equals_student_when_cross_value_zero"] = student_equal
    report["gate_alpha_raw"] = [float(a) if d else None
                                for a, d in zip(gate["alpha_raw"], gate["defined"])]
    report["gate_alpha_wiener"] = [float(a) if d else None
                                   for a, d in zip(gate["alpha_wiener"], gate["defined"])]
    if args.params_out:
        atomic_write_bytes(args.params_out, params.to_blob())
    _write_json(report, args.output)
    return EXIT_OK if ok and student_equal else EXIT_VERIFY


def cmd_distill_toy(args) -> int:
    from .distill import DivergenceError, ToyConfig, toy_distill_run

    try:
        cfg = ToyConfig(seq_len=args.seq_len, d=args.d, d_h=args.d_h, window=args.window,
                        structure_size=args.structure_size, alias_size=args.alias_size,
                        steps=args.steps, lr=args.lr, seed=_seed(args),
                        lambda_feat=args.lambda_feat, lambda_logit=args.lambda_logit,
                        n_blocks=args.blocks, cross_blocks=args.cross_blocks,
                        cross_scales=args.cross_scales)
    except ValueError as exc:
        raise UsageError(str(exc))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    try:
        trace, student, _ = toy_distill_run(cfg)
    except DivergenceError as exc:
        trace, status = exc.trace, EXIT_VERIFY
        print(f"distill-toy: {exc}", file=sys.stderr)
    atomic_write_bytes(out / "trace.csv", trace.to_csv().encode())
    tot = trace.column("total") if trace.rows else np.array([np.nan])
    _write_json({"schema": "refocus.distill/1", "config": asdict(cfg),
                 "first_total": float(tot[0]), "last_total": float(tot[-1]),
                 "decreased": bool(tot[-1] < tot[0]), "diverged": status != EXIT_OK},
                out / "manifest.json")
    return status


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="refocus", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"%(prog)s {__version__} ({backend_name()} kernels)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default: $REFOCUS_SEED or 0)")
        return sp

    g = seeded(sub.add_parser("gen", help="generate a synthetic test pattern"))
    g.add_argument("--kind", choices=PATTERN_KINDS, required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--level", type=float, default=0.5, help="constant level")
    g.add_argument("--freq", type=float, default=0.25, help="sinusoid cycles/pixel, (0, 0.5]")
    g.add_argument("--angle", type=float, default=0.0, help="sinusoid angle in degrees")
    g.add_argument("--alpha", type=float, default=None,
                   help="zone-plate chirp rate (default pi/size: Nyquist at the edge)")
    g.add_argument("--cell", type=int, default=4, help="checker cell size")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    py = seeded(sub.add_parser("pyramid", help="build a dual-path refocusing pyramid"))
    py.add_argument("input")
    py.add_argument("-o", "--output", required=True, help="output directory")
    py.add_argument("--K", type=int, default=4, help="number of focus states")
    py.add_argument("--rho-max", type=float, default=12.0, help="largest PSF radius in pixels")
    py.add_argument("--factors", default=None, help="comma list; default dyadic 2^(K-1)..1")
    py.add_argument("--beta", type=float, default=None, help="constant noise amplitude")
    py.add_argument("--beta-lo", type=float, default=1e-3, help="noise amplitude at the coarsest scale")
    py.add_argument("--beta-hi", type=float, default=1e-2, help="noise amplitude at the finest scale")
    py.add_argument("--kernel", choices=("disk", "gaussian"), default="disk")
    py.add_argument("--boundary", choices=("reflect", "zero"), default="reflect")
    py.add_argument("--supersample", type=int, default=8, help="sub-samples per pixel axis for disk kernels")
    py.set_defaults(func=cmd_pyramid)

    v = seeded(sub.add_parser("verify", help="run the spectral identity suite"))
    v.add_argument("--sizes", default="8,16,32,64,128")
    v.add_argument("--image-sizes", default="8,16")
    v.add_argument("--seeds", default=None, help="comma list of seeds")
    v.add_argument("--n-signals", type=int, default=200)
    v.add_argument("--self-test-corrupt", action="store_true",
                   help="negative control: use a DFT with one bin sign-flipped")
    v.add_argument("-o", "--output", default=None)
    v.set_defaults(func=cmd_verify)

    c = seeded(sub.add_parser("compare", help="folded-energy comparison of prefilters"))
    c.add_argument("input")
    c.add_argument("--factor", type=int, default=2)
    c.add_argument("--sigmas", default="0.5,1,2")
    c.add_argument("--rhos", default="1,2,3,4")
    c.add_argument("--supersample", type=int, default=8)
    c.add_argument("-o", "--output", default=None)
    c.set_defaults(func=cmd_compare)

    t = seeded(sub.add_parser("tokenize", help="train dual codebooks on a pyramid directory"))
    t.add_argument("pyramid")
    t.add_argument("-o", "--output", required=True)
    t.add_argument("--patch", type=int, default=4)
    t.add_argument("--structure-size", type=int, default=256,
                   help="structure codebook size (reference scale 8192)")
    t.add_argument("--alias-size", type=int, default=32, help="alias codebook size (reference scale 512)")
    t.add_argument("--iters", type=int, default=20)
    t.set_defaults(func=cmd_tokenize)

    a = seeded(sub.add_parser("attn-demo", help="AG-XAttn forward demo and gradient check"))
    a.add_argument("--grad-check", action="store_true")
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--N", type=int, default=6)
    a.add_argument("--M", type=int, default=3)
    a.add_argument("--d", type=int, default=8)
    a.add_argument("--d-h", type=int, default=4)
    a.add_argument("--window", type=int, default=4)
    a.add_argument("--eps", type=float, default=1e-5)
    a.add_argument("--tol", type=float, default=1e-4)
    a.add_argument("--params-out", default=None, help="write the demo parameters blob")
    a.add_argument("-o", "--output", default=None)
    a.set_defaults(func=cmd_attn_demo)

    d = seeded(sub.add_parser("distill-toy", help="toy online teacher-student distillation"))
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--steps", type=int, default=200)
    d.add_argument("--lr", type=float, default=0.3, help="SGD step size")
    d.add_argument("--seq-len", type=int, default=16)
    d.add_argument("--d", type=int, default=16)
    d.add_argument("--d-h", type=int, default=8)
    d.add_argument("--window", type=int, default=4)
    d.add_argument("--structure-size", type=int, default=32)
    d.add_argument("--alias-size", type=int, default=8)
    d.add_argument("--lambda-feat", type=float, default=1.0, help="feature alignment weight")
    d.add_argument("--lambda-logit", type=float, default=0.5, help="logit KL weight")
    d.add_argument("--blocks", type=int, default=1, help="number of stacked blocks")
    d.add_argument("--cross-blocks", type=int, default=2,
                   help="teacher alias cross-attention on the final N blocks")
    d.add_argument("--cross-scales", type=int, default=None,
                   help="alternatively restrict alias evidence to the final N scales")
    d.set_defaults(func=cmd_distill_toy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"refocus {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageError, OSError) as exc:
        print(f"refocus {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
