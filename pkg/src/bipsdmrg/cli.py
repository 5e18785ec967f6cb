"""Command-line driver: ``bipsdmrg <subcommand> --config run.cfg``.

Config files are plain ``key = value`` lines; ``#`` starts a comment.
Heavy modules are imported only after ``--threads`` has been applied to
the BLAS thread variables.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import BipsError, ConfigError

SUBCOMMANDS = ("hf", "fci", "dmrg", "bips", "sample", "effham", "scan")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


@dataclass
class RunConfig:
    # system
    fcidump: str | None = None
    model: str = "hubbard"               # hubbard | dimerized_hubbard (used without fcidump)
    n_sites: int = 6
    t: float = 1.0
    t_intra: float = 1.0
    t_inter: float = 0.1
    u: float = 4.0
    n_elec: int | None = None            # default: half filling or the FCIDUMP header
    two_sz: int | None = None
    # fragments: a fragment file, or contiguous blocks of one size
    fragments: str | None = None
    fragment_size: int | None = None
    # solvers
    n_roots: int = 1
    m: int = 64
    dmrg_schedule: str = "two_site"      # two_site | default
    n_state: int = 4
    m_tilde: int | None = None           # default n_roots * n_state
    weight_threshold: float = 1e-12
    sv_cutoff: float = 1e-8
    cmpo_method: str = "deferred_integrals"
    init: str = "low_energy_products"
    cluster_algorithm: str = "one_site"
    davidson_tol: float = 1e-8
    max_sweeps: int = 20
    seed: int = 7
    # analysis
    threshold: float = 0.1
    # scan
    reference: str = "fci"               # fci | dmrg
    scan_t_intra: tuple = (1.0,)
    scan_t_inter: tuple = (0.1, 0.5, 1.0)
    output: str | None = None

    def resolved(self) -> dict:
        return asdict(self)


_CHOICES = {
    "model": ("hubbard", "dimerized_hubbard"),
    "dmrg_schedule": ("two_site", "default"),
    "cmpo_method": ("deferred_integrals", "direct"),
    "init": ("low_energy_products", "random_qn"),
    "cluster_algorithm": ("one_site", "two_site"),
    "reference": ("fci", "dmrg"),
}
_POSITIVE = ("n_sites", "n_roots", "m", "n_state", "m_tilde", "max_sweeps", "fragment_size",
             "davidson_tol", "sv_cutoff")


def _convert(name: str, text: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    try:
        if name.startswith("scan_"):
            vals = _floats(text)
            if not vals:
                raise ValueError("empty list")
            return vals
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r} ({exc})") from None


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, val)
    cfg = RunConfig(**values)
    for key in ("fcidump", "fragments", "output"):
        path = getattr(cfg, key)
        if path is not None and base_dir is not None and not Path(path).is_absolute():
            setattr(cfg, key, str(base_dir / path))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    for key, allowed in _CHOICES.items():
        if getattr(cfg, key) not in allowed:
            raise ConfigError(f"{key} must be one of {', '.join(allowed)}")
    for key in _POSITIVE:
        val = getattr(cfg, key)
        if val is not None and val <= 0:
            raise ConfigError(f"{key} must be positive")
    if not 0.0 < cfg.threshold <= 1.0:
        raise ConfigError("threshold must lie in (0, 1]")
    if cfg.weight_threshold < 0:
        raise ConfigError("weight_threshold must be nonnegative")
    for key in ("fcidump", "fragments"):
        path = getattr(cfg, key)
        if path is not None and not Path(path).is_file():
            raise ConfigError(f"{key} file not found: {path}")


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text(), p.parent)


# ---- system and solvers -------------------------------------------------------------

def build_system(cfg: RunConfig, t_intra: float | None = None, t_inter: float | None = None):
    import dataclasses

    from .hamio import build_hubbard, dimerized_hubbard, read_fcidump

    if cfg.fcidump:
        ints = read_fcidump(cfg.fcidump)
    elif cfg.model == "dimerized_hubbard" or t_inter is not None:
        ints = dimerized_hubbard(cfg.n_sites, cfg.t_intra if t_intra is None else t_intra,
                                 cfg.t_inter if t_inter is None else t_inter, cfg.u)
    else:
        ints = build_hubbard(cfg.n_sites, [cfg.t] * (cfg.n_sites - 1), cfg.u)
    changes = {}
    if cfg.n_elec is not None:
        changes["n_elec"] = cfg.n_elec
    if cfg.two_sz is not None:
        changes["two_sz_target"] = cfg.two_sz
    n_elec = changes.get("n_elec", ints.n_elec)
    two_sz = changes.get("two_sz_target", ints.two_sz_target)
    if not 0 <= n_elec <= 2 * ints.n_orb or abs(two_sz) > n_elec or (n_elec + two_sz) % 2:
        raise ConfigError(f"target (n_elec={n_elec}, two_sz={two_sz}) is not possible "
                          f"with {ints.n_orb} orbitals")
    return dataclasses.replace(ints, **changes) if changes else ints


def build_partition(cfg: RunConfig, n_orb: int):
    from .embed import FragmentPartition, read_fragment_file

    if cfg.fragments:
        part = read_fragment_file(cfg.fragments)
        if part.n_orb != n_orb:
            raise ConfigError(f"fragment file covers {part.n_orb} orbitals, system has {n_orb}")
        return part
    size = cfg.fragment_size or 2
    if n_orb % size:
        raise ConfigError(f"fragment_size {size} does not divide {n_orb} orbitals")
    return FragmentPartition.contiguous([size] * (n_orb // size))


def bips_config(cfg: RunConfig):
    from .pipeline import BipsConfig

    return BipsConfig(m=cfg.m, n_state=cfg.n_state, m_tilde=cfg.m_tilde, n_roots=cfg.n_roots,
                      weight_threshold=cfg.weight_threshold, sv_cutoff=cfg.sv_cutoff, method=cfg.cmpo_method,
                      init=cfg.init, cluster_algorithm=cfg.cluster_algorithm, davidson_tol=cfg.davidson_tol,
                      max_sweeps=cfg.max_sweeps, seed=cfg.seed)


def run_dmrg(cfg: RunConfig, ints):
    from .dmrg import default_schedule
    from .pipeline import solve_model

    bc = bips_config(cfg)
    if cfg.dmrg_schedule == "default":
        bc.model_schedule = lambda: default_schedule(cfg.m, cfg.davidson_tol, 0.0, cfg.max_sweeps)
    return solve_model(ints, bc)


def reference_energies(cfg: RunConfig, ints) -> list:
    if cfg.reference == "fci":
        from .fci import fci_solve
        return [float(e) for e in fci_solve(ints, n_roots=cfg.n_roots)[0]]
    return [float(e) for e in run_dmrg(cfg, ints)[1]]


# ---- subcommands -------------------------------------------------------------------------
# each returns (report body lines, machine-readable dict)

def cmd_hf(cfg, ints):
    from .hamio import restricted_hartree_fock

    mf = restricted_hartree_fock(ints)
    lines = [f"E(HF) = {mf.energy:.12f}", f"SCF iterations = {mf.iterations}",
             "orbital energies " + " ".join(f"{e:.8f}" for e in mf.orbital_energies)]
    return lines, {"energy": float(mf.energy), "orbital_energies": [float(e) for e in mf.orbital_energies]}


def cmd_fci(cfg, ints):
    from .fci import fci_solve

    energies = [float(e) for e in fci_solve(ints, n_roots=cfg.n_roots)[0]]
    return [f"E(FCI root {i}) = {e:.12f}" for i, e in enumerate(energies)], {"energies": energies}


def cmd_dmrg(cfg, ints):
    _, energies = run_dmrg(cfg, ints)
    energies = [float(e) for e in energies]
    return [f"E(DMRG root {i}) = {e:.12f}" for i, e in enumerate(energies)], {"energies": energies}


def _pipeline(cfg, ints):
    from .pipeline import run_bips_pipeline

    return run_bips_pipeline(ints, build_partition(cfg, ints.n_orb), bips_config(cfg))


def _pipeline_data(res) -> dict:
    data = res.summary()
    data.pop("timings")
    data.pop("config")
    return data


def cmd_bips(cfg, ints):
    res = _pipeline(cfg, ints)
    body = res.to_text(include_timings=False).split("# machine-readable")[0]
    lines = [ln for ln in body.rstrip("\n").splitlines() if not ln.startswith("config ")]
    return lines, _pipeline_data(res)


def _roots(state):
    return state if isinstance(state, list) else [state]


def cmd_sample(cfg, ints):
    from .analysis import format_report, sample_bips

    res = _pipeline(cfg, ints)
    hits = [sample_bips(st, cfg.threshold) for st in _roots(res.cluster_state)]
    text = format_report(res, hits if len(hits) > 1 else hits[0], threshold=cfg.threshold)
    data = _pipeline_data(res)
    data["sampled"] = [[{"label": list(s.label.indices), "sectors": [str(q) for q in s.label.qnums],
                         "coefficient": s.coefficient} for s in root] for root in hits]
    return text.rstrip("\n").splitlines(), data


def cmd_effham(cfg, ints):
    from .analysis import effective_hamiltonian, format_report, sample_bips

    res = _pipeline(cfg, ints)
    labels, seen = [], set()
    for st in _roots(res.cluster_state):
        for s in sample_bips(st, cfg.threshold):
            if s.label not in seen:
                seen.add(s.label)
                labels.append(s.label)
    heff = effective_hamiltonian(res.cluster_mpo, labels)
    text = format_report(res, None, heff, cfg.threshold)
    eig = [float(e) for e in heff.eigenvalues()]
    lines = text.rstrip("\n").splitlines() + ["", "eigenvalues " + " ".join(f"{e:.10f}" for e in eig)]
    data = _pipeline_data(res)
    data.update({"basis": [list(b.indices) for b in heff.basis], "matrix": heff.matrix.tolist(),
                 "eigenvalues": eig})
    return lines, data


def cmd_scan(cfg, ints):
    from .pipeline import run_bips_pipeline

    rows, grid = [f"{'t_intra':>8} {'t_inter':>8} {'E(ref)':>18} {'E(BIPS)':>18} {'error':>12}"], []
    for ta in cfg.scan_t_intra:
        for te in cfg.scan_t_inter:
            sys_ = build_system(cfg, ta, te)
            ref = reference_energies(cfg, sys_)[0]
            e = run_bips_pipeline(sys_, build_partition(cfg, sys_.n_orb), bips_config(cfg)).energy
            rows.append(f"{ta:8.3f} {te:8.3f} {ref:18.10f} {e:18.10f} {e - ref:12.4e}")
            grid.append({"t_intra": ta, "t_inter": te, "reference": ref, "bips": e, "error": e - ref})
    return rows, {"reference_method": cfg.reference, "grid": grid}


COMMANDS = {"hf": cmd_hf, "fci": cmd_fci, "dmrg": cmd_dmrg, "bips": cmd_bips, "sample": cmd_sample,
            "effham": cmd_effham, "scan": cmd_scan}


# ---- entry point -------------------------------------------------------------------------

def render(sub: str, cfg: RunConfig, lines: list, data: dict) -> tuple:
    resolved = cfg.resolved()
    head = [f"bipsdmrg {sub}", ""] + [f"config {k} = {resolved[k]}" for k in sorted(resolved)] + [""]
    payload = {"subcommand": sub, "config": resolved, "results": data}
    machine = json.dumps(payload, sort_keys=True, default=str)
    return "\n".join(head + list(lines) + ["", "# machine-readable", machine]) + "\n", machine + "\n"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bipsdmrg", description="DMRG and block-interaction product-state DMRG")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="key = value run configuration")
    ap.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    ap.add_argument("--output", help="directory for <subcommand>.txt and <subcommand>.json")
    ap.add_argument("--verbose", action="store_true", help="timings and progress on stderr")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return 2
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    try:
        cfg = load_config(args.config)
        if args.output:
            cfg.output = args.output
        import time
        t0 = time.perf_counter()
        ints = build_system(cfg)
        lines, data = COMMANDS[args.subcommand](cfg, ints)
        report, machine = render(args.subcommand, cfg, lines, data)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BipsError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    sys.stdout.write(report)
    if args.verbose:
        print(f"wall time {time.perf_counter() - t0:.3f} s", file=sys.stderr)
    if cfg.output:
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.subcommand}.txt").write_text(report)
        (out / f"{args.subcommand}.json").write_text(machine)
    return 0


if __name__ == "__main__":
    sys.exit(main())
