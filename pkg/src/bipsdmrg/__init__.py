"""DMRG and block-interaction product-state DMRG for small fermionic models.

Names are resolved lazily so that ``bipsdmrg.cli`` can set BLAS thread
limits before numpy is loaded.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "symtensor": ("QNum", "Index", "BlockTensor", "contract", "svd_truncate", "density_truncate", "davidson"),
    "hamio": ("Integrals", "read_fcidump", "write_fcidump", "parse_fcidump", "build_hubbard",
              "dimerized_hubbard", "restricted_hartree_fock", "build_hamiltonian_mpo"),
    "mpo": ("MpoChain", "mpo_to_dense"),
    "mps": ("Mps", "product_state", "random_mps", "canonicalize", "expectation", "overlap", "mps_to_dense",
            "hf_mps", "save_mps", "load_mps"),
    "dmrg": ("SweepStage", "SweepSchedule", "default_schedule", "two_site_schedule", "dmrg_sweep"),
    "fci": ("DeterminantBasis", "fci_solve", "dense_overlap"),
    "embed": ("FragmentPartition", "build_bath", "build_embedded_problem", "read_fragment_file"),
    "bips": ("LocalBasisSet", "extract_local_basis", "build_cluster_mpo", "cluster_dmrg"),
    "pipeline": ("BipsConfig", "PipelineResult", "run_bips_pipeline"),
    "spin": ("HalfInt", "clebsch_gordan", "wigner3j", "wigner6j", "wigner9j", "ReducedSite",
             "ReducedOperator", "su2_cmpo_propagation_step"),
    "analysis": ("BipsLabel", "SampledState", "EffectiveHamiltonian", "sample_bips", "effective_hamiltonian",
                 "format_report"),
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}
__all__ = sorted(_WHERE)


def __getattr__(name):
    mod = _WHERE.get(name)
    if mod is None:
        raise AttributeError(f"module 'bipsdmrg' has no attribute {name!r}")
    value = getattr(import_module(f".{mod}", __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(list(globals()) + __all__)
