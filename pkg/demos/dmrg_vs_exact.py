"""Ground state of a 6-site Hubbard chain: mean field, DMRG and exact diagonalization.

Run with ``python3 demos/dmrg_vs_exact.py``.
"""

from bipsdmrg.dmrg import dmrg_sweep, two_site_schedule
from bipsdmrg.fci import fci_solve
from bipsdmrg.hamio import build_hubbard, restricted_hartree_fock
from bipsdmrg.mpo import build_hamiltonian_mpo
from bipsdmrg.mps import hf_mps

ints = build_hubbard(6, [1.0] * 5, 4.0)          # t = 1, U = 4, half filling
mf = restricted_hartree_fock(ints)
print(f"mean field     {mf.energy:.10f}")

# DMRG starts from the mean-field determinant and sweeps with growing bond dimension
mpo = build_hamiltonian_mpo(ints)
print(f"MPO link dims  {mpo.link_dims}")
for m in (4, 16, 64):
    _, rep = dmrg_sweep(hf_mps(mf, ints.n_up, ints.n_dn), mpo, two_site_schedule(m, tol=1e-10))
    print(f"DMRG m = {m:<4d} {rep.final_energies[0]:.10f}  max discarded {rep.max_discarded:.1e}")

print(f"exact          {fci_solve(ints)[0][0]:.10f}")
