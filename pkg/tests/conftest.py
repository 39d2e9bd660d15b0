import numpy as np
import pytest

from cpi3d.chemio import Atom, LigandMolecule, ProteinStructure, Residue


def transform_ligand(mol: LigandMolecule, R=None, t=None) -> LigandMolecule:
    R = np.eye(3) if R is None else R
    t = np.zeros(3) if t is None else np.asarray(t, dtype=np.float64)
    atoms = tuple(
        Atom(element=a.element, position=R @ a.position + t,
             formal_charge=a.formal_charge, aromatic=a.aromatic)
        for a in mol.atoms
    )
    return LigandMolecule(id=mol.id, atoms=atoms, bonds=mol.bonds)


def transform_protein(protein: ProteinStructure, R=None, t=None) -> ProteinStructure:
    R = np.eye(3) if R is None else R
    t = np.zeros(3) if t is None else np.asarray(t, dtype=np.float64)
    residues = tuple(
        Residue(aa=r.aa, chain=r.chain, seq_index=r.seq_index,
                ca_position=R @ r.ca_position + t)
        for r in protein.residues
    )
    return ProteinStructure(id=protein.id, residues=residues)


def pdb_atom_line(serial, name, altloc, resname, chain, seq, x, y, z, element,
                  record="ATOM"):
    """One fixed-column PDB coordinate record."""
    return (f"{record:<6s}{serial:5d} {name:^4s}{altloc:1s}{resname:<3s} "
            f"{chain:1s}{seq:4d}    {x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00"
            f"          {element:>2s}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
