"""Seeded generators for toy complexes and clustered libraries.

Used by the test suite, the acceptance runs, and demo workflows: random
tree-shaped ligands docked inside a shell of residues, plus molecule and
protein families with planted near-duplicates for split experiments.
"""

from __future__ import annotations

import os

import numpy as np

from .chemio import (
    AMINO_ACIDS_3TO1,
    Atom,
    Bond,
    ComplexRecord,
    LigandMolecule,
    ProteinStructure,
    Residue,
    write_sdf,
)

_ELEMENTS = ("C", "C", "C", "N", "O", "S")
_AA_CODES = tuple(sorted(AMINO_ACIDS_3TO1))


def random_ligand(rng: np.random.Generator, n_atoms: int | None = None,
                  mol_id: str = "ligand", elements=_ELEMENTS,
                  center=(0.0, 0.0, 0.0)) -> LigandMolecule:
    """Connected random tree molecule with jittered 3D coordinates."""
    if n_atoms is None:
        n_atoms = int(rng.integers(4, 11))
    center = np.asarray(center, dtype=np.float64)
    positions = [center.copy()]
    parents = []
    for i in range(1, n_atoms):
        parent = int(rng.integers(0, i))
        parents.append(parent)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        positions.append(positions[parent] + direction * rng.uniform(1.3, 1.6))
    atoms = tuple(
        Atom(element=str(rng.choice(elements)), position=positions[i])
        for i in range(n_atoms)
    )
    bonds = tuple(
        Bond(i=parents[i - 1], j=i, order=int(rng.choice((1, 1, 1, 2))))
        for i in range(1, n_atoms)
    )
    return LigandMolecule(id=mol_id, atoms=atoms, bonds=bonds)


def random_protein(rng: np.random.Generator, n_residues: int | None = None,
                   protein_id: str = "protein", center=(0.0, 0.0, 0.0),
                   shell=(4.0, 9.0)) -> ProteinStructure:
    """Residue alpha carbons on a loose shell around `center`, so ligand
    atoms at the center fall inside the default contact cutoff."""
    if n_residues is None:
        n_residues = int(rng.integers(4, 11))
    center = np.asarray(center, dtype=np.float64)
    residues = []
    for i in range(n_residues):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        pos = center + direction * rng.uniform(*shell)
        residues.append(Residue(
            aa=str(rng.choice(_AA_CODES)), chain="A", seq_index=i + 1,
            ca_position=pos,
        ))
    return ProteinStructure(id=protein_id, residues=tuple(residues))


def random_complex(rng: np.random.Generator, complex_id: str = "toy",
                   n_atoms: int | None = None, n_residues: int | None = None,
                   with_label: bool = False) -> ComplexRecord:
    ligand = random_ligand(rng, n_atoms, mol_id=f"{complex_id}_lig")
    protein = random_protein(rng, n_residues, protein_id=f"{complex_id}_prot")
    label = float(10 ** rng.uniform(0, 6)) if with_label else None
    return ComplexRecord(complex_id=complex_id, ligand=ligand, protein=protein,
                         label_ec50_nm=label)


def random_complexes(n: int, seed: int = 0, with_label: bool = False,
                     n_atoms=None, n_residues=None) -> list[ComplexRecord]:
    rng = np.random.default_rng(seed)
    return [
        random_complex(rng, complex_id=f"toy{i}", n_atoms=n_atoms,
                       n_residues=n_residues, with_label=with_label)
        for i in range(n)
    ]


def mutate_ligand(base: LigandMolecule, mol_id: str, leaf: int,
                  element: str, flip_order: bool = False) -> LigandMolecule:
    """Near-duplicate: swap one terminal atom's element and optionally the
    order of its bond. Changes stay inside the fingerprint radius of that
    leaf, so every variant of a family remains close to every other."""
    old = base.atoms[leaf]
    atoms = list(base.atoms)
    atoms[leaf] = Atom(element=element, position=old.position,
                       formal_charge=old.formal_charge, aromatic=old.aromatic)
    bonds = list(base.bonds)
    if flip_order:
        for k, b in enumerate(bonds):
            if leaf in (b.i, b.j):
                bonds[k] = Bond(i=b.i, j=b.j, order=1 if b.order != 1 else 2)
                break
    return LigandMolecule(id=mol_id, atoms=tuple(atoms), bonds=tuple(bonds))


def ligand_family(rng: np.random.Generator, size: int, family_id: str) -> list[LigandMolecule]:
    """One random skeleton with a family-specific element palette plus
    variants that all mutate the same terminal atom: every within-family
    pair differs only near that leaf, while distinct skeletons and
    palettes keep families apart."""
    palette = list(rng.choice(("C", "N", "O", "S", "P", "F", "Cl", "Br"),
                              size=3, replace=False))
    base = random_ligand(rng, n_atoms=int(rng.integers(10, 17)),
                         mol_id=f"{family_id}_0", elements=tuple(palette))
    degrees = base.degrees()
    leaves = [i for i, d in enumerate(degrees) if d <= 1]
    leaf = int(rng.choice(leaves)) if leaves else 0
    alternates = [e for e in ("C", "N", "O", "S") if e != base.atoms[leaf].element]
    family = [base]
    for v in range(1, size):
        element = alternates[(v - 1) % len(alternates)]
        family.append(mutate_ligand(base, f"{family_id}_{v}", leaf, element,
                                    flip_order=(v - 1) >= len(alternates)))
    return family


def mutate_sequence(rng: np.random.Generator, sequence: list[str], n_mutations: int) -> list[str]:
    out = list(sequence)
    for _ in range(n_mutations):
        pos = int(rng.integers(0, len(out)))
        out[pos] = str(rng.choice(_AA_CODES))
    return out


def protein_family(rng: np.random.Generator, size: int, family_id: str,
                   length: int = 80) -> list[ProteinStructure]:
    base_seq = [str(rng.choice(_AA_CODES)) for _ in range(length)]
    proteins = []
    for v in range(size):
        seq = base_seq if v == 0 else mutate_sequence(rng, base_seq, n_mutations=3)
        residues = tuple(
            Residue(aa=seq[i], chain="A", seq_index=i + 1,
                    ca_position=np.array([3.8 * i, 0.0, 0.0]))
            for i in range(length)
        )
        proteins.append(ProteinStructure(id=f"{family_id}_{v}", residues=tuple(residues)))
    return proteins


def clustered_records(n_families: int, family_size: int, seed: int = 0) -> list[ComplexRecord]:
    """Records with planted compound and protein near-duplicate clusters;
    record i pairs molecule family f with protein family f."""
    rng = np.random.default_rng(seed)
    records = []
    for f in range(n_families):
        mols = ligand_family(rng, family_size, f"fam{f}")
        prots = protein_family(rng, family_size, f"fam{f}")
        for v in range(family_size):
            records.append(ComplexRecord(
                complex_id=f"fam{f}_rec{v}", ligand=mols[v], protein=prots[v],
                label_ec50_nm=float(10 ** rng.uniform(0, 6)),
            ))
    return records


def protein_to_pdb(protein: ProteinStructure) -> str:
    """Minimal CA-trace PDB text (one ATOM record per residue)."""
    lines = []
    for serial, res in enumerate(protein.residues, start=1):
        x, y, z = res.ca_position
        lines.append(
            f"ATOM  {serial:5d}  CA  {res.aa:<3s} {res.chain:1s}{res.seq_index:4d}"
            f"    {x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           C"
        )
    lines.append("END")
    return "\n".join(lines) + "\n"


def write_manifest(records: list[ComplexRecord], directory: str) -> str:
    """Materialize records as SDF/PDB files plus a manifest CSV; returns
    the manifest path."""
    os.makedirs(directory, exist_ok=True)
    manifest = os.path.join(directory, "manifest.csv")
    rows = ["complex_id,ligand_sdf,protein_pdb,ec50_nm,confidence,is_active"]
    for rec in records:
        sdf_name = f"{rec.complex_id}.sdf"
        pdb_name = f"{rec.complex_id}.pdb"
        with open(os.path.join(directory, sdf_name), "w", encoding="utf-8") as fh:
            write_sdf(list(rec.poses), fh)
        with open(os.path.join(directory, pdb_name), "w", encoding="utf-8") as fh:
            fh.write(protein_to_pdb(rec.protein))
        ec50 = "" if rec.label_ec50_nm is None else repr(float(rec.label_ec50_nm))
        conf = "" if rec.upstream_confidence is None else repr(float(rec.upstream_confidence))
        active = "" if rec.is_active is None else str(int(rec.is_active))
        rows.append(f"{rec.complex_id},{sdf_name},{pdb_name},{ec50},{conf},{active}")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    return manifest
