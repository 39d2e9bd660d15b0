"""Heterogeneous radius graphs over ligand atoms and protein residues.

Nodes are ligand heavy atoms and residue alpha carbons; undirected pairs
within a type-dependent cutoff become two directed edges carrying the
relative vector, distance, and a Gaussian radial-basis embedding of the
distance.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .chemio import AMINO_ACIDS_3TO1, ComplexRecord, LigandMolecule, ProteinStructure
from .errors import ValidationError

LIGAND_ELEMENT_CLASSES = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I")
MAX_DEGREE_CLASS = 5
CHARGE_CLASSES = (-2, -1, 0, 1, 2)
LIGAND_FEATURE_DIM = len(LIGAND_ELEMENT_CLASSES) + 1 + (MAX_DEGREE_CLASS + 1) + len(CHARGE_CLASSES) + 1
RESIDUE_CLASSES = tuple(sorted(AMINO_ACIDS_3TO1)) + ("UNK",)
RESIDUE_FEATURE_DIM = len(RESIDUE_CLASSES)


class NodeKind(enum.IntEnum):
    LIGAND_ATOM = 0
    RESIDUE = 1


class EdgeKind(str, enum.Enum):
    CC = "cc"
    PP = "pp"
    PC = "pc"


@dataclass(frozen=True)
class CutoffConfig:
    """Distance cutoffs per edge kind plus the RBF discretization."""
    cc: float = 5.0
    pp: float = 15.0
    pc: float = 10.0
    rbf_k: int = 32
    rbf_gamma: float | None = None     # default 10 / nu_max
    rbf_nu_min: float = 0.0
    rbf_nu_max: float | None = None    # default max(cc, pp, pc)

    def __post_init__(self):
        for name in ("cc", "pp", "pc"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"cutoff {name} must be positive")
        if self.rbf_k < 2:
            raise ValidationError("rbf_k must be at least 2")
        if self.rbf_nu_max is None:
            object.__setattr__(self, "rbf_nu_max", max(self.cc, self.pp, self.pc))
        if self.rbf_gamma is None:
            object.__setattr__(self, "rbf_gamma", 10.0 / self.rbf_nu_max)
        if not self.rbf_nu_min < self.rbf_nu_max:
            raise ValidationError("rbf_nu_min must be below rbf_nu_max")

    def cutoff(self, kind: EdgeKind) -> float:
        return {EdgeKind.CC: self.cc, EdgeKind.PP: self.pp, EdgeKind.PC: self.pc}[kind]

    def anchors(self) -> np.ndarray:
        return np.linspace(self.rbf_nu_min, self.rbf_nu_max, self.rbf_k)

    def to_dict(self) -> dict:
        return {
            "cc": self.cc, "pp": self.pp, "pc": self.pc,
            "rbf_k": self.rbf_k, "rbf_gamma": self.rbf_gamma,
            "rbf_nu_min": self.rbf_nu_min, "rbf_nu_max": self.rbf_nu_max,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CutoffConfig":
        return cls(**doc)


def rbf_embed(dist, cfg: CutoffConfig) -> np.ndarray:
    """Gaussian radial basis: component i is exp(-gamma (d - nu_i)^2).

    Anchors nu_i are evenly spaced on [nu_min, nu_max]. Accepts a scalar or
    an array of distances; the basis index is the trailing axis.
    """
    d = np.asarray(dist, dtype=np.float64)
    nu = cfg.anchors()
    return np.exp(-cfg.rbf_gamma * (d[..., None] - nu) ** 2)


@dataclass(frozen=True)
class EdgeSet:
    """Directed edges of one kind, sorted by (destination, source)."""
    kind: EdgeKind
    a: np.ndarray       # destination node indices
    b: np.ndarray       # source node indices
    r_vec: np.ndarray   # position[b] - position[a], shape (n, 3)
    dist: np.ndarray    # shape (n,)
    rbf: np.ndarray     # shape (n, k)

    def __len__(self):
        return len(self.a)


@dataclass(frozen=True)
class HeteroGraph:
    n_ligand: int
    n_residue: int
    positions: np.ndarray          # (n_nodes, 3), ligand atoms first
    kinds: np.ndarray              # (n_nodes,), NodeKind values
    ligand_features: np.ndarray    # (n_ligand, LIGAND_FEATURE_DIM)
    residue_features: np.ndarray   # (n_residue, RESIDUE_FEATURE_DIM)
    edges: dict[EdgeKind, EdgeSet]
    warnings: tuple[str, ...] = ()

    @property
    def n_nodes(self) -> int:
        return self.n_ligand + self.n_residue

    def edge_count(self) -> int:
        return sum(len(e) for e in self.edges.values())


def ligand_atom_features(mol: LigandMolecule) -> np.ndarray:
    """One-hot chemistry features: element, degree (clamped to 5), formal
    charge (clipped to [-2, 2]), aromatic flag."""
    n = len(mol.atoms)
    feats = np.zeros((n, LIGAND_FEATURE_DIM), dtype=np.float64)
    degrees = mol.degrees()
    n_el = len(LIGAND_ELEMENT_CLASSES)
    for i, atom in enumerate(mol.atoms):
        if atom.element in LIGAND_ELEMENT_CLASSES:
            feats[i, LIGAND_ELEMENT_CLASSES.index(atom.element)] = 1.0
        else:
            feats[i, n_el] = 1.0
        col = n_el + 1
        feats[i, col + min(degrees[i], MAX_DEGREE_CLASS)] = 1.0
        col += MAX_DEGREE_CLASS + 1
        charge = int(np.clip(atom.formal_charge, CHARGE_CLASSES[0], CHARGE_CLASSES[-1]))
        feats[i, col + CHARGE_CLASSES.index(charge)] = 1.0
        col += len(CHARGE_CLASSES)
        feats[i, col] = 1.0 if atom.aromatic else 0.0
    return feats


def residue_node_features(protein: ProteinStructure) -> np.ndarray:
    """One-hot over the 20 standard amino acids plus UNK."""
    n = len(protein.residues)
    feats = np.zeros((n, RESIDUE_FEATURE_DIM), dtype=np.float64)
    for i, res in enumerate(protein.residues):
        feats[i, RESIDUE_CLASSES.index(res.aa)] = 1.0
    return feats


def build_pair_graph(ligand: LigandMolecule, protein: ProteinStructure,
                     cfg: CutoffConfig) -> HeteroGraph:
    """Radius graph over one ligand pose and one protein.

    Node order is all ligand atoms then all residues. Each undirected pair
    within the cutoff for its kind yields two directed edges; a graph with
    no ligand-protein edges gets an out-of-pocket warning rather than an
    error.
    """
    if not ligand.atoms:
        raise ValidationError("ligand has no atoms")
    lig_pos = ligand.coords()
    res_pos = protein.ca_coords()
    nl, nr = len(lig_pos), len(res_pos)
    positions = np.concatenate([lig_pos, res_pos], axis=0)
    kinds = np.concatenate([
        np.full(nl, NodeKind.LIGAND_ATOM, dtype=np.int64),
        np.full(nr, NodeKind.RESIDUE, dtype=np.int64),
    ])

    n = nl + nr
    delta = positions[None, :, :] - positions[:, None, :]
    dmat = np.sqrt(np.sum(delta * delta, axis=-1))

    is_res = kinds == NodeKind.RESIDUE
    pair_kind = np.where(
        is_res[:, None] & is_res[None, :], 2,
        np.where(is_res[:, None] | is_res[None, :], 1, 0),
    )  # 0=cc, 1=pc, 2=pp
    cut = np.array([cfg.cc, cfg.pc, cfg.pp])[pair_kind]
    connected = (dmat <= cut) & ~np.eye(n, dtype=bool)

    edges: dict[EdgeKind, EdgeSet] = {}
    for kind, code in ((EdgeKind.CC, 0), (EdgeKind.PC, 1), (EdgeKind.PP, 2)):
        a_idx, b_idx = np.nonzero(connected & (pair_kind == code))
        # np.nonzero returns row-major order, i.e. sorted by (a, b) already
        r_vec = positions[b_idx] - positions[a_idx]
        dist = dmat[a_idx, b_idx]
        edges[kind] = EdgeSet(kind=kind, a=a_idx, b=b_idx, r_vec=r_vec,
                              dist=dist, rbf=rbf_embed(dist, cfg))

    warnings = ()
    if len(edges[EdgeKind.PC]) == 0:
        warnings = ("ligand outside pocket: no ligand-protein edges within "
                    f"{cfg.pc} A",)

    return HeteroGraph(
        n_ligand=nl, n_residue=nr, positions=positions, kinds=kinds,
        ligand_features=ligand_atom_features(ligand),
        residue_features=residue_node_features(protein),
        edges=edges, warnings=warnings,
    )


def build_graph(record: ComplexRecord, cfg: CutoffConfig, pose: int = 0) -> HeteroGraph:
    """Graph for one pose of a complex record (default: the first pose)."""
    return build_pair_graph(record.poses[pose], record.protein, cfg)


def graph_to_json(graph: HeteroGraph) -> str:
    """Debug dump of nodes, edges, and attributes as stable-key JSON."""
    doc = {
        "n_ligand": graph.n_ligand,
        "n_residue": graph.n_residue,
        "warnings": list(graph.warnings),
        "nodes": [
            {
                "index": i,
                "kind": "LIGAND_ATOM" if graph.kinds[i] == NodeKind.LIGAND_ATOM else "RESIDUE",
                "position": [round(float(x), 6) for x in graph.positions[i]],
            }
            for i in range(graph.n_nodes)
        ],
        "edges": [
            {
                "a": int(a), "b": int(b), "kind": kind.value,
                "dist": round(float(d), 6),
                "r_vec": [round(float(x), 6) for x in rv],
                "rbf": [round(float(x), 6) for x in r],
            }
            for kind, es in sorted(graph.edges.items(), key=lambda kv: kv[0].value)
            for a, b, rv, d, r in zip(es.a, es.b, es.r_vec, es.dist, es.rbf)
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2)
