"""Exact genotype posteriors on pedigrees via clique-tree message passing.

The parent graph is moralized (co-parents connected), triangulated with a
min-fill elimination heuristic, and its maximal cliques are joined into a
junction forest by maximum separator weight. Two-pass sum-product over that
forest yields every individual's posterior genotype distribution, and the
accumulated message normalizers give the log evidence, in a single sweep.

All message tables carry a leading batch axis so that many families sharing
one graph structure (as in simulation studies) propagate simultaneously;
:class:`MarginalEngine` packages that batching for the EM loop. A
brute-force enumerator over all 4^n genotype configurations serves as an
independent oracle for small families.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import genetics
from .genetics import N_STATES, Genotype, GenotypeFactor, ModelParams

__all__ = [
    "InferenceError",
    "ZeroEvidenceError",
    "PosteriorWeights",
    "MarginalResult",
    "CliqueTree",
    "build_clique_tree",
    "Propagator",
    "posterior_marginals",
    "brute_force_marginals",
    "MarginalEngine",
]

DEFAULT_ENUMERATION_CAP = 12


class InferenceError(RuntimeError):
    """Inference could not be carried out."""


class ZeroEvidenceError(InferenceError):
    """The observed data has probability zero under the model."""

    def __init__(self, family_id):
        self.family_id = family_id
        super().__init__(
            f"family {family_id}: observed data has probability 0 under the model"
        )


@dataclass(frozen=True)
class PosteriorWeights:
    """Posterior genotype mass split for one individual.

    ``w_pat`` is the probability of a paternal-origin heterozygote,
    ``w_mat`` pools the maternal-origin heterozygote with the homozygote,
    and ``w_zero`` is the non-carrier probability.
    """

    w_pat: float
    w_mat: float
    w_zero: float


@dataclass
class MarginalResult:
    """Posterior marginals for one family."""

    weights: dict
    marginals: np.ndarray  # (n, 4) in record order
    log_evidence: float


class CliqueTree:
    """Junction forest over pedigree member positions.

    ``cliques`` are sorted tuples of record positions; ``edges`` join clique
    indices. Every family factor's scope fits inside at least one clique and
    the running intersection property holds.
    """

    def __init__(self, cliques, edges, n_vars):
        self.cliques = [tuple(c) for c in cliques]
        self.edges = [tuple(e) for e in edges]
        self.n_vars = n_vars
        self._neighbors = [[] for _ in self.cliques]
        for i, j in self.edges:
            self._neighbors[i].append(j)
            self._neighbors[j].append(i)

    def neighbors(self, idx):
        return self._neighbors[idx]

    @property
    def max_clique_size(self):
        return max(len(c) for c in self.cliques)

    def containing_clique(self, scope) -> int:
        """Lowest-index clique containing every variable in ``scope``."""
        scope = set(scope)
        for i, clique in enumerate(self.cliques):
            if scope <= set(clique):
                return i
        raise InferenceError(f"no clique contains scope {sorted(scope)}")

    def roots(self):
        """Lowest clique index of each connected component."""
        seen = set()
        roots = []
        for start in range(len(self.cliques)):
            if start in seen:
                continue
            roots.append(start)
            stack = [start]
            seen.add(start)
            while stack:
                cur = stack.pop()
                for nb in self._neighbors[cur]:
                    if nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
        return roots

    def check_running_intersection(self) -> bool:
        """Cliques containing any one variable must form a connected subtree."""
        for v in range(self.n_vars):
            holding = [i for i, c in enumerate(self.cliques) if v in c]
            if not holding:
                return False
            reached = {holding[0]}
            stack = [holding[0]]
            allowed = set(holding)
            while stack:
                cur = stack.pop()
                for nb in self._neighbors[cur]:
                    if nb in allowed and nb not in reached:
                        reached.add(nb)
                        stack.append(nb)
            if reached != allowed:
                return False
        return True


def _moral_adjacency(pedigree) -> list[set[int]]:
    n = len(pedigree)
    adj = [set() for _ in range(n)]
    pos = pedigree.position
    for rec in pedigree:
        if rec.is_founder:
            continue
        c, f, m = pos(rec.individual_id), pos(rec.father_id), pos(rec.mother_id)
        for a, b in ((c, f), (c, m), (f, m)):
            adj[a].add(b)
            adj[b].add(a)
    return adj


def _min_fill_cliques(adj) -> list[tuple[int, ...]]:
    """Elimination cliques from min-fill ordering; ties break on lowest index."""
    n = len(adj)
    adj = [set(s) for s in adj]
    remaining = set(range(n))
    cliques = []
    while remaining:
        best, best_fill = None, None
        for v in sorted(remaining):
            nbrs = adj[v]
            fill = 0
            nbr_list = sorted(nbrs)
            for i, a in enumerate(nbr_list):
                for b in nbr_list[i + 1:]:
                    if b not in adj[a]:
                        fill += 1
            if best_fill is None or fill < best_fill:
                best, best_fill = v, fill
                if fill == 0:
                    break
        nbrs = sorted(adj[best])
        cliques.append(tuple(sorted([best] + nbrs)))
        for i, a in enumerate(nbrs):
            for b in nbrs[i + 1:]:
                adj[a].add(b)
                adj[b].add(a)
        for a in nbrs:
            adj[a].discard(best)
        adj[best].clear()
        remaining.discard(best)
    return cliques


def build_clique_tree(pedigree) -> CliqueTree:
    """Junction forest for a pedigree's moral graph.

    Deterministic: min-fill ties break on the lowest record position and the
    spanning forest prefers larger separators, then lower clique indices.
    """
    adj = _moral_adjacency(pedigree)
    elim = _min_fill_cliques(adj)
    # Later elimination cliques may be subsets of earlier ones; never the
    # reverse, since each eliminated vertex vanishes from subsequent cliques.
    cliques: list[tuple[int, ...]] = []
    for cand in elim:
        if not any(set(cand) <= set(kept) for kept in cliques):
            cliques.append(cand)

    candidates = []
    for i in range(len(cliques)):
        si = set(cliques[i])
        for j in range(i + 1, len(cliques)):
            weight = len(si & set(cliques[j]))
            if weight:
                candidates.append((-weight, i, j))
    candidates.sort()
    parent = list(range(len(cliques)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for _, i, j in candidates:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j))
    return CliqueTree(cliques, edges, len(pedigree))


def _expand(table, positions, rank):
    """Reshape a batched table so its axes land on the given clique axes."""
    shape = [table.shape[0]] + [1] * rank
    for axis, pos in zip(range(1, table.ndim), positions):
        shape[1 + pos] = table.shape[axis]
    return table.reshape(shape)


class Propagator:
    """Precompiled two-pass sum-product schedule for one clique tree.

    The schedule (factor-to-clique assignment, message order, axis maps) is
    computed once; :meth:`run` then evaluates it for any batch of factor
    tables sharing the tree structure. Tables carry a leading batch axis and
    may use size 1 for broadcasting shared factors.
    """

    def __init__(self, tree: CliqueTree, factor_scopes):
        self.tree = tree
        self.factor_scopes = [tuple(s) for s in factor_scopes]
        self.clique_assignment = [
            tree.containing_clique(scope) for scope in self.factor_scopes
        ]
        # positions of each factor's variables inside its clique
        self.factor_positions = []
        for scope, ci in zip(self.factor_scopes, self.clique_assignment):
            clique = tree.cliques[ci]
            self.factor_positions.append(tuple(clique.index(v) for v in scope))
        # marginal read-out clique per variable
        self.var_clique = []
        self.var_position = []
        for v in range(tree.n_vars):
            ci = tree.containing_clique((v,))
            self.var_clique.append(ci)
            self.var_position.append(tree.cliques[ci].index(v))

        self.roots = tree.roots()
        collect, distribute = [], []
        for root in self.roots:
            order = []
            stack = [(root, None)]
            while stack:
                node, par = stack.pop()
                order.append((node, par))
                for nb in tree.neighbors(node):
                    if nb != par:
                        stack.append((nb, node))
            for node, par in reversed(order):
                if par is not None:
                    collect.append((node, par))
            for node, par in order:
                if par is not None:
                    distribute.append((par, node))
        self._collect = collect
        self._distribute = distribute

        self._edge_meta = {}
        for src, dst in collect + distribute:
            c_src, c_dst = tree.cliques[src], tree.cliques[dst]
            sep = tuple(v for v in c_src if v in set(c_dst))
            sum_axes = tuple(
                1 + i for i, v in enumerate(c_src) if v not in set(sep)
            )
            dst_positions = tuple(c_dst.index(v) for v in sep)
            self._edge_meta[(src, dst)] = (sum_axes, dst_positions)

    def _potentials(self, tables, batch):
        pots = []
        for clique in self.tree.cliques:
            pots.append(np.ones((batch,) + (N_STATES,) * len(clique)))
        for table, ci, positions in zip(
            tables, self.clique_assignment, self.factor_positions
        ):
            clique = self.tree.cliques[ci]
            pots[ci] = pots[ci] * _expand(table, positions, len(clique))
        return pots

    def _gather(self, pots, messages, node, exclude):
        arr = pots[node]
        rank = len(self.tree.cliques[node])
        for nb in self.tree.neighbors(node):
            if nb == exclude:
                continue
            msg = messages.get((nb, node))
            if msg is not None:
                _, positions = self._edge_meta[(nb, node)]
                arr = arr * _expand(msg, positions, rank)
        return arr

    def run(self, tables, family_ids=None):
        """Propagate one batch; returns marginals (B, n, 4) and log evidence (B,).

        Raises :class:`ZeroEvidenceError` when any family in the batch has
        zero total probability.
        """
        batch = max(t.shape[0] for t in tables) if tables else 1
        pots = self._potentials(tables, batch)
        messages = {}
        log_evidence = np.zeros(batch)

        def fail_zero(z):
            idx = int(np.argmin(z))
            fam = family_ids[idx] if family_ids is not None else f"batch[{idx}]"
            raise ZeroEvidenceError(fam)

        for src, dst in self._collect:
            sum_axes, _ = self._edge_meta[(src, dst)]
            msg = self._gather(pots, messages, src, dst).sum(axis=sum_axes)
            z = msg.reshape(batch, -1).sum(axis=1)
            if np.any(z <= 0):
                fail_zero(z)
            msg = msg / z.reshape((batch,) + (1,) * (msg.ndim - 1))
            messages[(src, dst)] = msg
            log_evidence += np.log(z)

        beliefs = [None] * len(self.tree.cliques)
        for root in self.roots:
            belief = self._gather(pots, messages, root, None)
            z = belief.reshape(batch, -1).sum(axis=1)
            if np.any(z <= 0):
                fail_zero(z)
            log_evidence += np.log(z)

        for src, dst in self._distribute:
            sum_axes, _ = self._edge_meta[(src, dst)]
            msg = self._gather(pots, messages, src, dst).sum(axis=sum_axes)
            z = msg.reshape(batch, -1).sum(axis=1)
            msg = msg / z.reshape((batch,) + (1,) * (msg.ndim - 1))
            messages[(src, dst)] = msg

        marginals = np.empty((batch, self.tree.n_vars, N_STATES))
        for v in range(self.tree.n_vars):
            ci = self.var_clique[v]
            if beliefs[ci] is None:
                beliefs[ci] = self._gather(pots, messages, ci, None)
            belief = beliefs[ci]
            keep_axis = 1 + self.var_position[v]
            other = tuple(ax for ax in range(1, belief.ndim) if ax != keep_axis)
            marg = belief.sum(axis=other)
            marginals[:, v, :] = marg / marg.sum(axis=1, keepdims=True)
        return marginals, log_evidence


def _suppress_flags(pedigree, suppress_proband_phenotype):
    return [
        rec.phenotype_suppressed or (suppress_proband_phenotype and rec.proband)
        for rec in pedigree
    ]


def _constraint_mask(pedigree, genotype_constraints):
    """Indicator table (n, 4) for externally known genotype states."""
    if not genotype_constraints:
        return None
    mask = np.ones((len(pedigree), N_STATES))
    hit = False
    for i, rec in enumerate(pedigree):
        allowed = genotype_constraints.get((rec.family_id, rec.individual_id))
        if allowed is None:
            continue
        hit = True
        if isinstance(allowed, (int, Genotype)):
            allowed = (allowed,)
        row = np.zeros(N_STATES)
        for state in allowed:
            row[int(state)] = 1.0
        mask[i] = row
    return mask if hit else None


def family_factors(pedigree, params: ModelParams, suppress_proband_phenotype=False,
                   genotype_constraints=None) -> list[GenotypeFactor]:
    """All local factors of one family's genotype network.

    Founder priors and transmission tables plus one evidence factor per
    individual; factor tables have axes ordered by ascending record
    position.
    """
    pos = pedigree.position
    factors = []
    for rec in pedigree:
        i = pos(rec.individual_id)
        if rec.is_founder:
            factors.append(GenotypeFactor((i,), founder_prior_table(params.q)))
        else:
            scope = (pos(rec.father_id), pos(rec.mother_id), i)
            order = np.argsort(scope)
            factors.append(
                GenotypeFactor(
                    tuple(scope[k] for k in order),
                    np.transpose(genetics.TRANSMISSION, axes=order),
                )
            )
    suppress = _suppress_flags(pedigree, suppress_proband_phenotype)
    mask = _constraint_mask(pedigree, genotype_constraints)
    for i, rec in enumerate(pedigree):
        phi = genetics.evidence_factor(rec, params, suppress_phenotype=suppress[i])
        if mask is not None:
            phi = phi * mask[i]
        factors.append(GenotypeFactor((i,), phi))
    return factors


def founder_prior_table(q: float) -> np.ndarray:
    return genetics.founder_prior(q)


def _weights_from_marginals(pedigree, marginals) -> dict:
    out = {}
    for i, rec in enumerate(pedigree):
        out[rec.individual_id] = PosteriorWeights(
            w_pat=float(marginals[i, Genotype.HET_PATERNAL]),
            w_mat=float(
                marginals[i, Genotype.HET_MATERNAL]
                + marginals[i, Genotype.HOMOZYGOUS]
            ),
            w_zero=float(marginals[i, Genotype.NON_CARRIER]),
        )
    return out


def posterior_marginals(pedigree, params: ModelParams,
                        suppress_proband_phenotype=False,
                        genotype_constraints=None) -> MarginalResult:
    """Exact posterior genotype marginals for every family member.

    Returns the per-individual weights, the full (n, 4) marginal table in
    record order, and the log evidence of the observed data (up to the
    genotype-independent hazard factor omitted from affected penetrance).
    """
    factors = family_factors(
        pedigree, params,
        suppress_proband_phenotype=suppress_proband_phenotype,
        genotype_constraints=genotype_constraints,
    )
    tree = build_clique_tree(pedigree)
    propagator = Propagator(tree, [f.scope for f in factors])
    tables = [f.table[None] for f in factors]
    marginals, log_evidence = propagator.run(tables, family_ids=[pedigree.family_id])
    return MarginalResult(
        weights=_weights_from_marginals(pedigree, marginals[0]),
        marginals=marginals[0],
        log_evidence=float(log_evidence[0]),
    )


def brute_force_marginals(pedigree, params: ModelParams,
                          cap: int = DEFAULT_ENUMERATION_CAP,
                          suppress_proband_phenotype=False,
                          genotype_constraints=None) -> MarginalResult:
    """Oracle marginals by enumerating all 4^n genotype configurations.

    Independent of the clique-tree machinery; cost grows as 4^n so families
    larger than ``cap`` members are rejected.
    """
    n = len(pedigree)
    if n > cap:
        raise InferenceError(
            f"family {pedigree.family_id} has {n} members, above the "
            f"enumeration cap {cap}"
        )
    factors = family_factors(
        pedigree, params,
        suppress_proband_phenotype=suppress_proband_phenotype,
        genotype_constraints=genotype_constraints,
    )
    joint = np.ones((N_STATES,) * n)
    for factor in factors:
        shape = [1] * n
        for v in factor.scope:
            shape[v] = N_STATES
        joint *= factor.table.reshape(shape)
    total = joint.sum()
    if total <= 0:
        raise ZeroEvidenceError(pedigree.family_id)
    marginals = np.empty((n, N_STATES))
    for v in range(n):
        axes = tuple(ax for ax in range(n) if ax != v)
        marginals[v] = joint.sum(axis=axes) / total
    return MarginalResult(
        weights=_weights_from_marginals(pedigree, marginals),
        marginals=marginals,
        log_evidence=float(np.log(total)),
    )


class _StructureGroup:
    """Families sharing one parent-link structure, propagated as a batch."""

    def __init__(self, template, members, member_rows, constraint_masks):
        self.template = template
        self.members = members            # family indices in engine order
        n = len(template)
        self.n = n
        self.tree = build_clique_tree(template)
        pos = template.position
        self.prior_scopes = []
        self.transmission_factors = []
        for rec in template:
            i = pos(rec.individual_id)
            if rec.is_founder:
                self.prior_scopes.append((i,))
            else:
                scope = (pos(rec.father_id), pos(rec.mother_id), i)
                order = np.argsort(scope)
                self.transmission_factors.append(
                    (
                        tuple(scope[k] for k in order),
                        np.transpose(genetics.TRANSMISSION, axes=order)[None],
                    )
                )
        scopes = (
            self.prior_scopes
            + [s for s, _ in self.transmission_factors]
            + [(i,) for i in range(n)]
        )
        self.propagator = Propagator(self.tree, scopes)
        rows = np.asarray(member_rows)  # (F, n) flattened record data indices
        self.rows = rows
        self.constraint_masks = constraint_masks  # (F, n, 4) or None


class MarginalEngine:
    """Batched posterior-marginal evaluator reused across EM iterations.

    Groups families by parent-link structure, builds each group's junction
    tree and message schedule once, and evaluates all weights for new model
    parameters in a handful of vectorized passes.
    """

    def __init__(self, families, suppress_proband_phenotype=False,
                 genotype_constraints=None):
        self.families = list(families)
        offsets = []
        total = 0
        for fam in self.families:
            offsets.append(total)
            total += len(fam)
        self.offsets = offsets
        self.total = total

        age = np.empty(total)
        status = np.empty(total, dtype=int)
        gtest = np.empty(total, dtype=int)
        suppress = np.zeros(total, dtype=bool)
        cov_len = len(self.families[0].individuals[0].covariates) if self.families else 0
        Z = np.zeros((total, cov_len))
        for fam, off in zip(self.families, offsets):
            if fam.covariate_count != cov_len:
                raise InferenceError(
                    "families carry different covariate counts; cannot fit jointly"
                )
            flags = _suppress_flags(fam, suppress_proband_phenotype)
            for i, rec in enumerate(fam):
                age[off + i] = rec.age
                status[off + i] = rec.status
                gtest[off + i] = -1 if rec.gene_test is None else rec.gene_test
                suppress[off + i] = flags[i]
                if cov_len:
                    Z[off + i] = rec.covariates
        self._age, self._status, self._gtest = age, status, gtest
        self._suppress, self._Z = suppress, Z

        grouped: dict[tuple, list[int]] = {}
        for fi, fam in enumerate(self.families):
            grouped.setdefault(fam.structure_key(), []).append(fi)
        self.groups = []
        for key, member_idx in grouped.items():
            template = self.families[member_idx[0]]
            rows = [
                [offsets[fi] + i for i in range(len(template))] for fi in member_idx
            ]
            masks = None
            if genotype_constraints:
                stacked = []
                hit = False
                for fi in member_idx:
                    mask = _constraint_mask(self.families[fi], genotype_constraints)
                    if mask is None:
                        mask = np.ones((len(template), N_STATES))
                    else:
                        hit = True
                    stacked.append(mask)
                masks = np.stack(stacked) if hit else None
            self.groups.append(_StructureGroup(template, member_idx, rows, masks))

    def run(self, params: ModelParams):
        """Marginals (total, 4) in global record order plus per-family log evidence."""
        phi_all = genetics.evidence_matrix(
            self._age, self._status, self._Z if self._Z.shape[1] else None,
            self._gtest, params, suppress=self._suppress,
        )
        marginals = np.empty((self.total, N_STATES))
        log_evidence = np.empty(len(self.families))
        prior = genetics.founder_prior(params.q)[None]
        for group in self.groups:
            phi = phi_all[group.rows]  # (F, n, 4)
            if group.constraint_masks is not None:
                phi = phi * group.constraint_masks
            tables = [prior for _ in group.prior_scopes]
            tables += [table for _, table in group.transmission_factors]
            tables += [np.ascontiguousarray(phi[:, i, :]) for i in range(group.n)]
            fam_ids = [self.families[fi].family_id for fi in group.members]
            marg, logev = group.propagator.run(tables, family_ids=fam_ids)
            marginals[group.rows.reshape(-1)] = marg.reshape(-1, N_STATES)
            log_evidence[group.members] = logev
        return marginals, log_evidence

    def family_weights(self, marginals) -> list[dict]:
        """Split a flat marginal table into per-family weight mappings."""
        out = []
        for fam, off in zip(self.families, self.offsets):
            out.append(_weights_from_marginals(fam, marginals[off:off + len(fam)]))
        return out
