"""
iCARH Data Model

This module loads, validates and standardizes the experimental data (a dense
subject x time x metabolite tensor with its covariate tensor) and the pathway
definitions that structure the CAR covariance.

Canonical formats:
    Data CSV, one row per observation cell::

        subject,time,group,kind,variable,value

    Pathway JSON::

        {"pathways": [{"id": "...", "metabolites": ["..."], "edges": [["a", "b"]]}]}
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd

from .exceptions import (
    IcarhDegenerateVariableError,
    IcarhDuplicateRecordError,
    IcarhEmptyDesignError,
    IcarhIncompleteDesignError,
    IcarhPathwayParseError,
    IcarhSchemaError,
)

logger = logging.getLogger(__name__)

GROUP_LABELS = ('cases', 'controls')
KINDS = ('metabolite', 'covariate')
DATA_COLUMNS = ('subject', 'time', 'group', 'kind', 'variable', 'value')

PathLike = Union[str, Path]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Dataset:
    """
    Dense metabolomics experiment.

    Attributes:
        x: Metabolite tensor, shape (N, T, M)
        y: Covariate tensor, shape (N, T, K); K may be zero
        group: Per-subject label, each one of 'cases' or 'controls'
        subjects: Subject identifiers in tensor order
        metabolites: Metabolite names in tensor order
        covariates: Covariate names in tensor order
    """
    x: np.ndarray
    y: np.ndarray
    group: tuple
    subjects: tuple
    metabolites: tuple
    covariates: tuple

    def __post_init__(self):
        object.__setattr__(self, 'x', _frozen(self.x))
        object.__setattr__(self, 'y', _frozen(self.y))
        object.__setattr__(self, 'group', tuple(self.group))
        object.__setattr__(self, 'subjects', tuple(str(s) for s in self.subjects))
        object.__setattr__(self, 'metabolites', tuple(str(m) for m in self.metabolites))
        object.__setattr__(self, 'covariates', tuple(str(c) for c in self.covariates))

        if self.x.ndim != 3 or min(self.x.shape) < 1:
            raise IcarhSchemaError(f"x must be a non-empty (N, T, M) tensor, got shape {self.x.shape}")
        n, t, m = self.x.shape
        if self.y.ndim != 3 or self.y.shape[:2] != (n, t):
            raise IcarhSchemaError(f"y must have shape ({n}, {t}, K), got {self.y.shape}")
        if len(self.group) != n or len(self.subjects) != n:
            raise IcarhSchemaError("group and subjects must list one entry per subject")
        if len(self.metabolites) != m or len(self.covariates) != self.y.shape[2]:
            raise IcarhSchemaError("metabolite/covariate names do not match tensor dimensions")
        unknown = sorted(set(self.group) - set(GROUP_LABELS))
        if unknown:
            raise IcarhSchemaError(f"Unknown group label(s) {unknown}; expected one of {GROUP_LABELS}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise IcarhSchemaError("Dataset tensors must be finite")

    @property
    def n_subjects(self) -> int:
        return self.x.shape[0]

    @property
    def n_times(self) -> int:
        return self.x.shape[1]

    @property
    def n_metabolites(self) -> int:
        return self.x.shape[2]

    @property
    def n_covariates(self) -> int:
        return self.y.shape[2]

    def group_index(self, two_group: bool = True) -> np.ndarray:
        """Per-subject group index: 0 for cases, 1 for controls (all 0 in single-group mode)."""
        if not two_group:
            return np.zeros(self.n_subjects, dtype=int)
        return np.array([GROUP_LABELS.index(g) for g in self.group], dtype=int)

    def require_both_groups(self) -> None:
        """Check that each group label has at least one subject."""
        for label in GROUP_LABELS:
            if label not in self.group:
                logger.error(f"Two-group mode requires at least one '{label}' subject")
                raise IcarhSchemaError(f"Two-group mode requires at least one '{label}' subject")

    def covariate_index(self, name: str) -> int:
        try:
            return self.covariates.index(name)
        except ValueError:
            raise IcarhSchemaError(f"Unknown covariate '{name}'; available: {list(self.covariates)}")

    def __repr__(self) -> str:
        n, t, m = self.x.shape
        return f"Dataset(N={n}, T={t}, M={m}, K={self.n_covariates})"


@dataclass(frozen=True)
class ScalingReport:
    """
    Per-variable location and scale removed by standardize().

    Attributes:
        metabolite_mean, metabolite_scale: Arrays of length M
        covariate_mean, covariate_scale: Arrays of length K
    """
    metabolite_mean: np.ndarray
    metabolite_scale: np.ndarray
    covariate_mean: np.ndarray
    covariate_scale: np.ndarray

    def restore_x(self, x: np.ndarray) -> np.ndarray:
        """Map standardized metabolite values back to the original units."""
        return x * self.metabolite_scale + self.metabolite_mean

    def to_dict(self) -> dict:
        return {
            'metabolite_mean': self.metabolite_mean.tolist(),
            'metabolite_scale': self.metabolite_scale.tolist(),
            'covariate_mean': self.covariate_mean.tolist(),
            'covariate_scale': self.covariate_scale.tolist(),
        }


def load_dataset(data_file: PathLike, schema: Optional[dict] = None) -> Dataset:
    """
    Load a long-format data CSV into a dense Dataset.

    Args:
        data_file: Path to the CSV file
        schema: Optional column mapping {canonical_name: column_name_in_file}

    Returns:
        Dataset with subjects and variables ordered by first appearance

    Raises:
        IcarhSchemaError: Missing columns, unknown kinds or group labels
        IcarhDuplicateRecordError: A cell appears twice
        IcarhIncompleteDesignError: A cell of the grid is missing
    """
    logger.info(f"Loading dataset from {data_file}")
    frame = pd.read_csv(data_file, dtype={'subject': str, 'group': str, 'kind': str, 'variable': str})
    if schema:
        frame = frame.rename(columns={actual: canonical for canonical, actual in schema.items()})
    return dataset_from_frame(frame)


def dataset_from_frame(frame: pd.DataFrame) -> Dataset:
    """Build a Dataset from a long-format frame with the canonical columns."""
    missing = [c for c in DATA_COLUMNS if c not in frame.columns]
    if missing:
        logger.error(f"Data file is missing column(s): {missing}")
        raise IcarhSchemaError(f"Data file is missing column(s): {missing}")

    frame = frame.loc[:, list(DATA_COLUMNS)].copy()
    for column in ('subject', 'group', 'kind', 'variable'):
        frame[column] = frame[column].astype(str).str.strip()

    bad_kinds = sorted(set(frame['kind']) - set(KINDS))
    if bad_kinds:
        raise IcarhSchemaError(f"Unknown kind value(s) {bad_kinds}; expected one of {KINDS}")
    bad_groups = sorted(set(frame['group']) - set(GROUP_LABELS))
    if bad_groups:
        raise IcarhSchemaError(f"Unknown group label(s) {bad_groups}; expected one of {GROUP_LABELS}")

    times = pd.to_numeric(frame['time'], errors='coerce')
    if times.isna().any() or not np.all(times == np.round(times)):
        raise IcarhSchemaError("Column 'time' must contain integers")
    frame['time'] = times.astype(int)
    frame['value'] = pd.to_numeric(frame['value'], errors='coerce')

    groups_per_subject = frame.groupby('subject', sort=False)['group'].nunique()
    conflicting = groups_per_subject[groups_per_subject > 1]
    if len(conflicting):
        raise IcarhSchemaError(f"Subject '{conflicting.index[0]}' is listed under more than one group")

    kinds_per_variable = frame.groupby('variable', sort=False)['kind'].nunique()
    ambiguous = kinds_per_variable[kinds_per_variable > 1]
    if len(ambiguous):
        raise IcarhSchemaError(f"Variable '{ambiguous.index[0]}' is used as both metabolite and covariate")

    duplicated = frame.duplicated(['subject', 'time', 'variable'], keep=False)
    if duplicated.any():
        row = frame[duplicated].iloc[0]
        logger.error(f"Duplicate record for subject={row['subject']}, time={row['time']}, variable={row['variable']}")
        raise IcarhDuplicateRecordError(row['subject'], int(row['time']), row['variable'])

    subjects = list(pd.unique(frame['subject']))
    time_values = sorted(pd.unique(frame['time']))
    if time_values != list(range(1, len(time_values) + 1)):
        raise IcarhSchemaError(f"Time points must be the consecutive integers 1..T, got {time_values}")
    metabolites = list(pd.unique(frame.loc[frame['kind'] == 'metabolite', 'variable']))
    covariates = list(pd.unique(frame.loc[frame['kind'] == 'covariate', 'variable']))
    if not metabolites:
        raise IcarhSchemaError("Data file contains no metabolite rows")

    n, t = len(subjects), len(time_values)
    subject_code = frame['subject'].map({s: i for i, s in enumerate(subjects)}).to_numpy()
    time_code = frame['time'].to_numpy() - 1

    tensors = []
    for kind, names in (('metabolite', metabolites), ('covariate', covariates)):
        mask = (frame['kind'] == kind).to_numpy()
        tensor = np.full((n, t, len(names)), np.nan)
        var_code = frame.loc[mask, 'variable'].map({v: k for k, v in enumerate(names)}).to_numpy(dtype=int)
        tensor[subject_code[mask], time_code[mask], var_code] = frame.loc[mask, 'value'].to_numpy()
        holes = np.argwhere(np.isnan(tensor))
        if len(holes):
            i, tt, k = holes[0]
            logger.error(f"Incomplete design: no value for subject={subjects[i]}, time={tt + 1}, variable={names[k]}")
            raise IcarhIncompleteDesignError(subjects[i], int(tt + 1), names[k])
        tensors.append(tensor)

    group_of = frame.drop_duplicates('subject').set_index('subject')['group']
    dataset = Dataset(
        x=tensors[0],
        y=tensors[1],
        group=tuple(group_of[s] for s in subjects),
        subjects=tuple(subjects),
        metabolites=tuple(metabolites),
        covariates=tuple(covariates),
    )
    logger.info(f"Loaded {dataset!r}")
    return dataset


def dataset_to_frame(d: Dataset) -> pd.DataFrame:
    """Long-format frame in canonical column order (subject, time, metabolites then covariates)."""
    rows = []
    for i, subject in enumerate(d.subjects):
        for t in range(d.n_times):
            for m, name in enumerate(d.metabolites):
                rows.append((subject, t + 1, d.group[i], 'metabolite', name, d.x[i, t, m]))
            for k, name in enumerate(d.covariates):
                rows.append((subject, t + 1, d.group[i], 'covariate', name, d.y[i, t, k]))
    return pd.DataFrame(rows, columns=list(DATA_COLUMNS))


def write_dataset(d: Dataset, path: PathLike) -> None:
    """Write a Dataset in the canonical CSV format (17 significant digits, exact round trip)."""
    dataset_to_frame(d).to_csv(path, index=False, float_format='%.17g')
    logger.debug(f"Wrote {d!r} to {path}")


def standardize(d: Dataset) -> tuple:
    """
    Scale every metabolite and covariate to mean 0, variance 1 over the pooled N x T cells.

    Returns:
        (standardized Dataset, ScalingReport)

    Raises:
        IcarhDegenerateVariableError: If a variable is constant
    """
    def _scale(tensor: np.ndarray, names: tuple):
        if not names:
            return tensor, np.zeros(0), np.ones(0)
        flat = tensor.reshape(-1, tensor.shape[2])
        for k, name in enumerate(names):
            if np.ptp(flat[:, k]) == 0:
                logger.error(f"Cannot standardize constant variable '{name}'")
                raise IcarhDegenerateVariableError(name)
        mean = flat.mean(axis=0)
        scale = flat.std(axis=0)
        return (tensor - mean) / scale, mean, scale

    x, x_mean, x_scale = _scale(d.x, d.metabolites)
    y, y_mean, y_scale = _scale(d.y, d.covariates)
    report = ScalingReport(x_mean, x_scale, y_mean, y_scale)
    logger.debug("Standardized metabolites and covariates")
    return Dataset(x, y, d.group, d.subjects, d.metabolites, d.covariates), report


@dataclass(frozen=True)
class Pathway:
    """
    A pathway restricted to the profiled metabolites.

    Attributes:
        id: Pathway identifier
        metabolites: Member metabolite names
        edges: Unordered metabolite pairs (reactions) between members
        inert: True when fewer than two members were profiled
    """
    id: str
    metabolites: tuple
    edges: tuple = ()
    inert: bool = False


@dataclass(frozen=True)
class PathwayGraph:
    """
    Pathway membership and reaction structure over the M profiled metabolites.

    Attributes:
        metabolites: The profiled metabolite names, in Dataset order
        pathways: Pathway entries, in file order
    """
    metabolites: tuple
    pathways: tuple = field(default_factory=tuple)

    @property
    def n_pathways(self) -> int:
        return len(self.pathways)

    @property
    def pathway_ids(self) -> list:
        return [p.id for p in self.pathways]

    def index_of(self, metabolite: str) -> int:
        return self.metabolites.index(metabolite)

    def membership_matrix(self) -> np.ndarray:
        """Boolean membership matrix Z with shape (M, P)."""
        z = np.zeros((len(self.metabolites), self.n_pathways), dtype=bool)
        for p, pathway in enumerate(self.pathways):
            for name in pathway.metabolites:
                z[self.index_of(name), p] = True
        return z

    def to_dict(self) -> dict:
        return {
            'pathways': [
                {'id': p.id, 'metabolites': list(p.metabolites), 'edges': [list(e) for e in p.edges]}
                for p in self.pathways
            ]
        }


def _parse_entries(document) -> list:
    if not isinstance(document, dict) or not isinstance(document.get('pathways'), list):
        raise IcarhPathwayParseError("Pathway file must be an object with a 'pathways' list")
    entries, seen = [], set()
    for p, entry in enumerate(document['pathways']):
        where = f"pathways[{p}]"
        if not isinstance(entry, dict):
            raise IcarhPathwayParseError(f"{where} must be an object")
        pid = entry.get('id')
        members = entry.get('metabolites')
        edges = entry.get('edges', [])
        if not isinstance(pid, str) or not pid:
            raise IcarhPathwayParseError(f"{where}.id must be a non-empty string")
        if pid in seen:
            raise IcarhPathwayParseError(f"{where}.id '{pid}' is duplicated")
        seen.add(pid)
        if not isinstance(members, list) or not all(isinstance(m, str) for m in members):
            raise IcarhPathwayParseError(f"{where}.metabolites must be a list of strings")
        if not isinstance(edges, list):
            raise IcarhPathwayParseError(f"{where}.edges must be a list")
        pairs = []
        for e, edge in enumerate(edges):
            if (not isinstance(edge, list) or len(edge) != 2
                    or not all(isinstance(v, str) for v in edge)):
                raise IcarhPathwayParseError(f"{where}.edges[{e}] must be a pair of metabolite names")
            a, b = edge
            if a == b:
                raise IcarhPathwayParseError(f"{where}.edges[{e}] connects '{a}' to itself")
            if a not in members or b not in members:
                raise IcarhPathwayParseError(
                    f"{where}.edges[{e}] connects metabolites not declared in pathway '{pid}'")
            pairs.append((a, b))
        entries.append((pid, list(dict.fromkeys(members)), pairs))
    return entries


def build_pathway_graph(entries: Iterable, metabolites: Iterable) -> PathwayGraph:
    """
    Restrict (id, members, edges) entries to the profiled metabolites.

    Unresolved members and their edges are dropped; pathways left with fewer
    than two profiled members are kept and flagged inert.

    Raises:
        IcarhEmptyDesignError: If there are no pathways or none retains a profiled metabolite
    """
    metabolites = tuple(metabolites)
    known = set(metabolites)
    pathways, unresolved = [], set()
    for pid, members, edges in entries:
        kept = [m for m in members if m in known]
        unresolved.update(m for m in members if m not in known)
        kept_edges = tuple((a, b) for a, b in edges if a in known and b in known)
        pathways.append(Pathway(pid, tuple(kept), kept_edges, inert=len(kept) < 2))

    if unresolved:
        logger.warning(f"Dropped {len(unresolved)} pathway member(s) not present in the dataset")
    inert = [p.id for p in pathways if p.inert]
    if inert:
        logger.warning(f"{len(inert)} pathway(s) have fewer than two profiled metabolites: {inert}")
    if not pathways or all(len(p.metabolites) == 0 for p in pathways):
        logger.error("No pathway retains any profiled metabolite")
        raise IcarhEmptyDesignError("No pathway retains any profiled metabolite")
    return PathwayGraph(metabolites, tuple(pathways))


def load_pathways(pathway_file: PathLike, d: Dataset) -> PathwayGraph:
    """
    Load a pathway JSON file and resolve it against the Dataset's metabolites.

    Raises:
        IcarhPathwayParseError: Malformed JSON (with line/column) or structure
        IcarhEmptyDesignError: No pathway left after filtering
    """
    logger.info(f"Loading pathways from {pathway_file}")
    text = Path(pathway_file).read_text(encoding='utf-8')
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        logger.error(f"Malformed pathway file: {e.msg}")
        raise IcarhPathwayParseError(f"Malformed pathway file: {e.msg}", e.lineno, e.colno)
    graph = build_pathway_graph(_parse_entries(document), d.metabolites)
    logger.info(f"Resolved {graph.n_pathways} pathway(s) over {len(graph.metabolites)} metabolites")
    return graph


def write_pathways(g: PathwayGraph, path: PathLike) -> None:
    """Write a PathwayGraph in the canonical JSON format."""
    Path(path).write_text(json.dumps(g.to_dict(), indent=2), encoding='utf-8')
