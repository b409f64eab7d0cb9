"""Tabular dataset container with role-aware CSV serialization.

A dataset is a unit table with a binary treatment column, a binary outcome
column, observed covariate columns, and (for synthetic data) oracle unobserved
columns. On disk it is a plain CSV plus a JSON sidecar declaring which column
plays which role, so external tables can be imported by writing a sidecar.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DimensionMismatch

__all__ = ["Dataset", "Roles"]

SIDECAR_NAME = "roles.json"
CSV_NAME = "data.csv"


@dataclass(frozen=True)
class Roles:
    treatment: str
    outcome: str
    covariates: tuple[str, ...]
    unobserved: tuple[str, ...] = ()
    notes: str | None = None

    def to_dict(self) -> dict:
        out = {
            "treatment": self.treatment,
            "outcome": self.outcome,
            "covariates": list(self.covariates),
            "unobserved": list(self.unobserved),
        }
        if self.notes:
            out["notes"] = self.notes
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Roles":
        return cls(
            treatment=d["treatment"],
            outcome=d["outcome"],
            covariates=tuple(d["covariates"]),
            unobserved=tuple(d.get("unobserved", ())),
            notes=d.get("notes"),
        )


@dataclass(eq=False)
class Dataset:
    """In-memory unit table. Arrays are row-aligned; names label columns."""

    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z_names: list[str]
    u: np.ndarray | None = None
    u_names: list[str] = field(default_factory=list)
    notes: list[str] | None = None
    provenance: str = ""

    def __post_init__(self):
        # Force C layout: numpy's pairwise reductions round differently on
        # different strides, and equal content must give bit-equal statistics
        # whether the array came from a simulator or a parsed CSV.
        self.z = np.ascontiguousarray(self.z, dtype=float)
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y)
        if self.z.ndim != 2:
            raise DimensionMismatch("z must be 2-d (units x covariates)")
        n = self.z.shape[0]
        if self.x.shape != (n,) or self.y.shape != (n,):
            raise DimensionMismatch("x and y must be 1-d arrays aligned with z rows")
        if len(self.z_names) != self.z.shape[1]:
            raise DimensionMismatch("z_names length must match z columns")
        for name, arr in (("treatment", self.x), ("outcome", self.y)):
            vals = np.unique(arr)
            if not np.all(np.isin(vals, [0, 1])):
                raise ValueError(f"{name} column must be binary 0/1")
        self.x = self.x.astype(np.int8)
        self.y = self.y.astype(np.int8)
        if self.u is not None:
            self.u = np.ascontiguousarray(self.u, dtype=float)
            if self.u.shape[0] != n or self.u.ndim != 2:
                raise DimensionMismatch("u must be 2-d and row-aligned with z")
            if len(self.u_names) != self.u.shape[1]:
                raise DimensionMismatch("u_names length must match u columns")
        if self.notes is not None and len(self.notes) != n:
            raise DimensionMismatch("notes must have one entry per unit")
        all_names = list(self.z_names) + list(self.u_names) + ["X", "Y"]
        if len(set(all_names)) != len(all_names):
            raise ValueError("column names must be unique")

    # -- basic views ---------------------------------------------------------
    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def d_z(self) -> int:
        return self.z.shape[1]

    @property
    def d_u(self) -> int:
        return 0 if self.u is None else self.u.shape[1]

    @property
    def treated_idx(self) -> np.ndarray:
        return np.flatnonzero(self.x == 1)

    @property
    def untreated_idx(self) -> np.ndarray:
        return np.flatnonzero(self.x == 0)

    def content_hash(self) -> str:
        h = hashlib.blake2b(digest_size=12)
        h.update(",".join(self.z_names).encode())
        h.update(",".join(self.u_names).encode())
        for arr in (self.z, self.x, self.y):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.u is not None:
            h.update(np.ascontiguousarray(self.u).tobytes())
        return h.hexdigest()

    # -- serialization -------------------------------------------------------
    def roles(self) -> Roles:
        return Roles(
            treatment="X",
            outcome="Y",
            covariates=tuple(self.z_names),
            unobserved=tuple(self.u_names),
            notes="notes" if self.notes is not None else None,
        )

    def to_frame(self) -> pd.DataFrame:
        data = {name: self.z[:, k] for k, name in enumerate(self.z_names)}
        if self.u is not None:
            for k, name in enumerate(self.u_names):
                data[name] = self.u[:, k]
        data["X"] = self.x
        data["Y"] = self.y
        if self.notes is not None:
            data["notes"] = self.notes
        return pd.DataFrame(data)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        frame = self.to_frame()
        frame.to_csv(directory / CSV_NAME, index=False)
        sidecar = self.roles().to_dict()
        sidecar["provenance"] = self.provenance
        (directory / SIDECAR_NAME).write_text(json.dumps(sidecar, indent=2) + "\n")
        return directory

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, roles: Roles, provenance: str = "") -> "Dataset":
        missing = [
            c
            for c in (roles.treatment, roles.outcome, *roles.covariates, *roles.unobserved)
            if c not in frame.columns
        ]
        if missing:
            raise ValueError(f"columns missing from table: {missing}")
        z = frame[list(roles.covariates)].to_numpy(dtype=float)
        u = None
        if roles.unobserved:
            u = frame[list(roles.unobserved)].to_numpy(dtype=float)
        notes = None
        if roles.notes and roles.notes in frame.columns:
            notes = frame[roles.notes].fillna("").astype(str).tolist()
        return cls(
            z=z,
            x=frame[roles.treatment].to_numpy(),
            y=frame[roles.outcome].to_numpy(),
            z_names=list(roles.covariates),
            u=u,
            u_names=list(roles.unobserved),
            notes=notes,
            provenance=provenance,
        )

    @classmethod
    def load(cls, directory: str | Path) -> "Dataset":
        directory = Path(directory)
        sidecar = json.loads((directory / SIDECAR_NAME).read_text())
        roles = Roles.from_dict(sidecar)
        # float_precision='round_trip' makes load(save(ds)) bit-exact.
        frame = pd.read_csv(directory / CSV_NAME, float_precision="round_trip")
        return cls.from_frame(frame, roles, provenance=sidecar.get("provenance", ""))
