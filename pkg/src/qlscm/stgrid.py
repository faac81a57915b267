"""Gridded spatio-temporal panels: sites, cell areas, CSV ingestion.

A panel stores, for every site, its own (sorted) time indices together with
the outcome ``y`` (m_i,), the exposures ``x`` (m_i, d) and the observed
confounders ``w`` (m_i, k).  Sites may have different series lengths.

The CSV layout is long/tidy, one row per (site, time)::

    site_id,lon,lat,time,y,x1,...,xd,w1,...,wk[,area][,region]

Any column can be renamed through :class:`PanelSchema`.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

LATTICE_TOL = 1e-9


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


class DuplicateRecordError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Site:
    id: str
    coords: tuple[float, float]
    area: float = 1.0
    region: str | None = None

    def __post_init__(self):
        if not (self.area > 0 and math.isfinite(self.area)):
            raise ValueError(f"site {self.id!r}: area must be positive, got {self.area}")


@dataclass(frozen=True)
class Grid:
    """Ordered collection of sites.

    ``spacing`` is set (to ``(dx, dy)``) when the sites are declared to lie on
    a regular lattice with origin ``origin``.
    """

    sites: tuple[Site, ...]
    spacing: tuple[float, float] | None = None
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        ids = [s.id for s in self.sites]
        if len(set(ids)) != len(ids):
            raise ValueError("site ids must be unique within a grid")
        coords = [tuple(map(float, s.coords)) for s in self.sites]
        if len(set(coords)) != len(coords):
            raise ValueError("two sites share identical coordinates")
        if self.spacing is not None:
            c = np.asarray(coords, dtype=float).reshape(-1, 2)
            k = (c - np.asarray(self.origin)) / np.asarray(self.spacing)
            if np.any(np.abs(k - np.round(k)) > LATTICE_TOL):
                raise ValueError("coordinates are off the declared lattice")

    def __len__(self):
        return len(self.sites)

    @property
    def ids(self):
        return [s.id for s in self.sites]

    @property
    def coords(self) -> np.ndarray:
        return np.array([s.coords for s in self.sites], dtype=float).reshape(-1, 2)

    @property
    def areas(self) -> np.ndarray:
        return np.array([s.area for s in self.sites], dtype=float)

    @classmethod
    def regular(cls, nx: int, ny: int, spacing=(1.0, 1.0), origin=(1.0, 1.0), prefix="s"):
        """``nx * ny`` lattice, x fastest; default coordinates (1..nx) x (1..ny)."""
        dx, dy = spacing
        sites = []
        for j in range(ny):
            for i in range(nx):
                xy = (origin[0] + i * dx, origin[1] + j * dy)
                sites.append(Site(f"{prefix}{j * nx + i:05d}", xy))
        return cls(tuple(sites), spacing=(float(dx), float(dy)), origin=tuple(map(float, origin)))

    def with_areas(self, areas) -> "Grid":
        areas = np.asarray(areas, dtype=float)
        if areas.shape != (len(self),):
            raise ValueError("need one area per site")
        return replace(self, sites=tuple(replace(s, area=float(a)) for s, a in zip(self.sites, areas)))


def cell_areas(grid: Grid, scheme: str = "uniform") -> np.ndarray:
    """Relative cell areas.

    ``uniform`` gives all ones; ``cos_latitude`` (alias ``coslat``) weights by
    the cosine of the y-coordinate read as latitude in degrees, normalised to
    mean one.
    """
    n = len(grid)
    if scheme == "uniform":
        return np.ones(n)
    if scheme in ("cos_latitude", "coslat"):
        lat = grid.coords[:, 1]
        if np.any(np.abs(lat) >= 90):
            raise ValueError("cos-latitude weights need |latitude| < 90")
        wt = np.cos(np.deg2rad(lat))
        return wt / wt.mean()
    raise ValueError(f"unknown area scheme {scheme!r}")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    grid: Grid
    times: tuple
    y: tuple
    x: tuple
    w: tuple
    exposure_names: tuple = ("x1",)
    confounder_names: tuple = ()

    def __post_init__(self):
        n = len(self.grid)
        if not (len(self.times) == len(self.y) == len(self.x) == len(self.w) == n):
            raise ValueError("per-site series must match the number of sites")
        d, k = len(self.exposure_names), len(self.confounder_names)
        for i, (t, y, x, w) in enumerate(zip(self.times, self.y, self.x, self.w)):
            m = len(t)
            if y.shape != (m,) or x.shape != (m, d) or w.shape != (m, k):
                raise ValueError(f"site {self.grid.sites[i].id!r}: series shapes disagree")

    @classmethod
    def from_arrays(cls, grid, times, y, x, w=None, exposure_names=None, confounder_names=None):
        """Build from per-site sequences; also accepts (n, m[, .]) arrays."""
        n = len(grid)
        xs = [np.asarray(v, dtype=float) for v in x]
        xs = [v[:, None] if v.ndim == 1 else v for v in xs]
        d = xs[0].shape[1] if n else 1
        if w is None:
            ws = [np.zeros((len(t), 0)) for t in times]
        else:
            ws = [np.asarray(v, dtype=float) for v in w]
            ws = [v[:, None] if v.ndim == 1 else v for v in ws]
        k = ws[0].shape[1] if n else 0
        exposure_names = tuple(exposure_names or (f"x{j + 1}" for j in range(d)))
        confounder_names = tuple(confounder_names or (f"w{j + 1}" for j in range(k)))
        return cls(
            grid,
            tuple(_frozen(t, np.int64) for t in times),
            tuple(_frozen(v) for v in y),
            tuple(_frozen(v) for v in xs),
            tuple(_frozen(v) for v in ws),
            exposure_names,
            confounder_names,
        )

    @property
    def n_sites(self):
        return len(self.grid)

    @property
    def d(self):
        return len(self.exposure_names)

    @property
    def k(self):
        return len(self.confounder_names)

    @property
    def lengths(self):
        return np.array([len(t) for t in self.times], dtype=int)

    def subset(self, indices) -> "PanelDataset":
        idx = list(indices)
        return PanelDataset(
            Grid(tuple(self.grid.sites[i] for i in idx)),
            tuple(self.times[i] for i in idx),
            tuple(self.y[i] for i in idx),
            tuple(self.x[i] for i in idx),
            tuple(self.w[i] for i in idx),
            self.exposure_names,
            self.confounder_names,
        )

    def with_confounders(self, extra, names) -> "PanelDataset":
        """Append per-site confounder columns (e.g. a known hidden field)."""
        ws = []
        for w, e in zip(self.w, extra):
            e = np.asarray(e, dtype=float)
            ws.append(np.hstack([w, e[:, None] if e.ndim == 1 else e]))
        return PanelDataset.from_arrays(
            self.grid, self.times, self.y, self.x, ws, self.exposure_names, self.confounder_names + tuple(names)
        )

    def with_grid(self, grid: Grid) -> "PanelDataset":
        return replace(self, grid=grid)

    def equals(self, other: "PanelDataset") -> bool:
        """Field-by-field equality (exact float comparison, NaN equal to NaN).

        Sites are compared one by one; lattice metadata of the grid is not
        part of the CSV layout and is ignored.
        """
        if (self.grid.sites != other.grid.sites or self.exposure_names != other.exposure_names
                or self.confounder_names != other.confounder_names):
            return False
        pairs = zip((self.times, self.y, self.x, self.w), (other.times, other.y, other.x, other.w))
        return all(len(a) == len(b) and all(np.array_equal(u, v, equal_nan=u.dtype.kind == "f") for u, v in zip(a, b)) for a, b in pairs)

    def pooled(self):
        """Stack all sites: (site_index, y, x, w) arrays."""
        idx = np.concatenate([np.full(len(t), i) for i, t in enumerate(self.times)]) if self.n_sites else np.zeros(0, int)
        return idx, np.concatenate(self.y), np.vstack(self.x), np.vstack(self.w)


@dataclass
class ValidationReport:
    dropped_records: list = field(default_factory=list)
    dropped_sites: list = field(default_factory=list)

    @property
    def empty(self):
        return not (self.dropped_records or self.dropped_sites)


def validate_panel(data: PanelDataset, policy: str = "drop"):
    """Remove (or reject) non-finite records and sites too short to fit.

    Returns ``(dataset, report)``.  A site needs ``m_i >= d + k + 2`` records.
    Under ``policy="error"`` the first violation raises :class:`ValidationError`.
    """
    if policy not in ("drop", "error"):
        raise ValueError("policy must be 'drop' or 'error'")
    report = ValidationReport()
    need = data.d + data.k + 2
    keep_sites, times, ys, xs, ws = [], [], [], [], []
    changed = False
    for i, site in enumerate(data.grid.sites):
        t, y, x, w = data.times[i], data.y[i], data.x[i], data.w[i]
        ok = np.isfinite(y) & np.isfinite(x).all(axis=1) & np.isfinite(w).all(axis=1)
        if not ok.all():
            bad = np.flatnonzero(~ok)
            if policy == "error":
                raise ValidationError(f"non-finite value at site {site.id!r}, time {int(t[bad[0]])}")
            report.dropped_records.extend((site.id, int(t[j])) for j in bad)
            t, y, x, w = t[ok], y[ok], x[ok], w[ok]
            changed = True
        if len(t) < need:
            if policy == "error":
                raise ValidationError(f"site {site.id!r} has {len(t)} records, needs at least {need}")
            report.dropped_sites.append((site.id, f"{len(t)} records < {need}"))
            changed = True
            continue
        keep_sites.append(site)
        times.append(t), ys.append(y), xs.append(x), ws.append(w)
    if not changed:
        return data, report
    grid = Grid(tuple(keep_sites))
    out = PanelDataset.from_arrays(grid, times, ys, xs, ws, data.exposure_names, data.confounder_names)
    return out, report


@dataclass(frozen=True)
class PanelSchema:
    """Column names of a panel CSV.

    ``x``/``w`` left as ``None`` are auto-detected as ``x1, x2, ...`` and
    ``w1, w2, ...`` in header order.
    """

    site_id: str = "site_id"
    lon: str = "lon"
    lat: str = "lat"
    time: str = "time"
    y: str = "y"
    x: tuple | None = None
    w: tuple | None = None
    area: str | None = "area"
    region: str | None = "region"
    month: str | None = None


def month_of(time_value: int) -> int:
    """Month of a ``YYYYMMDD``-encoded integer time index."""
    mm = (int(time_value) // 100) % 100
    if not 1 <= mm <= 12:
        raise ValueError(f"time {time_value} is not a YYYYMMDD date")
    return mm


def _float(text, rowno, col):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"row {rowno}: column {col!r} is not numeric: {text!r}") from None


def load_panel_csv(path, schema: PanelSchema | None = None, months=None, stats: dict | None = None):
    """Read a long-format panel CSV.

    Rows are grouped by site (first-appearance order) and time-sorted within
    each site.  ``months`` keeps only rows whose month (from ``schema.month``
    or a ``YYYYMMDD`` time) is listed.  Non-finite numbers are kept; use
    :func:`validate_panel` to handle them.  If a ``stats`` dict is passed it
    receives ``rows_read`` and ``rows_kept``.
    """
    schema = schema or PanelSchema()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        pos = {h: j for j, h in enumerate(header)}
        xcols = tuple(schema.x) if schema.x is not None else tuple(h for h in header if re.fullmatch(r"x\d+", h))
        wcols = tuple(schema.w) if schema.w is not None else tuple(h for h in header if re.fullmatch(r"w\d+", h))
        if not xcols:
            raise SchemaError("no exposure column (expected x1, x2, ... or an explicit mapping)")
        required = [schema.site_id, schema.lon, schema.lat, schema.time, schema.y, *xcols, *wcols]
        if schema.month:
            required.append(schema.month)
        for col in required:
            if col not in pos:
                raise SchemaError(f"missing column {col!r}")
        area_j = pos.get(schema.area) if schema.area else None
        region_j = pos.get(schema.region) if schema.region else None

        order, info, records = [], {}, {}
        n_read = n_kept = 0
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            n_read += 1
            sid = row[pos[schema.site_id]]
            t_txt = row[pos[schema.time]]
            try:
                t = int(t_txt)
            except ValueError:
                raise ParseError(f"row {rowno}: time {t_txt!r} is not an integer") from None
            if months is not None:
                mm = int(_float(row[pos[schema.month]], rowno, schema.month)) if schema.month else month_of(t)
                if mm not in months:
                    continue
            n_kept += 1
            lon = _float(row[pos[schema.lon]], rowno, schema.lon)
            lat = _float(row[pos[schema.lat]], rowno, schema.lat)
            area = _float(row[area_j], rowno, schema.area) if area_j is not None else 1.0
            region = (row[region_j] or None) if region_j is not None else None
            if sid not in info:
                order.append(sid)
                info[sid] = ((lon, lat), area, region)
                records[sid] = {}
            elif info[sid] != ((lon, lat), area, region):
                raise ParseError(f"row {rowno}: site {sid!r} metadata differs from earlier rows")
            if t in records[sid]:
                raise DuplicateRecordError(f"row {rowno}: duplicate record for site {sid!r}, time {t}")
            vals = (
                _float(row[pos[schema.y]], rowno, schema.y),
                [_float(row[pos[c]], rowno, c) for c in xcols],
                [_float(row[pos[c]], rowno, c) for c in wcols],
            )
            records[sid][t] = vals

    sites, times, ys, xs, ws = [], [], [], [], []
    d, k = len(xcols), len(wcols)
    for sid in order:
        coords, area, region = info[sid]
        sites.append(Site(sid, coords, area, region))
        ts = sorted(records[sid])
        times.append(ts)
        ys.append([records[sid][t][0] for t in ts])
        xs.append(np.array([records[sid][t][1] for t in ts], dtype=float).reshape(len(ts), d))
        ws.append(np.array([records[sid][t][2] for t in ts], dtype=float).reshape(len(ts), k))
    if stats is not None:
        stats.update(rows_read=n_read, rows_kept=n_kept)
    return PanelDataset.from_arrays(Grid(tuple(sites)), times, ys, xs, ws, xcols, wcols)


def write_panel_csv(data: PanelDataset, path, schema: PanelSchema | None = None) -> None:
    """Write ``data`` in the layout read by :func:`load_panel_csv`.

    Floats are written with ``repr`` so a reload reproduces them exactly.
    Area and region columns are emitted only when informative.
    """
    schema = schema or PanelSchema()
    sites = data.grid.sites
    with_area = schema.area and any(s.area != 1.0 for s in sites)
    with_region = schema.region and any(s.region is not None for s in sites)
    header = [schema.site_id, schema.lon, schema.lat, schema.time, schema.y, *data.exposure_names, *data.confounder_names]
    if with_area:
        header.append(schema.area)
    if with_region:
        header.append(schema.region)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for i, s in enumerate(sites):
            lon, lat = (repr(float(c)) for c in s.coords)
            for j, t in enumerate(data.times[i]):
                row = [s.id, lon, lat, str(int(t)), repr(float(data.y[i][j]))]
                row += [repr(float(v)) for v in data.x[i][j]]
                row += [repr(float(v)) for v in data.w[i][j]]
                if with_area:
                    row.append(repr(float(s.area)))
                if with_region:
                    row.append(s.region or "")
                wr.writerow(row)


def load_region_map(path) -> dict:
    """Read a ``site_id,region`` CSV into a dict."""
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"site_id", "region"} <= set(reader.fieldnames):
            raise SchemaError("region map needs columns site_id, region")
        for row in reader:
            if row["site_id"] in out:
                raise DuplicateRecordError(f"site {row['site_id']!r} listed twice in region map")
            out[row["site_id"]] = row["region"]
    return out
