"""Shared atom pool with franchise-style bookkeeping.

Latent cells (one per block of one platform's latent matrix) are grouped
into platform-local tables; every table serves one global atom (dish),
and atoms are shared freely across platforms and clusters.  The two
levels implement nested mixing measures: cells ~ G_t, G_t ~ DP(mass_tables,
G_0), G_0 ~ DP(mass_atoms, N(base_mean, base_sd^2)).

Fresh values for proposed clusters must be drawn from the predictive law
of G_t given the current seating.  Those draws are provisional: candidate
clusters that lose the allocation draw must leave no trace.  A
``DrawContext`` therefore records provisional seats on top of immutable
snapshots; only the winning candidate's seats are committed.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

_LOG_2PI = float(np.log(2.0 * np.pi))


class _Table:
    __slots__ = ("dish_id", "n_cells")

    def __init__(self, dish_id: int, n_cells: int):
        self.dish_id = dish_id
        self.n_cells = n_cells


class _Dish:
    __slots__ = ("value", "n_tables")

    def __init__(self, value: float, n_tables: int):
        self.value = value
        self.n_tables = n_tables


class _RestaurantSnap:
    __slots__ = ("tids", "cum", "values", "total", "version")

    def __init__(self, tables: dict[int, _Table], dishes: dict[int, _Dish], version: int):
        self.tids = np.fromiter(tables.keys(), dtype=np.int64, count=len(tables))
        counts = np.fromiter((t.n_cells for t in tables.values()), dtype=np.float64, count=len(tables))
        self.cum = np.cumsum(counts)
        self.values = np.fromiter(
            (dishes[t.dish_id].value for t in tables.values()), dtype=np.float64, count=len(tables)
        )
        self.total = float(self.cum[-1]) if counts.size else 0.0
        self.version = version


class _DishSnap:
    __slots__ = ("dids", "cum", "values", "counts", "total", "version")

    def __init__(self, dishes: dict[int, _Dish], version: int):
        self.dids = np.fromiter(dishes.keys(), dtype=np.int64, count=len(dishes))
        self.counts = np.fromiter((d.n_tables for d in dishes.values()), dtype=np.float64, count=len(dishes))
        self.cum = np.cumsum(self.counts)
        self.values = np.fromiter((d.value for d in dishes.values()), dtype=np.float64, count=len(dishes))
        self.total = float(self.cum[-1]) if self.counts.size else 0.0
        self.version = version


class CellComponents:
    """Predictive law of one fresh cell as a finite mixture over atoms.

    Component idx carries atom ``values[idx]`` (dish ``dids[idx]``) with
    normalized log probability ``logw[idx]``, pooling every route to that
    atom: joining one of the dish's tables in the restaurant, or opening
    a new table through the dish-level urn.  ``log_base`` is the log
    probability of a brand-new base-measure atom.  ``tables`` maps dish
    id to the restaurant's (table ids, cell counts) and ``open_w`` holds
    each component's unnormalized new-table weight; both are consulted
    only when a component wins and a concrete seat must be picked.
    """

    __slots__ = ("values", "logw", "log_base", "dids", "tables", "open_w", "versions")

    def __init__(self, values, logw, log_base, dids, tables, open_w, versions):
        self.values = values
        self.logw = logw
        self.log_base = log_base
        self.dids = dids
        self.tables = tables
        self.open_w = open_w
        self.versions = versions


class DrawContext:
    """Provisional seats layered over store snapshots for one proposal site.

    ``records[t]`` holds one entry per provisional cell of platform t:
    ('T', tid) joins base table tid, ('NT', dish_ref) opens a provisional
    table, ('PT', j) joins the provisional table opened by record j.  A
    dish_ref is ('D', dish_id) or ('ND', index into new_dish_values).
    Provisional tables are dish-level customers, tracked in dish_records.
    """

    __slots__ = ("records", "values", "dish_records", "new_dish_values")

    def __init__(self, n_platforms: int):
        self.records: list[list[tuple]] = [[] for _ in range(n_platforms)]
        self.values: list[list[float]] = [[] for _ in range(n_platforms)]
        self.dish_records: list[tuple] = []
        self.new_dish_values: list[float] = []

    def reset(self):
        for r in self.records:
            r.clear()
        for v in self.values:
            v.clear()
        self.dish_records.clear()
        self.new_dish_values.clear()


class AtomStore:
    """Mutable two-level seating state for the shared atom pool."""

    def __init__(self, n_platforms: int, mass_tables: float, mass_atoms: float,
                 base_mean: float, base_sd: float):
        if n_platforms < 1:
            raise ValueError("need at least one platform")
        if not (mass_tables > 0 and mass_atoms > 0 and base_sd > 0):
            raise ValueError("mass_tables, mass_atoms and base_sd must be positive")
        self.n_platforms = n_platforms
        self.mass_tables = float(mass_tables)
        self.mass_atoms = float(mass_atoms)
        self.base_mean = float(base_mean)
        self.base_sd = float(base_sd)
        self.tables: list[dict[int, _Table]] = [{} for _ in range(n_platforms)]
        self.dishes: dict[int, _Dish] = {}
        self._next_tid = [0] * n_platforms
        self._next_did = 0
        self._rest_version = [0] * n_platforms
        self._dish_version = 0
        self._rest_snap: list[_RestaurantSnap | None] = [None] * n_platforms
        self._dish_snap: _DishSnap | None = None
        self._comp_snap: list[CellComponents | None] = [None] * n_platforms

    # -- snapshots ---------------------------------------------------------

    def restaurant_snapshot(self, t: int) -> _RestaurantSnap:
        snap = self._rest_snap[t]
        if snap is None or snap.version != self._rest_version[t]:
            snap = _RestaurantSnap(self.tables[t], self.dishes, self._rest_version[t])
            self._rest_snap[t] = snap
        return snap

    def dish_snapshot(self) -> _DishSnap:
        snap = self._dish_snap
        if snap is None or snap.version != self._dish_version:
            snap = _DishSnap(self.dishes, self._dish_version)
            self._dish_snap = snap
        return snap

    def _touch_restaurant(self, t: int):
        self._rest_version[t] += 1

    def _touch_dishes(self):
        self._dish_version += 1

    # -- structural mutations ---------------------------------------------

    def open_dish(self, value: float) -> int:
        did = self._next_did
        self._next_did += 1
        self.dishes[did] = _Dish(float(value), 0)
        self._touch_dishes()
        return did

    def open_table(self, t: int, dish_id: int, n_cells: int = 1) -> int:
        tid = self._next_tid[t]
        self._next_tid[t] += 1
        self.tables[t][tid] = _Table(dish_id, n_cells)
        self.dishes[dish_id].n_tables += 1
        self._touch_restaurant(t)
        self._touch_dishes()
        return tid

    def seed_cell(self, t: int, dish_id: int | None, value: float | None = None) -> int:
        """Open a fresh table for one cell, creating the dish if needed."""
        if dish_id is None:
            dish_id = self.open_dish(value)
        return self.open_table(t, dish_id, n_cells=1)

    def add_cell(self, t: int, tid: int):
        self.tables[t][tid].n_cells += 1
        self._touch_restaurant(t)

    def remove_cell(self, t: int, tid: int):
        rec = self.tables[t][tid]
        rec.n_cells -= 1
        if rec.n_cells == 0:
            del self.tables[t][tid]
            dish = self.dishes[rec.dish_id]
            dish.n_tables -= 1
            if dish.n_tables == 0:
                del self.dishes[rec.dish_id]
            self._touch_dishes()
        self._touch_restaurant(t)

    def release_cells(self, t: int, tids) -> None:
        for tid in tids:
            self.remove_cell(t, int(tid))

    def set_dish_value(self, did: int, value: float):
        self.dishes[did].value = float(value)

    def refresh_values(self):
        # Dish values changed in bulk; every cached view is stale.
        self._touch_dishes()
        for t in range(self.n_platforms):
            self._touch_restaurant(t)

    def dish_of(self, t: int, tid: int) -> int:
        return self.tables[t][tid].dish_id

    def value_of(self, t: int, tid: int) -> float:
        return self.dishes[self.tables[t][tid].dish_id].value

    @property
    def n_dishes(self) -> int:
        return len(self.dishes)

    def n_tables(self, t: int | None = None) -> int:
        if t is None:
            return sum(len(d) for d in self.tables)
        return len(self.tables[t])

    # -- predictive draws --------------------------------------------------

    def new_context(self) -> DrawContext:
        return DrawContext(self.n_platforms)

    def seating_version(self) -> tuple:
        """Stamp that changes whenever the seating arrangement does."""
        return (tuple(self._rest_version), self._dish_version)

    def cell_components(self, t: int) -> CellComponents:
        """Mixture form of the predictive law for one fresh cell of
        platform t given the current seating, one component per dish:
        weight = cells at the dish's tables here + new-table mass routed
        through the dish-level urn.  Weights are normalized; the view is
        cached per seating version and stays usable for seating while
        cells are only added."""
        comp = self._comp_snap[t]
        versions = (self._rest_version[t], self._dish_version)
        if comp is not None and comp.versions == versions:
            return comp
        by_dish: dict[int, tuple[list[int], list[float]]] = {}
        n_cells = 0
        for tid, rec in self.tables[t].items():
            grp = by_dish.setdefault(rec.dish_id, ([], []))
            grp[0].append(tid)
            grp[1].append(rec.n_cells)
            n_cells += rec.n_cells
        m_total = sum(len(tabs) for tabs in self.tables)
        open_scale = self.mass_tables / (m_total + self.mass_atoms)
        n_dish = len(self.dishes)
        dids = np.fromiter(self.dishes.keys(), dtype=np.int64, count=n_dish)
        values = np.fromiter((d.value for d in self.dishes.values()),
                             dtype=np.float64, count=n_dish)
        open_w = open_scale * np.fromiter((d.n_tables for d in self.dishes.values()),
                                          dtype=np.float64, count=n_dish)
        joined = np.fromiter((sum(by_dish[d][1]) if d in by_dish else 0.0 for d in self.dishes),
                             dtype=np.float64, count=n_dish)
        log_n = np.log(n_cells + self.mass_tables)
        logw = np.log(joined + open_w) - log_n
        log_base = np.log(self.mass_atoms * open_scale) - log_n
        tables = {did: (np.asarray(grp[0], dtype=np.int64), np.asarray(grp[1]))
                  for did, grp in by_dish.items()}
        comp = CellComponents(values, logw, log_base, dids, tables, open_w, versions)
        self._comp_snap[t] = comp
        return comp

    def seat_component(self, t: int, comps: CellComponents, idx: int, rng,
                       fresh_value: float | None = None) -> int:
        """Seat one real cell at mixture component ``idx`` of ``comps``,
        picking join-table versus new-table within the dish by their
        predictive weights; idx -1 opens a table at a brand-new dish
        valued ``fresh_value``.  Returns the backing table id."""
        if idx < 0:
            return self.seed_cell(t, None, fresh_value)
        did = int(comps.dids[idx])
        grp = comps.tables.get(did)
        if grp is not None:
            tids, counts = grp
            cum = np.cumsum(counts)
            u = rng.random() * (cum[-1] + comps.open_w[idx])
            if u < cum[-1]:
                tid = int(tids[np.searchsorted(cum, u, side="right")])
                self.add_cell(t, tid)
                return tid
        return self.open_table(t, did)

    def _draw_dish_ref(self, ctx: DrawContext, rng) -> tuple[tuple, float]:
        dsnap = self.dish_snapshot()
        n_side = len(ctx.dish_records)
        v = rng.random() * (dsnap.total + n_side + self.mass_atoms)
        if v < dsnap.total:
            di = int(np.searchsorted(dsnap.cum, v, side="right"))
            return ("D", int(dsnap.dids[di])), float(dsnap.values[di])
        v -= dsnap.total
        if v < n_side:
            ref = ctx.dish_records[int(v)]
            if ref[0] == "D":
                return ref, self.dishes[ref[1]].value
            return ref, ctx.new_dish_values[ref[1]]
        value = float(rng.normal(self.base_mean, self.base_sd))
        ctx.new_dish_values.append(value)
        return ("ND", len(ctx.new_dish_values) - 1), value

    def draw_cells(self, t: int, count: int, ctx: DrawContext, rng) -> tuple[np.ndarray, list[int]]:
        """Draw ``count`` provisional cell values from the predictive law of
        platform t's mixing measure, sequentially reinforced through the
        context.  Returns the values and their record indices."""
        snap = self.restaurant_snapshot(t)
        records = ctx.records[t]
        values = ctx.values[t]
        out = np.empty(count)
        idx = []
        for i in range(count):
            n_side = len(records)
            u = rng.random() * (snap.total + n_side + self.mass_tables)
            if u < snap.total:
                ti = int(np.searchsorted(snap.cum, u, side="right"))
                rec = ("T", int(snap.tids[ti]))
                val = float(snap.values[ti])
            else:
                u -= snap.total
                if u < n_side:
                    j = int(u)
                    prev = records[j]
                    rec = ("PT", j) if prev[0] == "NT" else prev
                    val = values[j]
                else:
                    dish_ref, val = self._draw_dish_ref(ctx, rng)
                    ctx.dish_records.append(dish_ref)
                    rec = ("NT", dish_ref)
            records.append(rec)
            values.append(val)
            idx.append(len(records) - 1)
            out[i] = val
        return out, idx

    def commit(self, ctx: DrawContext, cells: list[tuple[int, int]]) -> list[int]:
        """Materialise the provisional seats of the winning candidate.

        ``cells`` lists (platform, record index) pairs; only those seats
        become real.  Provisional tables and dishes referenced by no
        committed cell are dropped silently.  Returns the table id backing
        each committed cell, in order.
        """
        groups: dict[tuple, list[int]] = {}
        for pos, (t, ridx) in enumerate(cells):
            rec = ctx.records[t][ridx]
            if rec[0] == "T":
                key = ("B", t, rec[1])
            elif rec[0] == "NT":
                key = ("P", t, ridx)
            else:  # ("PT", root)
                key = ("P", t, rec[1])
            groups.setdefault(key, []).append(pos)
        tids = [0] * len(cells)
        dish_memo: dict[int, int] = {}
        for key, members in groups.items():
            if key[0] == "B":
                _, t, tid = key
                self.tables[t][tid].n_cells += len(members)
                self._touch_restaurant(t)
            else:
                _, t, root = key
                dish_ref = ctx.records[t][root][1]
                if dish_ref[0] == "D":
                    did = dish_ref[1]
                else:
                    nd = dish_ref[1]
                    if nd not in dish_memo:
                        dish_memo[nd] = self.open_dish(ctx.new_dish_values[nd])
                    did = dish_memo[nd]
                tid = self.open_table(t, did, n_cells=len(members))
            for pos in members:
                tids[pos] = tid
        return tids

    # -- diagnostics -------------------------------------------------------

    def log_structure_prior(self) -> float:
        """Log prior density of the current seating arrangement and atom
        values: per-restaurant CRP over cells, one CRP over tables at the
        dish level, Gaussian base density for each atom."""
        total = 0.0
        for t in range(self.n_platforms):
            tabs = self.tables[t]
            n_cells = sum(rec.n_cells for rec in tabs.values())
            if n_cells == 0:
                continue
            total += len(tabs) * np.log(self.mass_tables)
            total += sum(gammaln(rec.n_cells) for rec in tabs.values())
            total -= gammaln(self.mass_tables + n_cells) - gammaln(self.mass_tables)
        m = sum(len(tabs) for tabs in self.tables)
        if m:
            total += len(self.dishes) * np.log(self.mass_atoms)
            total += sum(gammaln(d.n_tables) for d in self.dishes.values())
            total -= gammaln(self.mass_atoms + m) - gammaln(self.mass_atoms)
        for d in self.dishes.values():
            total += -0.5 * _LOG_2PI - np.log(self.base_sd) - 0.5 * ((d.value - self.base_mean) / self.base_sd) ** 2
        return float(total)

    def check(self, assignments: list[np.ndarray]) -> None:
        """Assert internal counts agree with the cell-to-table assignment
        matrices; raises AssertionError on any discrepancy."""
        assert len(assignments) == self.n_platforms
        for t, a in enumerate(assignments):
            want: dict[int, int] = {}
            for tid in np.asarray(a).ravel():
                want[int(tid)] = want.get(int(tid), 0) + 1
            have = {tid: rec.n_cells for tid, rec in self.tables[t].items()}
            assert want == have, f"platform {t}: table occupancy mismatch"
        dish_tables: dict[int, int] = {}
        for tabs in self.tables:
            for rec in tabs.values():
                assert rec.n_cells > 0
                dish_tables[rec.dish_id] = dish_tables.get(rec.dish_id, 0) + 1
        have_d = {did: d.n_tables for did, d in self.dishes.items()}
        assert dish_tables == have_d, "dish reference counts mismatch"
        for d in self.dishes.values():
            assert d.n_tables > 0 and np.isfinite(d.value)


class FixedMeasureLatent:
    """Stand-in for AtomStore with known, immutable platform measures.

    Cell values are iid draws from the given measures, so there is no
    seating to track; commit and release are no-ops.  Used to validate the
    allocation kernels against exhaustive enumeration.
    """

    def __init__(self, measures):
        self.measures = list(measures)
        self.n_platforms = len(self.measures)
        # zero-weight atoms are unreachable; drop them so logs stay finite
        self._comps = [
            CellComponents(m.atoms[m.weights > 0], np.log(m.weights[m.weights > 0]),
                           -np.inf, None, None, None, None)
            for m in self.measures
        ]

    def new_context(self) -> DrawContext:
        return DrawContext(self.n_platforms)

    def seating_version(self) -> int:
        return 0

    def cell_components(self, t: int) -> CellComponents:
        return self._comps[t]

    def seat_component(self, t: int, comps: CellComponents, idx: int, rng,
                       fresh_value: float | None = None) -> int:
        return 0

    def draw_cells(self, t: int, count: int, ctx: DrawContext, rng):
        vals = np.atleast_1d(self.measures[t].sample(rng, size=count)).astype(float)
        records = ctx.records[t]
        start = len(records)
        records.extend(("F", None) for _ in range(count))
        ctx.values[t].extend(vals.tolist())
        return vals, list(range(start, start + count))

    def commit(self, ctx: DrawContext, cells) -> list[int]:
        return [0] * len(cells)

    def release_cells(self, t: int, tids) -> None:
        pass
