//! Per-fog slot calendar.
//!
//! The calendar holds `⌊χ⌋` lanes. Lane 0 is the fog's real capacity and takes
//! both primary and backup reservations; the remaining lanes only take backups,
//! which is how over-subscription lets several backups share one stretch of
//! fog time while primaries never overlap each other. Each lane keeps its
//! reservations ordered by start time plus an index of the finite gaps between
//! them ordered by length, so the worst-fit search walks gaps from largest to
//! smallest without scanning the whole lane.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Bound::{Excluded, Unbounded};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Time, TIME_EPS};

type Of = OrderedFloat<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReservationId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    Primary,
    Backup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotState {
    Temporary,
    Permanent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reservation {
    pub id: ReservationId,
    pub kind: SlotKind,
    pub state: SlotState,
    pub lane: usize,
    pub start: Time,
    pub end: Time,
    /// Earliest allowed start ω.
    pub omega: Time,
    /// Latest allowed end σ.
    pub sigma: Time,
    /// Bumped every time the reservation is moved, so stale timers can be ignored.
    pub version: u32,
}

impl Reservation {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeSlot {
    pub lane: usize,
    pub start: Time,
    /// `f64::INFINITY` for the open tail of a lane.
    pub end: Time,
}

impl FreeSlot {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= TIME_EPS
    }

    /// Whether a task of `dur` can start at or after `max(start, earliest)` and end by `sigma`.
    pub fn fits(&self, earliest: Time, dur: f64, sigma: Time) -> bool {
        let s = self.start.max(earliest);
        s + dur <= self.end + TIME_EPS && s + dur <= sigma + TIME_EPS
    }
}

/// Result of a successful reservation: the new slot and any reservations that
/// defragmentation moved to make room.
#[derive(Debug, Clone, PartialEq)]
pub struct Reserved {
    pub id: ReservationId,
    pub start: Time,
    pub end: Time,
    pub moved: Vec<ReservationId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum CalendarError {
    #[error("over-subscription ratio must be at least 1, got {0}")]
    InvalidChi(f64),
    #[error("unknown reservation {0:?}")]
    Unknown(ReservationId),
    #[error("calendar audit failed: {0}")]
    Audit(String),
}

#[derive(Debug, Clone, Default)]
struct Lane {
    /// (start, id) -> end
    slots: BTreeMap<(Of, u64), Of>,
    /// (-len, start, end) for finite gaps, so ascending order is largest first.
    gaps: BTreeSet<(Of, Of, Of)>,
}

fn of(x: f64) -> Of {
    OrderedFloat(x)
}

impl Lane {
    fn prev_end(&self, key: (Of, u64)) -> f64 {
        self.slots
            .range(..key)
            .next_back()
            .map(|(_, e)| e.0)
            .unwrap_or(0.0)
    }

    fn next_start(&self, key: (Of, u64)) -> Option<f64> {
        self.slots
            .range((Excluded(key), Unbounded))
            .next()
            .map(|(k, _)| k.0 .0)
    }

    fn add_gap(&mut self, a: f64, b: f64) {
        if b - a > TIME_EPS {
            self.gaps.insert((of(a - b), of(a), of(b)));
        }
    }

    fn drop_gap(&mut self, a: f64, b: f64) {
        self.gaps.remove(&(of(a - b), of(a), of(b)));
    }

    fn insert(&mut self, id: u64, s: f64, e: f64) {
        let key = (of(s), id);
        let pe = self.prev_end(key);
        let ns = self.next_start(key);
        if let Some(ns) = ns {
            self.drop_gap(pe, ns);
        }
        self.add_gap(pe, s);
        if let Some(ns) = ns {
            self.add_gap(e, ns);
        }
        self.slots.insert(key, of(e));
    }

    fn remove(&mut self, id: u64, s: f64, e: f64) {
        let key = (of(s), id);
        self.slots.remove(&key);
        let pe = self.prev_end(key);
        let ns = self.next_start(key);
        self.drop_gap(pe, s);
        if let Some(ns) = ns {
            self.drop_gap(e, ns);
            self.add_gap(pe, ns);
        }
    }

    fn tail_start(&self) -> f64 {
        self.slots.values().next_back().map(|e| e.0).unwrap_or(0.0)
    }

    /// Free intervals clipped to `[now, ∞)`, largest first, ties by earlier start.
    fn free_desc(&self, now: Time) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let tail = self.tail_start().max(now);
        out.push((tail, f64::INFINITY));
        // The only finite gap that can straddle `now` is the one right after
        // the last reservation starting at or before it.
        let probe = (of(now), u64::MAX);
        let straddle = {
            let pe = self.prev_end(probe);
            match self.next_start(probe) {
                Some(ns) if pe < now && ns - now > TIME_EPS => Some((now, ns)),
                _ => None,
            }
        };
        let mut pending = straddle;
        for &(_, a, b) in &self.gaps {
            if a.0 < now {
                continue;
            }
            if let Some(p) = pending {
                if p.1 - p.0 >= b.0 - a.0 {
                    out.push(p);
                    pending = None;
                }
            }
            out.push((a.0, b.0));
        }
        if let Some(p) = pending {
            out.push(p);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SlotCalendar {
    chi: f64,
    lanes: Vec<Lane>,
    res: BTreeMap<ReservationId, Reservation>,
    next: u64,
}

struct Neighbour {
    id: ReservationId,
    start: f64,
    dur: f64,
    omega: f64,
    sigma: f64,
    /// End of the reservation before it (or 0), used when sliding left.
    bound_left: f64,
    /// Start of the reservation after it, used when sliding right.
    bound_right: f64,
}

impl SlotCalendar {
    pub fn new(chi: f64) -> Result<Self, CalendarError> {
        if !(chi >= 1.0) || !chi.is_finite() {
            return Err(CalendarError::InvalidChi(chi));
        }
        let n = chi.floor() as usize;
        Ok(Self {
            chi,
            lanes: vec![Lane::default(); n],
            res: BTreeMap::new(),
            next: 0,
        })
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn get(&self, id: ReservationId) -> Option<&Reservation> {
        self.res.get(&id)
    }

    pub fn reservations(&self) -> impl Iterator<Item = &Reservation> {
        self.res.values()
    }

    pub fn len(&self) -> usize {
        self.res.len()
    }

    pub fn is_empty(&self) -> bool {
        self.res.is_empty()
    }

    fn lanes_for(&self, kind: SlotKind) -> Vec<Vec<usize>> {
        match kind {
            SlotKind::Primary => vec![vec![0]],
            SlotKind::Backup if self.lanes.len() > 1 => vec![(1..self.lanes.len()).collect(), vec![0]],
            SlotKind::Backup => vec![vec![0]],
        }
    }

    /// Worst-fit placement of a `dur`-long slot inside `[omega, sigma]`,
    /// starting no earlier than `now`. Falls back to defragmentation when no
    /// free slot fits. The new reservation is temporary.
    pub fn reserve(
        &mut self,
        now: Time,
        kind: SlotKind,
        dur: f64,
        omega: Time,
        sigma: Time,
    ) -> Option<Reserved> {
        if !(dur > 0.0) || omega.max(now) + dur > sigma + TIME_EPS {
            return None;
        }
        for class in self.lanes_for(kind) {
            if let Some((lane, start)) = self.worst_fit(&class, now, dur, omega, sigma) {
                let id = self.place(lane, kind, start, dur, omega, sigma);
                return Some(Reserved {
                    id,
                    start,
                    end: start + dur,
                    moved: Vec::new(),
                });
            }
        }
        for class in self.lanes_for(kind) {
            for &lane in &class {
                if let Some((start, moved)) = self.defragment(lane, now, dur, omega, sigma) {
                    let id = self.place(lane, kind, start, dur, omega, sigma);
                    return Some(Reserved {
                        id,
                        start,
                        end: start + dur,
                        moved,
                    });
                }
            }
        }
        None
    }

    /// Places a reservation at exactly `start` if some admissible lane is free
    /// there. Used to rebuild a known layout.
    pub fn reserve_exact(
        &mut self,
        kind: SlotKind,
        start: Time,
        dur: f64,
        omega: Time,
        sigma: Time,
    ) -> Option<ReservationId> {
        if !(dur > 0.0) || start + TIME_EPS < omega || start + dur > sigma + TIME_EPS {
            return None;
        }
        let end = start + dur;
        for class in self.lanes_for(kind) {
            for lane in class {
                let l = &self.lanes[lane];
                let key = (of(start), u64::MAX);
                let clear_before = l.prev_end(key) <= start + TIME_EPS;
                let clear_after = l.next_start(key).is_none_or(|ns| ns + TIME_EPS >= end);
                if clear_before && clear_after {
                    return Some(self.place(lane, kind, start, dur, omega, sigma));
                }
            }
        }
        None
    }

    fn worst_fit(
        &self,
        class: &[usize],
        now: Time,
        dur: f64,
        omega: Time,
        sigma: Time,
    ) -> Option<(usize, Time)> {
        let earliest = omega.max(now);
        let mut best: Option<(f64, usize, Time)> = None;
        for &lane in class {
            for (a, b) in self.lanes[lane].free_desc(now) {
                let slot = FreeSlot { lane, start: a, end: b };
                if slot.fits(earliest, dur, sigma) {
                    let len = b - a;
                    if best.is_none_or(|(l, _, _)| len > l) {
                        best = Some((len, lane, a.max(earliest)));
                    }
                    break;
                }
            }
        }
        best.map(|(_, lane, start)| (lane, start))
    }

    fn place(
        &mut self,
        lane: usize,
        kind: SlotKind,
        start: Time,
        dur: f64,
        omega: Time,
        sigma: Time,
    ) -> ReservationId {
        let id = ReservationId(self.next);
        self.next += 1;
        let end = start + dur;
        self.lanes[lane].insert(id.0, start, end);
        self.res.insert(
            id,
            Reservation {
                id,
                kind,
                state: SlotState::Temporary,
                lane,
                start,
                end,
                omega,
                sigma,
                version: 0,
            },
        );
        id
    }

    fn neighbour(&self, lane: usize, key: (Of, u64)) -> Neighbour {
        let l = &self.lanes[lane];
        let id = ReservationId(key.1);
        let r = &self.res[&id];
        Neighbour {
            id,
            start: r.start,
            dur: r.duration(),
            omega: r.omega,
            sigma: r.sigma,
            bound_left: l.prev_end(key),
            bound_right: l.next_start(key).unwrap_or(f64::INFINITY),
        }
    }

    /// Tries to open up room in one lane by sliding the reservations on either
    /// side of a gap: the successor as late as its σ allows, then the
    /// predecessor as early as its ω allows, then both. Gaps overlapping the
    /// window are tried largest first. Only reservations that have not started
    /// move. On success the moves are applied and the start for the new slot
    /// is returned; on failure nothing changes.
    fn defragment(
        &mut self,
        lane: usize,
        now: Time,
        dur: f64,
        omega: Time,
        sigma: Time,
    ) -> Option<(Time, Vec<ReservationId>)> {
        let earliest = omega.max(now);
        let l = &self.lanes[lane];
        let mut gaps = l.free_desc(now);
        // Zero-width gaps between abutting reservations can still be widened.
        for (&(s, _), _) in l.slots.range((of(now), 0)..) {
            let pe = l.prev_end((s, 0));
            if s.0 - pe <= TIME_EPS && pe >= now {
                gaps.push((pe, s.0));
            }
        }
        for (a, b) in gaps {
            if b <= omega || a >= sigma {
                continue;
            }
            let pred = l
                .slots
                .range(..(of(a), 0))
                .next_back()
                .filter(|(_, e)| (e.0 - a).abs() <= TIME_EPS)
                .map(|(k, _)| self.neighbour(lane, *k));
            let succ = l
                .slots
                .range((of(b), 0)..)
                .next()
                .filter(|(k, _)| (k.0 .0 - b).abs() <= TIME_EPS)
                .map(|(k, _)| self.neighbour(lane, *k));

            let succ_move = succ.as_ref().filter(|z| z.start > now + TIME_EPS).and_then(|z| {
                let to = (z.sigma - z.dur).min(z.bound_right - z.dur);
                (to > z.start + TIME_EPS).then_some((z.id, to))
            });
            let pred_move = pred.as_ref().filter(|w| w.start > now + TIME_EPS).and_then(|w| {
                let to = w.omega.max(w.bound_left).max(now);
                (to < w.start - TIME_EPS).then_some((w.id, to, to + w.dur))
            });

            let plans: [(bool, bool); 3] = [(false, true), (true, false), (true, true)];
            for (use_pred, use_succ) in plans {
                let mv_s = if use_succ { succ_move } else { None };
                let mv_p = if use_pred { pred_move } else { None };
                if (use_succ && mv_s.is_none()) || (use_pred && mv_p.is_none()) {
                    continue;
                }
                let lo = mv_p.map(|(_, _, e)| e).unwrap_or(a);
                let hi = mv_s.map(|(_, s)| s).unwrap_or(b);
                let slot = FreeSlot { lane, start: lo, end: hi };
                if slot.fits(earliest, dur, sigma) {
                    let mut moved = Vec::new();
                    if let Some((id, to)) = mv_s {
                        self.shift(id, to);
                        moved.push(id);
                    }
                    if let Some((id, to, _)) = mv_p {
                        self.shift(id, to);
                        moved.push(id);
                    }
                    return Some((lo.max(earliest), moved));
                }
            }
        }
        None
    }

    fn shift(&mut self, id: ReservationId, to: Time) {
        let r = self.res.get_mut(&id).expect("shift of a known reservation");
        let dur = r.end - r.start;
        self.lanes[r.lane].remove(id.0, r.start, r.end);
        r.start = to;
        r.end = to + dur;
        r.version += 1;
        self.lanes[r.lane].insert(id.0, r.start, r.end);
    }

    pub fn make_permanent(&mut self, id: ReservationId) -> Result<(), CalendarError> {
        let r = self.res.get_mut(&id).ok_or(CalendarError::Unknown(id))?;
        r.state = SlotState::Permanent;
        Ok(())
    }

    pub fn release(&mut self, id: ReservationId) -> Result<Reservation, CalendarError> {
        let r = self.res.remove(&id).ok_or(CalendarError::Unknown(id))?;
        self.lanes[r.lane].remove(id.0, r.start, r.end);
        Ok(r)
    }

    /// All free intervals at or after `now`, lane by lane in time order.
    pub fn free_slots(&self, now: Time) -> Vec<FreeSlot> {
        let mut out = Vec::new();
        for (lane, l) in self.lanes.iter().enumerate() {
            let mut cursor = 0.0f64;
            for (&(s, _), &e) in &l.slots {
                let a = cursor.max(now);
                if s.0 - a > TIME_EPS {
                    out.push(FreeSlot { lane, start: a, end: s.0 });
                }
                cursor = cursor.max(e.0);
            }
            out.push(FreeSlot {
                lane,
                start: cursor.max(now),
                end: f64::INFINITY,
            });
        }
        out
    }

    /// The `k` longest free slots across lanes, longest first.
    pub fn top_k(&self, now: Time, k: usize) -> Vec<FreeSlot> {
        let mut all: Vec<FreeSlot> = Vec::new();
        for (lane, l) in self.lanes.iter().enumerate() {
            all.extend(l.free_desc(now).into_iter().take(k).map(|(a, b)| FreeSlot {
                lane,
                start: a,
                end: b,
            }));
        }
        all.sort_by(|x, y| {
            y.len()
                .total_cmp(&x.len())
                .then(x.start.total_cmp(&y.start))
                .then(x.lane.cmp(&y.lane))
        });
        all.truncate(k);
        all
    }

    /// Total free time inside `[from, to]` summed over lanes.
    pub fn free_time_within(&self, from: Time, to: Time) -> f64 {
        self.free_slots(from)
            .iter()
            .map(|s| (s.end.min(to) - s.start.max(from)).max(0.0))
            .sum()
    }

    /// Checks the structural invariants: no overlap within a lane, primaries
    /// only on lane 0, every slot inside its `[ω, σ]`, and the gap index
    /// consistent with the slots.
    pub fn audit(&self) -> Result<(), CalendarError> {
        let fail = |m: String| Err(CalendarError::Audit(m));
        for r in self.res.values() {
            if r.start + TIME_EPS < r.omega || r.end > r.sigma + TIME_EPS {
                return fail(format!("{:?} [{}, {}) outside [{}, {}]", r.id, r.start, r.end, r.omega, r.sigma));
            }
            if r.kind == SlotKind::Primary && r.lane != 0 {
                return fail(format!("primary {:?} on lane {}", r.id, r.lane));
            }
        }
        for (lane, l) in self.lanes.iter().enumerate() {
            let mut expect = BTreeSet::new();
            let mut cursor = 0.0f64;
            for (&(s, id), &e) in &l.slots {
                let Some(r) = self.res.get(&ReservationId(id)) else {
                    return fail(format!("lane {lane} holds unknown id {id}"));
                };
                if r.start != s.0 || r.end != e.0 || r.lane != lane {
                    return fail(format!("lane {lane} out of sync for {id}"));
                }
                if s.0 + TIME_EPS < cursor {
                    return fail(format!("overlap on lane {lane} at {}", s.0));
                }
                if s.0 - cursor > TIME_EPS {
                    expect.insert((of(cursor - s.0), of(cursor), s));
                }
                cursor = e.0;
            }
            if expect != l.gaps {
                return fail(format!("gap index of lane {lane} is stale"));
            }
        }
        let held: usize = self.lanes.iter().map(|l| l.slots.len()).sum();
        if held != self.res.len() {
            return fail("lane and reservation counts differ".into());
        }
        Ok(())
    }
}
