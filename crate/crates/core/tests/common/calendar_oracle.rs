//! Brute-force reference for the slot calendar.

use cofee_core::calendar::{FreeSlot, Reservation, SlotCalendar, SlotKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-9;

#[derive(Debug, Default, Clone, Copy)]
pub struct TrialStats {
    pub reserves: usize,
    pub successes: usize,
    pub with_moves: usize,
    pub heuristic_misses: usize,
}

fn lane_items(cal: &SlotCalendar, lane: usize) -> Vec<Reservation> {
    let mut v: Vec<Reservation> = cal.reservations().filter(|r| r.lane == lane).cloned().collect();
    v.sort_by(|a, b| a.start.total_cmp(&b.start));
    v
}

/// Complement of each lane's reservations within `[now, ∞)`.
pub fn brute_free_slots(cal: &SlotCalendar, now: f64) -> Vec<FreeSlot> {
    let mut out = Vec::new();
    for lane in 0..cal.lane_count() {
        let mut t = 0.0f64;
        for r in lane_items(cal, lane) {
            let a = t.max(now);
            if r.start - a > EPS {
                out.push(FreeSlot { lane, start: a, end: r.start });
            }
            t = t.max(r.end);
        }
        out.push(FreeSlot { lane, start: t.max(now), end: f64::INFINITY });
    }
    out
}

fn admissible_lanes(cal: &SlotCalendar, kind: SlotKind) -> Vec<usize> {
    match kind {
        SlotKind::Primary => vec![0],
        SlotKind::Backup => (0..cal.lane_count()).collect(),
    }
}

/// Whether a free slot already fits without moving anything.
pub fn fits_without_moves(cal: &SlotCalendar, now: f64, kind: SlotKind, dur: f64, omega: f64, sigma: f64) -> bool {
    let lanes = admissible_lanes(cal, kind);
    brute_free_slots(cal, now)
        .iter()
        .filter(|s| lanes.contains(&s.lane))
        .any(|s| {
            let st = s.start.max(omega).max(now);
            st + dur <= s.end + EPS && st + dur <= sigma + EPS
        })
}

/// Exact feasibility of inserting a new slot into one lane when reservations
/// keep their relative order: try every insertion position and pack every
/// unstarted reservation as early as its bounds allow.
pub fn lane_feasible(items: &[Reservation], now: f64, dur: f64, omega: f64, sigma: f64) -> bool {
    (0..=items.len()).any(|pos| {
        let mut t = 0.0f64;
        let mut ok = true;
        let mut seq: Vec<(f64, f64, f64, bool)> = items
            .iter()
            .map(|r| (r.end - r.start, r.omega, r.sigma, r.start > now + EPS))
            .collect();
        // started reservations are pinned at their current start
        let pinned: Vec<Option<f64>> = items
            .iter()
            .map(|r| (r.start <= now + EPS).then_some(r.start))
            .collect();
        let mut pins = pinned;
        seq.insert(pos, (dur, omega, sigma, true));
        pins.insert(pos, None);
        for ((d, w, s, movable), pin) in seq.into_iter().zip(pins) {
            let start = match pin {
                Some(p) if !movable => {
                    if p + EPS < t {
                        ok = false;
                        break;
                    }
                    p
                }
                _ => w.max(t).max(now),
            };
            if start + d > s + EPS {
                ok = false;
                break;
            }
            t = start + d;
        }
        ok
    })
}

pub fn oracle_feasible(cal: &SlotCalendar, now: f64, kind: SlotKind, dur: f64, omega: f64, sigma: f64) -> bool {
    admissible_lanes(cal, kind)
        .into_iter()
        .any(|lane| lane_feasible(&lane_items(cal, lane), now, dur, omega, sigma))
}

/// Structural checks that do not trust the calendar's own audit.
pub fn check_layout(cal: &SlotCalendar) -> Result<(), String> {
    cal.audit().map_err(|e| e.to_string())?;
    let all: Vec<&Reservation> = cal.reservations().collect();
    for r in &all {
        if r.start + EPS < r.omega || r.end > r.sigma + EPS {
            return Err(format!("{:?} breaks its bounds", r));
        }
    }
    let prim: Vec<&&Reservation> = all.iter().filter(|r| r.kind == SlotKind::Primary).collect();
    for (i, a) in prim.iter().enumerate() {
        for b in &prim[i + 1..] {
            if a.start < b.end - EPS && b.start < a.end - EPS {
                return Err(format!("primaries {:?} and {:?} overlap", a.id, b.id));
            }
        }
    }
    // load at every reservation start never exceeds the lane count
    for r in &all {
        let t = r.start + EPS;
        let load = all.iter().filter(|x| x.start <= t && t < x.end).count();
        if load > cal.lane_count() {
            return Err(format!("load {load} at {t} exceeds {} lanes", cal.lane_count()));
        }
    }
    Ok(())
}

fn same_slots(a: &[FreeSlot], b: &[FreeSlot]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.lane == y.lane
                && (x.start - y.start).abs() <= EPS
                && (x.end == y.end || (x.end - y.end).abs() <= EPS)
        })
}

/// Runs `trials` random reserve/release sequences against the oracle.
pub fn run_trials(trials: usize, seed: u64) -> Result<TrialStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = TrialStats::default();
    for trial in 0..trials {
        let chi = [1.0, 1.0, 2.0, 3.0][rng.random_range(0..4)];
        let mut cal = SlotCalendar::new(chi).unwrap();
        let mut now = 0.0f64;
        let mut live = Vec::new();
        let steps = rng.random_range(10..40);
        for step in 0..steps {
            let ctx = |m: String| format!("trial {trial} step {step}: {m}");
            if rng.random_bool(0.3) {
                now += rng.random_range(0.0..8.0);
            }
            let release = !live.is_empty() && (live.len() >= 20 || rng.random_bool(0.3));
            if release {
                let i = rng.random_range(0..live.len());
                let id = live.swap_remove(i);
                cal.release(id).map_err(|e| ctx(e.to_string()))?;
            } else {
                let kind = if rng.random_bool(0.5) { SlotKind::Primary } else { SlotKind::Backup };
                let dur = rng.random_range(1.0..12.0f64).round();
                let omega = now + rng.random_range(0.0..30.0f64).round();
                let sigma = omega + dur + rng.random_range(0.0..15.0f64).round();
                let free_fit = fits_without_moves(&cal, now, kind, dur, omega, sigma);
                let feasible = oracle_feasible(&cal, now, kind, dur, omega, sigma);
                stats.reserves += 1;
                match cal.reserve(now, kind, dur, omega, sigma) {
                    Some(r) => {
                        if !feasible {
                            return Err(ctx("reserved where the oracle finds no arrangement".into()));
                        }
                        if r.start + EPS < omega.max(now) || r.end > sigma + EPS {
                            return Err(ctx(format!("slot [{}, {}) outside request", r.start, r.end)));
                        }
                        stats.successes += 1;
                        if !r.moved.is_empty() {
                            stats.with_moves += 1;
                        }
                        if rng.random_bool(0.7) {
                            cal.make_permanent(r.id).unwrap();
                        }
                        live.push(r.id);
                    }
                    None => {
                        if free_fit {
                            return Err(ctx("refused although a free slot fits".into()));
                        }
                        if feasible {
                            stats.heuristic_misses += 1;
                        }
                    }
                }
            }
            check_layout(&cal).map_err(ctx)?;
            let probe = now + rng.random_range(0.0..5.0);
            let got = cal.free_slots(probe);
            let want = brute_free_slots(&cal, probe);
            if !same_slots(&got, &want) {
                return Err(ctx(format!("free slots differ: {got:?} vs {want:?}")));
            }
            let mut lens: Vec<f64> = want.iter().map(|s| s.len()).collect();
            lens.sort_by(|a, b| b.total_cmp(a));
            let top = cal.top_k(probe, 3);
            for (s, l) in top.iter().zip(&lens) {
                if !(s.len() == *l || (s.len() - l).abs() <= EPS) {
                    return Err(ctx(format!("top-k {top:?} disagrees with {lens:?}")));
                }
            }
        }
    }
    Ok(stats)
}
