mod common;

use cofee_core::calendar::{SlotCalendar, SlotKind};
use common::calendar_oracle::{check_layout, run_trials};

#[test]
fn random_sequences_agree_with_brute_force() {
    let stats = run_trials(2000, 7).unwrap();
    assert!(stats.successes > 0);
    // the sliding heuristic must get exercised, not just plain worst-fit
    assert!(stats.with_moves > 0, "{stats:?}");
}

/// Two backups sit either side of a short hole. The third task only fits once
/// the later backup is pushed towards its sub-deadline.
#[test]
fn backup_slides_right_to_make_room() {
    let mut cal = SlotCalendar::new(1.0).unwrap();
    let t1 = cal.reserve_exact(SlotKind::Backup, 10.0, 10.0, 10.0, 22.0).unwrap();
    let t2 = cal.reserve_exact(SlotKind::Backup, 24.0, 8.0, 24.0, 40.0).unwrap();
    for id in [t1, t2] {
        cal.make_permanent(id).unwrap();
    }
    let t3 = cal.reserve(0.0, SlotKind::Backup, 9.0, 20.0, 33.0).unwrap();
    assert_eq!(t3.moved, vec![t2]);
    assert_eq!((t3.start, t3.end), (20.0, 29.0));
    let moved = cal.get(t2).unwrap();
    assert_eq!((moved.start, moved.end), (32.0, 40.0));
    check_layout(&cal).unwrap();
}
