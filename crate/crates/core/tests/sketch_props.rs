use std::collections::HashMap;

use proptest::prelude::*;

use qcluster::pda::{constrain, PdaKind};
use qcluster::sketch::{ScmSketch, SketchConfig};

fn sketch(rows: usize, width: usize) -> ScmSketch {
    ScmSketch::new(SketchConfig {
        rows,
        width,
        message_gap: 1.0,
        flowlet_gap: 0.1,
        ..SketchConfig::default()
    })
    .unwrap()
}

proptest! {
    #[test]
    fn estimates_never_undercount(
        rows in 1usize..4,
        width in 4usize..64,
        ops in prop::collection::vec((0u64..40, 1u64..3000), 1..300),
    ) {
        let mut s = sketch(rows, width);
        let mut exact: HashMap<u64, u64> = HashMap::new();
        for (i, &(flow, bytes)) in ops.iter().enumerate() {
            s.insert(flow, bytes, i as f64 * 1e-4);
            *exact.entry(flow).or_default() += bytes;
        }
        let now = ops.len() as f64 * 1e-4;
        for (&flow, &n) in &exact {
            prop_assert!(s.query(flow, now, PdaKind::Fair).weight_estimate >= n);
        }
    }

    #[test]
    fn priority_queue_never_ascends_within_a_flowlet(
        choices in prop::collection::vec((0u64..30, 0usize..8), 1..400),
    ) {
        // narrow sketch so collisions are common
        let mut s = sketch(2, 16);
        let mut last: HashMap<u64, (f64, usize)> = HashMap::new();
        for (i, &(flow, choice)) in choices.iter().enumerate() {
            let now = i as f64 * 1e-3;
            let q = s.query(flow, now, PdaKind::PriorityOrdered);
            let queue = constrain(choice, &q, PdaKind::PriorityOrdered);
            // judged on the true gap, not the sketch's view of it
            if let Some(&(seen, prev)) = last.get(&flow) {
                if now - seen < 0.1 - 1e-9 {
                    prop_assert!(queue >= prev, "flow {flow}: {prev} -> {queue}");
                }
            }
            s.record(flow, 1500, queue, now, PdaKind::PriorityOrdered);
            last.insert(flow, (now, queue));
        }
    }
}

#[test]
fn silence_past_the_message_gap_restarts_the_count() {
    let mut s = sketch(3, 128);
    s.record(5, 1500, 2, 0.0, PdaKind::PriorityOrdered);
    s.record(5, 1500, 2, 0.5, PdaKind::PriorityOrdered);
    let q = s.query(5, 0.7, PdaKind::PriorityOrdered);
    assert_eq!(q.weight_estimate, 3000);
    assert!(q.is_new_flowlet && !q.is_new_message);

    let q = s.query(5, 2.0, PdaKind::PriorityOrdered);
    assert!(q.is_new_message);
    s.record(5, 700, 0, 2.0, PdaKind::PriorityOrdered);
    let q = s.query(5, 2.0, PdaKind::PriorityOrdered);
    assert_eq!(q.weight_estimate, 700);
    assert_eq!(q.prev_queue, Some(0));
}
