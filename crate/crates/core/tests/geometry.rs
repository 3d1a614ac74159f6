use proptest::prelude::*;
use voronoi_mcmc::{
    first_crossing, nearest_center, structured_project, BoundingBox, CrossingKind, EmbeddingTable,
};

const SCAN: usize = 10_000;

fn toy() -> (EmbeddingTable, BoundingBox) {
    (EmbeddingTable::square_toy(), BoundingBox::cube(2, 2.0).unwrap())
}

fn at(x: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
    x.iter().zip(dir).map(|(a, b)| a + t * b).collect()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Every assignment in `[M]^N`, scored jointly.
fn brute_force_project(x: &[f64], table: &EmbeddingTable) -> Vec<usize> {
    let (m, d) = (table.len(), table.dim());
    let n = x.len() / d;
    let mut best = (f64::INFINITY, vec![]);
    for idx in 0..m.pow(n as u32) {
        let mut cell = vec![0; n];
        let mut rest = idx;
        for slot in cell.iter_mut().rev() {
            *slot = rest % m;
            rest /= m;
        }
        let cost: f64 = cell
            .iter()
            .enumerate()
            .map(|(p, &c)| sq(&x[p * d..(p + 1) * d], table.center(c)))
            .sum();
        if cost < best.0 {
            best = (cost, cell);
        }
    }
    best.1
}

/// First scan point whose projection differs from the start, refined by bisection.
fn scan_exit(x: &[f64], dir: &[f64], span: f64, table: &EmbeddingTable, bbox: &BoundingBox) -> Option<f64> {
    let start = structured_project(x, table).unwrap();
    let same = |t: f64| {
        let y = at(x, dir, t);
        bbox.contains(&y) && structured_project(&y, table).unwrap() == start
    };
    let mut prev = 0.0;
    for i in 1..=SCAN {
        let t = span * i as f64 / SCAN as f64;
        if !same(t) {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if same(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        prev = t;
    }
    None
}

#[test]
fn toy_crossing_examples_agree_with_dense_scan() {
    let (table, bbox) = toy();
    let ev = first_crossing(&[0.5, 0.5], &[-1.0, 0.0], 2.0, &table, &bbox).unwrap().unwrap();
    let scanned = scan_exit(&[0.5, 0.5], &[-1.0, 0.0], 2.0, &table, &bbox).unwrap();
    assert!((ev.t - 0.5).abs() < 1e-15);
    assert!((scanned - ev.t).abs() <= 1e-12);
    assert_eq!(ev.to_cell, vec![1]);
    assert_eq!(ev.normal, vec![-1.0, 0.0]);

    assert!(first_crossing(&[0.5, 0.5], &[1.0, 0.0], 1.0, &table, &bbox).unwrap().is_none());
    assert!(scan_exit(&[0.5, 0.5], &[1.0, 0.0], 1.0, &table, &bbox).is_none());
}

#[test]
fn structured_projection_matches_brute_force() {
    let (table, _) = toy();
    let x = [0.2, -0.4, -1.3, 0.1, 0.9, 1.7];
    assert_eq!(structured_project(&x, &table).unwrap(), brute_force_project(&x, &table));
}

fn table_strategy() -> impl Strategy<Value = EmbeddingTable> {
    (2usize..=4, 1usize..=3).prop_flat_map(|(m, d)| {
        prop::collection::vec(-1.5f64..1.5, m * d)
            .prop_filter_map("distinct centers", move |flat| EmbeddingTable::from_flat(flat, d).ok())
            .prop_filter("separated centers", |t| {
                (0..t.len()).all(|a| (0..a).all(|b| sq(t.center(a), t.center(b)) > 1e-2))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn center_maps_to_own_cell(table in table_strategy()) {
        for m in 0..table.len() {
            prop_assert_eq!(nearest_center(table.center(m), &table), m);
        }
    }

    #[test]
    fn projection_decomposes(
        table in table_strategy(),
        n in 1usize..=3,
        seed in prop::collection::vec(-2.0f64..2.0, 9),
    ) {
        let x = &seed[..n * table.dim()];
        prop_assert_eq!(structured_project(x, &table).unwrap(), brute_force_project(x, &table));
    }

    #[test]
    fn crossing_matches_dense_scan(
        table in table_strategy(),
        n in 1usize..=2,
        raw_x in prop::collection::vec(-1.9f64..1.9, 6),
        raw_dir in prop::collection::vec(-1.0f64..1.0, 6),
        span in 0.05f64..3.0,
    ) {
        let d = table.dim();
        let x = &raw_x[..n * d];
        let dir = &raw_dir[..n * d];
        prop_assume!(dir.iter().any(|v| v.abs() > 1e-3));
        let bbox = BoundingBox::cube(d, 2.0).unwrap();
        let ev = first_crossing(x, dir, span, &table, &bbox);
        prop_assume!(ev.is_ok());
        let ev = ev.unwrap();
        let start = structured_project(x, &table).unwrap();
        match ev {
            None => {
                for i in 1..=SCAN {
                    let y = at(x, dir, span * i as f64 / SCAN as f64);
                    prop_assert!(bbox.contains(&y));
                    prop_assert_eq!(&structured_project(&y, &table).unwrap(), &start);
                }
            }
            Some(ev) => {
                prop_assert!(ev.t > 0.0 && ev.t <= span);
                let norm: f64 = ev.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-12);
                for i in 1..SCAN {
                    let t = ev.t * i as f64 / SCAN as f64;
                    let y = at(x, dir, t);
                    prop_assert!(bbox.contains(&y));
                    prop_assert_eq!(&structured_project(&y, &table).unwrap(), &start);
                }
                let scanned = scan_exit(x, dir, span, &table, &bbox);
                if ev.kind == CrossingKind::CellBoundary {
                    // The normal lives in the block of the crossing position.
                    for (j, v) in ev.normal.iter().enumerate() {
                        prop_assert!(j / d == ev.position || *v == 0.0);
                    }
                    let past = at(x, dir, ev.t + 1e-9);
                    prop_assert!(structured_project(&past, &table).unwrap() != start);
                    prop_assert_eq!(structured_project(&past, &table).unwrap(), ev.to_cell.clone());
                    let s = scanned.expect("scan finds the exit");
                    prop_assert!((s - ev.t).abs() <= 1e-12 * ev.t.max(1.0));
                } else {
                    let y = at(x, dir, ev.t);
                    prop_assert!(bbox.face_gap(&y).abs() < 1e-12);
                }
            }
        }
    }
}
