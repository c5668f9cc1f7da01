use ionherald::correlate::{extract, histogram, CoincidenceHistogram};
use proptest::prelude::*;

fn brute(apd: &[u64], onsets: &[u64], bw_ns: i64, win: i64) -> Vec<u64> {
    let mut counts = vec![0u64; (2 * win + 1) as usize];
    for &o in onsets {
        for &a in apd {
            let tau = o as i64 - a as i64;
            // Bin k covers [(k - 1/2) w, (k + 1/2) w).
            let k = ((tau as f64 + bw_ns as f64 / 2.0) / bw_ns as f64).floor() as i64;
            if k.abs() <= win {
                counts[(k + win) as usize] += 1;
            }
        }
    }
    counts
}

fn sorted_times(max_len: usize, span: u64) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::btree_set(0..span, 0..max_len).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn two_pointer_matches_all_pairs(
        apd in sorted_times(200, 2_000_000),
        onsets in sorted_times(40, 2_000_000),
        bw_us in 1u32..30,
        win in 1u32..60,
    ) {
        let h = histogram(&apd, &onsets, bw_us as f64, win).unwrap();
        prop_assert_eq!(h.counts, brute(&apd, &onsets, bw_us as i64 * 1000, win as i64));
    }

    #[test]
    fn translation_invariant(
        apd in sorted_times(200, 5_000_000),
        onsets in sorted_times(40, 5_000_000),
        shift in 0u64..1_000_000_000_000,
    ) {
        let a = histogram(&apd, &onsets, 10.0, 50).unwrap();
        let sa: Vec<u64> = apd.iter().map(|t| t + shift).collect();
        let so: Vec<u64> = onsets.iter().map(|t| t + shift).collect();
        let b = histogram(&sa, &so, 10.0, 50).unwrap();
        prop_assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn guarded_segments_sum_to_whole(
        segments in prop::collection::vec((sorted_times(80, 2_000_000), sorted_times(20, 2_000_000)), 1..5),
    ) {
        // Segment j lives in [j G, j G + 2 ms) with G leaving more than a
        // full window between segments.
        let guard = 2_000_000 + 600_000;
        let (mut apd, mut onsets) = (Vec::new(), Vec::new());
        let mut total: Option<CoincidenceHistogram> = None;
        for (j, (a, o)) in segments.iter().enumerate() {
            let off = j as u64 * guard;
            let a: Vec<u64> = a.iter().map(|t| t + off).collect();
            let o: Vec<u64> = o.iter().map(|t| t + off).collect();
            let h = histogram(&a, &o, 10.0, 50).unwrap();
            match total.as_mut() {
                Some(t) => t.merge(&h).unwrap(),
                None => total = Some(h),
            }
            apd.extend(a);
            onsets.extend(o);
        }
        let whole = histogram(&apd, &onsets, 10.0, 50).unwrap();
        let total = total.unwrap();
        prop_assert_eq!(whole.counts, total.counts);
        prop_assert_eq!(whole.total_apd, total.total_apd);
    }

    #[test]
    fn histogram_invariants(
        apd in sorted_times(150, 3_000_000),
        onsets in sorted_times(30, 3_000_000),
    ) {
        let h = histogram(&apd, &onsets, 10.0, 50).unwrap();
        prop_assert_eq!(h.counts.len(), h.lags.len());
        prop_assert!(h.counts.iter().sum::<u64>() <= h.total_apd * h.total_onsets);
        let again = histogram(&apd, &onsets, 10.0, 50).unwrap();
        prop_assert_eq!(&h, &again);
        let r = extract(&h).unwrap();
        prop_assert_eq!(r.coincidence_err, (r.coincidences as f64).sqrt());
        let mean = h.counts.iter().sum::<u64>() as f64 / h.counts.len() as f64;
        prop_assert!((r.background_per_bin - mean).abs() <= 1e-12 * mean.max(1.0));
    }
}
