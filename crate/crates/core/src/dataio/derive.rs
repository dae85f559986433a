use std::collections::HashMap;

use super::{BagOfWords, CheckIn, DataError, GeoGraph, Poi, SessionGraph};
use crate::numkit::Array;

const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two (lat, lon) pairs in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let dlat = (lat2 - lat1).to_radians();
    let dlon = (lon2 - lon1).to_radians();
    let a = (dlat / 2.0).sin().powi(2)
        + lat1.to_radians().cos() * lat2.to_radians().cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().asin()
}

/// Directed transition graph over one home check-in sequence. Nodes are
/// the distinct POIs in first-occurrence order; each consecutive pair of
/// distinct POIs contributes one edge, and rows are divided by their
/// total edge count.
pub fn build_session_graph(home_seq: &[CheckIn]) -> Result<SessionGraph, DataError> {
    if home_seq.is_empty() {
        return Err(DataError::EmptySequence);
    }
    let mut nodes: Vec<usize> = Vec::new();
    let mut index: HashMap<usize, usize> = HashMap::new();
    for c in home_seq {
        index.entry(c.poi).or_insert_with(|| {
            nodes.push(c.poi);
            nodes.len() - 1
        });
    }
    let n = nodes.len();
    let mut counts = vec![0.0f64; n * n]; // counts[from * n + to]
    for pair in home_seq.windows(2) {
        if pair[0].poi == pair[1].poi {
            continue;
        }
        let from = index[&pair[0].poi];
        let to = index[&pair[1].poi];
        counts[from * n + to] += 1.0;
    }

    let mut a_out = vec![0.0f64; n * n];
    for r in 0..n {
        let total: f64 = counts[r * n..(r + 1) * n].iter().sum();
        if total > 0.0 {
            for c in 0..n {
                a_out[r * n + c] = counts[r * n + c] / total;
            }
        }
    }
    let mut a_in = vec![0.0f64; n * n];
    for r in 0..n {
        let total: f64 = (0..n).map(|c| counts[c * n + r]).sum();
        if total > 0.0 {
            for c in 0..n {
                a_in[r * n + c] = counts[c * n + r] / total;
            }
        }
    }

    Ok(SessionGraph {
        nodes,
        a_out: Array::matrix(n, n, a_out).expect("a_out shape"),
        a_in: Array::matrix(n, n, a_in).expect("a_in shape"),
    })
}

/// Distance-decay graph over the out-of-town catalog, ordered by dense
/// POI id. Entry (i, j) of the raw matrix is `exp(-km(i, j))`.
pub fn build_geo_graph(out_pois: &[Poi]) -> GeoGraph {
    let n = out_pois.len();
    let mut raw = vec![0.0f64; n * n];
    for i in 0..n {
        raw[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let d = haversine_km(
                out_pois[i].lat,
                out_pois[i].lon,
                out_pois[j].lat,
                out_pois[j].lon,
            );
            // floor keeps far pairs strictly positive (exp underflows
            // to 0 beyond ~745 km)
            let w = (-d).exp().max(f64::MIN_POSITIVE);
            raw[i * n + j] = w;
            raw[j * n + i] = w;
        }
    }
    GeoGraph::from_raw(Array::matrix(n, n, raw).expect("geo shape"))
}

/// Visit counts over the out-of-town vocabulary.
pub fn to_bag_of_words(out_set: &[CheckIn], d2: usize) -> Result<BagOfWords, DataError> {
    let mut counts = vec![0u32; d2];
    for c in out_set {
        if c.poi >= d2 {
            return Err(DataError::PoiOutOfRange {
                index: c.poi,
                vocab: d2,
            });
        }
        counts[c.poi] += 1;
    }
    Ok(BagOfWords { counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Region;
    use proptest::prelude::*;

    fn seq(pois: &[usize]) -> Vec<CheckIn> {
        pois.iter()
            .enumerate()
            .map(|(t, &poi)| CheckIn {
                user: 0,
                time: t as i64,
                poi,
            })
            .collect()
    }

    fn poi(id: usize, lat: f64, lon: f64) -> Poi {
        Poi {
            id,
            raw: id as u64,
            region: Region::Out,
            lat,
            lon,
        }
    }

    #[test]
    fn single_checkin_gives_one_isolated_node() {
        let g = build_session_graph(&seq(&[7])).unwrap();
        assert_eq!(g.nodes, vec![7]);
        assert_eq!(g.a_out.data(), &[0.0]);
        assert_eq!(g.a_in.data(), &[0.0]);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        assert!(matches!(
            build_session_graph(&[]),
            Err(DataError::EmptySequence)
        ));
    }

    #[test]
    fn a_b_a_c_matches_hand_enumeration() {
        // edges: A->B, B->A, A->C. A's two outgoing edges split evenly;
        // B's one edge goes back to A; every node's incoming total is 1.
        let g = build_session_graph(&seq(&[0, 1, 0, 2])).unwrap();
        assert_eq!(g.nodes, vec![0, 1, 2]);
        assert_eq!(g.a_out.row(0), &[0.0, 0.5, 0.5]);
        assert_eq!(g.a_out.row(1), &[1.0, 0.0, 0.0]);
        assert_eq!(g.a_out.row(2), &[0.0, 0.0, 0.0]);
        assert_eq!(g.a_in.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(g.a_in.row(1), &[1.0, 0.0, 0.0]);
        assert_eq!(g.a_in.row(2), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn consecutive_repeats_emit_no_edge() {
        let g = build_session_graph(&seq(&[3, 3, 3])).unwrap();
        assert_eq!(g.nodes, vec![3]);
        assert_eq!(g.a_out.data(), &[0.0]);
    }

    #[test]
    fn relabeling_pois_permutes_rows_and_columns() {
        let original = [0usize, 1, 0, 2, 1];
        let relabel = |p: usize| [10, 20, 30][p];
        let g1 = build_session_graph(&seq(&original)).unwrap();
        let mapped: Vec<usize> = original.iter().map(|&p| relabel(p)).collect();
        let g2 = build_session_graph(&seq(&mapped)).unwrap();
        // first-occurrence order is preserved by relabeling, so the
        // node lists correspond position-wise and matrices are equal
        assert_eq!(
            g2.nodes,
            g1.nodes.iter().map(|&p| relabel(p)).collect::<Vec<_>>()
        );
        assert_eq!(g1.a_out.data(), g2.a_out.data());
        assert_eq!(g1.a_in.data(), g2.a_in.data());
    }

    #[test]
    fn geo_diagonal_is_one_before_normalization() {
        let g = build_geo_graph(&[poi(0, 10.0, 20.0), poi(1, 11.0, 21.0)]);
        assert_eq!(g.raw().at(0, 0), 1.0);
        assert_eq!(g.raw().at(1, 1), 1.0);
    }

    #[test]
    fn one_km_apart_decays_to_exp_minus_one() {
        // move 1 km due north: dlat = 1/R radians
        let dlat_deg = (1.0f64 / 6371.0).to_degrees();
        let g = build_geo_graph(&[poi(0, 10.0, 20.0), poi(1, 10.0 + dlat_deg, 20.0)]);
        let got = g.raw().at(0, 1);
        assert!(((-1.0f64).exp() - got).abs() < 1e-9, "got {got}");
        assert!((got - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn normalized_geo_rows_sum_to_one() {
        let pois: Vec<Poi> = (0..5)
            .map(|i| poi(i, 10.0 + i as f64 * 0.3, 20.0 - i as f64 * 0.2))
            .collect();
        let g = build_geo_graph(&pois);
        for r in 0..5 {
            let sum: f64 = g.normalized().row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {r} sums to {sum}");
        }
    }

    #[test]
    fn bag_of_words_counts_and_empty_case() {
        assert_eq!(to_bag_of_words(&[], 4).unwrap().counts, vec![0, 0, 0, 0]);
        let bow = to_bag_of_words(&seq(&[2, 2, 0]), 4).unwrap();
        assert_eq!(bow.counts, vec![1, 0, 2, 0]);
        assert!(matches!(
            to_bag_of_words(&seq(&[4]), 4),
            Err(DataError::PoiOutOfRange { index: 4, vocab: 4 })
        ));
    }

    #[test]
    fn zero_bag_frequencies_stay_zero() {
        let bow = to_bag_of_words(&[], 3).unwrap();
        assert_eq!(bow.frequencies(), vec![0.0, 0.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn session_rows_sum_to_zero_or_one(
            pois in proptest::collection::vec(0usize..6, 1..30),
        ) {
            let g = build_session_graph(&seq(&pois)).unwrap();
            for r in 0..g.len() {
                for m in [&g.a_out, &g.a_in] {
                    let sum: f64 = m.row(r).iter().sum();
                    prop_assert!(
                        sum.abs() < 1e-12 || (sum - 1.0).abs() < 1e-12,
                        "row sum {sum}"
                    );
                    prop_assert!(m.row(r).iter().all(|&x| (0.0..=1.0).contains(&x)));
                }
            }
        }

        #[test]
        fn geo_raw_is_symmetric_in_unit_interval(
            coords in proptest::collection::vec((-60.0f64..60.0, -120.0f64..120.0), 2..8),
        ) {
            let pois: Vec<Poi> = coords
                .iter()
                .enumerate()
                .map(|(i, &(lat, lon))| poi(i, lat, lon))
                .collect();
            let g = build_geo_graph(&pois);
            let n = g.len();
            for i in 0..n {
                for j in 0..n {
                    let w = g.raw().at(i, j);
                    prop_assert!(w > 0.0 && w <= 1.0);
                    prop_assert!((w - g.raw().at(j, i)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn bag_mass_matches_checkin_count(
            pois in proptest::collection::vec(0usize..10, 0..40),
        ) {
            let bow = to_bag_of_words(&seq(&pois), 10).unwrap();
            prop_assert_eq!(bow.total() as usize, pois.len());
        }
    }
}
