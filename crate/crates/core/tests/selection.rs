use fedaa::clients::attack_same_value;
use fedaa::nn::{ArchSpec, FlatParams, OutputHead};
use fedaa::seed;
use fedaa::selection::{distance_matrix, select_clients, DistanceScope};
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

fn arch(dim: usize) -> ArchSpec {
    ArchSpec::new(dim - 1, vec![], 1, OutputHead::Logits).unwrap()
}

/// 20 clients, the first 4 same-value attackers; benign entries ~ N(0, 0.01).
fn trial(s: u64) -> Vec<usize> {
    let mut rng = seed::rng(s);
    let a = ArchSpec::new(60, vec![], 10, OutputHead::Logits).unwrap();
    let normal = Normal::new(0.0, 0.1).unwrap();
    let ups: Vec<FlatParams> = (0..20)
        .map(|i| {
            if i < 4 {
                attack_same_value(&a, 100.0, &mut rng)
            } else {
                let v = (0..a.param_count()).map(|_| normal.sample(&mut rng)).collect();
                FlatParams::new(a.clone(), v).unwrap()
            }
        })
        .collect();
    let refs: Vec<(usize, &FlatParams)> = ups.iter().enumerate().collect();
    select_clients(&refs, 30.0, DistanceScope::AllLayers, false)
        .unwrap()
        .selected_ids
}

#[test]
fn same_value_attackers_are_excluded() {
    let clean = (0..100).filter(|&s| trial(s).iter().all(|&id| id >= 4)).count();
    assert!(clean >= 99, "{clean}/100");
}

#[test]
fn last_hidden_scope_uses_only_that_slice() {
    let a = ArchSpec::new(2, vec![3, 2], 2, OutputHead::Logits).unwrap();
    let r = a.last_hidden_range();
    let base = FlatParams::zeros(&a);
    let mut off_slice = base.clone();
    off_slice.values_mut()[0] = 1e6;
    let mut on_slice = base.clone();
    on_slice.values_mut()[r.start] = 1.0;
    let ups = [(0, &base), (1, &off_slice), (2, &on_slice)];
    let sel = select_clients(&ups, 67.0, DistanceScope::LastHiddenLayer, false).unwrap();
    // the huge edit lies outside the slice, so clients 0 and 1 coincide there
    assert_eq!(sel.selected_ids, vec![0, 1]);
}

fn vectors() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (3usize..9, 2usize..7).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), n))
}

proptest! {
    #[test]
    fn distance_matrix_symmetric_zero_diagonal(vs in vectors()) {
        let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        let m = distance_matrix(&refs);
        for i in 0..vs.len() {
            prop_assert_eq!(m[i][i], 0.0);
            for j in 0..vs.len() {
                prop_assert_eq!(m[i][j], m[j][i]);
                prop_assert!(m[i][j] >= 0.0);
            }
        }
    }

    #[test]
    fn selection_is_permutation_equivariant(vs in vectors(), rot in 0usize..8, m in 10.0f64..100.0) {
        let ps: Vec<FlatParams> = vs.iter().map(|v| FlatParams::new(arch(v.len()), v.clone()).unwrap()).collect();
        let ups: Vec<(usize, &FlatParams)> = ps.iter().enumerate().collect();
        let mut shuffled = ups.clone();
        shuffled.rotate_left(rot % ups.len());
        let a = select_clients(&ups, m, DistanceScope::AllLayers, false).unwrap();
        let b = select_clients(&shuffled, m, DistanceScope::AllLayers, false).unwrap();
        prop_assert_eq!(&a.selected_ids, &b.selected_ids);
        for (x, y) in a.state.iter().zip(&b.state) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn state_is_scale_invariant(vs in vectors(), scale in 0.1f64..100.0) {
        let ps: Vec<FlatParams> = vs.iter().map(|v| FlatParams::new(arch(v.len()), v.clone()).unwrap()).collect();
        let scaled: Vec<FlatParams> = ps
            .iter()
            .map(|p| p.with_values(p.values().iter().map(|x| x * scale).collect()).unwrap())
            .collect();
        let a = select_clients(&ps.iter().enumerate().collect::<Vec<_>>(), 50.0, DistanceScope::AllLayers, false).unwrap();
        let b = select_clients(&scaled.iter().enumerate().collect::<Vec<_>>(), 50.0, DistanceScope::AllLayers, false).unwrap();
        for (x, y) in a.state.iter().zip(&b.state) {
            prop_assert!((x - y).abs() < 1e-6);
            prop_assert!((0.0..=1.0).contains(x));
        }
    }
}
