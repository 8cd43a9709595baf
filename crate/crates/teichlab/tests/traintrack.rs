use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;
use teichlab::traintrack::*;

fn m(rows: &[[i64; 2]]) -> IMat {
    to_imat(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn torus_action(rows: &[[i64; 2]]) -> CarriedAction {
    action_matrix(&TrainTrack::torus(), &m(rows)).unwrap()
}

const G2_POSITIVE: [i64; 18] = [1, 1, 1, 5, 1, 4, 2, 2, 2, 2, 1, 1, 1, 2, 3, 2, 3, 1];

#[test]
fn torus_weight_space_has_dimension_two() {
    assert_eq!(weight_space_basis(&TrainTrack::torus()).dim(), 2);
}

#[test]
fn isolated_branch_adds_a_dimension() {
    let t = TrainTrack::torus();
    let mut switches = t.switches.clone();
    switches.push(Switch {
        incoming: vec![4],
        outgoing: vec![5],
    });
    let bigger = TrainTrack::new(3, switches).unwrap();
    assert_eq!(weight_space_basis(&bigger).dim(), 3);
}

#[test]
fn genus_two_complete_track() {
    let t = TrainTrack::genus_two_complete();
    assert_eq!(t.genus(), 2);
    assert_eq!(t.complementary_regions(), vec![3, 3, 3, 3]);
    assert_eq!(weight_space_basis(&t).dim(), 6);
    let w = WeightVector::from_ints(&G2_POSITIVE);
    assert!(w.is_positive());
    t.check(&w).unwrap();
}

#[test]
fn kernel_basis_satisfies_switches() {
    let t = TrainTrack::genus_two_complete();
    let ws = weight_space_basis(&t);
    for k in 0..ws.dim() {
        let mut c = vec![BigInt::zero(); ws.dim()];
        c[k] = 1.into();
        t.check(&ws.vector(&c)).unwrap();
    }
}

#[test]
fn inconsistent_tracks_rejected() {
    let reuse = TrainTrack::new(
        2,
        vec![Switch {
            incoming: vec![0, 0],
            outgoing: vec![1, 3],
        }],
    );
    assert!(matches!(reuse, Err(TrackError::Inconsistent(_))));
    let missing = TrainTrack::new(
        2,
        vec![Switch {
            incoming: vec![0],
            outgoing: vec![1, 3],
        }],
    );
    assert!(matches!(missing, Err(TrackError::Inconsistent(_))));
    assert!(TrainTrack::new(1, vec![]).is_err());
}

#[test]
fn track_json_round_trip() {
    let t = TrainTrack::genus_two_complete();
    let s = serde_json::to_string(&t).unwrap();
    assert_eq!(TrainTrack::from_json(&s).unwrap(), t);
}

#[test]
fn form_matches_torus_intersection() {
    let t = TrainTrack::torus();
    for (v, w) in [([1, 0], [0, 1]), ([2, 3], [1, 5]), ([4, 1], [1, 4])] {
        let om = symplectic_form(&t, &WeightVector::from_ints(&v), &WeightVector::from_ints(&w)).unwrap();
        let i = v[0] * w[1] - v[1] * w[0];
        assert_eq!(om, BigRational::from_integer(i.into()));
    }
}

#[test]
fn form_nondegenerate_on_genus_two() {
    let t = TrainTrack::genus_two_complete();
    let ws = weight_space_basis(&t);
    let d = ws.dim();
    let e = |k: usize| {
        let mut c = vec![BigInt::zero(); d];
        c[k] = 1.into();
        ws.vector(&c)
    };
    // twice the Gram matrix is integral
    let gram: IMat = (0..d)
        .map(|i| (0..d).map(|j| (symplectic_form(&t, &e(i), &e(j)).unwrap() * BigRational::from_integer(2.into())).to_integer()).collect())
        .collect();
    assert!(!char_poly(&gram).0[0].is_zero());
}

#[test]
fn form_rejects_non_weights() {
    let t = TrainTrack::genus_two_complete();
    let bad = WeightVector::from_ints(&[1; 18]);
    let good = WeightVector::from_ints(&G2_POSITIVE);
    assert!(matches!(symplectic_form(&t, &bad, &good), Err(TrackError::SwitchViolation(_))));
}

#[test]
fn identity_action() {
    let t = TrainTrack::genus_two_complete();
    let id: IMat = (0..18).map(|i| (0..18).map(|j| BigInt::from((i == j) as i64)).collect()).collect();
    let a = action_matrix(&t, &id).unwrap();
    for (i, row) in a.induced.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, BigInt::from((i == j) as i64));
        }
    }
}

#[test]
fn anosov_image_conjugate_to_cat_map() {
    let a = torus_action(&[[2, 1], [1, 1]]);
    let target = m(&[[2, 1], [1, 1]]);
    // search GL(2,ℤ) for P with P·A = target·P
    let mut found = false;
    for p in quads(-2..=2) {
        let pm = m(&[[p[0], p[1]], [p[2], p[3]]]);
        let det = p[0] * p[3] - p[1] * p[2];
        if det.abs() == 1 && mat_mul(&pm, &a.induced) == mat_mul(&target, &pm) {
            found = true;
            break;
        }
    }
    assert!(found, "{:?}", a.induced);
    assert_eq!(a.positivity_power, Some(1));
}

fn quads(r: std::ops::RangeInclusive<i64>) -> Vec<[i64; 4]> {
    let v: Vec<i64> = r.collect();
    let mut out = Vec::new();
    for a in &v {
        for b in &v {
            for c in &v {
                for d in &v {
                    out.push([*a, *b, *c, *d]);
                }
            }
        }
    }
    out
}

#[test]
fn action_rejects_bad_images() {
    let t = TrainTrack::genus_two_complete();
    let mut ones: IMat = (0..18).map(|_| (0..18).map(|_| BigInt::zero()).collect()).collect();
    ones[0][0] = 1.into();
    assert_eq!(action_matrix(&t, &ones).unwrap_err(), TrackError::NotPreserved);
    assert_eq!(action_matrix(&TrainTrack::torus(), &m(&[[1, -1], [0, 1]])).unwrap_err(), TrackError::Negative);
    assert!(matches!(action_matrix(&t, &m(&[[1, 0], [0, 1]])), Err(TrackError::Shape(..))));
}

#[test]
fn cat_map_dilatation() {
    let d = dilatation(&torus_action(&[[2, 1], [1, 1]])).unwrap();
    assert!(d.enclosure.width() < 1e-12);
    assert!(d.enclosure.contains(2.6180339887498949));
    assert!((d.enclosure.mid() - 2.6180339887).abs() < 1e-10);
    assert!(d.enclosure.contains(d.power_estimate));
}

#[test]
fn dilatation_power_rule() {
    let base = dilatation(&torus_action(&[[2, 1], [1, 1]])).unwrap().enclosure.mid();
    for n in [2u32, 3] {
        let a = mat_pow(&m(&[[2, 1], [1, 1]]), n as usize);
        let rows: Vec<[i64; 2]> = a.iter().map(|r| [i64::try_from(&r[0]).unwrap(), i64::try_from(&r[1]).unwrap()]).collect();
        let d = dilatation(&torus_action(&rows)).unwrap();
        assert!((d.enclosure.mid() - base.powi(n as i32)).abs() < 1e-9 * base.powi(n as i32));
        assert!(d.enclosure.contains(d.power_estimate));
    }
}

#[test]
fn permutation_is_not_primitive() {
    let a = torus_action(&[[0, 1], [1, 0]]);
    assert_eq!(a.positivity_power, None);
    assert!(matches!(dilatation(&a), Err(TrackError::NotPrimitive(_))));
}

#[test]
fn torus_pair_proximal_with_positive_limit_set() {
    let a = torus_action(&[[2, 1], [1, 1]]);
    let b = torus_action(&[[1, 1], [1, 2]]);
    let rep = proximality_and_limit_set(&[a, b], 8).unwrap();
    assert!(rep.elements.iter().all(|e| e.proximal && e.gap > 1.0));
    assert!(rep.limit_points.iter().all(|(_, v)| v.iter().all(|x| *x > 0.0)));
    assert!(rep.min_angle_to_complement > 0.1);
    assert!(rep.invariant_subspace_found.iter().all(|(_, f)| !f));
}

#[test]
fn proximality_errors() {
    let a = torus_action(&[[2, 1], [1, 1]]);
    assert_eq!(proximality_and_limit_set(&[a.clone()], 3).unwrap_err(), TrackError::TooFewActions(2));
    let swap = torus_action(&[[0, 1], [1, 0]]);
    assert!(matches!(proximality_and_limit_set(&[a, swap], 2), Err(TrackError::NonProximal { .. })));
}

#[test]
fn single_action_limit_set_is_a_point() {
    let a = m(&[[2, 1], [1, 1]]);
    let v_a = [1.0, (5f64.sqrt() - 1.0) / 2.0];
    for d in [20, 25] {
        for (_, v) in limit_set_sample(&[a.clone()], d) {
            assert!(projective_distance(&v, &v_a) < 1e-8);
        }
    }
}

#[test]
fn lemma_limit_at_thirty() {
    let a = m(&[[2, 1], [1, 1]]);
    let b = m(&[[1, 1], [1, 2]]);
    assert!(lemma_convergence(&a, &b, 30) < 1e-6);
    assert!(lemma_convergence(&a, &b, 2) > lemma_convergence(&a, &b, 10));
}

fn fine(rows: &[[i64; 2]]) -> Dilatation {
    perron_root(&m(rows), 200).unwrap()
}

#[test]
fn nonarith_power_relation() {
    let a = fine(&[[2, 1], [1, 1]]);
    let a2 = fine(&[[5, 3], [3, 2]]);
    let r = nonarith_check(&a, &a2, 1_000_000, 50).unwrap();
    assert_eq!(r.verdict, Verdict::Dependent { p: 2, q: 1, certified: true });
    assert_eq!(r.label, "DEPENDENT(2,1)");
}

#[test]
fn nonarith_equal_traces() {
    let r = nonarith_check(&fine(&[[2, 1], [1, 1]]), &fine(&[[1, 1], [1, 2]]), 1_000_000, 50).unwrap();
    assert_eq!(r.label, "DEPENDENT(1,1)");
}

#[test]
fn nonarith_independent_pair() {
    let r = nonarith_check(&fine(&[[2, 1], [1, 1]]), &fine(&[[5, 2], [2, 1]]), 1_000_000, 50).unwrap();
    assert_eq!(r.verdict, Verdict::IndependentUpTo(1_000_000));
    // oracle: mpmath at 50 digits
    assert!(r.ratio.starts_with("1.83157092390731479599670665133907547163369673145"), "{}", r.ratio);
    assert!(r.ratio_width < 1e-40);
}

#[test]
fn nonarith_wide_enclosure_demands_precision() {
    let a = dilatation(&torus_action(&[[2, 1], [1, 1]])).unwrap();
    let b = dilatation(&torus_action(&[[5, 2], [2, 1]])).unwrap();
    assert_eq!(nonarith_check(&a, &b, 10_000_000, 50).unwrap_err(), TrackError::EnclosureTooWide(10_000_000));
}

#[test]
fn nonarith_requires_expansion() {
    let id = perron_root(&m(&[[1, 1], [0, 1]]), 40);
    assert!(id.is_err());
    let a = fine(&[[2, 1], [1, 1]]);
    let mut low = a.clone();
    low.enclosure.lo = BigRational::from_integer(1.into());
    assert_eq!(nonarith_check(&low, &a, 10, 40).unwrap_err(), TrackError::NotExpanding);
}

fn semigroup_word(word: &[bool]) -> IMat {
    let a = m(&[[2, 1], [1, 1]]);
    let b = m(&[[1, 1], [1, 2]]);
    word.iter().fold(m(&[[1, 0], [0, 1]]), |acc, x| mat_mul(&acc, if *x { &a } else { &b }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn form_is_antisymmetric(v in prop::collection::vec(-9i64..9, 6), w in prop::collection::vec(-9i64..9, 6)) {
        let t = TrainTrack::genus_two_complete();
        let ws = weight_space_basis(&t);
        let v = ws.vector(&v.iter().map(|x| BigInt::from(*x)).collect::<Vec<_>>());
        let w = ws.vector(&w.iter().map(|x| BigInt::from(*x)).collect::<Vec<_>>());
        prop_assert!(symplectic_form(&t, &v, &v).unwrap().is_zero());
        prop_assert_eq!(symplectic_form(&t, &v, &w).unwrap(), -symplectic_form(&t, &w, &v).unwrap());
    }

    #[test]
    fn carried_actions_are_symplectic(word in prop::collection::vec(any::<bool>(), 1..6), v in prop::collection::vec(-20i64..20, 2), w in prop::collection::vec(-20i64..20, 2)) {
        let t = TrainTrack::torus();
        let act = action_matrix(&t, &semigroup_word(&word)).unwrap();
        let apply = |x: &[i64]| {
            let xs: Vec<BigInt> = x.iter().map(|c| BigInt::from(*c)).collect();
            let y: Vec<BigInt> = act.induced.iter().map(|r| r.iter().zip(&xs).map(|(a, b)| a * b).sum()).collect();
            WeightVector { weights: y.into_iter().map(BigRational::from_integer).collect() }
        };
        let (v0, w0) = (WeightVector::from_ints(&v), WeightVector::from_ints(&w));
        prop_assert_eq!(symplectic_form(&t, &apply(&v), &apply(&w)).unwrap(), symplectic_form(&t, &v0, &w0).unwrap());
    }

    #[test]
    fn composition_is_functorial(f in prop::collection::vec(any::<bool>(), 1..5), g in prop::collection::vec(any::<bool>(), 1..5)) {
        let t = TrainTrack::torus();
        let (mf, mg) = (semigroup_word(&f), semigroup_word(&g));
        let fg = action_matrix(&t, &mat_mul(&mf, &mg)).unwrap();
        let prod = mat_mul(&action_matrix(&t, &mf).unwrap().induced, &action_matrix(&t, &mg).unwrap().induced);
        prop_assert_eq!(fg.induced, prod);
    }

    #[test]
    fn enclosure_contains_power_estimate(word in prop::collection::vec(any::<bool>(), 1..5)) {
        let d = dilatation(&action_matrix(&TrainTrack::torus(), &semigroup_word(&word)).unwrap()).unwrap();
        prop_assert!(d.enclosure.width() < 1e-12);
        prop_assert!(d.enclosure.contains(d.power_estimate));
    }
}
