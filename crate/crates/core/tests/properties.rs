use proptest::prelude::*;

use raterkit::eval::{
    auc_with_density, confusion_at, pbar_counts, pr_curve, rank_detectors, MatchPlan,
    MatchTolerance, Phi, SkewRange, SkewSpec, Thresholds,
};
use raterkit::features::ScalarField;
use raterkit::fusion::{
    fuse_excl_vote, fuse_simple, fuse_staple, fuse_vote, SimpleConfig, StapleConfig,
};
use raterkit::mask::{
    agreement_fraction, agreement_map, smyth_bound, threshold_consensus, AnnotationStack,
    BinaryMask, ConsensusParams, ImageGrid,
};
use raterkit::morph::thin;
use raterkit::raters::{detect_outliers, pairwise_f1, StdForm};
use raterkit::synth::{
    derive_seed, make_scene, sample_cohort, true_error, Geometry, RaterProfile, SceneSpec,
};

fn grid(w: usize, h: usize) -> ImageGrid {
    ImageGrid::new(w, h).unwrap()
}

fn mask(w: usize, h: usize, bits: &[bool]) -> BinaryMask {
    BinaryMask::from_vec(grid(w, h), bits.iter().map(|&b| b as u8).collect()).unwrap()
}

fn stack_of(w: usize, h: usize, masks: &[Vec<bool>]) -> AnnotationStack {
    AnnotationStack::from_masks(
        masks
            .iter()
            .enumerate()
            .map(|(k, m)| (format!("r{k}"), mask(w, h, m))),
    )
    .unwrap()
}

fn permuted(w: usize, h: usize, masks: &[Vec<bool>], order: &[usize]) -> AnnotationStack {
    AnnotationStack::from_masks(
        order
            .iter()
            .map(|&k| (format!("r{k}"), mask(w, h, &masks[k]))),
    )
    .unwrap()
}

/// `(width, height, masks)`.
type Masks = (usize, usize, Vec<Vec<bool>>);

/// Stacks of 2..=5 annotators.
fn stacks() -> impl Strategy<Value = Masks> {
    (2usize..7, 2usize..7, 2usize..6).prop_flat_map(|(w, h, n)| {
        (
            Just(w),
            Just(h),
            prop::collection::vec(prop::collection::vec(any::<bool>(), w * h), n),
        )
    })
}

fn stack_with_order() -> impl Strategy<Value = (Masks, Vec<usize>)> {
    stacks().prop_flat_map(|s| {
        let n = s.2.len();
        (Just(s), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}

fn skews() -> impl Strategy<Value = SkewRange> {
    (
        0.0f64..0.9,
        0.01f64..1.0,
        prop_oneof![Just(0.001), Just(1.0), Just(1000.0), 0.01f64..100.0],
    )
        .prop_map(|(a, width, phi)| {
            let pi2 = (a + width * (1.0 - a)).max(a + 1e-3).min(1.0);
            SkewRange::new(a, pi2, phi).unwrap()
        })
}

fn field(w: usize, h: usize, v: &[f64]) -> ScalarField {
    ScalarField::new(grid(w, h), v.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn agreement_fraction_never_increases((w, h, masks) in stacks()) {
        let a = agreement_map(&stack_of(w, h, &masks));
        prop_assume!(a.counts().iter().any(|&c| c > 0));
        let mut prev = 1.0;
        for n in 1..=masks.len() {
            let f = agreement_fraction(&a, n).unwrap();
            prop_assert!(f <= prev);
            prev = f;
        }
    }

    #[test]
    fn consensus_spans_union_to_intersection((w, h, masks) in stacks(), taus in prop::collection::vec(0.01f64..=1.0, 2)) {
        let s = stack_of(w, h, &masks);
        let a = agreement_map(&s);
        let n = masks.len();
        let union = threshold_consensus(&a, ConsensusParams::new(1.0 / n as f64).unwrap());
        let inter = threshold_consensus(&a, ConsensusParams::new(1.0).unwrap());
        for i in 0..w * h {
            prop_assert_eq!(union.at(i), masks.iter().any(|m| m[i]));
            prop_assert_eq!(inter.at(i), masks.iter().all(|m| m[i]));
        }
        let (lo, hi) = (taus[0].min(taus[1]), taus[0].max(taus[1]));
        let big = threshold_consensus(&a, ConsensusParams::new(lo).unwrap());
        let small = threshold_consensus(&a, ConsensusParams::new(hi).unwrap());
        prop_assert!(small.is_subset_of(&big));
    }

    #[test]
    fn agreement_commutes_with_permutation(((w, h, masks), order) in stack_with_order()) {
        let a = agreement_map(&stack_of(w, h, &masks));
        let b = agreement_map(&permuted(w, h, &masks, &order));
        prop_assert_eq!(a.counts(), b.counts());
        prop_assert_eq!(smyth_bound(&a), smyth_bound(&b));
    }

    #[test]
    fn thinning_is_idempotent_and_shrinks((w, h, masks) in stacks()) {
        let m = mask(w, h, &masks[0]);
        let t = thin(&m);
        prop_assert!(t.is_subset_of(&m));
        prop_assert_eq!(thin(&t), t);
    }

    #[test]
    fn vote_is_monotone_in_any_annotation((w, h, mut masks) in stacks(), tau in 0.01f64..=1.0, who in 0usize..5, px in 0usize..36) {
        let who = who % masks.len();
        let px = px % (w * h);
        let before = fuse_vote(&stack_of(w, h, &masks), tau).unwrap();
        masks[who][px] = true;
        let after = fuse_vote(&stack_of(w, h, &masks), tau).unwrap();
        prop_assert!(before.is_subset_of(&after));
    }

    #[test]
    fn f1_matrix_permutes_with_annotators(((w, h, masks), order) in stack_with_order()) {
        let a = pairwise_f1(&stack_of(w, h, &masks)).unwrap();
        let b = pairwise_f1(&permuted(w, h, &masks, &order)).unwrap();
        for (i, &oi) in order.iter().enumerate() {
            for (j, &oj) in order.iter().enumerate() {
                prop_assert_eq!(b.f1[i][j], a.f1[oi][oj]);
            }
        }
    }

    #[test]
    fn staple_ignores_annotator_order(((w, h, masks), order) in stack_with_order()) {
        let a = stack_of(w, h, &masks);
        let b = permuted(w, h, &masks, &order);
        let cfg = StapleConfig::default();
        let (ra, rb) = match (fuse_staple(&a, &cfg), fuse_staple(&b, &cfg)) {
            (Ok(ra), Ok(rb)) => (ra, rb),
            (Err(_), Err(_)) => return Ok(()),
            _ => return Err(TestCaseError::fail("only one order was accepted")),
        };
        prop_assert_eq!(ra.iterations, rb.iterations);
        for (x, y) in ra.posterior.values().iter().zip(rb.posterior.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for (i, &o) in order.iter().enumerate() {
            prop_assert!((rb.performance.sensitivity[i] - ra.performance.sensitivity[o]).abs() < 1e-9);
            prop_assert!((rb.performance.specificity[i] - ra.performance.specificity[o]).abs() < 1e-9);
        }
        for v in ra.posterior.values() {
            prop_assert!((0.0..=1.0).contains(v));
        }
        for pair in ra.log_likelihood.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-9);
        }
    }

    #[test]
    fn simple_ignores_annotator_order(((w, h, masks), order) in stack_with_order()) {
        let cfg = SimpleConfig::default();
        let ra = fuse_simple(&stack_of(w, h, &masks), &cfg).unwrap();
        let rb = fuse_simple(&permuted(w, h, &masks, &order), &cfg).unwrap();
        prop_assert_eq!(&ra.mask, &rb.mask);
        let mut x = ra.retained.clone();
        let mut y = rb.retained.clone();
        x.sort();
        y.sort();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn unanimous_stacks_fuse_identically(w in 2usize..7, h in 2usize..7, n in 2usize..6, bits in prop::collection::vec(any::<bool>(), 36)) {
        let m = bits[..w * h].to_vec();
        prop_assume!(m.iter().any(|&b| b) && m.iter().any(|&b| !b));
        let s = stack_of(w, h, &vec![m.clone(); n]);
        let expect = mask(w, h, &m);
        prop_assert_eq!(&fuse_vote(&s, 0.5).unwrap(), &expect);
        prop_assert_eq!(&fuse_excl_vote(&s, 0.5, StdForm::Population).unwrap().mask, &expect);
        prop_assert_eq!(&fuse_staple(&s, &StapleConfig::default()).unwrap().ground_truth(), &expect);
        prop_assert_eq!(&fuse_simple(&s, &SimpleConfig::default()).unwrap().mask, &expect);
    }

    #[test]
    fn outliers_need_spread(n in 2usize..9, f in 0.0f64..=1.0) {
        let ids: Vec<String> = (0..n).map(|k| format!("r{k}")).collect();
        let mut m = vec![vec![f; n]; n];
        for (k, row) in m.iter_mut().enumerate() {
            row[k] = 1.0;
        }
        let matrix = raterkit::raters::F1Matrix {
            ids,
            f1: m.clone(),
            precision: m.clone(),
            recall: m,
            degenerate: vec![false; n],
        };
        prop_assert!(detect_outliers(&matrix, StdForm::Population).outliers.is_empty());
    }

    #[test]
    fn pbar_is_monotone(tp in 0.0f64..1e6, fp in 0.0f64..1e6, d in 0.0f64..1e4, skew in skews()) {
        prop_assume!(tp + fp > 0.0);
        let base = pbar_counts(tp, fp, &skew);
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!(pbar_counts(tp, fp + d, &skew) <= base + 1e-12);
        prop_assert!(pbar_counts(tp + d, fp, &skew) >= base - 1e-12);
    }

    #[test]
    fn narrow_skew_range_is_precision(tp in 1.0f64..1e5, fp in 0.0f64..1e5, phi in 0.01f64..100.0) {
        let pi = phi / (1.0 + phi);
        let skew = SkewRange::new(pi - 1e-7, (pi + 1e-7).min(1.0), phi).unwrap();
        let precision = tp / (tp + fp);
        prop_assert!((pbar_counts(tp, fp, &skew) - precision).abs() < 1e-5);
    }

    #[test]
    fn wider_radius_never_loses_true_positives(
        w in 3usize..10, h in 3usize..10,
        gt in prop::collection::vec(any::<bool>(), 100),
        resp in prop::collection::vec(0.0f64..1.0, 100),
        r1 in 0.0f64..3.0, extra in 0.0f64..3.0, theta in 0.0f64..1.0,
    ) {
        let g = mask(w, h, &gt[..w * h]);
        let r = field(w, h, &resp[..w * h]);
        let tol = |r: f64| if r == 0.0 { MatchTolerance::exact() } else { MatchTolerance::lenient(r).unwrap() };
        let a = confusion_at(&r, &g, theta, tol(r1), None).unwrap();
        let b = confusion_at(&r, &g, theta, tol(r1 + extra), None).unwrap();
        prop_assert!(b.tp >= a.tp);
        prop_assert_eq!(a.tp + a.fn_, g.count() as u64);
        prop_assert_eq!(a.fp + a.tn, (w * h - g.count()) as u64);
    }

    #[test]
    fn recall_does_not_depend_on_skew(
        gt in prop::collection::vec(any::<bool>(), 36),
        resp in prop::collection::vec(0.0f64..1.0, 36),
        s1 in skews(), s2 in skews(),
    ) {
        prop_assume!(gt.iter().any(|&b| b));
        let g = mask(6, 6, &gt);
        let r = field(6, 6, &resp);
        let plan = MatchPlan::whole(grid(6, 6), MatchTolerance::exact());
        let a = pr_curve(&r, &g, None, &plan, &s1, Thresholds::default()).unwrap();
        let b = pr_curve(&r, &g, None, &plan, &s2, Thresholds::default()).unwrap();
        let ra: Vec<f64> = a.points.iter().map(|p| p.recall).collect();
        let rb: Vec<f64> = b.points.iter().map(|p| p.recall).collect();
        prop_assert_eq!(ra, rb);
        prop_assert!((0.0..=1.0).contains(&a.auc));
        for p in &a.points {
            prop_assert!((0.0..=1.0).contains(&p.pbar));
        }
        for pair in a.points.windows(2) {
            prop_assert!(pair[0].theta >= pair[1].theta && pair[0].recall <= pair[1].recall);
        }
    }

    #[test]
    fn ranking_ignores_detector_order(
        resp in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 25), 2..5),
        gts in prop::collection::vec(prop::collection::vec(any::<bool>(), 25), 1..4),
    ) {
        prop_assume!(gts.iter().all(|g| g.iter().any(|&b| b) && g.iter().any(|&b| !b)));
        let named: Vec<(String, ScalarField)> =
            resp.iter().enumerate().map(|(k, r)| (format!("d{k}"), field(5, 5, r))).collect();
        let gt: Vec<(String, BinaryMask)> =
            gts.iter().enumerate().map(|(k, g)| (format!("g{k}"), mask(5, 5, g))).collect();
        let plan = MatchPlan::whole(grid(5, 5), MatchTolerance::exact());
        let spec = SkewSpec { pi1: 0.1, pi2: 0.5, phi: Phi::Dataset };
        let a = rank_detectors(&named, &gt, None, &plan, &spec, Thresholds::default()).unwrap();
        let mut reversed = named.clone();
        reversed.reverse();
        let b = rank_detectors(&reversed, &gt, None, &plan, &spec, Thresholds::default()).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

#[test]
fn auc_is_stable_under_doubled_density() {
    let scene = make_scene(&SceneSpec::new(Geometry::Areal, 64, 64, 11)).unwrap();
    let resp = raterkit::synth::noisy_detector(&scene.gold, 0, 1.5, 0.2, 5).unwrap();
    let plan = MatchPlan::whole(scene.gold.grid(), MatchTolerance::exact());
    for (pi1, pi2) in [(0.1, 0.5), (0.01, 0.1), (0.0, 1.0)] {
        let skew = SkewSpec {
            pi1,
            pi2,
            phi: Phi::Dataset,
        }
        .resolve(
            scene.gold.count() as u64,
            (64 * 64 - scene.gold.count()) as u64,
        )
        .unwrap();
        let curve = pr_curve(
            &resp,
            &scene.gold,
            None,
            &plan,
            &skew,
            Thresholds::default(),
        )
        .unwrap();
        let doubled = auc_with_density(&curve.points, curve.positives, &skew, 40);
        assert!(
            (curve.auc - doubled).abs() < 1e-4,
            "{} vs {doubled}",
            curve.auc
        );
    }
}

#[test]
fn smyth_bound_never_exceeds_true_error() {
    for seed in 0..40u64 {
        let geometry = if seed % 2 == 0 {
            Geometry::Areal
        } else {
            Geometry::Linear
        };
        let scene = make_scene(&SceneSpec::new(geometry, 48, 48, seed)).unwrap();
        let profiles: Vec<RaterProfile> = (0..5)
            .map(|j| {
                let p = 0.6 + 0.08 * j as f64;
                RaterProfile::new(
                    p,
                    0.95 + 0.01 * j as f64,
                    (j as i32 % 3) - 1,
                    derive_seed(seed, 10 + j),
                )
                .unwrap()
            })
            .collect();
        let stack = sample_cohort(&scene.gold, &profiles, None).unwrap();
        let bound = smyth_bound(&agreement_map(&stack));
        let mean: f64 = stack
            .annotators()
            .iter()
            .map(|a| true_error(&a.mask, &scene.gold, None).unwrap())
            .sum::<f64>()
            / stack.len() as f64;
        assert!(bound <= mean + 1e-12, "seed {seed}: {bound} > {mean}");
    }
}

/// Annotators that each add and remove the same number of pixels, at
/// disjoint places, score identically against the majority vote.
#[test]
fn cohort_without_outliers_fuses_like_the_vote() {
    let scene = make_scene(&SceneSpec::new(Geometry::Areal, 96, 96, 21)).unwrap();
    let gold = &scene.gold;
    let pos: Vec<usize> = (0..gold.grid().len()).filter(|&i| gold.at(i)).collect();
    let neg: Vec<usize> = (0..gold.grid().len()).filter(|&i| !gold.at(i)).collect();
    let (n, k) = (5, 12);
    let masks: Vec<(String, BinaryMask)> = (0..n)
        .map(|j| {
            let mut data = gold.as_slice().to_vec();
            for t in 0..k {
                data[pos[(j * k + t) * 3]] = 0;
                data[neg[(j * k + t) * 7]] = 1;
            }
            (
                format!("A{}", j + 1),
                BinaryMask::from_vec(gold.grid(), data).unwrap(),
            )
        })
        .collect();
    let stack = AnnotationStack::from_masks(masks).unwrap();
    let vote = fuse_vote(&stack, 0.5).unwrap();
    assert_eq!(&vote, gold);
    let simple = fuse_simple(&stack, &SimpleConfig::default()).unwrap();
    assert!(simple.dropped.is_empty(), "{:?}", simple.dropped);
    assert_eq!(simple.mask, vote);
    let excl = fuse_excl_vote(&stack, 0.5, StdForm::Population).unwrap();
    assert!(excl.excluded.is_empty());
    assert_eq!(excl.mask, vote);
}
