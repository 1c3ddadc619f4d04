use dualstudent::analysis::{ema_convergence_check, prediction_distance};
use dualstudent::data::{domain_shift, make_ssl_split, two_moons, AugmentPolicy, BatchSampler};
use dualstudent::models::{
    checkpoint_from_str, checkpoint_to_string, ema_update, forward, init_params, weight_distance, MlpSpec, Mode,
};
use dualstudent::numcore::{cosine_lr, Graph, RngState, Tensor};
use dualstudent::ssl::{
    stability_records, stabilization_loss, stable_flag, total_loss, StabilityRecord,
};
use proptest::prelude::*;

fn tensor(rows: usize, cols: usize, vals: &[f64]) -> Tensor {
    Tensor::new(vec![rows, cols], vals[..rows * cols].to_vec()).unwrap()
}

fn prob_row() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 2..5).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn spec() -> MlpSpec {
    MlpSpec::new(vec![2, 5, 3])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_a_simplex(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(tensor(4, 3, &vals));
        let p = g.softmax(x).unwrap();
        let p = g.value(p);
        for r in 0..4 {
            let row = p.row(r);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_lr_nonnegative_and_nonincreasing(n in 1usize..500, gamma0 in 0.0f64..1.0) {
        let mut prev = f64::INFINITY;
        for t in 1..=n + 1 {
            let lr = cosine_lr(t, n, gamma0);
            prop_assert!(lr >= 0.0);
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn detach_blocks_gradient(vals in prop::collection::vec(-2.0f64..2.0, 12)) {
        let mut g = Graph::new();
        let a = g.param(&tensor(4, 3, &vals));
        let h = g.leaky_relu(a, 0.1);
        let d = g.detach(h);
        let s = g.scale(d, 3.0);
        let l = g.sum(s);
        g.backward(l).unwrap();
        let grad = g.grad(a).map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; 12]);
        prop_assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_program_same_stream_is_bitwise_identical(seed in any::<u64>(), vals in prop::collection::vec(-2.0f64..2.0, 8)) {
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(tensor(4, 2, &vals));
            let mut rng = RngState::new(seed);
            let n = g.gaussian_noise(x, 0.3, &mut rng);
            let d = g.dropout(n, 0.4, &mut rng, true);
            g.value(d).values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn forward_is_a_simplex(seed in any::<u64>(), vals in prop::collection::vec(-5.0f64..5.0, 10)) {
        let s = MlpSpec { dropout_p: 0.3, input_noise_std: 0.2, ..spec() };
        let p = init_params(&s, &mut RngState::new(seed)).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let out = forward(&p, &s, &tensor(5, 2, &vals), mode, &mut RngState::new(seed ^ 1)).unwrap();
            for r in 0..5 {
                prop_assert!(out.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!((out.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ema_update_stays_between_old_and_student(a in any::<u64>(), b in any::<u64>(), alpha in 0.0f64..=1.0) {
        let old = init_params(&spec(), &mut RngState::new(a)).unwrap();
        let student = init_params(&spec(), &mut RngState::new(b)).unwrap();
        let mut teacher = old.clone();
        ema_update(&mut teacher, &student, alpha).unwrap();
        for ((t, o), s) in teacher.flat().zip(old.flat()).zip(student.flat()) {
            let (lo, hi) = if o < s { (o, s) } else { (s, o) };
            prop_assert!(lo <= t && t <= hi, "{t} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn weight_distance_is_a_metric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let [pa, pb, pc] = [a, b, c].map(|s| init_params(&spec(), &mut RngState::new(s)).unwrap());
        let ab = weight_distance(&pa, &pb).unwrap();
        prop_assert_eq!(weight_distance(&pa, &pa).unwrap(), 0.0);
        prop_assert_eq!(ab, weight_distance(&pb, &pa).unwrap());
        prop_assert!(ab <= weight_distance(&pa, &pc).unwrap() + weight_distance(&pc, &pb).unwrap() + 1e-12);
    }

    #[test]
    fn prediction_distance_is_a_metric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let ds = two_moons(40, 0.1, &mut RngState::new(a ^ b)).unwrap();
        let s = spec();
        let [pa, pb, pc] = [a, b, c].map(|k| init_params(&s, &mut RngState::new(k)).unwrap());
        let d = |x, y| prediction_distance(x, &s, y, &s, &ds).unwrap();
        prop_assert_eq!(d(&pa, &pa), 0.0);
        prop_assert_eq!(d(&pa, &pb), d(&pb, &pa));
        prop_assert!(d(&pa, &pb) <= d(&pa, &pc) + d(&pc, &pb) + 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>()) {
        let s = spec();
        let p = init_params(&s, &mut RngState::new(seed)).unwrap();
        let (s2, p2) = checkpoint_from_str(&checkpoint_to_string(&s, &p)).unwrap();
        prop_assert_eq!(s2, s);
        prop_assert!(p.flat().zip(p2.flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn stable_flag_is_symmetric_in_views((a, b) in (2usize..5).prop_flat_map(|k| (
        prop::collection::vec(0.01f64..1.0, k), prop::collection::vec(0.01f64..1.0, k))),
        xi in 0.0f64..1.0)
    {
        prop_assert_eq!(stable_flag(&a, &b, xi), stable_flag(&b, &a, xi));
    }

    #[test]
    fn raising_xi_never_creates_stability(a in prob_row(), noise in prop::collection::vec(-0.2f64..0.2, 5),
        lo in 0.0f64..1.0, hi in 0.0f64..1.0)
    {
        let (lo, hi) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let b: Vec<f64> = a.iter().zip(&noise).map(|(p, n)| (p + n).max(0.0)).collect();
        if stable_flag(&a, &b, hi) {
            prop_assert!(stable_flag(&a, &b, lo));
        }
    }

    #[test]
    fn at_most_one_student_is_constrained_when_both_stable(rows in prop::collection::vec((prob_row(), prob_row(), prob_row(), prob_row()), 1..6)) {
        let k = rows.iter().map(|r| r.0.len().min(r.1.len()).min(r.2.len()).min(r.3.len())).min().unwrap();
        let flat = |sel: &dyn Fn(&(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
            let v: Vec<f64> = rows.iter().flat_map(|r| sel(r)[..k].to_vec()).collect();
            Tensor::new(vec![rows.len(), k], v).unwrap()
        };
        let (ix, ixb, jx, jxb) = (flat(&|r| &r.0), flat(&|r| &r.1), flat(&|r| &r.2), flat(&|r| &r.3));
        let ri = stability_records(&ix, &ixb, 0.3).unwrap();
        let rj = stability_records(&jx, &jxb, 0.3).unwrap();
        let mut g = Graph::new();
        let pi = g.param(&ix);
        let pj = g.param(&jx);
        let per_row = |g: &mut Graph, r: usize| {
            let (a, b) = (ri[r], rj[r]);
            let li = g.select_rows(pi, &[r]).unwrap();
            let lj = g.select_rows(pj, &[r]).unwrap();
            let (si, sj) = stabilization_loss(g, &[a], &[b], li, lj).unwrap();
            (g.value(si).item(), g.value(sj).item())
        };
        for r in 0..rows.len() {
            let (si, sj) = per_row(&mut g, r);
            if ri[r].stable && rj[r].stable {
                prop_assert!(si == 0.0 || sj == 0.0);
            }
            if !ri[r].stable && !rj[r].stable {
                prop_assert!(si == 0.0 && sj == 0.0);
            }
        }
    }

    #[test]
    fn total_loss_decomposes(cls in 0.0f64..5.0, con in 0.0f64..5.0, sta in 0.0f64..5.0,
        l1 in 0.0f64..100.0, l2 in 0.0f64..100.0, ramp in 0.0f64..=1.0)
    {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(cls));
        let n = g.constant(Tensor::scalar(con));
        let s = g.constant(Tensor::scalar(sta));
        let (t, b) = total_loss(&mut g, c, n, s, l1, l2, ramp).unwrap();
        prop_assert!((g.value(t).item() - (cls + l1 * con + l2 * ramp * sta)).abs() < 1e-10);
        prop_assert_eq!(b.total, g.value(t).item());
    }

    #[test]
    fn split_is_balanced(seed in any::<u64>(), m in 10usize..80, k in 0usize..10) {
        let ds = two_moons(m, 0.1, &mut RngState::new(seed)).unwrap();
        let split = make_ssl_split(&ds, k, &mut RngState::new(seed).fork(&[1])).unwrap();
        prop_assert_eq!(split.labeled_count(), k);
        let counts = split.class_counts(true);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn every_unlabeled_row_once_per_epoch(seed in any::<u64>(), m in 12usize..60, k in 1usize..6,
        bs in 3usize..12, lpb in 1usize..3)
    {
        let ds = two_moons(m, 0.1, &mut RngState::new(seed)).unwrap();
        let ds = make_ssl_split(&ds, k, &mut RngState::new(seed).fork(&[1])).unwrap();
        let mut sampler = BatchSampler::new(&ds, bs, lpb, AugmentPolicy::noise(0.1), RngState::new(seed).fork(&[2])).unwrap();
        for epoch in 0..2 {
            let mut seen: Vec<usize> = sampler
                .epoch(&ds, epoch)
                .iter()
                .flat_map(|b| b.unlabeled_rows().into_iter().map(|r| b.indices[r]).collect::<Vec<_>>())
                .collect();
            seen.sort_unstable();
            prop_assert_eq!(&seen, &ds.unlabeled_indices());
        }
    }

    #[test]
    fn domain_shift_preserves_labels_and_inverts(seed in any::<u64>(), rot in -3.0f64..3.0,
        scale in 0.2f64..3.0, tx in -2.0f64..2.0, ty in -2.0f64..2.0)
    {
        let ds = two_moons(30, 0.1, &mut RngState::new(seed)).unwrap();
        let shifted = domain_shift(&ds, rot, scale, [tx, ty]).unwrap();
        prop_assert_eq!(&shifted.labels, &ds.labels);
        let back = domain_shift(&shifted, -rot, 1.0 / scale, [-tx, -ty]).unwrap();
        for (a, b) in back.features.values().iter().zip(ds.features.values()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn generators_are_reproducible(seed in any::<u64>(), m in 2usize..50) {
        let a = two_moons(m, 0.1, &mut RngState::new(seed)).unwrap();
        let b = two_moons(m, 0.1, &mut RngState::new(seed)).unwrap();
        prop_assert!(a.features.values().iter().zip(b.features.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn ema_gap_of_convergent_sequence_settles(ratio in 0.0f64..0.99, alpha in 0.0f64..0.995) {
        let seq: Vec<f64> = (1..=6000).map(|t| ratio.powi(t)).collect();
        let check = ema_convergence_check(&seq, alpha, 1.0, 0.0).unwrap();
        prop_assert!(check.settles_below(1e-2).is_some());
        prop_assert!(check.settles_below(1e-3).is_some());
    }
}

#[test]
fn stability_record_matches_primitives() {
    let r = StabilityRecord::new(&[0.9, 0.1], &[0.6, 0.4], 0.8);
    assert!(r.stable);
    assert!((r.score - 0.18).abs() < 1e-15);
}
