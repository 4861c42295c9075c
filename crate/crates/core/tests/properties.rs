use num_complex::Complex64;
use proptest::prelude::*;

use tinbc::constellation::{brute_force_min_distance, build_gray_qam, superimpose, LabeledConstellation};
use tinbc::design::feasible_vectors;
use tinbc::link::{hard_decisions, simulate_frame_with, user_llrs, LlrMode, NoiseMode};
use tinbc::rate::{qfunc, qfunc_inv, second_order_rate, SubBlockRateStats};
use tinbc::scheme::{build_layout, map_bits, plan, verify_min_distances, OrderMatrix, SystemSpec, UserSpec};

/// Even orders for every part but the last, so each part nests on a square grid.
fn nestable_orders() -> impl Strategy<Value = Vec<u32>> {
    (prop::collection::vec(prop::sample::select(vec![0u32, 2, 4]), 0..3), 0u32..5).prop_filter_map(
        "total order in 1..=10",
        |(mut head, last)| {
            head.push(last);
            let total: u32 = head.iter().sum();
            (1..=10).contains(&total).then_some(head)
        },
    )
}

fn random_spec() -> impl Strategy<Value = SystemSpec> {
    (1usize..=3)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(1usize..40, k),
                prop::collection::vec(-2.0f64..30.0, k),
                prop::collection::vec(0.0f64..std::f64::consts::TAU, k),
                0.2f64..5.0,
            )
        })
        .prop_map(|(mut lengths, snrs, phases, p)| {
            lengths.sort_unstable();
            let users = lengths
                .iter()
                .zip(&snrs)
                .zip(&phases)
                .enumerate()
                .map(|(i, ((&n, &snr), &phase))| {
                    // Nudge to keep magnitudes distinct.
                    let g = (10f64.powf(snr / 10.0) / p).sqrt() * (1.0 + 1e-6 * i as f64);
                    UserSpec::new(n, 1e-3, Complex64::from_polar(g, phase))
                })
                .collect();
            SystemSpec::new(p, users)
        })
}

/// A feasible order matrix picked from per-sub-block feasible vectors.
fn pick_orders(spec: &SystemSpec, picks: &[usize]) -> OrderMatrix {
    let layout = build_layout(spec).unwrap();
    let vectors: Vec<Vec<u32>> = (0..layout.user_count())
        .map(|j| {
            let options = feasible_vectors(spec, &layout, j).unwrap();
            options[picks[j] % options.len()].clone()
        })
        .collect();
    OrderMatrix::from_sub_blocks(&vectors).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn superposition_is_a_regular_grid(orders in nestable_orders()) {
        let parts: Vec<LabeledConstellation> = orders
            .iter()
            .map(|&m| LabeledConstellation::regular(m).unwrap())
            .collect();
        let s = superimpose(&parts).unwrap();
        let total: u32 = orders.iter().sum();
        prop_assert_eq!(s.len(), 1usize << total);
        prop_assert!((brute_force_min_distance(s.points()) - 1.0).abs() < 1e-9);
        prop_assert!(s.mean().norm() < 1e-12);
        let direct = build_gray_qam(total).unwrap();
        prop_assert!((s.energy() - direct.energy()).abs() < 1e-9);
    }

    #[test]
    fn feasible_plans_keep_power_and_distance(spec in random_spec(), picks in prop::collection::vec(0usize..10_000, 3)) {
        let orders = pick_orders(&spec, &picks);
        let p = plan(&spec, &orders).unwrap();
        let report = verify_min_distances(&p).unwrap();
        prop_assert!(report.all_at_least(1.0 - 1e-9), "{:?}", report);
        for sb in &p.layout.sub_blocks {
            let active = sb.participants.iter().any(|&u| orders.get(u, sb.index) > 0);
            let column: f64 = sb.participants.iter().map(|&u| p.powers[u][sb.index]).sum();
            let expect = if active { spec.total_power } else { 0.0 };
            prop_assert!((column - expect).abs() <= 1e-9 * spec.total_power);
        }
    }

    #[test]
    fn plans_ignore_common_phase(spec in random_spec(), picks in prop::collection::vec(0usize..10_000, 3), phase in 0.0f64..std::f64::consts::TAU) {
        let orders = pick_orders(&spec, &picks);
        let a = plan(&spec, &orders).unwrap();
        let b = plan(&spec.rotated(Complex64::from_polar(1.0, phase)), &orders).unwrap();
        prop_assert_eq!(&a.layout, &b.layout);
        for (ra, rb) in a.powers.iter().zip(&b.powers) {
            for (x, y) in ra.iter().zip(rb) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn zero_noise_demapping_recovers_bits(spec in random_spec(), picks in prop::collection::vec(0usize..10_000, 3), seed in any::<u64>()) {
        let orders = pick_orders(&spec, &picks);
        let p = plan(&spec, &orders).unwrap();
        let payloads = tinbc::link::random_payloads(&p, seed, 0);
        let rx = simulate_frame_with(&p, &payloads, seed, NoiseMode::Silent).unwrap();
        for (u, bits) in payloads.iter().enumerate() {
            let llrs = user_llrs(&rx, u, &p, LlrMode::Exact).unwrap();
            prop_assert_eq!(&hard_decisions(&llrs), bits);
        }
    }

    #[test]
    fn hard_demapping_inverts_mapping(bits in prop::collection::vec(0u8..2, 24)) {
        let spec = SystemSpec::from_snr_db(1.0, &[(6, 1e-3, 20.0)]);
        let p = plan(&spec, &OrderMatrix::from_flat(1, &[4]).unwrap()).unwrap();
        let v = map_bits(&bits, 0, &p).unwrap();
        let q = LabeledConstellation::regular(4).unwrap();
        let mut back = Vec::new();
        for s in v {
            let l = q.nearest(s);
            back.extend((0..4).rev().map(|i| ((l >> i) & 1) as u8));
        }
        prop_assert_eq!(back, bits);
    }

    #[test]
    fn qfunc_inverse_round_trip(e in -25.0f64..-0.302) {
        let p = 10f64.powf(e);
        let x = qfunc_inv(p).unwrap();
        prop_assert!((qfunc(x) - p).abs() <= 1e-12 * p);
    }

    #[test]
    fn rate_is_monotone_in_epsilon(
        i in 0.0f64..6.0,
        v in 0.0f64..10.0,
        n in 1usize..2000,
        e1 in 1e-9f64..0.5,
        e2 in 1e-9f64..0.5,
    ) {
        let s = SubBlockRateStats { mutual_information: i, dispersion: v, ..SubBlockRateStats::zero() };
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = second_order_rate(&[n], &[s], lo, n).unwrap().rate;
        let b = second_order_rate(&[n], &[s], hi, n).unwrap().rate;
        prop_assert!(a <= b + 1e-12);
        prop_assert!(b <= i + 1e-12);
    }
}
