//! Property tests over randomly drawn parameters and protocols.

use ctf_sim::device::deadzone::{closed_form_vtn, run_train_deadzone, steady_occupancy};
use ctf_sim::device::{dead_time, vt_of, DeviceState, ModelParams, Storage};
use ctf_sim::extraction::{detect_t_crit, log_grid, t_trap_eq3, GapCurve};
use ctf_sim::protocol::{
    table1_trains, with_intermediate_reads, ExperimentSchedule, Pulse, PulseTrain, DEFAULT_GAP_GRID_S, TABLE1_COUNTS,
};
use ctf_sim::rpu::{coincidence_update, encode, encode_on_stream, systematic_error};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ModelParams> {
    (1e-8f64..1e-5, 1e-5f64..1e-2, 0.5f64..0.99, 0.05f64..0.5, 1.0f64..2.0).prop_map(|(tau, detrap, u_c, a, bo)| {
        ModelParams {
            tau_trap_s: tau,
            tau_detrap_s: detrap,
            u_c,
            a_v: a,
            bo_scale: bo,
            ..ModelParams::analytic_pin()
        }
    })
}

fn train() -> impl Strategy<Value = PulseTrain> {
    (1e-7f64..1e-3, 1u32..300, 0.0f64..1.0, 1.0f64..20.0, proptest::collection::vec(1u32..300, 0..5)).prop_map(
        |(w, n, gap, amp, reads)| {
            let mut reads: Vec<u32> = reads.into_iter().filter(|&r| r <= n).collect();
            reads.sort_unstable();
            reads.dedup();
            PulseTrain::with_reads(Pulse::new(amp, w).unwrap(), n, gap, reads).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_round_trips_through_text(trains in proptest::collection::vec(train(), 1..5)) {
        let s = ExperimentSchedule::from_trains("prop", trains);
        let text = s.to_toml_string().unwrap();
        prop_assert_eq!(ExperimentSchedule::from_toml_str(&text).unwrap(), s);
    }

    #[test]
    fn params_round_trip_through_text(p in params()) {
        prop_assert_eq!(ModelParams::from_toml_str(&p.to_toml_string().unwrap()).unwrap(), p);
    }

    #[test]
    fn stepping_matches_closed_form(p in params(), n in 1u32..400, w in 1e-7f64..1e-4, gap in 1e-8f64..1e-1) {
        let t = PulseTrain::new(Pulse::new(12.5, w).unwrap(), n, gap).unwrap();
        let stepped = run_train_deadzone(&t, &p).final_vt();
        prop_assert!((stepped - closed_form_vtn(n, w, gap, &p)).abs() < 1e-9);
    }

    #[test]
    fn reads_are_monotone_and_start_at_vt0(p in params(), t in train()) {
        let all: Vec<u32> = (0..=t.count()).collect();
        let tr = run_train_deadzone(&with_intermediate_reads(&t, &all).unwrap(), &p);
        prop_assert_eq!(tr.entries()[0], (0, p.vt0_v));
        prop_assert!(tr.entries().windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn gap_recovery_is_monotone(p in params(), ni in 0usize..10) {
        let n = TABLE1_COUNTS[ni];
        let w = 2.5e-3 / f64::from(n);
        let v: Vec<f64> = DEFAULT_GAP_GRID_S.iter().map(|&g| closed_form_vtn(n, w, g, &p)).collect();
        prop_assert!(v.windows(2).all(|x| x[1] <= x[0] + 1e-12), "{:?}", v);
    }

    #[test]
    fn fragmentation_penalty_is_monotone(p in params()) {
        // 10 s is far beyond every sampled de-trapping time
        let v: Vec<f64> = TABLE1_COUNTS.iter().map(|&n| closed_form_vtn(n, 2.5e-3 / f64::from(n), 10.0, &p)).collect();
        prop_assert!(v.windows(2).all(|x| x[1] <= x[0] + 1e-12), "{:?}", v);
    }

    #[test]
    fn ideal_device_conserves_write_time(p in params(), gi in 0usize..9) {
        let ideal = p.ideal();
        let g = DEFAULT_GAP_GRID_S[gi];
        let v1 = closed_form_vtn(1, 2.5e-3, g, &ideal);
        for &n in &TABLE1_COUNTS {
            prop_assert!((closed_form_vtn(n, 2.5e-3 / f64::from(n), g, &ideal) - v1).abs() <= 1e-6);
        }
    }

    #[test]
    fn hard_cutoff_below_steady_dead_time(p in params(), n in 1u32..2000, frac in 0.01f64..1.0, gap in 1e-8f64..1.0) {
        // width as a fraction of the dead time at the steady entry occupancy of that width
        let mut w = frac * dead_time(0.0, &p);
        for _ in 0..50 {
            w = frac * dead_time(steady_occupancy(w, gap, &p), &p);
        }
        prop_assume!(w > 0.0 && w <= dead_time(steady_occupancy(w, gap, &p), &p));
        prop_assert_eq!(closed_form_vtn(n, w, gap, &p), p.vt0_v);
    }

    #[test]
    fn readout_ignores_occupancy(p in params(), t_nv in 0.0f64..1e-2, u1 in 0.0f64..=1.0, u2 in 0.0f64..=1.0) {
        let a = DeviceState::new(u1, Storage::WriteTime { t_nv_s: t_nv }, 0.0);
        let b = DeviceState::new(u2, Storage::WriteTime { t_nv_s: t_nv }, 0.0);
        prop_assert_eq!(vt_of(&a, &p), vt_of(&b, &p));
    }

    #[test]
    fn t_crit_scales_with_time_axis(c in 0.01f64..100.0, ni in 4usize..7) {
        let p = ModelParams::analytic_pin();
        let scaled = ModelParams { tau_detrap_s: p.tau_detrap_s * c, ..p };
        let n = TABLE1_COUNTS[ni];
        let w = 2.5e-3 / f64::from(n);
        let gaps = log_grid(1e-7, 10.0, 4);
        let base = GapCurve::new(n, w, gaps.iter().map(|&g| (g, closed_form_vtn(n, w, g, &p))).collect()).unwrap();
        let stretched = GapCurve::new(n, w, gaps.iter().map(|&g| (g * c, closed_form_vtn(n, w, g * c, &scaled))).collect()).unwrap();
        let (a, b) = (detect_t_crit(&base, 5e-3).unwrap(), detect_t_crit(&stretched, 5e-3).unwrap());
        prop_assert!((b / (a * c) - 1.0).abs() < 0.02, "{} vs {}", b, a * c);
    }

    #[test]
    fn write_time_identity(t_pw in 1e-7f64..1e-2, n in 1u32..10_000, frac in 0.0f64..=1.0) {
        let t_tar = t_pw * f64::from(n);
        let t_nv = frac * t_tar;
        let t_trap = t_trap_eq3(t_pw, t_nv, n).unwrap();
        prop_assert!((t_tar - (t_nv + f64::from(n) * t_trap)).abs() <= 1e-12 * t_tar);
    }

    #[test]
    fn coincidence_is_symmetric(px in 0.0f64..=1.0, pd in 0.0f64..=1.0, n in 1usize..2000, seed in any::<u64>()) {
        let x = encode_on_stream(px, n, seed, 0).unwrap();
        let d = encode_on_stream(pd, n, seed, 1).unwrap();
        prop_assert_eq!(coincidence_update(&x, &d).unwrap(), coincidence_update(&d, &x).unwrap());
    }

    #[test]
    fn encoding_is_deterministic(p in 0.0f64..=1.0, n in 1usize..5000, seed in any::<u64>()) {
        prop_assert_eq!(encode(p, n, seed).unwrap().to_bytes(), encode(p, n, seed).unwrap().to_bytes());
    }

    #[test]
    fn systematic_error_non_decreasing_in_count(p in params()) {
        let e: Vec<f64> = TABLE1_COUNTS.iter().map(|&n| systematic_error(n, 2.5e-3 / f64::from(n), 10.0, &p)).collect();
        prop_assert!(e.windows(2).all(|x| x[1] >= x[0] - 1e-12), "{:?}", e);
    }
}

#[test]
fn table1_trains_conserve_t_on() {
    for t in table1_trains(2.5e-3, &TABLE1_COUNTS, 10.0).unwrap() {
        assert!((t.t_on_s() - 2.5e-3).abs() < 1e-15);
    }
}
