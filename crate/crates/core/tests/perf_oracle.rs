mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use codesign::autodiff::{Tape, VarId};
use codesign::oracle::{self, SchedulePolicy, TileSchedule};
use codesign::perf::{self, AccelMode, BoundKind};
use codesign::space::{DesignPoint, OpCandidate, OpKind, SlotShape};
use common::{op, platform, small_space};

fn random_op(rng: &mut ChaCha8Rng) -> OpCandidate {
    match rng.gen_range(0..3) {
        0 => op(OpKind::Conv1x1, 1, 1.0, (0, 6)),
        1 => op(OpKind::DwConv, [3, 5, 7][rng.gen_range(0..3)], 1.0, (0, 6)),
        _ => op(OpKind::MbConv, [3, 5][rng.gen_range(0..2)], [1.0, 2.0, 4.0, 6.0][rng.gen_range(0..4)], (0, 6)),
    }
}

fn random_shape(rng: &mut ChaCha8Rng) -> SlotShape {
    let hw = rng.gen_range(1..=24);
    SlotShape::new(hw, rng.gen_range(1..=24), rng.gen_range(1..=48), rng.gen_range(1..=48))
}

#[test]
fn smooth_sandwiches_discrete() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let o = random_op(&mut rng);
        let sh = random_shape(&mut rng);
        let bits = [4, 8, 16][rng.gen_range(0..3)];
        let pf = rng.gen_range(0..=6);
        let mut p = platform(rng.gen_range(0.25..32.0), rng.gen_range(0..50), AccelMode::Recursive);
        p.smooth_sharpness = rng.gen_range(0.5..4.0);
        let d = perf::op_cycles_discrete(&o, &sh, bits, pf, &p).unwrap().cycles as f64;
        let s = perf::op_cycles_smooth(&o, &sh, bits, pf as f64, &p);
        let slack = p.smooth_sharpness * std::f64::consts::LN_2;
        assert!(s <= d + slack + 1e-9 && s >= d - 1.0 - slack - 1e-9, "{o:?} {sh:?} q{bits} pf{pf}: {s} vs {d}");
    }
}

#[test]
fn cycles_monotone_in_pf_and_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = platform(4.0, 10, AccelMode::Recursive);
    for _ in 0..300 {
        let o = random_op(&mut rng);
        let sh = random_shape(&mut rng);
        let bits = [4, 8, 16][rng.gen_range(0..3)];
        let pf = rng.gen_range(0..6);
        let a = perf::op_cycles_discrete(&o, &sh, bits, pf, &p).unwrap().cycles;
        let b = perf::op_cycles_discrete(&o, &sh, bits, pf + 1, &p).unwrap().cycles;
        assert!(b <= a);
        let ra = perf::op_resources(&o, &sh, bits, pf as f64, &p).unwrap();
        let rb = perf::op_resources(&o, &sh, bits, (pf + 1) as f64, &p).unwrap();
        assert!(rb.dsp >= ra.dsp);
        if bits > 4 {
            let lower = perf::op_cycles_discrete(&o, &sh, bits / 2, pf, &p).unwrap().cycles;
            assert!(lower <= a);
        }
    }
}

#[test]
fn smooth_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-4;
    for case in 0..150 {
        let o = random_op(&mut rng);
        let sh = random_shape(&mut rng);
        let bits = [4, 8, 16][rng.gen_range(0..3)];
        let p = platform(rng.gen_range(0.5..16.0), 0, AccelMode::Recursive);
        let pf = rng.gen_range(0.2..5.8);
        let mut tape = Tape::new();
        let x = tape.var(VarId(0), pf);
        let y = perf::op_cycles_smooth_node(&mut tape, &o, &sh, bits, x, &p);
        assert!((tape.value(y) - perf::op_cycles_smooth(&o, &sh, bits, pf, &p)).abs() < 1e-9);
        let g = tape.grad(y, &[VarId(0)]).unwrap()[&VarId(0)];
        let fd = (perf::op_cycles_smooth(&o, &sh, bits, pf + h, &p) - perf::op_cycles_smooth(&o, &sh, bits, pf - h, &p)) / (2.0 * h);
        let scale = g.abs().max(fd.abs()).max(1e-6);
        assert!((g - fd).abs() / scale < 1e-4, "case {case}: {g} vs {fd}");
    }
}

#[test]
fn compute_term_gradient_example() {
    // d/dpf of 16384 / (2 * 2^pf) at pf = 4
    let o = op(OpKind::Conv1x1, 1, 1.0, (0, 8));
    let sh = SlotShape::new(8, 8, 16, 16);
    let p = platform(1e12, 0, AccelMode::Recursive);
    let mut tape = Tape::new();
    let x = tape.var(VarId(0), 4.0);
    let y = perf::op_cycles_smooth_node(&mut tape, &o, &sh, 8, x, &p);
    let g = tape.grad(y, &[VarId(0)]).unwrap()[&VarId(0)];
    let expect = -std::f64::consts::LN_2 * 16384.0 / 32.0;
    assert!((g - expect).abs() < 1e-3, "{g}");
}

#[test]
fn two_slot_network_sums_and_converts() {
    let space = codesign::space::parse_space_str(
        r#"
[space]
num_blocks = 2
ops_per_block = 2
quant_choices = 1
quant_bits = [8]
replications = [2]
channel_choices = [[16], [16]]
input_shape = [8, 8, 16]
num_classes = 2

[[space.bundles]]
id = "c"
ops = [{ kind = "conv1x1", allowed_quant_bits = [8], pf_range = [4, 4] }]
"#,
        false,
    )
    .unwrap();
    let point = DesignPoint {
        bundle_id: "c".into(),
        replications: 2,
        op_choice: vec![0, 0],
        channels: vec![16, 16],
        pools: Default::default(),
        quant_bits: vec![8, 8],
        pf: vec![4, 4],
    };
    let mut p = platform(1e12, 0, AccelMode::Recursive);
    p.dsp_per_lane = [(8, 0.5)].into_iter().collect();
    let r = perf::evaluate(&point, &space, &p).unwrap();
    assert_eq!(r.per_op_cycles, vec![512, 512]);
    assert_eq!(r.total_cycles, 1024);
    assert!((r.latency_ms - 0.01024).abs() < 1e-15);
    assert_eq!(r.per_op_bound, vec![BoundKind::Compute; 2]);
    // one shared IP instance in recursive mode
    assert_eq!(r.resources.dsp, 8.0);

    p.accel_mode = AccelMode::Pipelined;
    let r = perf::evaluate(&point, &space, &p).unwrap();
    assert!((r.throughput_fps.unwrap() - 195_312.5).abs() < 1e-6);
    assert_eq!(r.resources.dsp, 16.0);
}

#[test]
fn identity_network_costs_only_overhead() {
    let space = small_space();
    let mut point = space.default_point();
    let id = space.identity_index();
    point.op_choice = vec![id; point.op_choice.len()];
    let cands = space.candidates(&point.bundle_id).unwrap();
    point.quant_bits = vec![cands[id].allowed_quant_bits[0]; point.op_choice.len()];
    point.pf = vec![cands[id].pf_range.min; point.op_choice.len()];
    let p = platform(4.0, 7, AccelMode::Recursive);
    let (report, _) = oracle::crosscheck(&point, &space, &p, &SchedulePolicy::from_platform(&p), 0.0).unwrap();
    let n = point.replications as u64;
    assert_eq!(report.analytical_total, 7 * n);
    assert_eq!(report.simulated_total, 7 * n);
    let p0 = platform(4.0, 0, AccelMode::Recursive);
    assert_eq!(perf::evaluate(&point, &space, &p0).unwrap().latency_ms, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn oracle_conserves_macs_and_weights(seed in any::<u64>(), th in 1u32..20, tw in 1u32..20, tc in 1u32..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = random_op(&mut rng);
        let sh = random_shape(&mut rng);
        let bits = [4, 8, 16][rng.gen_range(0..3)];
        let p = platform(rng.gen_range(0.5..8.0), 3, AccelMode::Recursive);
        let lanes = perf::lanes(rng.gen_range(0..6), bits);
        let a = oracle::simulate_op(&o, &sh, bits, &TileSchedule { tile_h: th, tile_w: tw, tile_c: tc, lanes }, &p).unwrap();
        let whole = TileSchedule { tile_h: sh.h, tile_w: sh.w, tile_c: 1 << 16, lanes };
        let b = oracle::simulate_op(&o, &sh, bits, &whole, &p).unwrap();
        prop_assert_eq!(a.macs_executed, perf::op_macs(&o, &sh));
        prop_assert_eq!(a.macs_executed, b.macs_executed);
        prop_assert_eq!(a.weight_bits_moved, b.weight_bits_moved);
        prop_assert_eq!(a.bits_moved, perf::op_traffic_bits(&o, &sh, bits));
        // the single whole-map tile is the analytical model
        prop_assert_eq!(b.cycles, perf::op_cycles_discrete(&o, &sh, bits, lanes_to_pf(lanes, bits), &p).unwrap().cycles);
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = random_op(&mut rng);
        let sh = random_shape(&mut rng);
        let p = platform(2.0, 1, AccelMode::Recursive);
        let s = SchedulePolicy::LargestFit { buffer_kbit: 8.0 }.schedule(&o, &sh, 8, 2);
        prop_assert_eq!(
            oracle::simulate_op(&o, &sh, 8, &s, &p).unwrap(),
            oracle::simulate_op(&o, &sh, 8, &s, &p).unwrap()
        );
    }
}

fn lanes_to_pf(lanes: u64, bits: u32) -> u32 {
    (lanes / perf::pack(bits)).trailing_zeros()
}
