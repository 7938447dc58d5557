mod common;

use common::{reference_forward, Rounding};
use lwdd_core::fixed::{QFormat, RoundingStrategy};
use lwdd_core::engine::infer_fxp_traced;
use lwdd_core::nn::{build_lwdd, random_small_model, ModelConfig, Shape};
use lwdd_core::quant::{QuantizedModel, ReductionProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_quantized(config: ModelConfig, n: u32, rng: &mut ChaCha8Rng) -> QuantizedModel {
    let one = 1i64 << n;
    // a mix of full-scale and small weights so some layers saturate
    let scale = if rng.gen_bool(0.5) { one } else { one / 4 };
    let weights = config
        .layers
        .iter()
        .map(|l| (0..l.weight_count()).map(|_| rng.gen_range(-scale..=scale)).collect())
        .collect();
    QuantizedModel {
        profile: ReductionProfile::identity(&config),
        config,
        weights,
        fmt: QFormat::new(n).unwrap(),
        weight_saturations: 0,
    }
}

fn check(qm: &QuantizedModel, img: &[u8]) -> u64 {
    let mut events = 0;
    for (strategy, mode) in [
        (RoundingStrategy::PerOperation, Rounding::PerOperation),
        (RoundingStrategy::AtEnd, Rounding::AtEnd),
    ] {
        let got = infer_fxp_traced(qm, img, strategy).unwrap();
        let (want, want_events) = reference_forward(&qm.config, &qm.weights, img, qm.fmt.frac_bits(), mode);
        for (k, (g, w)) in got.layers.iter().zip(&want).enumerate() {
            assert_eq!(&g.mantissas, w, "layer {k}, {strategy}, N={}", qm.fmt.frac_bits());
        }
        assert_eq!(got.layer_overflows, want_events, "{strategy}");
        events += want_events.iter().sum::<u64>();
    }
    events
}

#[test]
fn engine_matches_reference_on_random_small_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let mut saturating_runs = 0;
    for _ in 0..50 {
        let config = random_small_model(&mut rng);
        let n = rng.gen_range(2..=30);
        let qm = random_quantized(config, n, &mut rng);
        let Shape::Map { height, width, .. } = qm.config.input else { unreachable!() };
        for _ in 0..20 {
            let img: Vec<u8> = (0..height * width).map(|_| rng.gen()).collect();
            if check(&qm, &img) > 0 {
                saturating_runs += 1;
            }
        }
    }
    // the comparison must also have exercised saturation
    assert!(saturating_runs > 0);
}

#[test]
fn engine_matches_reference_on_full_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for n in [8, 16, 30] {
        let qm = random_quantized(build_lwdd(10).unwrap(), n, &mut rng);
        let img: Vec<u8> = (0..784).map(|_| rng.gen()).collect();
        check(&qm, &img);
    }
}
