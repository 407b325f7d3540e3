use lossland::activation::ActivationKind;
use lossland::channels::detect_channels;
use lossland::data::*;
use lossland::flow::*;
use lossland::net::*;
use std::time::Instant;

fn main() {
    let cfg = FlowConfig {
        solver: SolverKind::Rosenbrock23Adaptive,
        reltol: 3e-3,
        grad_tol: 1e-10, maxnorm: 1e3, max_steps: 20_000, patience: 2_500,
        record_every: 100, ..FlowConfig::default()
    };
    for s in [0.1, 10.0] {
        let spec = TargetSpec::gp_2d_grid(s, 20, 4242);
        let data = build_dataset(&spec).unwrap();
        let arch = ArchDescriptor::new(vec![2, 8, 1], ActivationKind::Softplus, true);
        let mut channels = 0; let mut steps_sum = 0; let mut stops = std::collections::HashMap::new();
        let t0 = Instant::now();
        for seed in 0..10u64 {
            let net = glorot_normal_init(&arch, derive_seed(4242, SeedStream::Init, seed));
            let mut sys = MseSystem::new(&arch, &data);
            match integrate_with_retry(&mut sys, &net.flatten(), &cfg) {
                Ok(res) => {
                    let fin = NetworkParams::from_flat(&arch, &res.final_theta).unwrap();
                    if detect_channels(&fin, 1e3, 0.01).is_channel { channels += 1; }
                    steps_sum += res.accepted_steps;
                    *stops.entry(format!("{:?}", res.stop_reason)).or_insert(0) += 1;
                }
                Err(e) => { *stops.entry(format!("err {e}")).or_insert(0) += 1; }
            }
        }
        println!("GP s={s}: channels {channels}/10 steps_avg={} stops {stops:?} total {:.1?}", steps_sum/10, t0.elapsed());
    }
}
