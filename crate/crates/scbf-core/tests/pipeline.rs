//! End-to-end pipeline checks: synthesize on a shipped benchmark, re-check
//! the certificate against the exact kernel, confront the certified bound
//! with Monte Carlo, and round-trip every artifact format.

use scbf_core::config::load_benchmark;
use scbf_core::controller::Controller;
use scbf_core::geometry::build_partition;
use scbf_core::relax::BoundMode;
use scbf_core::synthesis::{synthesize, Barrier, Engine, SynthOptions};
use scbf_core::system::SystemSpec;
use scbf_core::validation::{binomial_bound, check_certificate, simulate};

#[test]
fn convex_benchmark_certifies_and_survives_monte_carlo() {
    let spec = load_benchmark("linear-convex").unwrap();
    let partition = build_partition(&spec, &[10, 10]).unwrap();
    let out = synthesize(&spec, &partition, &SynthOptions::default()).unwrap();
    let barrier = &out.barrier;
    barrier.validate(&partition).unwrap();
    assert!(barrier.p_safe >= 0.90, "p_safe = {}", barrier.p_safe);

    let controller = Controller::new(out.controls.clone(), &spec.control);
    let report = check_certificate(&spec, &partition, barrier, &controller, 64).unwrap();
    assert!(
        report.pass,
        "max sampled slack {} with complaints {:?}",
        report.max_slack, report.complaints
    );

    let mc = simulate(&spec, &partition, &controller, 500, 50, 0);
    let lower = binomial_bound(&mc, 0.95);
    assert!(
        lower >= barrier.p_safe - 0.02,
        "Monte Carlo lower bound {lower} against certified {}",
        barrier.p_safe
    );

    // The certificate and controller survive their CSV forms unchanged.
    let mut cert_csv = Vec::new();
    barrier.write_csv(&mut cert_csv).unwrap();
    let (b, beta_i) = Barrier::read_csv(cert_csv.as_slice()).unwrap();
    assert_eq!(b, barrier.b);
    assert_eq!(beta_i, barrier.beta_i);

    let mut ctrl_csv = Vec::new();
    controller.write_csv(&mut ctrl_csv).unwrap();
    let reread = Controller::read_csv(ctrl_csv.as_slice(), &spec.control).unwrap();
    assert_eq!(reread, controller);
}

fn contractive_1d() -> SystemSpec {
    let text = serde_json::json!({
        "name": "pipeline-1d",
        "dimensions": {"state": 1, "control": 1},
        "dynamics": ["0.6*x1 + 0.3*u1"],
        "noise": {"covariance": [[0.04]]},
        "domain": {"lower": [-1.0], "upper": [1.0]},
        "initial": {"lower": [-0.1], "upper": [0.1]},
        "control": {"lower": [-0.5], "upper": [0.5]},
        "horizon": 30
    });
    scbf_core::config::load_spec(&text.to_string()).unwrap()
}

#[test]
fn relaxation_engine_certificates_hold_under_the_exact_kernel() {
    let spec = contractive_1d();
    let partition = build_partition(&spec, &[8]).unwrap();
    for mode in [BoundMode::Constant, BoundMode::Affine] {
        let opts = SynthOptions {
            engine: Engine::Bounds,
            mode,
            ..SynthOptions::default()
        };
        let out = synthesize(&spec, &partition, &opts).unwrap();
        out.barrier.validate(&partition).unwrap();

        // The relaxation dominates the true kernel, so the certificate must
        // re-check cleanly against exact expectations.
        let controller = Controller::new(out.controls.clone(), &spec.control);
        let report =
            check_certificate(&spec, &partition, &out.barrier, &controller, 32).unwrap();
        assert!(
            report.pass,
            "{mode:?}: max sampled slack {} with complaints {:?}",
            report.max_slack, report.complaints
        );

        let mc = simulate(&spec, &partition, &controller, 300, 30, 11);
        let lower = binomial_bound(&mc, 0.95);
        assert!(
            lower >= out.barrier.p_safe - 0.02,
            "{mode:?}: Monte Carlo lower bound {lower} against certified {}",
            out.barrier.p_safe
        );
    }
}
