// Scratch: per-iteration CEGIS trace on a model.
use switchsynth::cegis::{cegis_run, encode_rws, CegisOutcome, SolverConfig};
use switchsynth::model::compute_jq;
use switchsynth::modelfile::load_model;

fn main() {
    let path = std::env::args().nth(1).expect("model path");
    let text = std::fs::read_to_string(path).unwrap();
    let mut model = load_model(&text).unwrap();
    model.params.max_iterations = 60;
    let config = SolverConfig::default();
    let jq = compute_jq(
        &model.sys,
        &model.spec.safe,
        &model.spec.enclosure,
        model.params.delta_sat_precision,
        &config.icp,
    );
    println!("jq: {jq:?}");
    let template = model.template.clone().unwrap();
    let enc = encode_rws(&model.sys, &model.spec, &template, &model.params, &jq).unwrap();
    println!(
        "implications: {} bodies: {:?}",
        enc.implications.len(),
        enc.implications.iter().map(|i| i.body.len()).collect::<Vec<_>>()
    );
    let (outcome, log) = cegis_run(&model.sys, &model.spec, &enc, &model.params, &config).unwrap();
    for (i, rec) in log.iterations.iter().enumerate() {
        println!(
            "iter {:3}: candidate {:?} witness {:?} spurious {} delta {:.1e}",
            i + 1,
            rec.candidate.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            rec.witness.as_ref().map(|w| w
                .iter()
                .map(|v| (v * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()),
            rec.spurious,
            rec.delta
        );
    }
    match outcome {
        CegisOutcome::Found { iterations, .. } => println!("FOUND after {iterations}"),
        CegisOutcome::NoSolution { iterations, .. } => println!("NO SOLUTION after {iterations}"),
        CegisOutcome::IterationBudget { iterations } => println!("BUDGET after {iterations}"),
    }
}
