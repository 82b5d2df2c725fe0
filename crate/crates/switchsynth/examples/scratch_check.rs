// Scratch: dense-grid oracle for the synthesized poly2d certificate.
use switchsynth::modelfile::load_model;
use switchsynth::symexpr::lie_derivative;

fn main() {
    let text = std::fs::read_to_string("crates/switchsynth/models/poly2d.toml").unwrap();
    let model = load_model(&text).unwrap();
    let cert_text = std::fs::read_to_string("/tmp/poly2d_out/certificate.json").unwrap();
    let cert =
        switchsynth::cegis::Certificate::from_json(&cert_text, &model.sys, &model.spec).unwrap();

    let eps = model.params.epsilon;
    let lambda = model.params.lambda;
    let vdot: Vec<_> = model
        .sys
        .modes
        .iter()
        .map(|m| lie_derivative(&cert.v, &m.field))
        .collect();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_x = (0.0, 0.0);
    let mut violations = 0usize;
    let mut checked = 0usize;
    let res = 0.01;
    let mut x1 = -2.0;
    while x1 <= 2.0 {
        let mut x2 = -2.0;
        while x2 <= 3.0 {
            let x = [x1, x2];
            let in_goal = model.spec.goal.contains(&x, 0.0);
            if !in_goal {
                checked += 1;
                // Best mode margin: max over q of min over atoms of -(value) - eps.
                let mut best = f64::NEG_INFINITY;
                for (q, _) in model.sys.modes.iter().enumerate() {
                    let mut margin = -(vdot[q].eval_point(&x).unwrap()) - eps;
                    for &j in &cert.jq[q] {
                        let p = &model.spec.safe.predicates[j];
                        let pd = cert.pdot[q][j].eval_point(&x).unwrap();
                        let pv = p.eval_point(&x).unwrap();
                        margin = margin.min(-(pd + lambda * pv) - eps);
                    }
                    best = best.max(margin);
                }
                if best < 0.0 {
                    violations += 1;
                }
                if -best > worst {
                    worst = -best;
                }
                if best < -worst {
                    worst_x = (x1, x2);
                }
            }
            x2 += res;
        }
        x1 += res;
    }
    println!("checked {checked} grid points, {violations} violations, worst margin deficit {worst:.3e} near {worst_x:?}");
}
