use osml::autodiff::{ParamSet, Tape, Tensor};
use osml::search::adapt_with;
use osml::tasks::synthetic::{synthetic_hetero_stream, ModeSpec, SyntheticConfig};
use osml::harness::config::StreamConfig;
use osml::tasks::Episode;

fn stream_of(modes: usize, offset: f64) -> (Vec<Episode<f64>>, Vec<String>) {
    let specs = ModeSpec::distinct(modes, offset, 0);
    let cfg = SyntheticConfig::default();
    let eps = synthetic_hetero_stream(&specs, &cfg).unwrap();
    (eps, specs.into_iter().map(|m| m.mode_id).collect())
}

/// Inputs and mode labels of every sample of every task in `eps`.
fn samples(eps: &[&Episode<f64>], ids: &[String]) -> (Tensor<f64>, Vec<usize>) {
    let mut parts = Vec::new();
    let mut labels = Vec::new();
    for ep in eps {
        let m = ids.iter().position(|i| *i == ep.tag).unwrap();
        for split in [&ep.support, &ep.query, &ep.test] {
            parts.push(&split.inputs);
            labels.extend(std::iter::repeat_n(m, split.len()));
        }
    }
    (Tensor::concat_rows(&parts).unwrap(), labels)
}

fn probe_logits(tape: &mut Tape<f64>, p: &osml::autodiff::ParamVars, x: &Tensor<f64>) -> osml::Var {
    let x = tape.leaf(x.clone());
    let z = tape.matmul(x, p["w"]).unwrap();
    tape.add_bias(z, p["b"]).unwrap()
}

#[test]
fn linear_probe_separates_modes() {
    let (eps, ids) = stream_of(3, StreamConfig::default().offset);
    let (train, held): (Vec<(usize, &Episode<f64>)>, Vec<_>) = eps.iter().enumerate().partition(|(i, _)| i % 3 != 0);
    let (xt, yt) = samples(&train.iter().map(|p| p.1).collect::<Vec<_>>(), &ids);
    let (xh, yh) = samples(&held.iter().map(|p| p.1).collect::<Vec<_>>(), &ids);

    let dims = xt.shape()[1];
    let mut init = ParamSet::new();
    init.insert("w", Tensor::zeros(&[dims, ids.len()]));
    init.insert("b", Tensor::zeros(&[ids.len()]));
    let probe = adapt_with(&init, 0.5, 300, |p| {
        let mut tape = Tape::new();
        let vars = p.to_vars(&mut tape);
        let logits = probe_logits(&mut tape, &vars, &xt);
        let loss = tape.cross_entropy(logits, &yt)?;
        ParamSet::from_grads(&vars, &tape.backward(loss)?)
    })
    .unwrap();

    let mut tape = Tape::new();
    let vars = probe.to_vars(&mut tape);
    let logits = probe_logits(&mut tape, &vars, &xh);
    let pred = tape.value(logits).argmax_rows();
    let acc = pred.iter().zip(&yh).filter(|(a, b)| a == b).count() as f64 / yh.len() as f64;
    assert!(acc >= 0.9, "probe accuracy {acc}");
}
