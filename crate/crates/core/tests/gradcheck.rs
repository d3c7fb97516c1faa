//! Analytic gradients against central finite differences (step 1e-5, f64).

use rand::Rng;
use wavemotion::nn::gradcheck::{check_gradients, relative_error};
use wavemotion::nn::{mse, mse_grad, ArchitectureSpec, BatchMasks, Dense, LstmLayer, Matrix, Network};
use wavemotion::rng::{stream, Purpose};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn randomize(net: &mut Network, seed: u64) {
    let mut rng = stream(seed, Purpose::Init);
    for p in net.parameters_mut() {
        p.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-0.5..=0.5));
    }
}

fn batch(batch: usize, steps: usize, seed: u64) -> Vec<Matrix> {
    let mut rng = stream(seed, Purpose::Noise);
    (0..steps).map(|_| Matrix::from_fn(batch, 2, |_, _| rng.random_range(-1.0..1.0))).collect()
}

fn tiny(shortcuts: bool, fc_blocks: usize) -> ArchitectureSpec {
    ArchitectureSpec {
        num_lstm_layers: 2,
        lstm_hidden: 4,
        num_fc_blocks: fc_blocks,
        fc_width: 3,
        dropout_p: 0.3,
        horizon: 5,
        lstm_shortcuts: shortcuts,
        lstm_dropout: true,
    }
}

fn run(arch: &ArchitectureSpec, with_masks: bool) -> f64 {
    let mut net = Network::with_seed(arch, 1).unwrap();
    randomize(&mut net, 2);
    let input = batch(2, 6, 3);
    let target = Matrix::from_fn(2, arch.horizon, |r, c| ((r + 2 * c) as f64).cos());
    let masks = with_masks.then(|| BatchMasks::sample(arch, 2, &mut stream(4, Purpose::TrainDropout)).unwrap());
    let report = check_gradients(&mut net, &input, &target, masks.as_ref(), STEP).unwrap();
    assert_eq!(report.entries.len(), arch.parameter_count());
    let worst = report.worst().unwrap();
    assert!(
        worst.rel_error < TOL,
        "{}[{}]: analytic {} numeric {} (rel {})",
        worst.tensor,
        worst.index,
        worst.analytic,
        worst.numeric,
        worst.rel_error
    );
    report.max_rel_error()
}

#[test]
fn composed_network_with_dropout_and_shortcuts() {
    run(&tiny(true, 2), true);
}

#[test]
fn composed_network_without_shortcuts() {
    run(&tiny(false, 2), true);
}

#[test]
fn composed_network_without_dropout() {
    run(&tiny(true, 2), false);
}

#[test]
fn lstm_stack_with_linear_readout() {
    run(&tiny(true, 0), true);
}

#[test]
fn single_lstm_layer_all_step_outputs() {
    // Loss over the outputs of every step, not only the last one.
    let mut rng = stream(7, Purpose::Init);
    let mut layer = LstmLayer::new(2, 4, &mut rng);
    for m in [&mut layer.w, &mut layer.u, &mut layer.b] {
        m.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-0.5..=0.5));
    }
    let seq = batch(2, 6, 8);
    let loss = |layer: &LstmLayer| -> f64 {
        let (h, _) = layer.forward_batch(&seq, false).unwrap();
        h.iter().enumerate().map(|(t, m)| m.as_slice().iter().map(|v| (t as f64 + 1.0) * v * v).sum::<f64>()).sum()
    };
    let (h, cache) = layer.forward_batch(&seq, true).unwrap();
    let d: Vec<Matrix> = h
        .iter()
        .enumerate()
        .map(|(t, m)| {
            let mut g = m.clone();
            g.scale(2.0 * (t as f64 + 1.0));
            g
        })
        .collect();
    let (grads, d_inputs) = layer.backward(cache.as_ref().unwrap(), &d).unwrap();
    let mut worst: f64 = 0.0;
    for (which, analytic) in [(0, &grads.w), (1, &grads.u), (2, &grads.b)] {
        for i in 0..analytic.len() {
            let probe_at = |delta: f64| {
                let mut probe = layer.clone();
                let t = match which {
                    0 => &mut probe.w,
                    1 => &mut probe.u,
                    _ => &mut probe.b,
                };
                t.as_mut_slice()[i] += delta;
                loss(&probe)
            };
            let plus = probe_at(STEP);
            let minus = probe_at(-STEP);
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.as_slice()[i], numeric));
        }
    }
    // Input gradients too.
    for t in 0..seq.len() {
        for i in 0..seq[t].len() {
            let mut plus_seq = seq.clone();
            plus_seq[t].as_mut_slice()[i] += STEP;
            let mut minus_seq = seq.clone();
            minus_seq[t].as_mut_slice()[i] -= STEP;
            let f = |s: &[Matrix]| -> f64 {
                let (h, _) = layer.forward_batch(s, false).unwrap();
                h.iter().enumerate().map(|(t, m)| m.as_slice().iter().map(|v| (t as f64 + 1.0) * v * v).sum::<f64>()).sum()
            };
            let numeric = (f(&plus_seq) - f(&minus_seq)) / (2.0 * STEP);
            worst = worst.max(relative_error(d_inputs[t].as_slice()[i], numeric));
        }
    }
    assert!(worst < TOL, "worst relative error {worst}");
}

#[test]
fn dense_layer_in_isolation() {
    let mut rng = stream(9, Purpose::Init);
    let dense = Dense::new(4, 3, &mut rng);
    let x = Matrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
    let target = Matrix::from_fn(2, 3, |r, c| (r as f64 - c as f64) * 0.3);
    let pred = dense.forward(&x);
    let (dw, db, _) = dense.backward(&x, &mse_grad(&pred, &target));
    let mut worst: f64 = 0.0;
    for i in 0..dw.len() {
        let mut p = dense.clone();
        p.w.as_mut_slice()[i] += STEP;
        let plus = mse(&p.forward(&x), &target);
        p.w.as_mut_slice()[i] -= 2.0 * STEP;
        let minus = mse(&p.forward(&x), &target);
        worst = worst.max(relative_error(dw.as_slice()[i], (plus - minus) / (2.0 * STEP)));
    }
    for i in 0..db.len() {
        let mut p = dense.clone();
        p.b.as_mut_slice()[i] += STEP;
        let plus = mse(&p.forward(&x), &target);
        p.b.as_mut_slice()[i] -= 2.0 * STEP;
        let minus = mse(&p.forward(&x), &target);
        worst = worst.max(relative_error(db.as_slice()[i], (plus - minus) / (2.0 * STEP)));
    }
    assert!(worst < TOL, "worst relative error {worst}");
}
