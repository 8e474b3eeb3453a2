//! Central finite differences of the full objective.

use fucrt_core::losses::{cross_entropy_from_logits, global_contrastive, local_contrastive};
use fucrt_core::nn::{backward, forward, init_params};
use fucrt_core::{Dims, LossConfig, Matrix, ModelParams, PrototypeBank};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line forward pass: every layer's pre-activation, the representation
/// and the logits for one sample.
pub fn scalar_forward(params: &ModelParams, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let depth = params.encoder_depth();
    let mut h = x.to_vec();
    let mut pres = Vec::new();
    let mut rep = Vec::new();
    for (l, layer) in params.layers().iter().enumerate() {
        let mut z = vec![0.0; layer.out_dim];
        for o in 0..layer.out_dim {
            let mut s = layer.bias[o];
            for i in 0..layer.in_dim {
                s += layer.weights[o * layer.in_dim + i] * h[i];
            }
            z[o] = s;
        }
        pres.push(z.clone());
        h = if l + 1 < depth {
            z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
        } else {
            z
        };
        if l + 1 == depth {
            rep = h.clone();
        }
    }
    (pres, rep, h)
}

/// Total objective recomputed from the forward pass and the public loss functions.
pub fn objective(
    params: &ModelParams,
    batch: &Matrix,
    labels: &[usize],
    cfg: &LossConfig,
    bank: &PrototypeBank,
) -> f64 {
    let out = forward(params, batch).unwrap();
    let mut total = cross_entropy_from_logits(&out.logits, labels);
    if cfg.lambda_local > 0.0 {
        total += cfg.lambda_local
            * local_contrastive(&out.representations, labels, cfg.temperature).unwrap();
    }
    if cfg.lambda_global > 0.0 {
        total += cfg.lambda_global
            * global_contrastive(&out.representations, labels, bank, cfg.temperature)
                .unwrap()
                .value;
    }
    total
}

pub struct Instance {
    pub params: ModelParams,
    pub batch: Matrix,
    pub labels: Vec<usize>,
    pub cfg: LossConfig,
    pub bank: PrototypeBank,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    loop {
        let input = rng.random_range(2..=4);
        let hidden: Vec<usize> = (0..rng.random_range(0..=2))
            .map(|_| rng.random_range(2..=5))
            .collect();
        let rep = rng.random_range(2..=4);
        let classes = rng.random_range(2..=4);
        let dims = Dims::new(input, hidden, rep, classes);
        let params = init_params(&dims, rng.random()).unwrap();
        let n = rng.random_range(2..=6);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..input).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        // stay away from ReLU kinks and near-zero representations, where finite
        // differences are not meaningful
        let near_kink = rows.iter().any(|x| {
            let (pres, rep, _) = scalar_forward(&params, x);
            let hidden_pres = &pres[..params.encoder_depth() - 1];
            hidden_pres.iter().flatten().any(|z| z.abs() < 1e-3)
                || rep.iter().map(|v| v * v).sum::<f64>() < 1e-4
        });
        if near_kink {
            continue;
        }
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mut bank = PrototypeBank::empty(classes, rep);
        for c in 0..classes {
            if rng.random_bool(0.85) {
                let v: Vec<f64> = (0..rep).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                bank.set(c, &v.iter().map(|x| x / norm).collect::<Vec<_>>());
            }
        }
        let cfg = LossConfig::new(
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..2.0),
            rng.random_range(0.3..2.0),
        )
        .unwrap();
        return Instance {
            params,
            batch: Matrix::from_rows(&rows).unwrap(),
            labels,
            cfg,
            bank,
        };
    }
}

/// Worst relative gap between analytic and central-difference gradients over
/// `instances` random networks. Magnitudes below 1e-4 are compared absolutely.
pub fn max_relative_error(instances: usize, seed: u64) -> f64 {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng);
        let (breakdown, grads) = backward(
            &inst.params,
            &inst.batch,
            &inst.labels,
            &inst.cfg,
            Some(&inst.bank),
        )
        .unwrap();
        let reference = objective(
            &inst.params,
            &inst.batch,
            &inst.labels,
            &inst.cfg,
            &inst.bank,
        );
        assert!((breakdown.total - reference).abs() < 1e-10);

        for l in 0..inst.params.layers().len() {
            let len_w = inst.params.layers()[l].weights.len();
            let len_b = inst.params.layers()[l].bias.len();
            for idx in 0..len_w + len_b {
                let bump = |delta: f64| {
                    let mut p = inst.params.clone();
                    let layer = &mut p.layers_mut()[l];
                    if idx < len_w {
                        layer.weights[idx] += delta;
                    } else {
                        layer.bias[idx - len_w] += delta;
                    }
                    objective(&p, &inst.batch, &inst.labels, &inst.cfg, &inst.bank)
                };
                let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                let g = &grads.layers[l];
                let analytic = if idx < len_w {
                    g.weights[idx]
                } else {
                    g.bias[idx - len_w]
                };
                let scale = analytic.abs().max(numeric.abs()).max(1e-4);
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    worst
}
