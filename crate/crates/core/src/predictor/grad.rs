//! Analytic backpropagation of `alpha * L_ssl + beta * L_le` for one batch.

use super::{dot, PredictorModel, TrainExample, TrainingConfig};

/// Gradient of the batch objective, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub adapter: Vec<f64>,
    pub mos_weight: Vec<f64>,
    pub mos_bias: f64,
    pub listener_weight: Vec<f64>,
    pub listener_bias: f64,
    pub embeddings: Vec<Vec<f64>>,
}

impl Gradients {
    /// Flattened in the same order as [`PredictorModel::params_mut`].
    pub fn flat(&self, with_listener: bool) -> Vec<f64> {
        let mut out = self.adapter.clone();
        out.extend_from_slice(&self.mos_weight);
        out.push(self.mos_bias);
        if with_listener {
            out.extend_from_slice(&self.listener_weight);
            out.push(self.listener_bias);
            for row in &self.embeddings {
                out.extend_from_slice(row);
            }
        }
        out
    }
}

/// Subgradient of `|x|` with 0 at the kink.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Returns `(L_ssl, L_le)` for the batch; `L_le` is 0 without a listener head.
pub fn batch_losses(model: &PredictorModel, batch: &[&TrainExample]) -> (f64, f64) {
    let (mut ssl, mut le, mut n_ratings) = (0.0, 0.0, 0usize);
    for ex in batch {
        let h = model.adapter.apply(&ex.features);
        ssl += (ex.mos - model.mos_head.apply(&h)).abs();
        if let Some(head) = &model.listener_head {
            for &(l, score) in &ex.ratings {
                le += (score - head.apply(&h, l)).abs();
                n_ratings += 1;
            }
        }
    }
    let le = if n_ratings > 0 {
        le / n_ratings as f64
    } else {
        0.0
    };
    (ssl / batch.len() as f64, le)
}

/// Exact gradients of the batch objective. Embedding rows of listeners not
/// present in the batch receive zero gradient.
pub fn gradients(
    model: &PredictorModel,
    batch: &[&TrainExample],
    cfg: &TrainingConfig,
) -> Gradients {
    let f_dim = model.adapter.input_dim();
    let d_dim = model.adapter.output_dim();
    let (e_dim, n_listeners) = model
        .listener_head
        .as_ref()
        .map_or((0, 0), |h| (h.embedding_dim(), h.embeddings.len()));

    let mut g = Gradients {
        adapter: vec![0.0; f_dim * d_dim],
        mos_weight: vec![0.0; d_dim],
        mos_bias: 0.0,
        listener_weight: vec![
            0.0;
            if model.listener_head.is_some() {
                d_dim + e_dim
            } else {
                0
            }
        ],
        listener_bias: 0.0,
        embeddings: vec![vec![0.0; e_dim]; n_listeners],
    };
    if batch.is_empty() {
        return g;
    }

    let n_ratings: usize = if model.listener_head.is_some() {
        batch.iter().map(|ex| ex.ratings.len()).sum()
    } else {
        0
    };
    let ssl_scale = cfg.alpha / batch.len() as f64;
    let le_scale = if n_ratings > 0 {
        cfg.beta / n_ratings as f64
    } else {
        0.0
    };
    let mut grad_h = vec![0.0; d_dim];

    for ex in batch {
        let h = model.adapter.apply(&ex.features);
        let pred = dot(&model.mos_head.weight, &h) + model.mos_head.bias;
        let c = ssl_scale * sign(pred - ex.mos);

        g.mos_bias += c;
        for (gw, hv) in g.mos_weight.iter_mut().zip(&h) {
            *gw += c * hv;
        }
        for (gh, w) in grad_h.iter_mut().zip(&model.mos_head.weight) {
            *gh = c * w;
        }

        if let Some(head) = &model.listener_head {
            let (wh, we) = head.weight.split_at(d_dim);
            let (gwh, gwe) = g.listener_weight.split_at_mut(d_dim);
            for &(l, score) in &ex.ratings {
                let emb = &head.embeddings[l];
                let pred = dot(wh, &h) + dot(we, emb) + head.bias;
                let c = le_scale * sign(pred - score);
                g.listener_bias += c;
                for (gw, hv) in gwh.iter_mut().zip(&h) {
                    *gw += c * hv;
                }
                for (gw, ev) in gwe.iter_mut().zip(emb) {
                    *gw += c * ev;
                }
                for (ge, w) in g.embeddings[l].iter_mut().zip(we) {
                    *ge += c * w;
                }
                for (gh, w) in grad_h.iter_mut().zip(wh) {
                    *gh += c * w;
                }
            }
        }

        for (row, &x) in g.adapter.chunks_exact_mut(d_dim).zip(&ex.features) {
            for (ga, gh) in row.iter_mut().zip(&grad_h) {
                *ga += x * gh;
            }
        }
    }
    g
}

/// Plain SGD: every parameter moves by `-learning_rate * gradient`.
pub fn sgd_step(model: &mut PredictorModel, grads: &Gradients, learning_rate: f64) {
    let with_listener = model.listener_head.is_some();
    for (p, g) in model
        .params_mut()
        .into_iter()
        .zip(grads.flat(with_listener))
    {
        *p -= learning_rate * g;
    }
}
