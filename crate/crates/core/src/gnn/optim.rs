use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::model::GnnModel;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
}

impl AdamState {
    pub fn new(model: &GnnModel, lr: f64) -> Self {
        let zeros: Vec<Matrix> = model.params().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One bias-corrected Adam update of every parameter in `model`.
    pub fn step(&mut self, model: &mut GnnModel, grads: &[Matrix]) -> Result<()> {
        let params = model.params_mut();
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape(format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{LayerKind, LayerWeights};

    fn scalar_model(w: f64) -> GnnModel {
        let weight = Matrix::from_vec(1, 1, vec![w]).unwrap();
        GnnModel::from_layers(LayerKind::GraphConv, vec![LayerWeights::GraphConv { weight }]).unwrap()
    }

    fn value(m: &GnnModel) -> f64 {
        m.params()[0].get(0, 0)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut m = scalar_model(0.7);
        let mut s = AdamState::new(&m, 0.01);
        s.step(&mut m, &[Matrix::zeros(1, 1)]).unwrap();
        assert_eq!(value(&m), 0.7);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut m = scalar_model(0.0);
        let mut s = AdamState::new(&m, 0.001);
        let g = Matrix::from_vec(1, 1, vec![3.5]).unwrap();
        let mut prev = value(&m);
        for _ in 0..200 {
            s.step(&mut m, std::slice::from_ref(&g)).unwrap();
            let cur = value(&m);
            assert!(((prev - cur) - 0.001).abs() < 1e-6);
            prev = cur;
        }
    }

    #[test]
    fn matches_hand_recurrence() {
        // lr 0.1, betas (0.9, 0.999), eps 1e-8, w0 = 1, gradients 0.5, -1, 2;
        // trajectory worked out by hand (m, v, bias correction) in f64.
        let expected = [0.900000002, 0.9366103542405654, 0.8946447927181046];
        let mut model = scalar_model(1.0);
        let mut s = AdamState::new(&model, 0.1);
        for (g, want) in [0.5, -1.0, 2.0].into_iter().zip(expected) {
            s.step(&mut model, &[Matrix::from_vec(1, 1, vec![g]).unwrap()]).unwrap();
            assert!((value(&model) - want).abs() < 1e-14, "{} vs {want}", value(&model));
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut m = scalar_model(0.0);
        let mut s = AdamState::new(&m, 0.1);
        assert!(s.step(&mut m, &[Matrix::zeros(2, 1)]).is_err());
        assert!(s.step(&mut m, &[]).is_err());
    }
}
