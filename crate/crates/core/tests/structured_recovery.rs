use contrastkit::linalg::{principal_angles, DataMatrix, StiefelPoint};
use contrastkit::model::EmOptions;
use contrastkit::structured::{cfpca_fit, cir_fit, clr_fit, clr_predict_rows, CirOptions, CurveSet};
use contrastkit::synth::{generate, GeneratorModel, GeneratorSpec};
use nalgebra::{DMatrix, DVector};

fn unit_span(m: &DMatrix<f64>) -> StiefelPoint {
    contrastkit::linalg::stiefel_qr_retract(m).unwrap()
}

#[test]
fn cfpca_recovers_planted_harmonic() {
    let mut spec = GeneratorSpec::new(GeneratorModel::PlantedCurves, 1, 500, 500, 5);
    spec.sigma = 0.1;
    let data = generate(&spec).unwrap();
    let grid = data.grid.clone().unwrap();
    let fg = CurveSet::new(grid.clone(), data.foreground).unwrap();
    let bg = CurveSet::new(grid, data.background).unwrap();
    let model = cfpca_fit(&fg, &bg, 1.0, 1).unwrap();
    let v = model.eigenfunctions.column(0);
    let truth = data.truth.salient.unwrap();
    let h = truth.column(0);
    let corr = {
        let (vm, hm) = (v.mean(), h.mean());
        let num: f64 = v.iter().zip(h.iter()).map(|(a, b)| (a - vm) * (b - hm)).sum();
        let va: f64 = v.iter().map(|a| (a - vm).powi(2)).sum();
        let vb: f64 = h.iter().map(|b| (b - hm).powi(2)).sum();
        num / (va * vb).sqrt()
    };
    assert!(corr.abs() > 0.95, "corr = {corr}");
}

#[test]
fn cir_contrast_beats_plain_sir() {
    let mut spec = GeneratorSpec::new(GeneratorModel::SupervisedContrast, 10, 2000, 2000, 11);
    spec.sigma = 0.1;
    let data = generate(&spec).unwrap();
    let x = DataMatrix::new(data.foreground).unwrap();
    let y = DataMatrix::new(data.background).unwrap();
    let rx = data.response_fg.unwrap();
    let ry = data.response_bg.unwrap();
    let truth = unit_span(&data.truth.salient.unwrap());
    let opts = CirOptions::default();
    let angle = |gamma| {
        let m = cir_fit(&x, &rx, &y, &ry, gamma, 1, &opts).unwrap();
        principal_angles(&m.loadings, &truth).unwrap().max_angle()
    };
    let contrastive = angle(1.0);
    let plain = angle(0.0);
    assert!(contrastive < 0.2, "γ=1 angle {contrastive}");
    assert!(plain > 2.0 * contrastive, "γ=0 angle {plain} vs {contrastive}");
}

#[test]
fn clr_out_of_sample_r2() {
    let mut spec = GeneratorSpec::new(GeneratorModel::Clr, 10, 3000, 2000, 13);
    spec.k = 2;
    spec.d = 2;
    spec.sigma = 0.3;
    spec.tau = 0.3;
    let data = generate(&spec).unwrap();
    let r = data.response_fg.unwrap();
    let var_r = {
        let m = r.iter().sum::<f64>() / r.len() as f64;
        r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64
    };
    assert!(spec.tau.powi(2) <= 0.1 * var_r);
    let n_train = 2000;
    let x_train = DataMatrix::new(data.foreground.rows(0, n_train).into_owned()).unwrap();
    let y = DataMatrix::new(data.background).unwrap();
    let model = clr_fit(&x_train, &r[..n_train], &y, 2, &EmOptions::default()).unwrap();
    let test = data.foreground.rows(n_train, 1000).into_owned();
    let centered = DMatrix::from_fn(1000, 10, |i, j| test[(i, j)] - model.mu_x[j]);
    let pred = clr_predict_rows(&model, &centered).unwrap().add_scalar(model.mu_r);
    let truth = DVector::from_column_slice(&r[n_train..]);
    let mean = truth.mean();
    let ss_res = (&truth - &pred).norm_squared();
    let ss_tot = truth.map(|v| (v - mean).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(r2 >= 0.8, "R² = {r2}");
    assert!(model.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs()));
}
