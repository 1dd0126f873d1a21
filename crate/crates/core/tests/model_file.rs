use gsmgp::gp::{dense_gram, predict_points};
use gsmgp::kernels::LatentClass;
use gsmgp::modelfile::{model_from_str, model_to_string};
use gsmgp::{Error, KernelKind};

const GOLDEN: &str = include_str!("../../../docs/model-example.toml");

#[test]
fn golden_file_parses() {
    let model = model_from_str(GOLDEN).unwrap();
    assert_eq!(model.kind(), KernelKind::Gsm);
    assert_eq!(model.shape(), vec![4]);
    assert!((model.noise_var() - (-4.0f64).exp()).abs() < 1e-15);
    let dims = model.gsm_dims().unwrap();
    let comp = &dims[0].components()[0];
    for w in comp.latent(LatentClass::Weight).constrained() {
        assert!((w - 1.0).abs() < 1e-15);
    }
    for mu in comp.latent(LatentClass::Frequency).constrained() {
        assert!((mu - 0.75).abs() < 1e-15);
    }
    let ell = comp.latent(LatentClass::Lengthscale).constrained();
    assert!((ell[0] - (-0.5f64).exp()).abs() < 1e-6);
    assert!(ell.windows(2).all(|p| p[1] > p[0]));
    // unit weights put ones on the Gram diagonal
    let k = dense_gram(&model);
    for i in 0..4 {
        assert!((k[(i, i)] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn golden_file_round_trips_byte_for_byte() {
    let model = model_from_str(GOLDEN).unwrap();
    assert_eq!(model_to_string(&model).unwrap(), GOLDEN);
}

#[test]
fn golden_predictions_are_finite() {
    let model = model_from_str(GOLDEN).unwrap();
    let pred = predict_points(&model, &[vec![-0.5], vec![0.5], vec![2.0]]).unwrap();
    assert!(pred.mean.iter().chain(&pred.variance).all(|v| v.is_finite()));
    assert!(pred.variance.iter().all(|&v| v >= 0.0));
}

#[test]
fn edited_golden_files_are_rejected() {
    let newer = GOLDEN.replace("format_version = 1", "format_version = 2");
    assert!(matches!(model_from_str(&newer), Err(Error::Version { .. })));
    let wrong_kind = GOLDEN.replace("kernel = \"gsm\"", "kernel = \"sm\"");
    assert!(model_from_str(&wrong_kind).is_err());
    let extra = GOLDEN.replace("p = 1\n", "p = 1\ncolour = \"red\"\n");
    assert!(model_from_str(&extra).is_err());
    let short = GOLDEN.replace("whitened = [-0.5, 0.0, 0.0, 0.0]", "whitened = [-0.5, 0.0, 0.0]");
    assert!(model_from_str(&short).is_err());
    let wrong_q = GOLDEN.replace("q = 1\n", "q = 2\n");
    assert!(model_from_str(&wrong_q).is_err());
}
