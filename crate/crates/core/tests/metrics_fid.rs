//! Frechet-distance oracles: closed forms, symmetry, translation behaviour.

use dg_core::dataset::{generate_style_shapes, Style};
use dg_core::metrics::{
    accuracy, fid_between_splits, frechet_distance, gaussian_summary, Embedder, GaussianSummary,
    PixelEmbedder,
};
use dg_core::rng::Stream;
use dg_core::tensor::Tensor;

fn summary(mean: Vec<f64>, cov: Vec<f64>) -> GaussianSummary<f64> {
    let d = mean.len();
    GaussianSummary {
        mean,
        cov: Tensor::from_vec(vec![d, d], cov).unwrap(),
        count: 2,
    }
}

#[test]
fn distance_to_self_is_zero() {
    let a = summary(vec![0.5, -1.0], vec![2.0, 0.3, 0.3, 1.0]);
    let d = frechet_distance(&a, &a).unwrap();
    assert!(d.abs() <= 1e-12, "d(a,a) = {d}");
}

#[test]
fn one_dimensional_closed_form() {
    // d = sqrt((m1-m2)^2 + (s1-s2)^2) = sqrt(9 + 1) = sqrt(10)
    let a = summary(vec![0.0], vec![1.0]);
    let b = summary(vec![3.0], vec![4.0]);
    let d = frechet_distance(&a, &b).unwrap();
    assert!((d - 10.0f64.sqrt()).abs() <= 1e-9, "d = {d}");
}

#[test]
fn two_dimensional_diagonal_closed_form() {
    // d^2 = |dm|^2 + sum (sqrt(c1) - sqrt(c2))^2 = 2 + 2*(1-2)^2 = 4
    let a = summary(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
    let b = summary(vec![1.0, 1.0], vec![4.0, 0.0, 0.0, 4.0]);
    let d = frechet_distance(&a, &b).unwrap();
    assert!((d - 2.0).abs() <= 1e-9, "d = {d}");
}

#[test]
fn distance_is_symmetric() {
    let mut stream = Stream::from_parts(&[31]);
    for _ in 0..10 {
        let n = 3;
        let m: Vec<f64> = (0..n * n).map(|_| stream.range(-1.0, 1.0)).collect();
        let mut cov_a = vec![0.0; n * n];
        let mut cov_b = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    cov_a[i * n + j] += m[k * n + i] * m[k * n + j];
                    cov_b[i * n + j] += m[i * n + k] * m[j * n + k];
                }
                cov_b[i * n + j] += if i == j { 0.5 } else { 0.0 };
            }
        }
        let a = summary((0..n).map(|_| stream.range(-2.0, 2.0)).collect(), cov_a);
        let b = summary((0..n).map(|_| stream.range(-2.0, 2.0)).collect(), cov_b);
        let dab = frechet_distance(&a, &b).unwrap();
        let dba = frechet_distance(&b, &a).unwrap();
        assert!((dab - dba).abs() <= 1e-10, "{dab} vs {dba}");
        assert!(dab >= 0.0);
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    let a = summary(vec![0.0], vec![1.0]);
    let b = summary(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
    assert!(frechet_distance(&a, &b).is_err());
}

#[test]
fn fid_of_identical_sides_is_tiny() {
    let bundle = generate_style_shapes(5, &[Style::Plain, Style::CartoonFlat], 10, 16, 17).unwrap();
    let side: Vec<usize> = (0..40).collect();
    let d = fid_between_splits(&bundle, &side, &side, &PixelEmbedder).unwrap();
    assert!(d <= 1e-6, "FID(A, A) = {d}");
}

#[test]
fn fid_is_symmetric_between_splits() {
    let bundle = generate_style_shapes(5, &[Style::Plain, Style::SketchOutline], 10, 16, 23).unwrap();
    let a = bundle.domain_indices(0);
    let b = bundle.domain_indices(1);
    let dab = fid_between_splits(&bundle, &a, &b, &PixelEmbedder).unwrap();
    let dba = fid_between_splits(&bundle, &b, &a, &PixelEmbedder).unwrap();
    assert!((dab - dba).abs() <= 1e-10);
    assert!(dab > 0.0);
}

#[test]
fn fid_rejects_tiny_sides() {
    let bundle = generate_style_shapes(2, &[Style::Plain], 3, 16, 1).unwrap();
    assert!(fid_between_splits(&bundle, &[0], &[1, 2], &PixelEmbedder).is_err());
}

#[test]
fn translation_shifts_squared_distance_by_norm() {
    // equal covariances: shifting one side's embeddings by v moves d^2 by
    // exactly |v|^2
    let bundle = generate_style_shapes(4, &[Style::ClassTexture], 12, 16, 29).unwrap();
    let indices: Vec<usize> = (0..bundle.len()).collect();
    let embedder = PixelEmbedder;
    let dim = embedder.dim();
    let mut rows = Vec::new();
    for &i in &indices {
        rows.extend(embedder.embed(&bundle, i));
    }
    let base = gaussian_summary(&rows, indices.len(), dim).unwrap();

    let mut stream = Stream::from_parts(&[5]);
    let shift: Vec<f64> = (0..dim).map(|_| stream.range(-0.5, 0.5)).collect();
    let mut shifted_rows = rows.clone();
    for r in 0..indices.len() {
        for j in 0..dim {
            shifted_rows[r * dim + j] += shift[j];
        }
    }
    let shifted = gaussian_summary(&shifted_rows, indices.len(), dim).unwrap();

    let d = frechet_distance(&base, &shifted).unwrap();
    let norm_sq: f64 = shift.iter().map(|v| v * v).sum();
    assert!(
        (d * d - norm_sq).abs() <= 1e-8,
        "d^2 = {} vs |v|^2 = {norm_sq}",
        d * d
    );
}

#[test]
fn accuracy_examples() {
    let (acc, hist) = accuracy(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
    assert_eq!(acc, 1.0);
    assert_eq!(hist, vec![1, 1, 1]);

    // constant prediction on balanced labels: 1/C, all mass on one class
    let labels: Vec<usize> = (0..12).map(|i| i % 4).collect();
    let preds = vec![2usize; 12];
    let (acc, hist) = accuracy(&preds, &labels, 4).unwrap();
    assert!((acc - 0.25).abs() < 1e-12);
    assert_eq!(hist, vec![0, 0, 12, 0]);

    let (acc, _) = accuracy(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
    assert!((acc - 2.0 / 3.0).abs() < 1e-12);

    assert!(accuracy(&[], &[], 2).is_err());
}
