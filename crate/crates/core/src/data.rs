//! Dataset generation, ingestion and preprocessing.
//!
//! All randomness comes from [`seeded_rng`] (ChaCha8 seeded through
//! `SeedableRng::seed_from_u64`), so a fixed seed yields the same bytes on
//! every platform.
//!
//! CSV files are comma separated with an optional single header row and one
//! sample per line. Every cell must parse as a decimal float. Label columns
//! for one-hot targets hold integer class ids in `0..num_classes`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, DenseSymMatrix};

/// The generator behind every seeded operation in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Samples stored row-wise: `inputs` is m×d, `targets` (when present) m×c.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: Option<DMatrix<f64>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        inputs: DMatrix<f64>,
        targets: Option<DMatrix<f64>>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset inputs"));
        }
        if let Some(t) = &targets {
            if t.nrows() != inputs.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "target rows",
                    expected: inputs.nrows(),
                    found: t.nrows(),
                });
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("dataset targets"));
            }
        }
        Ok(Self {
            inputs,
            targets,
            meta,
        })
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> Option<&DMatrix<f64>> {
        self.targets.as_ref()
    }

    pub fn num_samples(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn target_dim(&self) -> Option<usize> {
        self.targets.as_ref().map(|t| t.ncols())
    }

    /// Population covariance `(1/m) X_cᵀ X_c` of the centered inputs.
    pub fn input_covariance(&self) -> DenseSymMatrix {
        let centered = center_columns(&self.inputs).0;
        let m = self.num_samples() as f64;
        DenseSymMatrix::new(centered.tr_mul(&centered) / m).expect("finite covariance")
    }

    /// Second-moment matrix `(1/m) Xᵀ X` of the raw inputs.
    pub fn input_second_moment(&self) -> DenseSymMatrix {
        let m = self.num_samples() as f64;
        DenseSymMatrix::new(self.inputs.tr_mul(&self.inputs) / m).expect("finite moment")
    }

    fn with_inputs(&self, inputs: DMatrix<f64>, note: impl Into<String>) -> Self {
        let mut meta = self.meta.clone();
        meta.notes.push(note.into());
        Self {
            inputs,
            targets: self.targets.clone(),
            meta,
        }
    }
}

fn center_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let m = x.nrows() as f64;
    let means = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / m));
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (centered, means)
}

/// `m` draws from `N(0, diag(1, 2, …, d))`, then mean-centered.
pub fn gaussian_dataset(m: usize, d: usize, seed: u64) -> Result<Dataset> {
    if m < 2 || d < 1 {
        return Err(Error::InvalidArgument(format!(
            "gaussian_dataset needs m >= 2 and d >= 1, got m={m}, d={d}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let std: Vec<f64> = (1..=d).map(|v| (v as f64).sqrt()).collect();
    let mut raw = DMatrix::zeros(m, d);
    for i in 0..m {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            raw[(i, j)] = std[j] * z;
        }
    }
    let inputs = center_columns(&raw).0;
    Dataset::new(
        inputs,
        None,
        DatasetMeta {
            seed: Some(seed),
            provenance: format!("gaussian(m={m}, d={d}, variances=1..{d}), mean-centered"),
            notes: Vec::new(),
        },
    )
}

/// Seeded Gaussian mixture with one-hot class labels.
///
/// Class means are drawn from `N(0, separation²·I)`, samples add unit
/// isotropic noise, and labels are assigned round-robin so every class is
/// represented.
pub fn gaussian_mixture(
    m: usize,
    d: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if m < classes || classes < 1 || d < 1 {
        return Err(Error::InvalidArgument(format!(
            "gaussian_mixture needs m >= classes >= 1 and d >= 1, got m={m}, d={d}, classes={classes}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let means = DMatrix::from_fn(classes, d, |_, _| {
        separation * rng.sample::<f64, _>(StandardNormal)
    });
    let mut inputs = DMatrix::zeros(m, d);
    let mut targets = DMatrix::zeros(m, classes);
    for i in 0..m {
        let c = i % classes;
        targets[(i, c)] = 1.0;
        for j in 0..d {
            inputs[(i, j)] = means[(c, j)] + rng.sample::<f64, _>(StandardNormal);
        }
    }
    Dataset::new(
        inputs,
        Some(targets),
        DatasetMeta {
            seed: Some(seed),
            provenance: format!(
                "gaussian_mixture(m={m}, d={d}, classes={classes}, separation={separation})"
            ),
            notes: Vec::new(),
        },
    )
}

/// Standardizes each input column to mean 0 and population variance 1.
/// Constant columns pass through untouched and are noted in the metadata.
pub fn zscore(data: &Dataset) -> Dataset {
    let x = data.inputs();
    let m = x.nrows() as f64;
    let mut out = x.clone();
    let mut constant = Vec::new();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.sum() / m;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        // relative test so that columns holding one repeated value count as constant
        if var <= (f64::EPSILON * mean.abs()).powi(2) || var == 0.0 {
            constant.push(j);
            continue;
        }
        let sd = var.sqrt();
        col.apply(|v| *v = (*v - mean) / sd);
    }
    let mut note = "zscore".to_string();
    if !constant.is_empty() {
        note.push_str(&format!(" (constant columns left unscaled: {constant:?})"));
    }
    data.with_inputs(out, note)
}

/// Principal-component basis of a dataset's inputs.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// d×k, columns are principal directions by decreasing variance.
    pub components: DMatrix<f64>,
    /// Variance along each retained component.
    pub variances: DVector<f64>,
    /// Sum of all covariance eigenvalues.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn fit(data: &Dataset, k: usize) -> Result<Self> {
        let d = data.input_dim();
        if k < 1 || k > d {
            return Err(Error::InvalidArgument(format!(
                "pca dimension must be in 1..={d}, got {k}"
            )));
        }
        let (centered, mean) = center_columns(data.inputs());
        let cov = DenseSymMatrix::new(centered.tr_mul(&centered) / data.num_samples() as f64)?;
        let spectrum = sym_eig(&cov)?;
        let mut components = DMatrix::zeros(d, k);
        let mut variances = DVector::zeros(k);
        for c in 0..k {
            let src = d - 1 - c;
            let mut col = spectrum.eigenvectors.column(src).into_owned();
            // sign convention: largest-magnitude entry positive
            let imax = col.iamax();
            if col[imax] < 0.0 {
                col.neg_mut();
            }
            components.set_column(c, &col);
            variances[c] = spectrum.eigenvalues[src].max(0.0);
        }
        Ok(Self {
            mean,
            components,
            variances,
            total_variance: spectrum.eigenvalues.iter().map(|l| l.max(0.0)).sum(),
        })
    }

    /// m×k scores.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        centered * &self.components
    }

    /// Maps scores back into the input space.
    pub fn reconstruct(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = scores * self.components.transpose();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[j]);
        }
        x
    }

    pub fn retained_fraction(&self) -> f64 {
        if self.total_variance == 0.0 {
            1.0
        } else {
            self.variances.sum() / self.total_variance
        }
    }
}

/// Projects inputs onto their top-`k` principal components.
pub fn pca_project(data: &Dataset, k: usize) -> Result<Dataset> {
    let model = PcaModel::fit(data, k)?;
    Ok(data.with_inputs(model.project(data.inputs()), format!("pca(k={k})")))
}

/// How to split CSV columns into inputs and targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Every column is an input.
    #[default]
    None,
    /// Listed columns (0-based) become regression targets.
    Columns { columns: Vec<usize> },
    /// One integer label column is expanded to a one-hot block.
    OneHot { column: usize, num_classes: usize },
}

/// Reads a numeric CSV file.
///
/// `has_header = None` treats the first row as a header when none of its
/// cells parses as a number. Rows and columns in error messages are 1-based.
pub fn load_csv(path: &Path, targets: &TargetSpec, has_header: Option<bool>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        })?;

    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec?);
    }
    let header = match has_header {
        Some(h) => h,
        None => records
            .first()
            .map(|r| r.iter().all(|c| c.parse::<f64>().is_err()))
            .unwrap_or(false),
    };
    let body = if header {
        &records[header as usize..]
    } else {
        &records[..]
    };
    let first_row = header as usize + 1;
    if body.is_empty() {
        return Err(Error::CsvParse {
            path: path.to_path_buf(),
            row: first_row,
            column: 1,
            message: "no data rows".to_string(),
        });
    }
    let width = body[0].len();
    let mut grid = DMatrix::zeros(body.len(), width);
    for (i, rec) in body.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::RaggedCsv {
                path: path.to_path_buf(),
                row: first_row + i,
                expected: width,
                found: rec.len(),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            grid[(i, j)] = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::CsvParse {
                    path: path.to_path_buf(),
                    row: first_row + i,
                    column: j + 1,
                    message: format!("not a finite number: {cell:?}"),
                })?;
        }
    }
    split_targets(grid, targets, path)
}

fn split_targets(grid: DMatrix<f64>, spec: &TargetSpec, path: &Path) -> Result<Dataset> {
    let width = grid.ncols();
    let target_cols: Vec<usize> = match spec {
        TargetSpec::None => Vec::new(),
        TargetSpec::Columns { columns } => columns.clone(),
        TargetSpec::OneHot { column, .. } => vec![*column],
    };
    if let Some(&bad) = target_cols.iter().find(|&&c| c >= width) {
        return Err(Error::InvalidArgument(format!(
            "target column {bad} out of range for {width} columns"
        )));
    }
    let input_cols: Vec<usize> = (0..width).filter(|c| !target_cols.contains(c)).collect();
    let inputs = grid.select_columns(&input_cols);
    let targets = match spec {
        TargetSpec::None => None,
        TargetSpec::Columns { columns } => Some(grid.select_columns(columns)),
        TargetSpec::OneHot {
            column,
            num_classes,
        } => {
            let mut t = DMatrix::zeros(grid.nrows(), *num_classes);
            for i in 0..grid.nrows() {
                let label = grid[(i, *column)];
                if label.fract() != 0.0 || label < 0.0 || label >= *num_classes as f64 {
                    return Err(Error::CsvParse {
                        path: path.to_path_buf(),
                        row: i + 1,
                        column: column + 1,
                        message: format!("label {label} is not a class id below {num_classes}"),
                    });
                }
                t[(i, label as usize)] = 1.0;
            }
            Some(t)
        }
    };
    Dataset::new(
        inputs,
        targets,
        DatasetMeta {
            seed: None,
            provenance: format!("csv:{}", path.display()),
            notes: Vec::new(),
        },
    )
}

/// Writes inputs followed by targets, with a `x0,…,t0,…` header.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = data.input_dim();
    let c = data.target_dim().unwrap_or(0);
    let header: Vec<String> = (0..d)
        .map(|j| format!("x{j}"))
        .chain((0..c).map(|j| format!("t{j}")))
        .collect();
    w.write_record(&header)?;
    for i in 0..data.num_samples() {
        let mut row: Vec<String> = data.inputs().row(i).iter().map(|v| fmt_f64(*v)).collect();
        if let Some(t) = data.targets() {
            row.extend(t.row(i).iter().map(|v| fmt_f64(*v)));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Float formatting used by every file the crate writes: 17 significant
/// digits, scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Permutes target rows with a seeded shuffle; inputs are untouched.
pub fn shuffle_labels(data: &Dataset, seed: u64) -> Result<Dataset> {
    let targets = data.targets().ok_or(Error::MissingTargets)?;
    let mut order: Vec<usize> = (0..data.num_samples()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let shuffled = DMatrix::from_fn(targets.nrows(), targets.ncols(), |i, j| {
        targets[(order[i], j)]
    });
    let mut meta = data.meta.clone();
    meta.notes.push(format!("shuffle_labels(seed={seed})"));
    Ok(Dataset {
        inputs: data.inputs.clone(),
        targets: Some(shuffled),
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn gaussian_covariance_matches_design() {
        let data = gaussian_dataset(10_000, 16, 11).unwrap();
        let x = data.inputs();
        for j in 0..16 {
            assert!(x.column(j).sum().abs() < 1e-9);
        }
        let cov = data.input_covariance();
        let m = 10_000.0_f64;
        for j in 0..16 {
            let target = (j + 1) as f64;
            // variance of a sample variance of a Gaussian: 2σ⁴/m
            let se = (2.0 * target * target / m).sqrt();
            assert!((cov.get(j, j) - target).abs() < 3.0 * se, "column {j}");
        }
    }

    #[test]
    fn gaussian_two_points_symmetric() {
        let data = gaussian_dataset(2, 1, 5).unwrap();
        let x = data.inputs();
        assert!((x[(0, 0)] + x[(1, 0)]).abs() <= 1e-15 * x[(0, 0)].abs());
        assert!(gaussian_dataset(1, 3, 0).is_err());
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gaussian_dataset(50, 4, 99).unwrap();
        let b = gaussian_dataset(50, 4, 99).unwrap();
        let bits = |d: &Dataset| d.inputs().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&gaussian_dataset(50, 4, 100).unwrap()));
    }

    #[test]
    fn zscore_standardizes_and_is_idempotent() {
        let raw = DMatrix::from_fn(40, 3, |i, j| {
            ((i * 7 + j * 3) % 11) as f64 * (j as f64 + 1.0) + 5.0
        });
        let data = Dataset::new(raw, None, DatasetMeta::default()).unwrap();
        let z = zscore(&data);
        for col in z.inputs().column_iter() {
            let mean = col.sum() / 40.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() <= 1e-12);
            assert!((var - 1.0).abs() <= 1e-10);
        }
        let zz = zscore(&z);
        assert!((zz.inputs() - z.inputs()).amax() <= 1e-12);
    }

    #[test]
    fn zscore_passes_constant_column() {
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, 7.0, 2.0, 7.0, 3.0, 7.0]);
        let data = Dataset::new(raw, None, DatasetMeta::default()).unwrap();
        let z = zscore(&data);
        assert_eq!(z.inputs().column(1).as_slice(), &[7.0, 7.0, 7.0]);
        assert!(z.meta.notes.last().unwrap().contains("[1]"));
    }

    #[test]
    fn pca_full_rank_preserves_distances() {
        let data = gaussian_dataset(30, 5, 3).unwrap();
        let p = pca_project(&data, 5).unwrap();
        let (a, b) = (data.inputs(), p.inputs());
        for i in 0..30 {
            for j in 0..i {
                let da = (a.row(i) - a.row(j)).norm();
                let db = (b.row(i) - b.row(j)).norm();
                assert!((da - db).abs() <= 1e-8);
            }
        }
        assert!(pca_project(&data, 0).is_err());
        assert!(pca_project(&data, 6).is_err());
    }

    #[test]
    fn pca_rank_one_reconstructs() {
        let dir = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = DMatrix::from_fn(10, 3, |i, j| (i as f64 - 4.5) * dir[j]);
        let data = Dataset::new(x.clone(), None, DatasetMeta::default()).unwrap();
        let model = PcaModel::fit(&data, 1).unwrap();
        let back = model.reconstruct(&model.project(&x));
        assert!((back - x).amax() < 1e-12);
    }

    #[test]
    fn pca_retained_variance_ratio() {
        // exact covariance diag(5, 4, ε, ε): scaled, mean-free Hadamard columns
        let eps: f64 = 1e-3;
        let scales = [5f64.sqrt(), 2.0, eps.sqrt(), eps.sqrt()];
        let x = DMatrix::from_fn(8, 4, |i, j| {
            let sign = if (i & (j + 1)).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            scales[j] * sign
        });
        let data = Dataset::new(x, None, DatasetMeta::default()).unwrap();
        let cov = data.input_covariance();
        assert!(
            (cov.as_matrix()
                - DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 4.0, eps, eps])))
            .amax()
                < 1e-12
        );
        let model = PcaModel::fit(&data, 2).unwrap();
        assert!((model.retained_fraction() - 9.0 / (9.0 + 2.0 * eps)).abs() < 1e-12);
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_plain_grid() {
        let f = write_tmp("1,2,3\n4,5,6\n7,8,9\n");
        let d = load_csv(f.path(), &TargetSpec::None, None).unwrap();
        assert_eq!(d.inputs().shape(), (3, 3));
        assert_eq!(d.inputs()[(2, 1)], 8.0);
        assert!(d.targets().is_none());
    }

    #[test]
    fn csv_one_hot_labels() {
        let mut body = String::from("a,b,label\n");
        for i in 0..12 {
            body.push_str(&format!("{}.5,{},{}\n", i, -i, i % 10));
        }
        let f = write_tmp(&body);
        let spec = TargetSpec::OneHot {
            column: 2,
            num_classes: 10,
        };
        let d = load_csv(f.path(), &spec, None).unwrap();
        let t = d.targets().unwrap();
        assert_eq!(t.shape(), (12, 10));
        assert_eq!(d.input_dim(), 2);
        for row in t.row_iter() {
            assert_eq!(row.sum(), 1.0);
        }
        assert_eq!(t[(11, 1)], 1.0);
    }

    #[test]
    fn csv_reports_bad_cell_location() {
        let f = write_tmp("x,y\n1,2\n3,oops\n");
        let err = load_csv(f.path(), &TargetSpec::None, None).unwrap_err();
        match err {
            Error::CsvParse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let f = write_tmp("1,2\n3\n");
        assert!(matches!(
            load_csv(f.path(), &TargetSpec::None, Some(false)),
            Err(Error::RaggedCsv { row: 2, .. })
        ));
    }

    #[test]
    fn csv_round_trips_through_writer() {
        let data = gaussian_mixture(20, 3, 4, 2.0, 1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&data, f.path()).unwrap();
        let spec = TargetSpec::Columns {
            columns: vec![3, 4, 5, 6],
        };
        let back = load_csv(f.path(), &spec, None).unwrap();
        assert_eq!(back.inputs(), data.inputs());
        assert_eq!(back.targets(), data.targets());
    }

    #[test]
    fn shuffle_preserves_targets_multiset() {
        let data = gaussian_mixture(30, 2, 3, 1.0, 4).unwrap();
        let a = shuffle_labels(&data, 8).unwrap();
        let b = shuffle_labels(&data, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.inputs(), data.inputs());
        let class_counts = |d: &Dataset| d.targets().unwrap().row_sum();
        assert_eq!(class_counts(&a), class_counts(&data));
        assert_ne!(a.targets(), data.targets());
    }

    #[test]
    fn shuffle_edge_cases() {
        let one = Dataset::new(
            DMatrix::from_element(1, 2, 1.0),
            Some(DMatrix::from_element(1, 1, 3.0)),
            DatasetMeta::default(),
        )
        .unwrap();
        assert_eq!(shuffle_labels(&one, 1).unwrap().targets(), one.targets());
        let none = Dataset::new(DMatrix::zeros(2, 2), None, DatasetMeta::default()).unwrap();
        assert!(matches!(
            shuffle_labels(&none, 1),
            Err(Error::MissingTargets)
        ));
    }
}
