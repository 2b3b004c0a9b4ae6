//! Synthetic two-cohort datasets, CSV I/O and seeded splits.
//!
//! Five binary tasks are modelled: lung cancer (primary), adult asthma,
//! chronic bronchitis, COPD and emphysema. Cohort A carries every label;
//! cohort B only carries the primary and COPD labels, the rest are
//! [`LabelValue::NotCoded`].
//!
//! CSV layout (UTF-8, LF line endings):
//!
//! ```text
//! id,f0,...,f{D-1},label_LC,label_AA,label_CB,label_COPD,label_E,cohort
//! ```
//!
//! Labels are the integers `0`, `1` or `-999`; features are written in
//! scientific notation with 17 significant digits; cohort is `A` or `B`.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{sigmoid, LabelValue};
use crate::model::Matrix;

pub const TASK_COUNT: usize = 5;
pub const TASK_NAMES: [&str; TASK_COUNT] = ["LC", "AA", "CB", "COPD", "E"];
/// Auxiliary task that cohort B also codes.
pub const COPD_TASK: usize = 3;

/// Default positive rates: case counts over the cohort that codes each
/// task (all 3386 subjects for LC and COPD, the 2516 cohort-A subjects for
/// the other three).
pub const DEFAULT_PREVALENCE: [f64; TASK_COUNT] = [
    1075.0 / 3386.0,
    184.0 / 2516.0,
    276.0 / 2516.0,
    428.0 / 3386.0,
    269.0 / 2516.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cohort {
    A,
    B,
}

impl Cohort {
    /// Whether samples of this cohort carry a label for `task`.
    pub fn codes(self, task: usize) -> bool {
        match self {
            Cohort::A => true,
            Cohort::B => task == 0 || task == COPD_TASK,
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cohort::A => "A",
            Cohort::B => "B",
        })
    }
}

impl FromStr for Cohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Cohort::A),
            "B" => Ok(Cohort::B),
            other => Err(Error::Validation(format!("unknown cohort {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub labels: [LabelValue; TASK_COUNT],
    pub cohort: Cohort,
}

/// Immutable collection of samples sharing one feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(feature_dim: usize, samples: Vec<Sample>) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.features.len() != feature_dim) {
            return Err(Error::Dimension(format!(
                "sample {} has {} features, expected {feature_dim}",
                s.id,
                s.features.len()
            )));
        }
        Ok(Dataset {
            feature_dim,
            samples,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    /// Features of the selected rows as a matrix.
    pub fn feature_matrix(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.feature_dim);
        for &i in rows {
            data.extend_from_slice(&self.samples[i].features);
        }
        Matrix::new(rows.len(), self.feature_dim, data).expect("consistent widths")
    }

    pub fn label_matrix(&self, rows: &[usize]) -> Matrix<LabelValue> {
        let mut data = Vec::with_capacity(rows.len() * TASK_COUNT);
        for &i in rows {
            data.extend_from_slice(&self.samples[i].labels);
        }
        Matrix::new(rows.len(), TASK_COUNT, data).expect("consistent widths")
    }

    pub fn task_labels(&self, task: usize) -> Vec<LabelValue> {
        self.samples.iter().map(|s| s.labels[task]).collect()
    }

    /// Positive rate of `task` over samples that code it, if any do.
    pub fn prevalence(&self, task: usize) -> Option<f64> {
        let (pos, coded) = self
            .samples
            .iter()
            .filter_map(|s| s.labels[task].as_bool())
            .fold((0usize, 0usize), |(p, n), y| (p + y as usize, n + 1));
        (coded > 0).then(|| pos as f64 / coded as f64)
    }

    /// Writes the dataset in the documented CSV layout.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_csv_to(&mut out)
            .and_then(|_| out.flush().map_err(|e| Error::io(path, e)))
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let err = |e: csv::Error| Error::Validation(format!("writing dataset: {e}"));
        w.write_record(csv_header(self.feature_dim)).map_err(err)?;
        let mut rec = Vec::with_capacity(self.feature_dim + TASK_COUNT + 2);
        for s in &self.samples {
            rec.clear();
            rec.push(s.id.clone());
            rec.extend(s.features.iter().map(|x| format!("{x:.16e}")));
            rec.extend(s.labels.iter().map(|l| l.encoded().to_string()));
            rec.push(s.cohort.to_string());
            w.write_record(&rec).map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::Validation(format!("writing dataset: {e}")))?;
        Ok(())
    }
}

fn csv_header(feature_dim: usize) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend((0..feature_dim).map(|i| format!("f{i}")));
    h.extend(TASK_NAMES.iter().map(|t| format!("label_{t}")));
    h.push("cohort".into());
    h
}

/// Reads a dataset written in the documented CSV layout.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(Error::EmptyDataset),
        Some(r) => r.map_err(|e| parse_error(&e))?,
    };
    let width = header.len();
    if width < TASK_COUNT + 2 {
        return Err(Error::Parse {
            line: 1,
            message: format!("header has {width} columns, too few for the schema"),
        });
    }
    let feature_dim = width - TASK_COUNT - 2;
    let expected = csv_header(feature_dim);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header; expected {}", expected.join(",")),
        });
    }

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for rec in records {
        let rec = rec.map_err(|e| parse_error(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse { line, message };
        if rec.len() != width {
            return Err(bad(format!("expected {width} fields, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(bad(format!("duplicate id {id:?}")));
        }
        let features = (1..=feature_dim)
            .map(|j| {
                rec[j]
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| {
                        bad(format!(
                            "feature f{} = {:?} is not a finite number",
                            j - 1,
                            &rec[j]
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut labels = [LabelValue::NotCoded; TASK_COUNT];
        for (t, label) in labels.iter_mut().enumerate() {
            let raw = &rec[1 + feature_dim + t];
            let code: i32 = raw.parse().map_err(|_| {
                bad(format!(
                    "label_{} = {raw:?} is not an integer",
                    TASK_NAMES[t]
                ))
            })?;
            *label = LabelValue::from_encoded(code).map_err(|_| {
                Error::Validation(format!(
                    "line {line}, sample {id}: label_{} = {code} is not 0, 1 or -999",
                    TASK_NAMES[t]
                ))
            })?;
        }
        let cohort = rec[width - 1]
            .parse()
            .map_err(|_| bad(format!("cohort {:?} is not A or B", &rec[width - 1])))?;
        samples.push(Sample {
            id,
            features,
            labels,
            cohort,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(feature_dim, samples)
}

fn parse_error(e: &csv::Error) -> Error {
    Error::Parse {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Parameters of the synthetic generator.
///
/// Task `t` is positive with probability `sigmoid(a_t . x + b_t)` where
/// `a_t = shared_signal * u_shared + task_signal * u_t + interference * v_t`.
/// `v_t` is zero for the primary task; for auxiliary tasks it points
/// against `u_shared` inside a task-specific random half of the feature
/// space. Intercepts `b_t` are solved by bisection so that each task hits
/// its target prevalence over the samples that code it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_total: usize,
    pub cohort_b_fraction: f64,
    pub feature_dim: usize,
    pub shared_signal: f64,
    pub task_signal: f64,
    pub interference: f64,
    pub prevalence_targets: [f64; TASK_COUNT],
    /// Probability that a label is flipped before calibration.
    pub label_noise: f64,
    pub seed: u64,
    /// Seed for the label mechanism; defaults to `seed`.
    pub label_seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_total: 3386,
            cohort_b_fraction: 870.0 / 3386.0,
            feature_dim: 32,
            shared_signal: 1.0,
            task_signal: 0.5,
            interference: 0.0,
            prevalence_targets: DEFAULT_PREVALENCE,
            label_noise: 0.0,
            seed: 0,
            label_seed: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_total == 0 {
            return Err(Error::Config("data.n_total must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("data.feature_dim must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.cohort_b_fraction) {
            return Err(Error::Config(format!(
                "data.cohort_b_fraction {} is outside [0, 1]",
                self.cohort_b_fraction
            )));
        }
        if let Some(p) = self
            .prevalence_targets
            .iter()
            .find(|p| !(**p > 0.0 && **p < 1.0))
        {
            return Err(Error::Config(format!(
                "prevalence target {p} is outside (0, 1)"
            )));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "data.label_noise {} is outside [0, 0.5)",
                self.label_noise
            )));
        }
        for (name, v) in [
            ("shared_signal", self.shared_signal),
            ("task_signal", self.task_signal),
            ("interference", self.interference),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("data.{name} must be finite")));
            }
        }
        Ok(())
    }
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Direction opposing `shared` on a random half of the coordinates.
fn interference_direction(shared: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = shared.len();
    let mut coords: Vec<usize> = (0..dim).collect();
    coords.shuffle(rng);
    let keep = dim.div_ceil(2);
    let mut v = vec![0.0; dim];
    for &j in &coords[..keep] {
        v[j] = -shared[j];
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Generates a dataset; a pure function of the configuration.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.n_total;
    let d = config.feature_dim;

    let mut feature_rng = ChaCha8Rng::seed_from_u64(config.seed);
    feature_rng.set_stream(1);
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| feature_rng.sample(StandardNormal)).collect())
        .collect();
    let n_b = ((n as f64) * config.cohort_b_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut feature_rng);
    let mut cohorts = vec![Cohort::A; n];
    for &i in &order[..n_b.min(n)] {
        cohorts[i] = Cohort::B;
    }

    let mut label_rng = ChaCha8Rng::seed_from_u64(config.label_seed.unwrap_or(config.seed));
    label_rng.set_stream(2);
    let shared = unit_vector(d, &mut label_rng);
    let mut labels = vec![[LabelValue::NotCoded; TASK_COUNT]; n];
    for t in 0..TASK_COUNT {
        let own = unit_vector(d, &mut label_rng);
        let against = interference_direction(&shared, &mut label_rng);
        let direction: Vec<f64> = (0..d)
            .map(|j| {
                let v = if t == 0 { 0.0 } else { against[j] };
                config.shared_signal * shared[j]
                    + config.task_signal * own[j]
                    + config.interference * v
            })
            .collect();
        let uniforms: Vec<f64> = (0..n).map(|_| label_rng.random::<f64>()).collect();

        let coded: Vec<usize> = (0..n).filter(|&i| cohorts[i].codes(t)).collect();
        if coded.is_empty() {
            continue;
        }
        let margins: Vec<f64> = coded
            .iter()
            .map(|&i| features[i].iter().zip(&direction).map(|(x, a)| x * a).sum())
            .collect();
        let draws: Vec<f64> = coded.iter().map(|&i| uniforms[i]).collect();
        let target = config.prevalence_targets[t];
        let intercept = calibrate_intercept(&margins, &draws, config.label_noise, target);
        let positives = positive_flags(&margins, &draws, config.label_noise, intercept);
        let rate = positives.iter().filter(|&&p| p).count() as f64 / coded.len() as f64;
        let tolerance = 0.01f64.max(1.0 / coded.len() as f64);
        if (rate - target).abs() > tolerance {
            return Err(Error::Generation(format!(
                "task {} reached prevalence {rate:.4}, target {target:.4}",
                TASK_NAMES[t]
            )));
        }
        for (&i, &p) in coded.iter().zip(&positives) {
            labels[i][t] = LabelValue::from_bool(p);
        }
    }

    let width = n.saturating_sub(1).to_string().len().max(4);
    let samples = features
        .into_iter()
        .zip(labels)
        .zip(cohorts)
        .enumerate()
        .map(|(i, ((features, labels), cohort))| Sample {
            id: format!("s{i:0width$}"),
            features,
            labels,
            cohort,
        })
        .collect();
    Dataset::new(d, samples)
}

fn positive_flags(margins: &[f64], draws: &[f64], noise: f64, intercept: f64) -> Vec<bool> {
    margins
        .iter()
        .zip(draws)
        .map(|(&m, &u)| {
            let p = sigmoid(m + intercept);
            u < (1.0 - noise) * p + noise * (1.0 - p)
        })
        .collect()
}

/// Smallest intercept whose empirical positive rate reaches `target`, or
/// the one just below it when that lands closer.
fn calibrate_intercept(margins: &[f64], draws: &[f64], noise: f64, target: f64) -> f64 {
    let n = margins.len() as f64;
    let rate = |b: f64| {
        positive_flags(margins, draws, noise, b)
            .iter()
            .filter(|&&p| p)
            .count() as f64
            / n
    };
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if (rate(lo) - target).abs() < (rate(hi) - target).abs() {
        lo
    } else {
        hi
    }
}

/// Split sizes and shuffle seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 2517,
            val: 277,
            test: 592,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle followed by consecutive train/val/test slices. Samples
/// beyond `train + val + test` are left out.
pub fn split(dataset: &Dataset, sizes: &SplitSpec) -> Result<Splits> {
    let wanted = sizes.train + sizes.val + sizes.test;
    if wanted > dataset.len() {
        return Err(Error::Config(format!(
            "split needs {wanted} samples but the dataset has {}",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sizes.seed);
    rng.set_stream(3);
    order.shuffle(&mut rng);
    let take = |range: std::ops::Range<usize>| {
        Dataset::new(
            dataset.feature_dim,
            order[range]
                .iter()
                .map(|&i| dataset.samples[i].clone())
                .collect(),
        )
    };
    Ok(Splits {
        train: take(0..sizes.train)?,
        val: take(sizes.train..sizes.train + sizes.val)?,
        test: take(sizes.train + sizes.val..wanted)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_total: 400,
            feature_dim: 6,
            seed: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SynthConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cohort_b_masking() {
        let ds = synth_generate(&small()).unwrap();
        let n_b = ds
            .samples()
            .iter()
            .filter(|s| s.cohort == Cohort::B)
            .count();
        assert_eq!(n_b, (400.0 * 870.0 / 3386.0f64).round() as usize);
        for s in ds.samples() {
            for t in 0..TASK_COUNT {
                assert_eq!(s.labels[t].is_coded(), s.cohort.codes(t), "{}", s.id);
            }
        }
    }

    #[test]
    fn default_prevalences_from_cohort_counts() {
        let p = DEFAULT_PREVALENCE;
        assert!((p[0] - 0.3175).abs() < 1e-4);
        assert!((p[1] - 0.0731).abs() < 1e-4);
        assert!((p[2] - 0.1097).abs() < 1e-4);
        assert!((p[3] - 0.1264).abs() < 1e-4);
        assert!((p[4] - 0.1069).abs() < 1e-4);
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = synth_generate(&SynthConfig::default()).unwrap();
        let s = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (2517, 277, 592));
        let mut ids: Vec<&str> = s.train.ids();
        ids.extend(s.val.ids());
        ids.extend(s.test.ids());
        let unique: HashSet<&str> = ids.iter().copied().collect();
        assert_eq!(unique.len(), ds.len());
    }

    #[test]
    fn split_with_empty_test() {
        let ds = synth_generate(&small()).unwrap();
        let sizes = SplitSpec {
            train: 300,
            val: 50,
            test: 0,
            seed: 1,
        };
        let s = split(&ds, &sizes).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (300, 50, 0));
        let too_big = SplitSpec {
            train: 401,
            ..sizes
        };
        assert!(matches!(split(&ds, &too_big), Err(Error::Config(_))));
    }

    #[test]
    fn csv_rejects_bad_label() {
        let text = "id,f0,label_LC,label_AA,label_CB,label_COPD,label_E,cohort\n\
                    a,0.5,1,0,0,0,0,A\n\
                    b,0.1,2,0,0,0,0,A\n";
        match read_csv(text.as_bytes()) {
            Err(Error::Validation(msg)) => assert!(msg.contains("line 3") && msg.contains('b')),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_reports_malformed_line() {
        let text = "id,f0,label_LC,label_AA,label_CB,label_COPD,label_E,cohort\n\
                    a,0.5,1,0,0,0,0,A\n\
                    b,oops,1,0,0,0,0,A\n";
        assert!(matches!(
            read_csv(text.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        let short = "id,f0,label_LC,label_AA,label_CB,label_COPD,label_E,cohort\na,0.5,1\n";
        assert!(matches!(
            read_csv(short.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn csv_empty_inputs() {
        assert!(matches!(read_csv("".as_bytes()), Err(Error::EmptyDataset)));
        let header_only = "id,f0,label_LC,label_AA,label_CB,label_COPD,label_E,cohort\n";
        assert!(matches!(
            read_csv(header_only.as_bytes()),
            Err(Error::EmptyDataset)
        ));
    }
}
