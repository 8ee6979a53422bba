use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::{r2, rmse};
use super::{EvalError, Result};
use crate::dineof::{dineof_reconstruct, DineofConfig};
use crate::grid::{
    apply_mask, gen_cloud_mask, log_transform, normalize, select_test_days, CloudMask, GridError,
    GridRect, NormStats, SceneSeries, ValueSpace, DEFAULT_MAX_MISSING_FRAC,
};
use crate::vconstruct::{
    fit_latent_prior, reconstruct_normalized, train, ArchConfig, TrainConfig, VConstructModel,
};

/// A named scoring rectangle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionSpec {
    pub name: String,
    pub rect: GridRect,
}

impl RegionSpec {
    pub fn new(name: impl Into<String>, rect: GridRect) -> Self {
        Self {
            name: name.into(),
            rect,
        }
    }

    /// The whole grid, named `all`.
    pub fn full(height: usize, width: usize) -> Self {
        Self::new("all", GridRect::full(height, width))
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let ok_name =
            !self.name.is_empty() && !self.name.contains(|c: char| c.is_whitespace() || c == ',');
        if !ok_name || self.rect.is_empty() || !self.rect.fits(height, width) {
            return Err(EvalError::BadRegion(format!(
                "{:?} {:?} on a {height}x{width} grid",
                self.name, self.rect
            )));
        }
        Ok(())
    }

    /// One region per line: `name row0 col0 row1 col1`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse_list(text: &str) -> Result<Vec<RegionSpec>> {
        let mut out = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || EvalError::BadRegion(format!("line {}: {line:?}", no + 1));
            if parts.len() != 5 {
                return Err(bad());
            }
            let n: Vec<usize> = parts[1..]
                .iter()
                .map(|p| p.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            out.push(RegionSpec::new(
                parts[0],
                GridRect::new(n[0], n[1], n[2], n[3]),
            ));
        }
        if out.is_empty() {
            return Err(EvalError::BadRegion("no regions".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Dineof,
    VConstruct,
    /// Per-pixel temporal mean of the observed values.
    Climatology,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dineof => "dineof",
            Self::VConstruct => "vconstruct",
            Self::Climatology => "climatology",
        }
    }
}

/// Space the metrics are computed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MetricsSpace {
    #[default]
    Concentration,
    Log10,
}

impl MetricsSpace {
    pub fn name(self) -> &'static str {
        match self {
            Self::Concentration => "conc",
            Self::Log10 => "log",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conc" | "concentration" => Some(Self::Concentration),
            "log" | "log10" => Some(Self::Log10),
            _ => None,
        }
    }

    fn from_normalized(self, norm: NormStats, z: f64) -> f64 {
        match self {
            Self::Concentration => norm.to_concentration(z),
            Self::Log10 => norm.inverse(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub n_test_days: usize,
    /// Drives test-day selection, the artificial masks and inference sampling.
    pub seed: u64,
    pub coverage: f64,
    /// Test days and training days must have at most this natural missing share.
    pub max_missing_frac: f64,
    pub dineof: DineofConfig,
    pub train: TrainConfig,
    /// `None` uses [`ArchConfig::desk_for`] the grid size.
    pub arch: Option<ArchConfig>,
    pub metrics_space: MetricsSpace,
    /// Replace the standard normal prior with a diagonal Gaussian fitted to
    /// the encoder outputs on the training days.
    pub fit_prior: bool,
    pub climatology: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            n_test_days: 5,
            seed: 0,
            coverage: 0.4,
            max_missing_frac: DEFAULT_MAX_MISSING_FRAC,
            dineof: DineofConfig::default(),
            train: TrainConfig::default(),
            arch: None,
            metrics_space: MetricsSpace::Concentration,
            fit_prior: false,
            climatology: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    /// Series index of the test day; `None` on mean rows.
    pub day: Option<usize>,
    pub region: String,
    pub method: Method,
    /// NaN when the region has no scored pixel that day.
    pub rmse: f64,
    /// NaN when fewer than 2 scored pixels or the truth is constant.
    pub r2: f64,
    pub n_pixels: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub space: MetricsSpace,
    pub coverage: f64,
    pub test_days: Vec<usize>,
    pub training_days: Vec<usize>,
    pub rows: Vec<MetricRow>,
    /// One per (region, method), averaged over the per-day rows with a
    /// finite value.
    pub means: Vec<MetricRow>,
    pub dineof_k_star: usize,
    pub dineof_seconds: f64,
    pub train_seconds: f64,
}

impl MetricsReport {
    pub fn mean(&self, region: &str, method: Method) -> Option<&MetricRow> {
        self.means
            .iter()
            .find(|r| r.region == region && r.method == method)
    }

    pub fn rows_for<'a>(
        &'a self,
        region: &'a str,
        method: Method,
    ) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.region == region && r.method == method)
    }

    /// `day,region,method,rmse,r2,seconds`; mean rows have day `mean`.
    pub fn to_csv(&self) -> String {
        self.csv(true)
    }

    /// [`Self::to_csv`] without the timing column, so it depends only on the
    /// inputs and seeds.
    pub fn metrics_csv(&self) -> String {
        self.csv(false)
    }

    fn csv(&self, timing: bool) -> String {
        let mut out = String::from("day,region,method,rmse,r2");
        out.push_str(if timing { ",seconds\n" } else { "\n" });
        for r in self.rows.iter().chain(&self.means) {
            let day = r.day.map_or("mean".to_string(), |d| d.to_string());
            let _ = write!(
                out,
                "{day},{},{},{},{}",
                r.region,
                r.method.name(),
                r.rmse,
                r.r2
            );
            if timing {
                let _ = write!(out, ",{:.6}", r.seconds);
            }
            out.push('\n');
        }
        out
    }

    /// Days down, `(method, rmse / r2)` across, one block per region.
    pub fn to_table(&self) -> String {
        let mut methods: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        methods.sort();
        methods.dedup();
        let mut regions: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !regions.contains(&r.region.as_str()) {
                regions.push(&r.region);
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "masked-pixel metrics ({} space, coverage {})",
            self.space.name(),
            self.coverage
        );
        for region in regions {
            let _ = writeln!(out, "\nregion {region}");
            let _ = write!(out, "{:>6}", "day");
            for m in &methods {
                let _ = write!(out, " | {:^21}", m.name());
            }
            let _ = write!(out, "\n{:>6}", "");
            for _ in &methods {
                let _ = write!(out, " | {:>10} {:>10}", "rmse", "r2");
            }
            out.push('\n');
            for &d in &self.test_days {
                let cells: Vec<_> = methods
                    .iter()
                    .map(|&m| {
                        self.rows
                            .iter()
                            .find(|r| r.day == Some(d) && r.region == region && r.method == m)
                    })
                    .collect();
                table_line(&mut out, &d.to_string(), &cells);
            }
            let cells: Vec<_> = methods.iter().map(|&m| self.mean(region, m)).collect();
            table_line(&mut out, "mean", &cells);
        }
        let _ = writeln!(
            out,
            "\ndineof k*={} ({:.2} s for the full series); vconstruct trained in {:.2} s on {} days",
            self.dineof_k_star,
            self.dineof_seconds,
            self.train_seconds,
            self.training_days.len()
        );
        out.push_str(
            "note: DINEOF fills the test days inside the full series, so it also sees \
             every other day's pixels; VConstruct sees only the test image.\n",
        );
        out
    }
}

fn table_line(out: &mut String, label: &str, cells: &[Option<&MetricRow>]) {
    let _ = write!(out, "{label:>6}");
    for c in cells {
        match c {
            Some(r) => {
                let _ = write!(out, " | {:>10.4} {:>10.3}", r.rmse, r.r2);
            }
            None => {
                let _ = write!(out, " | {:>10} {:>10}", "-", "-");
            }
        }
    }
    out.push('\n');
}

/// Per-region scoring masks for one test day: hidden by the artificial mask
/// and observed in the truth.
fn scored_pixels(truth_obs: &Array2<bool>, mask: &CloudMask, rect: GridRect) -> Array2<bool> {
    Array2::from_shape_fn(truth_obs.dim(), |(r, c)| {
        mask.pattern()[[r, c]] && truth_obs[[r, c]] && rect.contains(r, c)
    })
}

fn score(pred: &Array2<f64>, truth: &Array2<f64>, sel: &Array2<bool>) -> (f64, f64, usize) {
    let n = sel.iter().filter(|&&b| b).count();
    let e = rmse(pred.view(), truth.view(), sel.view()).unwrap_or(f64::NAN);
    let d = r2(pred.view(), truth.view(), sel.view()).unwrap_or(f64::NAN);
    (e, d, n)
}

fn finite_mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v.filter(|x| x.is_finite()) {
        s += x;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Hides artificial clouds on `n_test_days` near-complete days, fills them
/// with every method and scores the hidden pixels per region.
///
/// The masked series is normalized after masking, so the withheld truth never
/// reaches either method. DINEOF fills the masked days in place inside the
/// full series; VConstruct trains on the remaining near-complete days and
/// reconstructs each masked day on its own.
pub fn run_experiment(
    series: &SceneSeries,
    regions: &[RegionSpec],
    protocol: &Protocol,
) -> Result<MetricsReport> {
    let (h, w) = series.dim();
    if regions.is_empty() {
        return Err(EvalError::BadRegion("no regions".into()));
    }
    for r in regions {
        r.validate(h, w)?;
    }
    let log_truth = match series.space() {
        ValueSpace::Concentration => log_transform(series)?,
        ValueSpace::Log10 => series.clone(),
        other => {
            return Err(GridError::WrongSpace {
                expected: "concentration or log10",
                found: other.name(),
            }
            .into())
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let test_days = select_test_days(
        &log_truth,
        protocol.max_missing_frac,
        protocol.n_test_days,
        rng.random(),
    )?;
    let mut masked = log_truth.clone();
    let mut masks = Vec::with_capacity(test_days.len());
    for &t in &test_days {
        let mask = gen_cloud_mask(h, w, series.land(), protocol.coverage, rng.random())?;
        masked = masked.with_scene(t, apply_mask(log_truth.scene(t), &mask)?)?;
        masks.push(mask);
    }
    let (masked_norm, norm) = normalize(&masked)?;
    let space = protocol.metrics_space;
    let to_metric = |log10: f64| match space {
        MetricsSpace::Concentration => 10f64.powf(log10),
        MetricsSpace::Log10 => log10,
    };

    let mut preds: Vec<(Method, Vec<Array2<f64>>, Vec<f64>)> = Vec::new();

    let t0 = Instant::now();
    let (filled, _, fill_report) = dineof_reconstruct(&masked_norm, &protocol.dineof)?;
    let dineof_seconds = t0.elapsed().as_secs_f64();
    preds.push((
        Method::Dineof,
        test_days
            .iter()
            .map(|&t| {
                filled
                    .scene(t)
                    .values()
                    .mapv(|z| space.from_normalized(norm, z))
            })
            .collect(),
        vec![dineof_seconds; test_days.len()],
    ));

    let arch = protocol
        .arch
        .clone()
        .unwrap_or_else(|| ArchConfig::desk_for(h * w));
    let mut train_cfg = protocol.train.clone();
    train_cfg.max_missing_frac = protocol.max_missing_frac;
    train_cfg.exclude_days.extend(&test_days);
    let t0 = Instant::now();
    let (mut model, log) = train(&masked_norm, arch, &train_cfg)?;
    if protocol.fit_prior {
        model.prior = fit_latent_prior(&model, &masked_norm, &log.training_days)?;
    }
    let train_seconds = t0.elapsed().as_secs_f64();
    if let Some(&d) = log.training_days.iter().find(|d| test_days.contains(d)) {
        return Err(EvalError::Leak(d));
    }
    let (vc, vc_secs) = vconstruct_arm(&model, &masked_norm, &test_days, space, &mut rng)?;
    preds.push((Method::VConstruct, vc, vc_secs));

    if protocol.climatology {
        let t0 = Instant::now();
        let clim = climatology(&masked, &to_metric);
        let secs = t0.elapsed().as_secs_f64();
        preds.push((
            Method::Climatology,
            vec![clim; test_days.len()],
            vec![secs; test_days.len()],
        ));
    }

    let mut rows = Vec::new();
    for (i, &t) in test_days.iter().enumerate() {
        let truth_scene = log_truth.scene(t);
        let truth = truth_scene.values().mapv(to_metric);
        let truth_obs = truth_scene.status().mapv(|s| s.is_observed());
        for region in regions {
            let sel = scored_pixels(&truth_obs, &masks[i], region.rect);
            for (method, p, secs) in &preds {
                let (e, d, n) = score(&p[i], &truth, &sel);
                rows.push(MetricRow {
                    day: Some(t),
                    region: region.name.clone(),
                    method: *method,
                    rmse: e,
                    r2: d,
                    n_pixels: n,
                    seconds: secs[i],
                });
            }
        }
    }
    let mut means = Vec::new();
    for region in regions {
        for (method, _, _) in &preds {
            let sel: Vec<&MetricRow> = rows
                .iter()
                .filter(|r| r.region == region.name && r.method == *method)
                .collect();
            means.push(MetricRow {
                day: None,
                region: region.name.clone(),
                method: *method,
                rmse: finite_mean(sel.iter().map(|r| r.rmse)),
                r2: finite_mean(sel.iter().map(|r| r.r2)),
                n_pixels: sel.iter().map(|r| r.n_pixels).sum(),
                seconds: finite_mean(sel.iter().map(|r| r.seconds)),
            });
        }
    }
    Ok(MetricsReport {
        space,
        coverage: protocol.coverage,
        test_days,
        training_days: log.training_days,
        rows,
        means,
        dineof_k_star: fill_report.k_star,
        dineof_seconds,
        train_seconds,
    })
}

fn vconstruct_arm(
    model: &VConstructModel<f32>,
    masked_norm: &SceneSeries,
    test_days: &[usize],
    space: MetricsSpace,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Array2<f64>>, Vec<f64>)> {
    let mut preds = Vec::with_capacity(test_days.len());
    let mut secs = Vec::with_capacity(test_days.len());
    for &t in test_days {
        let t0 = Instant::now();
        let out = reconstruct_normalized(model, masked_norm.scene(t), rng)?;
        secs.push(t0.elapsed().as_secs_f64());
        preds.push(out.values().mapv(|z| space.from_normalized(model.norm, z)));
    }
    Ok((preds, secs))
}

/// Per-pixel mean over observed days of `series` (log10), in metric space.
/// Pixels never observed get the mean of all observed values.
fn climatology(series: &SceneSeries, to_metric: &dyn Fn(f64) -> f64) -> Array2<f64> {
    let dim = series.dim();
    let mut sum = Array2::<f64>::zeros(dim);
    let mut count = Array2::<usize>::zeros(dim);
    for sc in series.scenes() {
        for (((r, c), &st), &v) in sc.status().indexed_iter().zip(sc.values().iter()) {
            if st.is_observed() {
                sum[[r, c]] += to_metric(v);
                count[[r, c]] += 1;
            }
        }
    }
    let total: usize = count.sum();
    let overall = if total == 0 {
        0.0
    } else {
        sum.sum() / total as f64
    };
    Array2::from_shape_fn(dim, |(r, c)| {
        if count[[r, c]] > 0 {
            sum[[r, c]] / count[[r, c]] as f64
        } else {
            overall
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_region_lists() {
        let text = "# name r0 c0 r1 c1\nplume 10 2 22 14\n\nall 0 0 32 32\n";
        let r = RegionSpec::parse_list(text).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0], RegionSpec::new("plume", GridRect::new(10, 2, 22, 14)));
        assert!(RegionSpec::parse_list("x 1 2 3").is_err());
        assert!(RegionSpec::parse_list("x 1 2 3 a").is_err());
        assert!(RegionSpec::parse_list("# nothing\n").is_err());
    }

    #[test]
    fn region_bounds() {
        assert!(RegionSpec::full(4, 4).validate(4, 4).is_ok());
        assert!(RegionSpec::new("a", GridRect::new(0, 0, 5, 1))
            .validate(4, 4)
            .is_err());
        assert!(RegionSpec::new("a", GridRect::new(2, 2, 2, 3))
            .validate(4, 4)
            .is_err());
        assert!(RegionSpec::new("a,b", GridRect::new(0, 0, 1, 1))
            .validate(4, 4)
            .is_err());
    }

    #[test]
    fn finite_mean_skips_nan() {
        assert_eq!(finite_mean([1.0, f64::NAN, 3.0].into_iter()), 2.0);
        assert!(finite_mean([f64::NAN].into_iter()).is_nan());
    }

    #[test]
    fn metrics_space_names_round_trip() {
        for s in [MetricsSpace::Concentration, MetricsSpace::Log10] {
            assert_eq!(MetricsSpace::parse(s.name()), Some(s));
        }
        assert_eq!(MetricsSpace::parse("linear"), None);
    }
}
