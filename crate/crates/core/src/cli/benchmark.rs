use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use log::info;

use crate::baselines::fit_independent_gaussian;
use crate::error::Result;
use crate::model::{ModelKind, ModelSpec};
use crate::predict::log_score;
use crate::simdata::{gen_scenario, GeneratorSpec};
use crate::train::{fit, TrainConfig};

#[derive(Debug, Clone)]
pub struct BenchmarkSetup {
    /// Scenario settings; the seed is replaced by each entry of `seeds`.
    pub generator: GeneratorSpec,
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_test: usize,
    pub models: Vec<ModelKind>,
    /// Settings of the full model; the linear baseline drops the nonlinear term.
    pub spec: ModelSpec,
    /// Training settings; the seed is replaced by the scenario seed.
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub scenario: String,
    /// A model name or `truth`.
    pub model: String,
    pub n: usize,
    pub seed: u64,
    pub score: f64,
    /// Wall time of fitting and scoring (not written to the CSV).
    pub seconds: f64,
}

/// For each seed the scenario is generated once with the largest n; smaller
/// ensembles are its leading replicates and all share one test set.
pub fn run_benchmark(setup: &BenchmarkSetup) -> Result<Vec<BenchmarkRow>> {
    let max_n = setup.n_list.iter().copied().max().unwrap_or(0);
    let scenario = setup.generator.scenario.name().to_string();
    let mut rows = Vec::new();
    for &seed in &setup.seeds {
        let gen = GeneratorSpec { seed, ..setup.generator.clone() };
        let data = gen_scenario(&gen, max_n, setup.n_test)?;
        let truth = data.truth.scores(&data.test).iter().sum::<f64>() / setup.n_test as f64;
        for &n in &setup.n_list {
            let train = data.train.head(n);
            for &kind in &setup.models {
                let start = Instant::now();
                let score = match kind {
                    ModelKind::Indep => log_score(&fit_independent_gaussian(&train)?, &data.test)?.mean,
                    _ => {
                        let spec = ModelSpec { nonlinear: kind != ModelKind::Linear, ..setup.spec };
                        let config = TrainConfig { seed, ..setup.config.clone() };
                        log_score(&fit(&train, &data.locations, &spec, &config)?, &data.test)?.mean
                    }
                };
                let seconds = start.elapsed().as_secs_f64();
                info!("{scenario} seed {seed} n {n} {}: {score:.3} ({seconds:.1} s)", kind.name());
                rows.push(BenchmarkRow { scenario: scenario.clone(), model: kind.name().into(), n, seed, score, seconds });
            }
            rows.push(BenchmarkRow { scenario: scenario.clone(), model: "truth".into(), n, seed, score: truth, seconds: 0.0 });
        }
    }
    Ok(rows)
}

const COLORS: [&str; 5] = ["#1b9e77", "#d95f02", "#7570b3", "#444444", "#e7298a"];

/// Line chart of the seed-averaged score against n, one line per model.
pub fn render_svg(rows: &[BenchmarkRow]) -> String {
    let mut series: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        series.entry(&r.model).or_default().entry(r.n).or_default().push(r.score);
    }
    let points: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(m, by_n)| (*m, by_n.iter().map(|(n, s)| (*n as f64, s.iter().sum::<f64>() / s.len() as f64)).collect()))
        .collect();
    let all = points.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 80.0, 130.0, 30.0, 50.0);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{l} {t} V{b} H{r}" fill="none" stroke="black"/>"#,
        l = left,
        t = top,
        b = h - bottom,
        r = w - right
    )
    .unwrap();
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}</text>"#, left - 6.0, py(y) + 4.0, y).unwrap();
    }
    let mut xs: Vec<f64> = points.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, px(x), h - bottom + 18.0).unwrap();
    }
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">ensemble size n</text>"#, (left + w - right) / 2.0, h - 10.0).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">mean negative log score</text>"#,
        h / 2.0,
        h / 2.0
    )
    .unwrap();
    for (k, (model, pts)) in points.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" ")).unwrap();
        for &(x, y) in pts {
            writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y)).unwrap();
        }
        let ly = top + 18.0 * k as f64;
        writeln!(s, r#"<rect x="{:.1}" y="{:.1}" width="12" height="3" fill="{color}"/>"#, w - right + 12.0, ly + 4.0).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}">{model}</text>"#, w - right + 30.0, ly + 9.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_line_per_model() {
        let row = |model: &str, n, score| BenchmarkRow {
            scenario: "block-average".into(),
            model: model.into(),
            n,
            seed: 1,
            score,
            seconds: 0.0,
        };
        let rows = vec![row("mfbtm", 10, 5.0), row("mfbtm", 50, 3.0), row("indep", 10, 9.0), row("indep", 50, 8.0)];
        let svg = render_svg(&rows);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
