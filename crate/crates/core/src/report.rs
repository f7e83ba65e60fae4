//! Results tables and accuracy charts.

use crate::aggregation::Aggregation;
use crate::eval::EvalReport;

pub const RESULTS_HEADER: [&str; 12] =
    ["experiment", "writers", "n", "N_s", "aggregation", "K", "trial", "top1", "top5", "top10", "epochs", "seed"];

/// One experiment's worth of rows in the results table.
#[derive(Clone, Debug)]
pub struct ResultsEntry<'a> {
    pub experiment: &'a str,
    pub writers: usize,
    pub tuple_size: usize,
    /// training patches per writer
    pub patches_per_writer: usize,
    pub aggregation: Aggregation,
    pub epochs: usize,
    pub seed: u64,
    /// `Err` marks a failed cell
    pub outcome: Result<&'a EvalReport, &'a str>,
}

/// Per-trial rows plus `mean` and `var` rows; failed entries get a single
/// `failed` row with empty metrics. Top-k columns absent from a report are empty.
pub fn results_csv(entries: &[ResultsEntry<'_>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER).expect("in-memory write");
    for e in entries {
        let k = match e.aggregation {
            Aggregation::TopKAverage(k) => k.to_string(),
            _ => String::new(),
        };
        let lead = [
            e.experiment.to_string(),
            e.writers.to_string(),
            e.tuple_size.to_string(),
            e.patches_per_writer.to_string(),
            e.aggregation.name().to_string(),
            k,
        ];
        let tail = [e.epochs.to_string(), e.seed.to_string()];
        let mut row = |trial: String, metrics: [String; 3]| {
            let rec: Vec<String> =
                lead.iter().cloned().chain(std::iter::once(trial)).chain(metrics).chain(tail.iter().cloned()).collect();
            w.write_record(&rec).expect("in-memory write");
        };
        match e.outcome {
            Err(_) => row("failed".into(), Default::default()),
            Ok(rep) => {
                let pick = |values: &[f64]| {
                    [1, 5, 10].map(|k| {
                        rep.k_list.iter().position(|&x| x == k).map(|i| values[i].to_string()).unwrap_or_default()
                    })
                };
                for (t, values) in rep.per_trial.iter().enumerate() {
                    row((t + 1).to_string(), pick(values));
                }
                row("mean".into(), pick(&rep.mean));
                row("var".into(), pick(&rep.variance));
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
}

/// A standalone SVG line chart of mean top-1 accuracy against a swept variable.
/// Each data point is drawn as a `<circle class="point">`.
pub fn accuracy_chart_svg(x_label: &str, points: &[(f64, f64)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 48.0;
    let (mut x0, mut x1) =
        points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(x, _)| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 == x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - y.clamp(0.0, 100.0) / 100.0 * (H - 2.0 * M);

    let mut s =
        format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n");
    s += &format!(
        "<line x1=\"{M}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = H - M,
        r = W - M
    );
    for tick in [0.0, 25.0, 50.0, 75.0, 100.0] {
        s += &format!(
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{tick}</text>\n",
            M - 4.0,
            py(tick) + 3.0
        );
    }
    for &(x, _) in points {
        s += &format!(
            "<text x=\"{:.1}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{x}</text>\n",
            px(x),
            H - M + 14.0
        );
    }
    s += &format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        H - 8.0,
        escape(x_label)
    );
    s += &format!(
        "<text x=\"12\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 12 {})\">mean top-1 (%)</text>\n",
        H / 2.0,
        H / 2.0
    );
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
    if points.len() > 1 {
        s += &format!(
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        );
    }
    for &(x, y) in points {
        s += &format!(
            "<circle class=\"point\" cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"><title>{x}: {y:.2}</title></circle>\n",
            px(x),
            py(y)
        );
    }
    s + "</svg>\n"
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        EvalReport {
            k_list: vec![1, 10],
            per_trial: vec![vec![50.0, 100.0], vec![100.0, 100.0]],
            mean: vec![75.0, 100.0],
            variance: vec![1250.0, 0.0],
            predictions: vec![vec![0, 0], vec![0, 1]],
        }
    }

    #[test]
    fn csv_rows() {
        let rep = report();
        let csv = results_csv(&[
            ResultsEntry {
                experiment: "base",
                writers: 2,
                tuple_size: 5,
                patches_per_writer: 55,
                aggregation: Aggregation::TopKAverage(3),
                epochs: 4,
                seed: 9,
                outcome: Ok(&rep),
            },
            ResultsEntry {
                experiment: "bad",
                writers: 2,
                tuple_size: 50,
                patches_per_writer: 55,
                aggregation: Aggregation::Average,
                epochs: 0,
                seed: 10,
                outcome: Err("too few patches"),
            },
        ]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "experiment,writers,n,N_s,aggregation,K,trial,top1,top5,top10,epochs,seed");
        assert_eq!(lines[1], "base,2,5,55,kma,3,1,50,,100,4,9");
        assert_eq!(lines[3], "base,2,5,55,kma,3,mean,75,,100,4,9");
        assert_eq!(lines[4], "base,2,5,55,kma,3,var,1250,,0,4,9");
        assert_eq!(lines[5], "bad,2,50,55,aa,,failed,,,,0,10");
        assert_eq!(lines.len(), 6);
    }

    #[test]
    fn chart_has_one_circle_per_point() {
        let svg = accuracy_chart_svg("tuple size n", &[(1.0, 60.0), (5.0, 90.0), (10.0, 97.5)]);
        assert_eq!(svg.matches("<circle class=\"point\"").count(), 3);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
