//! Ordering metrics, summary tables and PCA export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adapt::Variant;
use crate::downstream::{F1Matrix, SuccessLabels};
use crate::error::{Error, Result};
use crate::meta::Ordering;

/// Sources for `target` sorted by mean F1 (descending, ties by name).
pub fn true_ordering(m: &F1Matrix, target: &str) -> Result<Ordering> {
    let t = m.index(target)?;
    let mut scored: Vec<(String, f64)> = m
        .domains
        .iter()
        .enumerate()
        .filter(|&(s, _)| s != t)
        .map(|(s, name)| (name.clone(), m.mean[s][t]))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Ordering {
        target: target.to_string(),
        ranked_sources: scored.iter().map(|s| s.0.clone()).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
    })
}

fn same_candidates(pred: &[String], truth: &[String]) -> Result<()> {
    let a: BTreeSet<&String> = pred.iter().collect();
    let b: BTreeSet<&String> = truth.iter().collect();
    if a != b || a.len() != pred.len() || b.len() != truth.len() {
        return Err(Error::invalid("ordering metrics", "orderings rank different candidate sets"));
    }
    Ok(())
}

/// Fraction of positions holding the same source in both orderings.
pub fn crp(pred: &[String], truth: &[String]) -> Result<f64> {
    same_candidates(pred, truth)?;
    if truth.is_empty() {
        return Err(Error::invalid("crp", "empty ordering"));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Overlap of the two top-`n` sets, divided by `n`.
pub fn top_n(pred: &[String], truth: &[String], n: usize) -> Result<f64> {
    same_candidates(pred, truth)?;
    if n == 0 || n > truth.len() {
        return Err(Error::invalid("top_n", format!("n = {n} outside 1..={}", truth.len())));
    }
    let top: BTreeSet<&String> = truth[..n].iter().collect();
    Ok(pred[..n].iter().filter(|s| top.contains(s)).count() as f64 / n as f64)
}

pub const TABLE1_METRICS: [&str; 6] = ["f1", "acc", "crp", "top1", "top3", "top5"];

/// Per-target meta-classifier results for one (mode, variant) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetResult {
    pub target: String,
    pub f1: f64,
    pub accuracy: f64,
    pub prediction: Ordering,
    pub truth: Ordering,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    pub variants: Vec<Variant>,
    pub targets: Vec<String>,
    /// `values[target][variant]` = F1, Acc, CRP, Top1, Top3, Top5.
    pub values: Vec<Vec<[f64; 6]>>,
    pub average: Vec<[f64; 6]>,
}

/// Builds the ordering table for one mode. Top-N uses `min(N, candidates)`
/// so small worlds still report all columns.
pub fn build_table1(results: &BTreeMap<Variant, Vec<TargetResult>>) -> Result<OrderingReport> {
    let variants: Vec<Variant> = results.keys().copied().collect();
    let Some(first) = results.values().next() else {
        return Err(Error::invalid("table1", "no results"));
    };
    let mut targets: Vec<String> = first.iter().map(|r| r.target.clone()).collect();
    targets.sort();
    let mut values = Vec::with_capacity(targets.len());
    for t in &targets {
        let mut row = Vec::with_capacity(variants.len());
        for v in &variants {
            let r = results[v]
                .iter()
                .find(|r| &r.target == t)
                .ok_or_else(|| Error::invalid("table1", format!("missing cell for target {t}, variant {v}")))?;
            let (p, q) = (&r.prediction.ranked_sources, &r.truth.ranked_sources);
            let n = q.len();
            row.push([
                r.f1,
                r.accuracy,
                crp(p, q)?,
                top_n(p, q, 1.min(n))?,
                top_n(p, q, 3.min(n))?,
                top_n(p, q, 5.min(n))?,
            ]);
        }
        values.push(row);
    }
    for v in &variants {
        if results[v].len() != targets.len() {
            return Err(Error::invalid("table1", format!("variant {v} covers a different target set")));
        }
    }
    let average = (0..variants.len())
        .map(|j| {
            let mut acc = [0.0; 6];
            for row in &values {
                for (a, x) in acc.iter_mut().zip(row[j]) {
                    *a += x;
                }
            }
            acc.map(|a| a / targets.len() as f64)
        })
        .collect();
    Ok(OrderingReport {
        variants,
        targets,
        values,
        average,
    })
}

fn grid_rows(report: &OrderingReport) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["target".to_string()];
    for v in &report.variants {
        header.extend(TABLE1_METRICS.iter().map(|m| format!("{v}_{m}")));
    }
    let fmt_row = |name: &str, cells: &[[f64; 6]]| {
        let mut r = vec![name.to_string()];
        r.extend(cells.iter().flat_map(|c| c.iter().map(|x| format!("{x:.4}"))));
        r
    };
    let mut rows: Vec<Vec<String>> = report.targets.iter().zip(&report.values).map(|(t, v)| fmt_row(t, v)).collect();
    rows.push(fmt_row("AVERAGE", &report.average));
    (header, rows)
}

fn to_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn to_text(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|j| rows.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (j, c) in cells.iter().enumerate() {
            if j == 0 {
                write!(s, "{c:<w$}", w = widths[j]).unwrap();
            } else {
                write!(s, "  {c:>w$}", w = widths[j]).unwrap();
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header);
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

impl OrderingReport {
    pub fn to_csv(&self) -> String {
        let (h, r) = grid_rows(self);
        to_csv(&h, &r)
    }

    pub fn to_text(&self) -> String {
        let (h, r) = grid_rows(self);
        to_text(&h, &r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRow {
    pub domain: String,
    pub in_domain_f1: f64,
    /// Per variant: mean cross-domain F1 over the other domains as sources.
    pub cross_f1: Vec<f64>,
    /// Per variant: number of sources judged successful for this target.
    pub successes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub variants: Vec<Variant>,
    pub rows: Vec<TransferRow>,
    /// Per variant: mean normalized score over all ordered pairs.
    pub mean_normalized: Vec<f64>,
}

pub fn build_table2(matrices: &BTreeMap<Variant, (F1Matrix, SuccessLabels)>) -> Result<TransferReport> {
    let variants: Vec<Variant> = matrices.keys().copied().collect();
    let Some((first, _)) = matrices.values().next() else {
        return Err(Error::invalid("table2", "no matrices"));
    };
    let domains = first.domains.clone();
    if domains.len() < 2 {
        return Err(Error::invalid("table2", "need at least 2 domains"));
    }
    let mut rows = Vec::with_capacity(domains.len());
    for (t, name) in domains.iter().enumerate() {
        let mut cross_f1 = Vec::new();
        let mut successes = Vec::new();
        for (m, labels) in matrices.values() {
            if m.domains != domains {
                return Err(Error::invalid("table2", "matrices cover different domains"));
            }
            let others: Vec<f64> = (0..domains.len()).filter(|&s| s != t).map(|s| m.mean[s][t]).collect();
            cross_f1.push(others.iter().sum::<f64>() / others.len() as f64);
            successes.push(labels.success.iter().filter(|((_, tg), ok)| tg == name && **ok).count());
        }
        rows.push(TransferRow {
            domain: name.clone(),
            in_domain_f1: first.mean[t][t],
            cross_f1,
            successes,
        });
    }
    Ok(TransferReport {
        mean_normalized: matrices.values().map(|(_, l)| l.mean_normalized()).collect(),
        variants,
        rows,
    })
}

impl TransferReport {
    fn grid(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["domain".to_string(), "in_domain_f1".to_string()];
        header.extend(self.variants.iter().map(|v| format!("{v}_cross_f1")));
        header.extend(self.variants.iter().map(|v| format!("{v}_successes")));
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut c = vec![r.domain.clone(), format!("{:.4}", r.in_domain_f1)];
                c.extend(r.cross_f1.iter().map(|x| format!("{x:.4}")));
                c.extend(r.successes.iter().map(|x| x.to_string()));
                c
            })
            .collect();
        let n = self.rows.len() as f64;
        let mut avg = vec![
            "AVERAGE".to_string(),
            format!("{:.4}", self.rows.iter().map(|r| r.in_domain_f1).sum::<f64>() / n),
        ];
        for j in 0..self.variants.len() {
            avg.push(format!("{:.4}", self.rows.iter().map(|r| r.cross_f1[j]).sum::<f64>() / n));
        }
        for j in 0..self.variants.len() {
            avg.push(format!("{:.4}", self.rows.iter().map(|r| r.successes[j] as f64).sum::<f64>() / n));
        }
        rows.push(avg);
        let mut norm = vec!["NORMALIZED".to_string(), String::new()];
        norm.extend(self.mean_normalized.iter().map(|x| format!("{x:.4}")));
        norm.extend(self.variants.iter().map(|_| String::new()));
        rows.push(norm);
        (header, rows)
    }

    pub fn to_csv(&self) -> String {
        let (h, r) = self.grid();
        to_csv(&h, &r)
    }

    pub fn to_text(&self) -> String {
        let (h, r) = self.grid();
        to_text(&h, &r)
    }
}

/// Leading principal component of a symmetric PSD matrix by power iteration.
fn power_iteration(c: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> (DVector<f64>, f64) {
    let n = c.nrows();
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let mut w = c * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return (v, 0.0);
        }
        w /= norm;
        let delta = (&w - &v).norm().min((&w + &v).norm());
        v = w;
        lambda = norm;
        if delta < 1e-9 {
            break;
        }
    }
    (v, lambda)
}

/// Top-2 principal-component projection of the pooled, mean-centered points
/// (one per column). Returns the projected coordinates (2 × n) and the
/// components as columns (d × 2).
pub fn pca_2d(x: &DMatrix<f64>, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if x.ncols() < 2 || x.nrows() == 0 {
        return Err(Error::invalid("pca", "need at least 2 points"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("pca", "non-finite input"));
    }
    let mean = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = &centered * centered.transpose() / (x.ncols() as f64 - 1.0);
    if cov.trace() <= 1e-300 {
        return Err(Error::numerical("pca", "data has zero variance"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v1, l1) = power_iteration(&cov, &mut rng);
    let deflated = &cov - &v1 * v1.transpose() * l1;
    let mut v2 = if x.nrows() > 1 {
        power_iteration(&deflated, &mut rng).0
    } else {
        DVector::zeros(1)
    };
    // Guard against drift back into the first component.
    v2 -= &v1 * v1.dot(&v2);
    let n2 = v2.norm();
    if n2 > 0.0 {
        v2 /= n2;
    }
    let comps = DMatrix::from_columns(&[v1, v2]);
    Ok((comps.transpose() * centered, comps))
}

/// CSV rows `domain,x,y` for source then target points.
pub fn pca_export(source_name: &str, xs: &DMatrix<f64>, target_name: &str, xt: &DMatrix<f64>, seed: u64) -> Result<String> {
    if xs.nrows() != xt.nrows() {
        return Err(Error::invalid("pca_export", "source and target dimensions differ"));
    }
    let mut pooled = DMatrix::zeros(xs.nrows(), xs.ncols() + xt.ncols());
    pooled.columns_mut(0, xs.ncols()).copy_from(xs);
    pooled.columns_mut(xs.ncols(), xt.ncols()).copy_from(xt);
    let (proj, _) = pca_2d(&pooled, seed)?;
    let mut out = String::from("domain,x,y\n");
    for j in 0..pooled.ncols() {
        let name = if j < xs.ncols() { source_name } else { target_name };
        writeln!(out, "{name},{:.16e},{:.16e}", proj[(0, j)], proj[(1, j)]).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn v(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn metric_edge_cases() {
        let a = v(&["a", "b", "c", "d"]);
        let rev: Vec<String> = a.iter().rev().cloned().collect();
        assert_eq!(crp(&a, &a).unwrap(), 1.0);
        assert_eq!(crp(&rev, &a).unwrap(), 0.0);
        assert_eq!(top_n(&rev, &a, 4).unwrap(), 1.0);
        assert!(top_n(&a, &a, 5).is_err());
        assert!(crp(&a, &v(&["a", "b", "c", "e"])).is_err());
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_renaming(seed in any::<u64>(), n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            let mut pred = truth.clone();
            pred.shuffle(&mut rng);
            let mut names: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
            names.shuffle(&mut rng);
            let rename = |o: &[String]| -> Vec<String> {
                o.iter().map(|s| names[s[1..].parse::<usize>().unwrap()].clone()).collect()
            };
            let (p2, t2) = (rename(&pred), rename(&truth));
            prop_assert_eq!(crp(&pred, &truth).unwrap(), crp(&p2, &t2).unwrap());
            for k in 1..=n {
                prop_assert_eq!(top_n(&pred, &truth, k).unwrap(), top_n(&p2, &t2, k).unwrap());
            }
            prop_assert_eq!(top_n(&pred, &truth, n).unwrap(), 1.0);
            let t1 = top_n(&pred, &truth, 1).unwrap();
            prop_assert!(t1 == 0.0 || t1 == 1.0);
        }
    }

    fn matrix(domains: &[&str], cols: &[(usize, usize, f64)]) -> F1Matrix {
        let n = domains.len();
        let mut m = vec![vec![0.5; n]; n];
        for &(s, t, x) in cols {
            m[s][t] = x;
        }
        F1Matrix::from_per_seed(Variant::Dt, v(domains), vec![1], vec![m]).unwrap()
    }

    #[test]
    fn true_ordering_ties_are_lexicographic() {
        let m = matrix(&["t", "c", "a", "b"], &[(1, 0, 0.9), (2, 0, 0.4), (3, 0, 0.4)]);
        assert_eq!(true_ordering(&m, "t").unwrap().ranked_sources, v(&["c", "a", "b"]));
    }

    fn result(target: &str, pred: &[&str], truth: &[&str], f1: f64) -> TargetResult {
        let o = |s: &[&str]| Ordering { target: target.into(), ranked_sources: v(s), scores: vec![0.0; s.len()] };
        TargetResult { target: target.into(), f1, accuracy: 0.5, prediction: o(pred), truth: o(truth) }
    }

    #[test]
    fn table1_average_and_missing_cell() {
        let mut results = BTreeMap::new();
        results.insert(
            Variant::Dt,
            vec![result("x", &["a", "b"], &["a", "b"], 0.2), result("y", &["b", "a"], &["a", "b"], 0.6)],
        );
        let rep = build_table1(&results).unwrap();
        for k in 0..6 {
            let mean = (rep.values[0][0][k] + rep.values[1][0][k]) / 2.0;
            assert!((rep.average[0][k] - mean).abs() < 1e-12);
        }
        assert!(rep.to_csv().starts_with("target,dt_f1,dt_acc,dt_crp,dt_top1,dt_top3,dt_top5\n"));
        assert!(rep.to_text().contains("AVERAGE"));

        results.insert(Variant::Msdar, vec![result("x", &["a", "b"], &["a", "b"], 0.2)]);
        assert!(build_table1(&results).is_err());

        let mut single = BTreeMap::new();
        single.insert(Variant::Sda, vec![result("x", &["a"], &["a"], 1.0)]);
        let rep = build_table1(&single).unwrap();
        assert_eq!(rep.values[0][0], rep.average[0]);
    }

    #[test]
    fn table2_saturates_success_counts() {
        let m = matrix(&["a", "b", "c"], &[(0, 0, 0.6), (1, 1, 0.6), (2, 2, 0.6)]);
        let labels = crate::downstream::success_labels(&m, 0.8).unwrap();
        let mut all = BTreeMap::new();
        all.insert(Variant::Dt, (m, labels));
        let rep = build_table2(&all).unwrap();
        assert!(rep.rows.iter().all(|r| r.successes == vec![2]));
        assert!((rep.rows[0].cross_f1[0] - 0.5).abs() < 1e-15);
        assert!(rep.to_csv().contains("NORMALIZED"));
    }

    #[test]
    fn pca_recovers_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(2, 200, |i, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if i == 0 { 5.0 * z } else { z }
        });
        let (proj, comps) = pca_2d(&x, 1).unwrap();
        assert!(comps[(0, 0)].abs() > 0.999);
        assert!(comps[(1, 1)].abs() > 0.999);
        let var = |r: usize| proj.row(r).iter().map(|v| v * v).sum::<f64>();
        assert!(var(0) >= var(1));
        let csv = pca_export("s", &x.columns(0, 120).into_owned(), "t", &x.columns(120, 80).into_owned(), 1).unwrap();
        assert_eq!(csv.lines().count(), 201);
        assert!(pca_2d(&DMatrix::from_element(3, 5, 1.0), 1).is_err());
    }
}
