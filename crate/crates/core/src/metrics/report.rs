use std::fmt::Write;

use super::MetricReport;
use crate::error::{Result, StoneError};

/// Lead 1 plus `round(m·K/6)` for `m = 1..6`, deduplicated and ascending.
pub fn table_leads(k_fut: usize) -> Vec<usize> {
    let mut leads = vec![1];
    for m in 1..=6 {
        let lead = ((m * k_fut) as f64 / 6.0).round() as usize;
        if lead >= 1 && !leads.contains(&lead) {
            leads.push(lead);
        }
    }
    leads.sort_unstable();
    leads
}

fn same_leads(reports: &[MetricReport]) -> Result<usize> {
    let k = reports.first().map_or(0, MetricReport::leads);
    if k == 0 || reports.iter().any(|r| r.leads() != k) {
        return Err(StoneError::Contract("reports must share a non-zero lead count".into()));
    }
    Ok(k)
}

/// `model,lead,rel_l2,rmse,mae,mape,excluded_points`, one row per model and lead.
pub fn report_csv(reports: &[MetricReport]) -> Result<String> {
    same_leads(reports)?;
    let mut out = String::from("model,lead,rel_l2,rmse,mae,mape,excluded_points\n");
    for r in reports {
        for k in 0..r.leads() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.label,
                k + 1,
                r.rel_l2[k],
                r.rmse[k],
                r.mae[k],
                r.mape[k],
                r.excluded[k]
            )
            .expect("write to string");
        }
    }
    Ok(out)
}

/// `model,lead_1..lead_K` with relative L2 values.
pub fn heatmap_csv(reports: &[MetricReport]) -> Result<String> {
    let k = same_leads(reports)?;
    let mut out = String::from("model");
    for lead in 1..=k {
        write!(out, ",lead_{lead}").expect("write to string");
    }
    out.push('\n');
    for r in reports {
        out.push_str(&r.label);
        for v in &r.rel_l2 {
            write!(out, ",{v}").expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Models side by side at [`table_leads`]; `best` lists the metrics on which a
/// model has the lowest value at that lead.
pub fn comparison_csv(reports: &[MetricReport]) -> Result<String> {
    let k = same_leads(reports)?;
    let mut out = String::from("lead,model,rel_l2,rmse,mae,mape,best\n");
    for lead in table_leads(k) {
        let i = lead - 1;
        let columns: [(&str, Vec<f64>); 4] = [
            ("rel_l2", reports.iter().map(|r| r.rel_l2[i]).collect()),
            ("rmse", reports.iter().map(|r| r.rmse[i]).collect()),
            ("mae", reports.iter().map(|r| r.mae[i]).collect()),
            ("mape", reports.iter().map(|r| r.mape[i]).collect()),
        ];
        for (m, r) in reports.iter().enumerate() {
            let best: Vec<&str> = columns
                .iter()
                .filter(|(_, vals)| vals.iter().all(|&v| vals[m] <= v))
                .map(|(name, _)| *name)
                .collect();
            writeln!(
                out,
                "{lead},{},{},{},{},{},{}",
                r.label,
                r.rel_l2[i],
                r.rmse[i],
                r.mae[i],
                r.mape[i],
                best.join(";")
            )
            .expect("write to string");
        }
    }
    Ok(out)
}
