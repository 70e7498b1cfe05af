use std::fmt::Write as _;
use std::path::Path;

use super::experiment::{MeanStd, ResultBundle};
use crate::error::Result;

/// 17 significant digits, `.` separator.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

pub fn series_csv(bundle: &ResultBundle) -> String {
    let mut s = String::from("method,trial,window,k_w,sigma_w,rmse_w,gamma_w\n");
    for m in &bundle.methods {
        for t in &m.trials {
            let ser = &t.series;
            for w in 0..ser.k.len() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    m.method,
                    t.trial,
                    w + 1,
                    ser.k[w],
                    format_float(ser.sigma[w]),
                    format_float(ser.rmse[w]),
                    opt(ser.gamma[w])
                );
            }
        }
    }
    s
}

pub fn summary_csv(bundle: &ResultBundle) -> String {
    let mut s =
        String::from("method,spread_mean,spread_std,rmse_mean,rmse_std,gamma_bar_mean,gamma_bar_std,rho_mean,rho_std\n");
    for m in &bundle.methods {
        let Some(r) = m.summary else { continue };
        let cell = |v: MeanStd| format!("{},{}", format_float(v.mean), opt(v.std));
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            m.method,
            cell(r.spread),
            cell(r.rmse),
            cell(r.gamma_bar),
            cell(r.rho)
        );
    }
    s
}

pub fn ranks_csv(bundle: &ResultBundle) -> String {
    let mut s = String::from("method,rank_bin,count,total,chi2,flatness\n");
    for m in &bundle.methods {
        let Some(stats) = m.rank_stats else { continue };
        let total = m.ranks.total();
        for (bin, count) in m.ranks.counts.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                m.method,
                bin + 1,
                count,
                total,
                format_float(stats.chi2),
                format_float(stats.flatness)
            );
        }
    }
    s
}

/// Per-window rows followed by one `mean` row per method.
pub fn biasvar_csv(bundle: &ResultBundle) -> String {
    let mut s = String::from("method,window,bias2,variance,mse\n");
    for m in &bundle.methods {
        let Some(bv) = &m.bias_variance else { continue };
        for w in 0..bv.mse.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                m.method,
                w + 1,
                format_float(bv.bias2[w]),
                format_float(bv.variance[w]),
                format_float(bv.mse[w])
            );
        }
    }
    for m in &bundle.methods {
        let Some(bv) = &m.bias_variance else { continue };
        let _ = writeln!(
            s,
            "{},mean,{},{},{}",
            m.method,
            format_float(bv.mean_bias2),
            format_float(bv.mean_variance),
            format_float(bv.mean_mse)
        );
    }
    s
}

pub fn hash_txt(bundle: &ResultBundle) -> String {
    let mut s = String::new();
    for (trial, obs) in &bundle.obs_hashes {
        let _ = writeln!(s, "trial={trial} truth={} obs={obs}", bundle.truth_hash);
    }
    s
}

/// Human-readable summary printed by `dax run`.
pub fn summary_table(bundle: &ResultBundle) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>16} {:>16} {:>16} {:>16} {:>8} {:>8}",
        "method", "spread", "rmse", "gamma_bar", "rho", "chi2", "flat"
    );
    let pm = |v: MeanStd| match v.std {
        Some(sd) => format!("{:.3} ± {:.3}", v.mean, sd),
        None => format!("{:.3}", v.mean),
    };
    for m in &bundle.methods {
        let Some(r) = m.summary else {
            let _ = writeln!(s, "{:<12} (all trials diverged)", m.method.name());
            continue;
        };
        let (chi2, flat) = m
            .rank_stats
            .map_or((f64::NAN, f64::NAN), |r| (r.chi2, r.flatness));
        let _ = writeln!(
            s,
            "{:<12} {:>16} {:>16} {:>16} {:>16} {:>8.1} {:>8.3}",
            m.method.name(),
            pm(r.spread),
            pm(r.rmse),
            pm(r.gamma_bar),
            pm(r.rho),
            chi2,
            flat
        );
        if let Some(bv) = &m.bias_variance {
            let _ = writeln!(
                s,
                "{:<12} bias2 {:.4}  variance {:.4}  mse {:.4}  bias2/mse {:.3}",
                "",
                bv.mean_bias2,
                bv.mean_variance,
                bv.mean_mse,
                bv.bias_fraction()
            );
        }
        if !m.diverged.is_empty() {
            let _ = writeln!(s, "{:<12} diverged trials: {:?}", "", m.diverged);
        }
    }
    s
}

/// Writes the CSV files and the hash file into `dir`, creating it.
pub fn write_outputs(bundle: &ResultBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("series.csv"), series_csv(bundle))?;
    std::fs::write(dir.join("summary.csv"), summary_csv(bundle))?;
    std::fs::write(dir.join("ranks.csv"), ranks_csv(bundle))?;
    std::fs::write(dir.join("biasvar.csv"), biasvar_csv(bundle))?;
    std::fs::write(dir.join("truth_obs_hash.txt"), hash_txt(bundle))?;
    Ok(())
}
