use clap::ValueEnum;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use qillum::{chernoff_bound, quantum_advantage, TargetParams};

use crate::error::{CliError, CliResult};
use crate::grid::ProbeKind;
use crate::table::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FigureId {
    Fig2,
    Fig3a,
    Fig3b,
    Fig3c,
}

impl FigureId {
    pub fn name(self) -> &'static str {
        match self {
            FigureId::Fig2 => "fig2",
            FigureId::Fig3a => "fig3a",
            FigureId::Fig3b => "fig3b",
            FigureId::Fig3c => "fig3c",
        }
    }
}

/// Fixed parameters of a figure, with the published defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureSpec {
    pub id: FigureId,
    pub ns: f64,
    pub kappa: f64,
    pub nbar: Vec<f64>,
    /// Absorption grid (fig2, fig3a) or the single absorption value (fig3b, fig3c).
    pub r: Vec<f64>,
    /// Copy number of the advantage curve (fig3a).
    pub m: u32,
    /// Copy numbers of the error-exponent curves (fig3b, fig3c).
    pub m_grid: Vec<u32>,
}

fn tenth_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 10.0).collect()
}

/// Copy numbers 10^(k/10) for k = 0..=40, rounded and deduplicated.
pub fn log_spaced_copies() -> Vec<u32> {
    let mut m: Vec<u32> = (0..=40).map(|k| 10f64.powf(k as f64 / 10.0).round() as u32).collect();
    m.dedup();
    m
}

impl FigureSpec {
    pub fn defaults(id: FigureId) -> Self {
        let (ns, nbar, r) = match id {
            FigureId::Fig2 => (0.5, vec![2.0, 200.0], tenth_grid()),
            FigureId::Fig3a => (1.0, vec![1.0, 5.0], tenth_grid()),
            FigureId::Fig3b => (1.0, vec![1.0, 5.0], vec![0.001]),
            FigureId::Fig3c => (1.0, vec![1.0, 5.0], vec![0.3]),
        };
        Self {
            id,
            ns,
            kappa: 0.01,
            nbar,
            r,
            m: 10,
            m_grid: log_spaced_copies(),
        }
    }

    fn validate(&self) -> CliResult<()> {
        if self.nbar.is_empty() {
            return Err(CliError::usage("--nbar", "empty grid"));
        }
        if self.r.is_empty() {
            return Err(CliError::usage("--r", "empty grid"));
        }
        if matches!(self.id, FigureId::Fig3b | FigureId::Fig3c) && self.r.len() != 1 {
            return Err(CliError::usage(
                "--r",
                format!("{} takes a single value", self.id.name()),
            ));
        }
        if self.m == 0 {
            return Err(CliError::usage("--m", "at least one copy is required"));
        }
        for &r in &self.r {
            for &nbar in &self.nbar {
                TargetParams::new(r, self.kappa, nbar)?;
            }
        }
        ProbeKind::Coherent.probe(self.ns).validate()?;
        Ok(())
    }
}

/// A figure's data table and its metadata sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub table: Table,
    pub meta: serde_json::Value,
}

const PROBES: [ProbeKind; 2] = [ProbeKind::Coherent, ProbeKind::Tmsv];

pub fn build(spec: &FigureSpec) -> CliResult<FigureData> {
    spec.validate()?;
    let mut notes = Vec::new();
    let table = match spec.id {
        FigureId::Fig2 => {
            let mut jobs = Vec::new();
            for probe in PROBES {
                for &nbar in &spec.nbar {
                    for &r in &spec.r {
                        jobs.push((probe, nbar, r));
                    }
                }
            }
            let rows: CliResult<Vec<Vec<Cell>>> = jobs
                .par_iter()
                .map(|&(probe, nbar, r)| {
                    let res = chernoff_bound(&TargetParams::new(r, spec.kappa, nbar)?, &probe.probe(spec.ns))?;
                    Ok(vec![
                        r.into(),
                        probe.name().into(),
                        nbar.into(),
                        res.s_opt.into(),
                        res.half_q.into(),
                    ])
                })
                .collect();
            let mut t = Table::new(["r", "probe", "nbar", "s_opt", "half_q"]);
            rows?.into_iter().for_each(|row| t.push(row));
            t
        }
        FigureId::Fig3a => {
            let mut jobs = Vec::new();
            for &nbar in &spec.nbar {
                for &r in &spec.r {
                    jobs.push((nbar, r));
                }
            }
            let rows: CliResult<Vec<Vec<Cell>>> = jobs
                .par_iter()
                .map(|&(nbar, r)| {
                    let adv = quantum_advantage(&TargetParams::new(r, spec.kappa, nbar)?, spec.ns, spec.m)?;
                    Ok(vec![r.into(), nbar.into(), (0.5 * adv.delta_m).into()])
                })
                .collect();
            let mut t = Table::new(["r".to_string(), "nbar".to_string(), format!("half_delta_{}", spec.m)]);
            rows?.into_iter().for_each(|row| t.push(row));
            t
        }
        FigureId::Fig3b | FigureId::Fig3c => {
            notes.push(
                "copy numbers M are log-spaced over 1..10^4 in steps of 0.1 decades, rounded to integers; \
                 the range is an implementation choice"
                    .to_string(),
            );
            let r = spec.r[0];
            let mut jobs = Vec::new();
            for probe in PROBES {
                for &nbar in &spec.nbar {
                    jobs.push((probe, nbar));
                }
            }
            let qs: CliResult<Vec<f64>> = jobs
                .par_iter()
                .map(|&(probe, nbar)| {
                    Ok(chernoff_bound(&TargetParams::new(r, spec.kappa, nbar)?, &probe.probe(spec.ns))?.q)
                })
                .collect();
            let mut t = Table::new(["log10_M", "probe", "nbar", "log10_half_qM"]);
            for (&(probe, nbar), q) in jobs.iter().zip(qs?) {
                for &m in &spec.m_grid {
                    // log10(q^M / 2) without underflow
                    let v = m as f64 * q.log10() - 2f64.log10();
                    t.push(vec![
                        (m as f64).log10().into(),
                        probe.name().into(),
                        nbar.into(),
                        v.into(),
                    ]);
                }
            }
            t
        }
    };
    let meta = json!({
        "figure": spec.id.name(),
        "columns": table.columns,
        "parameters": spec,
        "notes": notes,
    });
    Ok(FigureData { table, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_grid_spans_four_decades() {
        let m = log_spaced_copies();
        assert_eq!(m[0], 1);
        assert_eq!(*m.last().unwrap(), 10_000);
        assert!(m.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn defaults_follow_the_figure_definitions() {
        let f = FigureSpec::defaults(FigureId::Fig2);
        assert_eq!((f.ns, f.kappa, f.nbar.clone()), (0.5, 0.01, vec![2.0, 200.0]));
        let f = FigureSpec::defaults(FigureId::Fig3b);
        assert_eq!((f.ns, f.r.clone(), f.nbar.clone()), (1.0, vec![0.001], vec![1.0, 5.0]));
        assert_eq!(FigureSpec::defaults(FigureId::Fig3c).r, vec![0.3]);
        assert_eq!(FigureSpec::defaults(FigureId::Fig3a).m, 10);
    }

    #[test]
    fn single_value_r_for_exponent_curves() {
        let mut f = FigureSpec::defaults(FigureId::Fig3c);
        f.r = vec![0.1, 0.2];
        assert!(build(&f).is_err());
    }
}
