//! Plot-ready columnar files and a plain-text digest of a finished run.
//!
//! Files written under `<out>/plots/`:
//!
//! * `gp_<cell>_n<n>.csv`: posterior mean and confidence band of every model
//!   on the domain grid after `n` observations, for each logged `n`.
//! * `barrier_<cell>_n<n>.csv`: summed barrier terms and the acquisition
//!   value on the same grid.
//! * glucose only: `cgm_<cell>.csv` (every meal's trace), `tir_<cell>.csv`
//!   (time in range per meal) and `doses.csv` (doses as a percentage of
//!   each patient's optimum). Meals are numbered from 1; meal 1 is the
//!   initial dose.
//!
//! GP and barrier grids are written for the first seed (and first patient)
//! of every method to keep the output size proportional to the methods.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use safebo::acquisition::{barrier_term, lcb};
use safebo::SafeBoState;

use crate::execute::{fmt_f64, meal_tir, CellOutcome, ExecError, Instance, RunArtifacts};

fn write(path: &Path, body: String) -> Result<(), ExecError> {
    fs::write(path, body).map_err(|source| ExecError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes every plot file and `report.txt`; returns the text report.
pub fn report(art: &RunArtifacts) -> Result<String, ExecError> {
    let plots = art.out_dir.join("plots");
    fs::create_dir_all(&plots).map_err(|source| ExecError::Io {
        path: plots.clone(),
        source,
    })?;

    let first_seed = art.config.seeds[0];
    for o in &art.outcomes {
        if o.cell.seed == first_seed && o.cell.patient.unwrap_or(0) == 0 {
            gp_grids(o, &art.config.log_iters, &plots)?;
        }
    }
    if let Instance::Glucose { .. } = art.instance {
        glucose_files(art, &plots)?;
    }

    let text = digest(art);
    write(&art.out_dir.join("report.txt"), text.clone())?;
    Ok(text)
}

fn gp_grids(o: &CellOutcome, log_iters: &[usize], dir: &Path) -> Result<(), ExecError> {
    let Some(lc) = &o.loop_config else {
        return Ok(());
    };
    for &n in log_iters {
        if n == 0 || n > o.records.len() {
            continue;
        }
        let state = SafeBoState::from_history(lc, &o.records[..n]).map_err(|e| ExecError::Setup(e.to_string()))?;
        let cost_beta = state.cost_beta().map_err(|e| ExecError::Setup(e.to_string()))?;
        let betas = state.constraint_betas().map_err(|e| ExecError::Setup(e.to_string()))?;
        let dim = lc.domain.dim();
        let m = lc.constraint_models.len();

        let mut gp = String::new();
        let mut barrier = String::new();
        let xs: Vec<String> = (1..=dim).map(|i| format!("x_{i}")).collect();
        let mut head = xs.clone();
        head.extend(["cost_mean", "cost_lower", "cost_upper"].map(String::from));
        for i in 1..=m {
            head.extend([format!("c{i}_mean"), format!("c{i}_lower"), format!("c{i}_upper")]);
        }
        writeln!(gp, "{}", head.join(",")).unwrap();
        let mut bhead = xs;
        bhead.extend((1..=m).map(|i| format!("c{i}_log_lcb")));
        bhead.extend(["barrier_sum", "acquisition"].map(String::from));
        writeln!(barrier, "{}", bhead.join(",")).unwrap();

        for x in state.grid() {
            let cost = state.cost_posterior(x).map_err(|e| ExecError::Setup(e.to_string()))?;
            let cons = state.constraint_posteriors(x).map_err(|e| ExecError::Setup(e.to_string()))?;
            let mut row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
            let width = cost_beta.sqrt() * cost.std();
            row.extend([cost.mean, cost.mean - width, cost.mean + width].map(fmt_f64));
            for (p, b) in cons.iter().zip(&betas) {
                let w = b.sqrt() * p.std();
                row.extend([p.mean, lcb(p, *b), p.mean + w].map(fmt_f64));
            }
            writeln!(gp, "{}", row.join(",")).unwrap();

            let terms: Vec<f64> = cons.iter().zip(&betas).map(|(p, b)| barrier_term(p, *b)).collect();
            let mut brow: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
            brow.extend(terms.iter().map(|t| fmt_f64(*t)));
            brow.push(fmt_f64(terms.iter().sum()));
            let acq = state.acquisition_value(x).map_err(|e| ExecError::Setup(e.to_string()))?;
            brow.push(fmt_f64(acq));
            writeln!(barrier, "{}", brow.join(",")).unwrap();
        }
        let id = o.cell.id();
        write(&dir.join(format!("gp_{id}_n{n}.csv")), gp)?;
        write(&dir.join(format!("barrier_{id}_n{n}.csv")), barrier)?;
    }
    Ok(())
}

fn glucose_files(art: &RunArtifacts, dir: &Path) -> Result<(), ExecError> {
    let mut doses = String::from("cell,method,patient,seed,meal,dose,optimal_dose,percent_of_optimum\n");
    for (o, s) in art.outcomes.iter().zip(&art.summary.cells) {
        let id = o.cell.id();
        let mut cgm = String::from("meal,t_min,cgm,true_bg\n");
        for (meal, t) in o.traces.iter().enumerate() {
            for k in 0..t.len() {
                writeln!(
                    cgm,
                    "{},{},{},{}",
                    meal + 1,
                    fmt_f64(t.times_min[k]),
                    fmt_f64(t.cgm[k]),
                    fmt_f64(t.true_bg[k])
                )
                .unwrap();
            }
        }
        write(&dir.join(format!("cgm_{id}.csv")), cgm)?;

        let mut tir = String::from("meal,dose,in_range,above,below\n");
        for (meal, (t, r)) in meal_tir(&o.traces).iter().zip(&o.records).enumerate() {
            writeln!(
                tir,
                "{},{},{},{},{}",
                meal + 1,
                fmt_f64(r.x[0]),
                fmt_f64(t.in_range),
                fmt_f64(t.above),
                fmt_f64(t.below)
            )
            .unwrap();
        }
        write(&dir.join(format!("tir_{id}.csv")), tir)?;

        if let Some(opt) = s.optimal_dose {
            for r in &o.records {
                writeln!(
                    doses,
                    "{id},{},{},{},{},{},{},{}",
                    o.cell.method,
                    o.cell.patient.unwrap_or(0),
                    o.cell.seed,
                    r.iteration + 1,
                    fmt_f64(r.x[0]),
                    fmt_f64(opt),
                    fmt_f64(100.0 * r.x[0] / opt)
                )
                .unwrap();
            }
        }
    }
    write(&dir.join("doses.csv"), doses)
}

fn digest(art: &RunArtifacts) -> String {
    let mut t = String::new();
    let s = &art.summary;
    writeln!(t, "problem: {}  cells: {}  budget: {}", s.problem, s.cells.len(), art.config.budget).unwrap();
    for m in &s.methods {
        write!(
            t,
            "{:<13} cells {:>3}  failed {:>2}  queries {:>5}  violations {:>4}  fallbacks {:>3}",
            m.method.to_string(),
            m.cells,
            m.failed_cells,
            m.queries,
            m.violations,
            m.fallbacks
        )
        .unwrap();
        if let (Some(r), Some(f)) = (m.median_simple_regret, m.median_regret_fraction) {
            write!(t, "  median regret {r:.4e} ({:.2}% of safe cost range)", 100.0 * f).unwrap();
        }
        writeln!(t).unwrap();
    }
    if !s.patients.is_empty() {
        writeln!(t, "patient  optimal_dose  cell                final_dose_%  first_meal_within_15%  true_hypo_samples").unwrap();
        for c in &s.cells {
            writeln!(
                t,
                "{:>7}  {:>12.2}  {:<18}  {:>12.1}  {:>21}  {:>17}",
                c.patient.unwrap_or(0),
                c.optimal_dose.unwrap_or(f64::NAN),
                c.id,
                100.0 * c.final_dose_ratio.unwrap_or(f64::NAN),
                c.first_meal_within_15pct.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
                c.true_hypo_samples.unwrap_or(0)
            )
            .unwrap();
        }
    }
    for c in s.cells.iter().filter(|c| c.error.is_some()) {
        writeln!(t, "cell {} failed: {}", c.id, c.error.as_deref().unwrap_or_default()).unwrap();
    }
    t
}
