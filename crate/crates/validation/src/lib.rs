//! Bookkeeping for the end-to-end acceptance runs in `tests/acceptance.rs`:
//! per-criterion outcomes, grouped sub-checks and the PASS/FAIL runner.

use std::process::ExitCode;
use std::time::Instant;

/// Verdict of one criterion with the measured numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

/// Collects many small sub-checks into one outcome.
#[derive(Debug, Default)]
pub struct Checks {
    failures: Vec<String>,
    count: usize,
}

impl Checks {
    /// Records one check; `what` is only evaluated on failure.
    pub fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.count += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    pub fn outcome(self, label: &str) -> Outcome {
        if self.failures.is_empty() {
            Outcome::new(true, format!("{} {label} checks", self.count))
        } else {
            let shown: Vec<String> = self.failures.iter().take(3).cloned().collect();
            Outcome::new(
                false,
                format!(
                    "{}/{} {label} checks failed: {}",
                    self.failures.len(),
                    self.count,
                    shown.join("; ")
                ),
            )
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `[1.234e-2, ...]`.
pub fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// A numbered criterion. `needs` lists criteria whose side effects (for
/// example trained models) it consumes; they run whenever it is selected.
pub struct Criterion<'a> {
    pub number: usize,
    pub name: &'static str,
    pub needs: &'static [usize],
    pub run: Box<dyn FnMut() -> Outcome + 'a>,
}

impl<'a> Criterion<'a> {
    pub fn new(number: usize, name: &'static str, needs: &'static [usize], run: impl FnMut() -> Outcome + 'a) -> Self {
        Self {
            number,
            name,
            needs,
            run: Box::new(run),
        }
    }
}

/// Criterion numbers given on the command line; empty means all.
pub fn selection(args: impl IntoIterator<Item = String>) -> Vec<usize> {
    args.into_iter().filter_map(|a| a.parse().ok()).collect()
}

/// Runs the selected criteria in order, printing one line per criterion:
/// `criterion N (name): PASS|FAIL [secs] detail`.
pub fn run_all(criteria: Vec<Criterion<'_>>, selected: &[usize]) -> ExitCode {
    let wanted = |k: usize| selected.is_empty() || selected.contains(&k);
    let required: Vec<usize> = criteria
        .iter()
        .filter(|c| wanted(c.number))
        .flat_map(|c| c.needs.iter().copied())
        .collect();
    let mut failed = 0;
    for mut c in criteria {
        let report = wanted(c.number);
        if !report && !required.contains(&c.number) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        if !report {
            continue;
        }
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {} ({}): {verdict} [{:.0} s] {}",
            c.number,
            c.name,
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
        if !outcome.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
