//! Bookkeeping for the acceptance run: every criterion prints one line and
//! the run fails if any criterion does.

use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Default)]
pub struct Run {
    failed: Vec<u32>,
    total: usize,
}

impl Run {
    /// Evaluates one criterion and prints its line. An `Err` counts as a failure.
    pub fn check<E: std::fmt::Display>(&mut self, id: u32, title: &str, f: impl FnOnce() -> Result<Outcome, E>) {
        let started = Instant::now();
        let outcome = f().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let secs = started.elapsed().as_secs_f64();
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag}  {title}: {} [{secs:.1} s]", outcome.detail);
        self.total += 1;
        if !outcome.passed {
            self.failed.push(id);
        }
    }

    pub fn finish(self) -> ExitCode {
        let passed = self.total - self.failed.len();
        println!("acceptance: {passed}/{} criteria passed", self.total);
        if self.failed.is_empty() {
            ExitCode::SUCCESS
        } else {
            println!("failed: {:?}", self.failed);
            ExitCode::FAILURE
        }
    }
}
