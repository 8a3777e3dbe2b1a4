//! Reporting helpers for the acceptance suite in `tests/acceptance.rs`.
//!
//! Each criterion yields a [`Verdict`]; [`announce`] writes it straight to
//! stderr so the PASS/FAIL lines show up even when the test harness
//! captures output.

use std::io::Write;
use std::time::Duration;

#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u32,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {} ({:.1} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

pub fn announce(v: &Verdict) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{}", v.line());
}

/// Criteria requested through `ACCEPTANCE_CRITERIA` (comma-separated ids);
/// all of them when the variable is unset or empty.
pub fn selected(all: &[u32]) -> Vec<u32> {
    parse_selection(std::env::var("ACCEPTANCE_CRITERIA").ok().as_deref(), all)
}

fn parse_selection(var: Option<&str>, all: &[u32]) -> Vec<u32> {
    match var.map(str::trim) {
        None | Some("") => all.to_vec(),
        Some(list) => {
            let wanted: Vec<u32> = list.split(',').filter_map(|s| s.trim().parse().ok()).collect();
            all.iter().copied().filter(|id| wanted.contains(id)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection() {
        assert_eq!(parse_selection(None, &[1, 2, 3]), vec![1, 2, 3]);
        assert_eq!(parse_selection(Some(" "), &[1, 2]), vec![1, 2]);
        assert_eq!(parse_selection(Some("3, 1,x"), &[1, 2, 3]), vec![1, 3]);
    }

    #[test]
    fn line_format() {
        let v = Verdict {
            id: 7,
            title: "t",
            passed: false,
            detail: "d".into(),
            elapsed: Duration::from_millis(1500),
        };
        assert_eq!(v.line(), "FAIL [ 7] t (1.5 s): d");
    }
}
