//! Plain-text court report in the layout of the PSA court report form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::exclusions::Offense;
use super::factors::FactorVector;
use super::matrix::FrameworkMatrix;
use super::RiskAssessment;

/// Header fields printed at the top of the report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseMetadata {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub case_number: String,
    #[serde(default)]
    pub dob: String,
    #[serde(default)]
    pub completion_date: String,
    #[serde(default)]
    pub arrest_date: String,
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

fn scale_line(label: &str, selected: u8) -> String {
    let mut line = format!("{label:<30}");
    for v in 1..=6u8 {
        if v == selected {
            let _ = write!(line, " [{v}]");
        } else {
            let _ = write!(line, "  {v} ");
        }
    }
    line.trim_end().to_string()
}

fn count_response(n: u32, cap: u32) -> String {
    match n {
        0 => "none".to_string(),
        n if n >= cap => format!("{cap} or more"),
        n => n.to_string(),
    }
}

/// Renders the court report. Output is `\n`-terminated and depends only on
/// the arguments.
pub fn render_court_report(
    assessment: &RiskAssessment,
    factors: &FactorVector,
    metadata: &CaseMetadata,
    offenses: &[Offense],
    matrix: &FrameworkMatrix,
) -> String {
    let mut out = String::new();
    out.push_str("Pretrial Services\n");
    out.push_str("Public Safety Assessment - Court Report\n\n");
    let _ = writeln!(out, "Name: {} SF#: {}", metadata.name, metadata.case_number);
    let _ = writeln!(out, "DOB: {} PSA Completion Date: {}", metadata.dob, metadata.completion_date);
    let _ = writeln!(out, "Arrest Date: {}\n", metadata.arrest_date);

    let _ = writeln!(out, "New Violent Criminal Activity Flag {}\n", yes_no(assessment.nvca_flag));
    out.push_str(&scale_line("New Criminal Activity Scale", assessment.scaled_nca));
    out.push('\n');
    out.push_str(&scale_line("Failure to Appear Scale", assessment.scaled_fta));
    out.push_str("\n\n");

    out.push_str("Booked Offense(s):\n");
    if offenses.is_empty() {
        out.push_str("  (none)\n");
    }
    for o in offenses {
        if o.description.is_empty() {
            let _ = writeln!(out, "  {}", o.code.trim());
        } else {
            let _ = writeln!(out, "  {} {}", o.code.trim(), o.description);
        }
    }
    out.push('\n');

    let age = if factors.age_at_arrest <= 22 { "22 or younger" } else { "23 or older" };
    let rows: [(&str, String); 11] = [
        ("1. Age at Current Arrest", age.to_string()),
        ("2. Current Violent Offense", yes_no(factors.current_violent_offense).into()),
        ("a. Current Violent Offense & 20 Years Old or Younger", yes_no(factors.violent_and_20_or_younger).into()),
        ("3. Pending Charge at Time of the Offense", yes_no(factors.pending_charge).into()),
        ("4. Prior Misdemeanor Conviction", yes_no(factors.prior_misdemeanor_conviction).into()),
        ("5. Prior Felony Conviction", yes_no(factors.prior_felony_conviction).into()),
        ("a. Prior Conviction", yes_no(factors.prior_conviction).into()),
        ("6. Prior Violent Conviction", count_response(factors.prior_violent_convictions, 3)),
        ("7. Prior Failure to Appear in Past 2 Years", count_response(factors.prior_fta_past_2y, 2)),
        ("8. Prior Failure to Appear Older than 2 Years", yes_no(factors.prior_fta_older_2y).into()),
        ("9. Prior Sentence Incarceration", yes_no(factors.prior_sentence_incarceration).into()),
    ];
    let _ = writeln!(out, "{:<56}{}", "Risk Factors:", "Responses:");
    for (q, a) in &rows {
        let _ = writeln!(out, "{q:<56}{a}");
    }
    out.push('\n');

    out.push_str("Decision Making Framework Response\n\n");
    let _ = write!(out, "{:<7}", "");
    for nca in 1..=6 {
        let _ = write!(out, "| {:<27}", format!("NCA {nca}"));
    }
    out.push_str("|\n");
    for fta in 1..=6u8 {
        let _ = write!(out, "{:<7}", format!("FTA {fta}"));
        for nca in 1..=6u8 {
            let cell = matrix.cells[usize::from(fta - 1)][usize::from(nca - 1)];
            let text = match cell {
                super::RecommendationCell::Unreachable => String::new(),
                c => c.to_string(),
            };
            let selected = fta == assessment.scaled_fta && nca == assessment.scaled_nca;
            let shown = if selected { format!("[{text}]") } else { text };
            let _ = write!(out, "| {shown:<27}");
        }
        out.push_str("|\n");
    }
    out.push('\n');
    let _ = writeln!(out, "Response: {}", assessment.recommendation);
    let _ = writeln!(out, "Is this Response based on a Step 2 exclusion? {}", yes_no(assessment.step2_applied));
    if let Some(rule) = &assessment.exclusion {
        let _ = writeln!(out, "Step 2 exclusion rule: {rule}");
    }
    out.push_str("Does this Response include a Step 4 increase? No\n");
    out
}
