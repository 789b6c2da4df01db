//! Shared fixture corpus for answer extraction and equality. Included by the
//! core corpus tests and by the acceptance suite via `#[path]`.

use stepsmc_core::{answers_equal, extract_boxed};

/// Wrap an answer in the closing line the system prompt mandates.
pub fn templated(answer: &str) -> String {
    format!("Therefore, the final answer is: $\\boxed{{{answer}}}$. I hope it is correct.")
}

/// (extracted answer as written by the model, gold answer, should grade correct)
pub const PAIRS: &[(&str, &str, bool)] = &[
    // Integers and signs
    ("42", "42", true),
    ("-17", "-17", true),
    ("007", "7", true),
    ("+3", "3", true),
    ("-0", "0", true),
    ("- 5", "-5", true),
    ("36.", "36", true),
    ("17", "18", false),
    ("2", "-2", false),
    ("1000000", "10^6", false),
    // Thousands separators
    ("1,000", "1000", true),
    ("12,345,678", "12345678", true),
    ("-1,000,000", "-1000000", true),
    ("1,024", "1024", true),
    ("2,5", "25", false),
    ("1 000", "1000", true),
    // Decimals
    ("0.5", "1/2", true),
    ("0.5", "\\frac{1}{2}", true),
    (".5", "0.5", true),
    ("2.50", "2.5", true),
    ("0.3333333333", "\\frac{1}{3}", true),
    ("0.33", "1/3", false),
    ("3.14", "\\pi", false),
    ("2.0000001", "2.0000002", true),
    ("1.5", "1.6", false),
    ("0.1", "0.100000", true),
    // Fractions
    ("\\frac{3}{4}", "3/4", true),
    ("\\frac{3}{4}", "0.75", true),
    ("\\dfrac{7}{8}", "7/8", true),
    ("\\tfrac{1}{2}", "0.5", true),
    ("-\\frac{1}{2}", "-0.5", true),
    ("-\\frac{2}{3}", "-2/3", true),
    ("\\frac{10}{4}", "\\frac{5}{2}", true),
    ("22/7", "\\frac{22}{7}", true),
    ("\\frac{1}{3}", "\\frac{2}{3}", false),
    ("\\frac{\\frac{1}{2}}{3}", "1/6", true),
    ("1/0", "undefined", false),
    ("5/8", "0.625", true),
    ("\\frac{9}{12}", "3/4", true),
    ("\\frac{2}{5}", "2/5", true),
    // Percentages
    ("50%", "\\frac{1}{2}", true),
    ("12.5%", "0.125", true),
    ("50\\%", "0.5", true),
    ("25%", "0.2", false),
    ("100%", "1", true),
    // Money
    ("\\$5", "5", true),
    ("\\$2.50", "2.5", true),
    ("\\$10", "11", false),
    // LaTeX strings
    ("\\sqrt{2}", "\\sqrt{2}", true),
    ("\\sqrt2", "\\sqrt{2}", true),
    ("2\\sqrt{3}", "2\\sqrt3", true),
    ("\\pi", "\\pi", true),
    ("2\\pi", "2\\pi", true),
    ("\\frac{\\pi}{6}", "\\pi/6", true),
    ("\\frac{\\pi}{6}", "\\pi/3", false),
    ("x^2", "x^{2}", true),
    ("x^2+1", "x^{2} + 1", true),
    ("x+1", "1+x", false),
    ("90^\\circ", "90", true),
    ("45^{\\circ}", "45", true),
    ("\\text{cm}", "cm", true),
    ("5\\text{ cm}", "5 cm", true),
    ("5\\text{ cm}", "5 m", false),
    ("\\sqrt{2}", "\\sqrt{3}", false),
    ("3\\sqrt{2}", "\\sqrt{18}", false),
    ("e^2", "e^{2}", true),
    ("\\ln 2", "\\ln{2}", true),
    ("2\\, \\text{km}", "2km", true),
    // Tuples, sets, intervals
    ("(1,2)", "(1, 2)", true),
    ("(1,2)", "12", false),
    ("[0,1)", "[0, 1)", true),
    ("(-\\infty, 3]", "(-\\infty,3]", true),
    ("\\{1,2\\}", "{1,2}", true),
    ("\\left(1,2\\right)", "(1,2)", true),
    ("(3, 4)", "(3,4)", true),
    ("(1,2)", "(2,1)", false),
    // Multiple choice and words
    ("A", "a", true),
    ("B", "B", true),
    ("B", "C", false),
    ("east", "East", true),
    ("yes", "no", false),
    ("Monday", "monday", true),
    // Whitespace and decoration
    (" 42 ", "42", true),
    ("42\n", "42", true),
    ("$42$", "42", true),
    ("  \\frac{1}{2}  ", "0.5", true),
    ("11\\!", "11", true),
    ("7.", "7", true),
];

/// Raw model outputs exercising extraction itself.
pub fn extraction_cases() -> Vec<(String, &'static str, bool)> {
    vec![
        (templated("42"), "42", true),
        (templated("\\frac{3}{4}"), "0.75", true),
        (
            "## Step 1: compute\nWe get $\\boxed{10}$ at first, but correcting: $\\boxed{12}$.".into(),
            "12",
            true,
        ),
        (
            "## Step 1: compute\nWe get $\\boxed{10}$ at first, but correcting: $\\boxed{12}$.".into(),
            "10",
            false,
        ),
        ("The answer is 42.".into(), "42", false),
        ("so \\boxed{3".into(), "3", false),
        ("the answer is \\boxed{3}".into(), "3", true),
        ("\\boxed{\\boxed{5}}".into(), "5", true),
        ("\\boxed{7}. I hope".into(), "7", true),
        ("\\boxed{\\{1,2\\}}".into(), "{1,2}", true),
        ("\\boxed{π}".into(), "π", true),
        ("\\boxed{\\frac{1}{2}x}".into(), "x/2", false),
        ("intermediate \\boxed{99} then broken \\boxed{oops".into(), "99", true),
        ("empty \\boxed{} group".into(), "0", false),
        (templated(" 42 "), "42", true),
        (
            "## Step 1: reason\nstuff\n## Step 2: conclude\nTherefore, the final answer is: $\\boxed{1,024}$. I hope it is correct.".into(),
            "1024",
            true,
        ),
    ]
}

/// Grade a raw model output against a gold answer: extraction failures count
/// as incorrect, never as crashes.
pub fn grade(output: &str, gold: &str) -> bool {
    match extract_boxed(output) {
        Some(answer) => answers_equal(&answer, gold),
        None => false,
    }
}

/// The whole corpus as (output, gold, verdict) triples.
pub fn full_corpus() -> Vec<(String, &'static str, bool)> {
    let mut cases: Vec<(String, &'static str, bool)> = PAIRS
        .iter()
        .map(|&(answer, gold, verdict)| (templated(answer), gold, verdict))
        .collect();
    cases.extend(extraction_cases());
    cases
}
