//! Final-answer extraction, canonicalization, and equality.
//!
//! Extraction pulls the last balanced `\boxed{...}` group out of a model
//! response. Equality first tries a numeric route (rationals, decimals,
//! simple fractions, percentages, thousands separators) at 1e-6 relative
//! tolerance, then falls back to normalized string comparison. Algebraic
//! equivalence beyond these rules is out of scope: `x+1` and `1+x` compare
//! unequal, and gold answers needing simplification should be flagged
//! upstream.

use once_cell::sync::Lazy;
use regex::Regex;

const BOXED: &str = "\\boxed{";

/// Content of the last balanced `\boxed{...}` group, whitespace-trimmed,
/// nested braces preserved. Returns `None` when no balanced group exists.
/// Never panics, whatever the input.
pub fn extract_boxed(text: &str) -> Option<String> {
    let starts: Vec<usize> = text.match_indices(BOXED).map(|(i, _)| i).collect();
    for &start in starts.iter().rev() {
        if let Some(content) = balanced_group(&text[start + BOXED.len()..]) {
            return Some(content.trim().to_string());
        }
    }
    None
}

/// Reads up to the brace closing an already-open group, honoring nesting and
/// backslash escapes.
fn balanced_group(rest: &str) -> Option<&str> {
    let mut depth = 1usize;
    let mut escaped = false;
    for (i, c) in rest.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' => escaped = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&rest[..i]);
                }
            }
            _ => {}
        }
    }
    None
}

static THOUSANDS: Lazy<Regex> = Lazy::new(|| Regex::new(r"^-?\d{1,3}(,\d{3})+(\.\d+)?$").expect("static regex"));

/// Parse an answer as a number if it fits one of the supported shapes.
pub fn parse_numeric(answer: &str) -> Option<f64> {
    let mut s = answer.trim();
    if let Some(rest) = s.strip_prefix("\\$") {
        return parse_numeric(rest);
    }
    s = s.trim_matches('$').trim();
    if s.is_empty() {
        return None;
    }

    // Percentages resolve to their fractional value.
    if let Some(body) = s.strip_suffix("\\%").or_else(|| s.strip_suffix('%')) {
        return parse_numeric(body).map(|v| v / 100.0);
    }

    // \frac{a}{b} and friends, with an optional leading sign.
    let (sign, unsigned) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest.trim()),
        None => (1.0, s),
    };
    for prefix in ["\\frac{", "\\dfrac{", "\\tfrac{"] {
        if let Some(rest) = unsigned.strip_prefix(prefix) {
            let numerator = balanced_group(rest)?;
            let after = &rest[numerator.len() + 1..];
            let denominator = after.strip_prefix('{').and_then(balanced_group)?;
            if after.len() != denominator.len() + 2 {
                return None;
            }
            let n = parse_numeric(numerator)?;
            let d = parse_numeric(denominator)?;
            if d == 0.0 {
                return None;
            }
            return Some(sign * n / d);
        }
    }

    // Plain a/b fractions.
    if let Some((n, d)) = s.split_once('/') {
        if !n.is_empty() && !d.is_empty() && !d.contains('/') {
            let n = parse_plain(n.trim())?;
            let d = parse_plain(d.trim())?;
            if d == 0.0 {
                return None;
            }
            return Some(n / d);
        }
        return None;
    }

    parse_plain(s)
}

fn parse_plain(s: &str) -> Option<f64> {
    if THOUSANDS.is_match(s) {
        return s.replace(',', "").parse().ok();
    }
    // Reject shapes like "1,2" rather than misreading them.
    if s.contains(',') {
        return None;
    }
    let value: f64 = s.parse().ok()?;
    value.is_finite().then_some(value)
}

static LATEX_NOISE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\\left|\\right|\\,|\\;|\\:|\\!|\\quad|\\qquad|\\ ").expect("static regex"));
static TEXT_GROUP: Lazy<Regex> = Lazy::new(|| Regex::new(r"\\text\s*\{([^{}]*)\}").expect("static regex"));
static DEGREES: Lazy<Regex> = Lazy::new(|| Regex::new(r"\^\{?\\circ\}?").expect("static regex"));

/// Canonical string form: lowercase, LaTeX spacing and wrappers stripped,
/// fractions rewritten as `a/b`, whitespace and braces removed.
pub fn normalize_answer(answer: &str) -> String {
    let mut s = answer.trim().to_string();
    s = s.replace("\\$", "").replace("\\{", "{").replace("\\}", "}");
    s = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac");
    s = frac_to_slash(&s);
    s = TEXT_GROUP.replace_all(&s, "$1").into_owned();
    s = LATEX_NOISE.replace_all(&s, "").into_owned();
    s = DEGREES.replace_all(&s, "").into_owned();
    s.retain(|c| !c.is_whitespace() && c != '$' && c != '{' && c != '}');
    let mut s = s.to_lowercase();
    while s.ends_with('.') || s.ends_with("\\") {
        s.pop();
    }
    s
}

/// Rewrite every `\frac{a}{b}` as `a/b`, recursing into the groups.
fn frac_to_slash(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find("\\frac{") {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + "\\frac{".len()..];
        let Some(numerator) = balanced_group(after) else {
            out.push_str(&rest[pos..]);
            return out;
        };
        let tail = &after[numerator.len() + 1..];
        let Some(denominator) = tail.strip_prefix('{').and_then(balanced_group) else {
            out.push_str(&rest[pos..]);
            return out;
        };
        out.push_str(&frac_to_slash(numerator));
        out.push('/');
        out.push_str(&frac_to_slash(denominator));
        rest = &tail[denominator.len() + 2..];
    }
    out.push_str(rest);
    out
}

/// Equality under the numeric route (1e-6 relative tolerance) or normalized
/// string match. Symmetric and reflexive.
pub fn answers_equal(a: &str, b: &str) -> bool {
    if let (Some(x), Some(y)) = (parse_numeric(a), parse_numeric(b)) {
        if relative_eq(x, y) {
            return true;
        }
    }
    normalize_answer(a) == normalize_answer(b)
}

fn relative_eq(x: f64, y: f64) -> bool {
    if x == y {
        return true;
    }
    (x - y).abs() <= 1e-6 * x.abs().max(y.abs())
}

/// Fraction of correct outcomes. `None` for an empty input.
pub fn accuracy<I: IntoIterator<Item = bool>>(outcomes: I) -> Option<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for ok in outcomes {
        total += 1;
        if ok {
            correct += 1;
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}
